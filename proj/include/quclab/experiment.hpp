#pragma once

#include <chrono>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>
#include <toml.hpp>

#include "quclab/carleman_weights.hpp"
#include "quclab/expression.hpp"
#include "quclab/extension_solver.hpp"
#include "quclab/fractional_operator.hpp"
#include "quclab/inequality_lab.hpp"
#include "quclab/parallel.hpp"
#include "quclab/quc_harness.hpp"
#include "quclab/special_kernels.hpp"
#include "quclab/weighted_grid.hpp"

#ifndef QUCLAB_VERSION
#define QUCLAB_VERSION "0.1.0"
#endif

namespace quclab {

inline constexpr const char* kSignConvention =
    "H^s u = -V u; 2^{-a} Gamma((1-a)/2) / Gamma((1+a)/2) * lim_{y->0} y^a d_y U = V u";

inline const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> names{"verify-weights",     "verify-kernels", "verify-operator",
                                                "solve-extension",    "verify-inequalities",
                                                "measure-order",      "doubling",       "sweep-potential"};
    return names;
}

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string strprintf(const char* f, ...) {
    char buf[1024];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

/// Shortest text that reads back to the same double.
inline std::string num(double v) { return strprintf("%.17g", v); }

/// 64-bit FNV-1a, hex.
inline std::string fnv1a_hex(const std::string& data) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return strprintf("%016llx", static_cast<unsigned long long>(h));
}

/// Writes to `<path>.tmp` and renames over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write " + tmp.string());
        os << content;
        if (!os.flush()) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add(std::vector<std::string> row) {
        if (row.size() != header.size()) throw std::logic_error("CsvTable: row width mismatch");
        rows.push_back(std::move(row));
    }
    std::string str() const {
        std::string out;
        auto line = [&](const std::vector<std::string>& r) {
            for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + r[i];
            out += '\n';
        };
        line(header);
        for (const auto& r : rows) line(r);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Configuration

struct GridBlock {
    int n = 1;
    double extent = 5.0;
    std::size_t nx = 161, ny = 32;
    double grading = 0.0;  // 0: default for the weight
    double t_end = 25.0;
    double t_split = 0.04;  // uniform on [0, t_split], geometric above
    std::size_t t_uniform = 8;
    double t_ratio = 1.25;

    std::vector<double> time_nodes() const {
        std::vector<double> t;
        for (std::size_t i = 0; i < t_uniform; ++i) t.push_back(t_split * static_cast<double>(i) / static_cast<double>(t_uniform));
        for (double v = t_split; v < t_end * (1 - 1e-12); v *= t_ratio) t.push_back(v);
        t.push_back(t_end);
        return t;
    }
};

struct ExperimentConfig {
    std::string source = "<defaults>";
    double s = 0.5;
    double a = 0.0;
    std::uint64_t seed = 1;
    std::string out_dir = "quclab-out";
    GridBlock grid;
    std::string potential_expr = "0";
    std::string potential_snapshot;
    std::string data_expr = "1 + 0.2*x1";

    // verify-weights
    std::vector<double> weight_lambdas{10.0, 100.0, 1000.0};
    std::size_t sigma_nodes = 512;
    // verify-operator
    std::vector<double> operator_s{0.25, 0.5, 0.75};
    std::size_t operator_fields = 20;
    // solve-extension
    std::vector<std::size_t> levels{8, 16, 32, 64};
    // verify-inequalities
    std::vector<std::string> which{"hardy", "trace", "doubling", "carleman", "monotonicity"};
    std::size_t battery = 100;
    std::vector<double> hardy_b{0.05, 0.5, 5.0};
    std::vector<double> trace_A{2.0, 10.0};
    std::vector<double> a_values{-0.5, 0.0, 0.5};
    std::size_t doubling_functions = 20;
    double alpha0 = 8.0, delta = 0.5;
    std::vector<double> c_factors{8.0, 5.0};  // c = 1 / (factor lambda)
    std::vector<int> monotonicity_levels{1, 2};
    // fields for measure-order and doubling
    std::string field_kind = "eigen";
    int field_n = 2;
    int kappa = 3;
    double field_lambda = 16.0;
    std::string field_snapshot;
    std::string region = "thin";
    std::vector<double> order_radii;
    std::vector<double> doubling_radii;
    double M = 10.0;
    double two_ball_r = 0.125, two_ball_rho = 0.5;
    // sweep-potential
    std::vector<double> sweep_lambdas{16.0, 64.0, 256.0};

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["s"] = s;
        j["a"] = a;
        j["seed"] = seed;
        j["grid"] = {{"n", grid.n},           {"extent", grid.extent},   {"nx", grid.nx},
                     {"ny", grid.ny},         {"grading", grid.grading}, {"t_end", grid.t_end},
                     {"t_split", grid.t_split}, {"t_uniform", grid.t_uniform}, {"t_ratio", grid.t_ratio}};
        j["potential"] = {{"expr", potential_expr}, {"snapshot", potential_snapshot}};
        j["data"] = {{"expr", data_expr}};
        j["weights"] = {{"lambdas", weight_lambdas}, {"nodes", sigma_nodes}};
        j["operator"] = {{"s_values", operator_s}, {"fields", operator_fields}};
        j["extension"] = {{"levels", levels}};
        j["inequalities"] = {{"which", which},
                             {"battery", battery},
                             {"hardy_b", hardy_b},
                             {"trace_A", trace_A},
                             {"a_values", a_values},
                             {"doubling_functions", doubling_functions},
                             {"alpha0", alpha0},
                             {"delta", delta},
                             {"c_factors", c_factors},
                             {"monotonicity_levels", monotonicity_levels}};
        j["field"] = {{"kind", field_kind}, {"n", field_n}, {"kappa", kappa}, {"lambda", field_lambda}, {"snapshot", field_snapshot}};
        j["order"] = {{"region", region}, {"radii", order_radii}};
        j["doubling"] = {{"radii", doubling_radii}, {"M", M}, {"r", two_ball_r}, {"rho", two_ball_rho}};
        j["sweep"] = {{"lambdas", sweep_lambdas}};
        return j;
    }
    /// FNV-1a of the canonical JSON (output directory excluded).
    std::string hash() const { return fnv1a_hex(to_json().dump()); }
};

namespace detail {

inline std::string where(const toml::node& n, const std::string& key) {
    return "'" + key + "' (line " + std::to_string(n.source().begin.line) + ")";
}

class TomlReader {
public:
    TomlReader(const toml::table& t, std::string prefix, std::string source)
        : t_(t), prefix_(std::move(prefix)), source_(std::move(source)) {}

    void allow(std::initializer_list<const char*> keys) {
        for (auto k : keys) allowed_.insert(k);
        for (auto&& [k, v] : t_)
            if (!allowed_.count(std::string(k.str())))
                throw ConfigError(source_ + ": unknown key " + where(v, prefix_ + std::string(k.str())));
    }
    const toml::table* table(const char* key) const {
        auto* n = t_.get(key);
        if (!n) return nullptr;
        if (!n->is_table()) throw ConfigError(source_ + ": " + where(*n, prefix_ + key) + " must be a table");
        return n->as_table();
    }
    void get(const char* key, double& out) const {
        if (auto* n = t_.get(key)) {
            auto v = n->value<double>();
            if (!v) throw ConfigError(source_ + ": " + where(*n, prefix_ + key) + " must be a number");
            out = *v;
        }
    }
    template <class I>
    void get_int(const char* key, I& out, long long lo = 0) const {
        if (auto* n = t_.get(key)) {
            auto v = n->value<std::int64_t>();
            if (!v || !n->is_integer()) throw ConfigError(source_ + ": " + where(*n, prefix_ + key) + " must be an integer");
            if (*v < lo) throw ConfigError(source_ + ": " + where(*n, prefix_ + key) + " must be >= " + std::to_string(lo));
            out = static_cast<I>(*v);
        }
    }
    void get(const char* key, std::string& out) const {
        if (auto* n = t_.get(key)) {
            auto v = n->value<std::string>();
            if (!v) throw ConfigError(source_ + ": " + where(*n, prefix_ + key) + " must be a string");
            out = *v;
        }
    }
    template <class T>
    void get_list(const char* key, std::vector<T>& out) const {
        auto* n = t_.get(key);
        if (!n) return;
        if (!n->is_array()) throw ConfigError(source_ + ": " + where(*n, prefix_ + key) + " must be an array");
        std::vector<T> v;
        for (auto&& e : *n->as_array()) {
            std::optional<T> x;
            if constexpr (std::is_same_v<T, std::string>) x = e.value<std::string>();
            else if constexpr (std::is_integral_v<T>) {
                if (e.is_integer()) {
                    auto i = e.value<std::int64_t>();
                    if (i && *i >= 0) x = static_cast<T>(*i);
                }
            } else x = e.value<T>();
            if (!x) throw ConfigError(source_ + ": " + where(*n, prefix_ + key) + " has an element of the wrong type");
            v.push_back(*x);
        }
        out = std::move(v);
    }
    bool has(const char* key) const { return t_.get(key) != nullptr; }
    std::string line_of(const char* key) const { return where(*t_.get(key), prefix_ + key); }

private:
    const toml::table& t_;
    std::string prefix_, source_;
    std::set<std::string> allowed_;
};

inline std::string resolve_path(const std::string& p, const std::string& source) {
    if (p.empty()) return p;
    std::filesystem::path q(p);
    if (q.is_relative() && source != "<defaults>" && source != "<string>") q = std::filesystem::path(source).parent_path() / q;
    return q.lexically_normal().string();
}

}  // namespace detail

/// Parses TOML text. Unknown keys, wrong types and a != 1 - 2s are reported with the line.
inline ExperimentConfig parse_config(const std::string& text, const std::string& source = "<string>") {
    toml::table root;
    try {
        root = toml::parse(text, source);
    } catch (const toml::parse_error& e) {
        throw ConfigError(source + ":" + std::to_string(e.source().begin.line) + ":" + std::to_string(e.source().begin.column) +
                          ": " + std::string(e.description()));
    }
    ExperimentConfig c;
    c.source = source;
    detail::TomlReader r(root, "", source);
    r.allow({"s", "a", "seed", "out", "grid", "potential", "data", "weights", "operator", "extension", "inequalities", "field",
             "order", "doubling", "sweep"});
    r.get("s", c.s);
    if (!(c.s > 0.0 && c.s < 1.0)) throw ConfigError(source + ": 's' must lie in (0, 1)");
    c.a = 1.0 - 2.0 * c.s;
    if (r.has("a")) {
        double a = 0.0;
        r.get("a", a);
        if (std::abs(a - c.a) > 1e-12) throw ConfigError(source + ": " + r.line_of("a") + " must equal 1 - 2s = " + num(c.a));
    }
    r.get_int("seed", c.seed);
    r.get("out", c.out_dir);
    if (r.has("out")) c.out_dir = detail::resolve_path(c.out_dir, source);
    if (auto* t = r.table("grid")) {
        detail::TomlReader g(*t, "grid.", source);
        g.allow({"n", "extent", "nx", "ny", "grading", "t_end", "t_split", "t_uniform", "t_ratio"});
        g.get_int("n", c.grid.n, 1);
        g.get("extent", c.grid.extent);
        g.get_int("nx", c.grid.nx, 3);
        g.get_int("ny", c.grid.ny, 2);
        g.get("grading", c.grid.grading);
        g.get("t_end", c.grid.t_end);
        g.get("t_split", c.grid.t_split);
        g.get_int("t_uniform", c.grid.t_uniform, 1);
        g.get("t_ratio", c.grid.t_ratio);
        if (c.grid.n != 1 && c.grid.n != 2) throw ConfigError(source + ": " + g.line_of("n") + " must be 1 or 2");
        if (!(c.grid.t_ratio > 1.0) || !(c.grid.t_split > 0.0) || !(c.grid.t_end > c.grid.t_split))
            throw ConfigError(source + ": grid time block needs t_ratio > 1 and 0 < t_split < t_end");
    }
    if (auto* t = r.table("potential")) {
        detail::TomlReader p(*t, "potential.", source);
        p.allow({"expr", "snapshot"});
        p.get("expr", c.potential_expr);
        p.get("snapshot", c.potential_snapshot);
        if (p.has("expr") && p.has("snapshot")) throw ConfigError(source + ": potential takes either expr or snapshot");
        c.potential_snapshot = detail::resolve_path(c.potential_snapshot, source);
    }
    if (auto* t = r.table("data")) {
        detail::TomlReader p(*t, "data.", source);
        p.allow({"expr"});
        p.get("expr", c.data_expr);
    }
    if (auto* t = r.table("weights")) {
        detail::TomlReader p(*t, "weights.", source);
        p.allow({"lambdas", "nodes"});
        p.get_list("lambdas", c.weight_lambdas);
        p.get_int("nodes", c.sigma_nodes, 16);
    }
    if (auto* t = r.table("operator")) {
        detail::TomlReader p(*t, "operator.", source);
        p.allow({"s_values", "fields"});
        p.get_list("s_values", c.operator_s);
        p.get_int("fields", c.operator_fields, 1);
    }
    if (auto* t = r.table("extension")) {
        detail::TomlReader p(*t, "extension.", source);
        p.allow({"levels"});
        p.get_list("levels", c.levels);
    }
    if (auto* t = r.table("inequalities")) {
        detail::TomlReader p(*t, "inequalities.", source);
        p.allow({"which", "battery", "hardy_b", "trace_A", "a_values", "doubling_functions", "alpha0", "delta", "c_factors",
                 "monotonicity_levels"});
        p.get_list("which", c.which);
        p.get_int("battery", c.battery, 1);
        p.get_list("hardy_b", c.hardy_b);
        p.get_list("trace_A", c.trace_A);
        p.get_list("a_values", c.a_values);
        p.get_int("doubling_functions", c.doubling_functions, 1);
        p.get("alpha0", c.alpha0);
        p.get("delta", c.delta);
        p.get_list("c_factors", c.c_factors);
        p.get_list("monotonicity_levels", c.monotonicity_levels);
    }
    if (auto* t = r.table("field")) {
        detail::TomlReader p(*t, "field.", source);
        p.allow({"kind", "n", "kappa", "lambda", "snapshot"});
        p.get("kind", c.field_kind);
        p.get_int("n", c.field_n, 1);
        p.get_int("kappa", c.kappa, 0);
        p.get("lambda", c.field_lambda);
        p.get("snapshot", c.field_snapshot);
        c.field_snapshot = detail::resolve_path(c.field_snapshot, source);
    }
    if (auto* t = r.table("order")) {
        detail::TomlReader p(*t, "order.", source);
        p.allow({"region", "radii"});
        p.get("region", c.region);
        p.get_list("radii", c.order_radii);
    }
    if (auto* t = r.table("doubling")) {
        detail::TomlReader p(*t, "doubling.", source);
        p.allow({"radii", "M", "r", "rho"});
        p.get_list("radii", c.doubling_radii);
        p.get("M", c.M);
        p.get("r", c.two_ball_r);
        p.get("rho", c.two_ball_rho);
    }
    if (auto* t = r.table("sweep")) {
        detail::TomlReader p(*t, "sweep.", source);
        p.allow({"lambdas"});
        p.get_list("lambdas", c.sweep_lambdas);
    }
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str(), path);
}

/// Checks that depend on the subcommand: required lists, value ranges, files on disk.
inline void validate_config(const ExperimentConfig& c, const std::string& sub) {
    auto need = [&](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(c.source + ": " + msg);
    };
    auto increasing = [](const std::vector<double>& v) {
        for (std::size_t i = 1; i < v.size(); ++i)
            if (!(v[i] > v[i - 1])) return false;
        return true;
    };
    need(std::find(subcommands().begin(), subcommands().end(), sub) != subcommands().end(), "unknown subcommand " + sub);
    if (!c.potential_snapshot.empty())
        need(std::filesystem::exists(c.potential_snapshot + ".json"), "missing potential snapshot " + c.potential_snapshot);
    if (sub == "verify-weights") {
        need(!c.weight_lambdas.empty(), "weights.lambdas is empty");
        for (double l : c.weight_lambdas) need(l > 0.0, "weights.lambdas must be positive");
    } else if (sub == "verify-operator") {
        need(!c.operator_s.empty(), "operator.s_values is empty");
        for (double s : c.operator_s) need(s > 0.0 && s < 1.0, "operator.s_values must lie in (0, 1)");
    } else if (sub == "solve-extension") {
        need(c.levels.size() >= 2, "extension.levels needs at least two levels");
        for (std::size_t i = 1; i < c.levels.size(); ++i) need(c.levels[i] > c.levels[i - 1], "extension.levels must increase");
    } else if (sub == "verify-inequalities") {
        static const std::set<std::string> known{"hardy", "trace", "doubling", "carleman", "monotonicity"};
        need(!c.which.empty(), "inequalities.which is empty");
        for (const auto& w : c.which) need(known.count(w) > 0, "inequalities.which: unknown entry " + w);
        for (double a : c.a_values) need(a > -1.0 && a < 1.0, "inequalities.a_values must lie in (-1, 1)");
        need(!c.c_factors.empty() && c.alpha0 > 0.0 && c.delta > 0.0, "inequalities: alpha0, delta, c_factors");
    } else if (sub == "measure-order" || sub == "doubling") {
        static const std::set<std::string> kinds{"constant", "harmonic", "eigen", "solve", "snapshot"};
        need(kinds.count(c.field_kind) > 0, "field.kind must be one of constant, harmonic, eigen, solve, snapshot");
        if (c.field_kind == "snapshot")
            need(!c.field_snapshot.empty() && std::filesystem::exists(c.field_snapshot + ".json"),
                 "missing field snapshot " + c.field_snapshot);
        if (sub == "measure-order") {
            need(!c.order_radii.empty(), "order.radii is empty");
            need(c.region == "thin" || c.region == "thick", "order.region must be thin or thick");
        } else {
            need(!c.doubling_radii.empty(), "doubling.radii is empty");
            need(c.M > 0.0, "doubling.M must be positive");
        }
        for (double r : (sub == "measure-order" ? c.order_radii : c.doubling_radii)) need(r > 0.0, "radii must be positive");
    } else if (sub == "sweep-potential") {
        need(!c.sweep_lambdas.empty(), "sweep.lambdas is empty");
        need(increasing(c.sweep_lambdas), "sweep.lambdas must increase");
    }
}

// ---------------------------------------------------------------------------
// Manifest

struct Check {
    std::string name;
    bool passed = true;
    bool hard = true;
    std::string detail;
};

struct RunManifest {
    std::string subcommand;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<Check> checks;
    std::vector<std::pair<std::string, double>> constants;
    std::vector<std::pair<std::string, double>> stages;  // wall-clock seconds
    std::vector<std::string> outputs;

    bool ok() const {
        for (const auto& c : checks)
            if (c.hard && !c.passed) return false;
        return true;
    }
    void check(std::string name, bool passed, std::string detail = {}, bool hard = true) {
        checks.push_back({std::move(name), passed, hard, std::move(detail)});
    }
    void constant(std::string name, double v) { constants.emplace_back(std::move(name), v); }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["tool"] = "quclab";
        j["version"] = QUCLAB_VERSION;
        j["subcommand"] = subcommand;
        j["config_hash"] = config_hash;
        j["seed"] = seed;
        j["sign_convention"] = kSignConvention;
        j["passed"] = ok();
        auto& cs = j["checks"] = nlohmann::ordered_json::array();
        for (const auto& c : checks)
            cs.push_back({{"name", c.name}, {"passed", c.passed}, {"hard", c.hard}, {"detail", c.detail}});
        auto& k = j["constants"] = nlohmann::ordered_json::object();
        for (const auto& [n, v] : constants) {
            if (std::isfinite(v)) k[n] = v;
            else k[n] = num(v);  // JSON has no inf/nan
        }
        auto& st = j["wall_clock_seconds"] = nlohmann::ordered_json::object();
        for (const auto& [n, v] : stages) st[n] = v;
        j["outputs"] = outputs;
        return j;
    }
};

class StageClock {
public:
    explicit StageClock(RunManifest& m) : m_(m) {}
    template <class F>
    auto operator()(const std::string& name, F&& f) {
        auto t0 = std::chrono::steady_clock::now();
        struct Stop {
            RunManifest& m;
            std::string name;
            std::chrono::steady_clock::time_point t0;
            ~Stop() { m.stages.emplace_back(name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()); }
        } stop{m_, name, t0};
        return f();
    }

private:
    RunManifest& m_;
};

// ---------------------------------------------------------------------------
// Building blocks shared by the subcommands

/// V from an expression: samples plus ||V||_1 from the symbolic derivatives.
inline Potential expression_potential(const std::string& expr, std::shared_ptr<const HalfSpaceGrid> grid) {
    return Potential::from_expression(std::move(grid), Expression::parse(expr));
}

inline std::shared_ptr<const HalfSpaceGrid> config_grid(const ExperimentConfig& c) {
    const double grading = c.grid.grading > 0.0 ? c.grid.grading : default_grading_exponent(c.a);
    return build_graded_grid(c.grid.n, c.grid.extent, c.grid.nx, c.grid.ny, grading, c.grid.time_nodes());
}

/// The configured backward problem: data (constant in y) on the last slice and as lateral values.
inline ExtensionProblem config_problem(const ExperimentConfig& c) {
    ExtensionProblem pr;
    pr.a = c.a;
    if (!c.potential_snapshot.empty()) {
        auto U = read_snapshot(c.potential_snapshot);
        pr.grid = U.grid_ptr();
        pr.V = Potential::from_samples(thin_trace(U));
        if (std::abs(U.weight_exponent() - c.a) > 1e-12) throw ConfigError("potential snapshot has a different weight exponent");
    } else {
        pr.grid = config_grid(c);
        pr.V = expression_potential(c.potential_expr, pr.grid);
    }
    auto data = Expression::parse(c.data_expr);
    if (data.uses_variable(2)) throw ConfigError("data.expr is start data and may not depend on t");
    auto f = [data](const SpaceTimePoint& p) { return data(p.x[0], p.x[1], 0.0); };
    pr.start_data = ScalarField::sample(pr.grid, c.a, f);
    pr.boundary = f;
    return pr;
}

struct KernelCheckRow {
    std::string check;
    double a = 0.0, t = 0.0, value = 0.0, target = 0.0, tolerance = 0.0;
    double error() const { return std::abs(value - target) / std::max(1.0, std::abs(target)); }
    bool passed() const { return error() <= tolerance; }
};

namespace detail {
// int_0^L f(y) y^a dy: Gauss-Jacobi on the first twentieth, Gauss-Legendre panels beyond.
template <class F>
double weighted_half_line(F&& f, double a, double L) {
    double sum = 0.0;
    Rule r0 = gauss_power_on(L / 20, a, 30);
    for (std::size_t i = 0; i < r0.size(); ++i) sum += r0.weights[i] * f(r0.nodes[i]);
    std::vector<double> br;
    for (int k = 1; k <= 20; ++k) br.push_back(L * k / 20.0);
    Rule r = composite_gauss_legendre(br, 30);
    for (std::size_t i = 0; i < r.size(); ++i) sum += r.weights[i] * f(r.nodes[i]) * std::pow(r.nodes[i], a);
    return sum;
}
}  // namespace detail

/// Kernel mass on nine (a, t, X) cases, the a = 0 reflected Gaussian and Chapman-Kolmogorov.
inline std::vector<KernelCheckRow> kernel_identity_checks() {
    std::vector<std::tuple<double, double, ThickPoint>> cases = {
        {0.4, 0.2, {{0.3, 0}, 0.6}},  {-0.5, 0.2, {{0.3, 0}, 0.6}}, {0.0, 0.2, {{0.3, 0}, 0.6}},
        {0.4, 1.0, {{-1.0, 0}, 0.0}}, {-0.5, 0.05, {{0, 0}, 1.2}},  {0.8, 0.5, {{2.0, 0}, 0.1}},
        {-0.8, 0.7, {{0.5, 0}, 2.0}}, {0.2, 2.0, {{0, 0}, 0.3}},    {0.6, 0.01, {{0.1, 0}, 0.05}}};
    std::vector<KernelCheckRow> rows(cases.size());
    parallel_for(cases.size(), [&](std::size_t k) {
        auto [a, t, X] = cases[k];
        KernelParams kp{a, 1};
        double L = 40 * std::sqrt(t);
        Rule rx = composite_gauss_legendre({X.x[0] - L, X.x[0] - L / 2, X.x[0], X.x[0] + L / 2, X.x[0] + L}, 40);
        double sum = 0.0;
        for (std::size_t i = 0; i < rx.size(); ++i)
            sum += rx.weights[i] *
                   detail::weighted_half_line([&](double y) { return caloric_kernel({{rx.nodes[i], 0}, y}, X, t, kp); }, a, X.y + L);
        rows[k] = {"mass", a, t, sum, 1.0, 1e-6};
    });
    for (auto [x, y] : {std::pair{1.0, 2.0}, std::pair{6.0, 7.0}}) {
        const double t = 0.5;
        double expect = (std::exp(-(x - y) * (x - y) / (4 * t)) + std::exp(-(x + y) * (x + y) / (4 * t))) /
                        std::sqrt(4 * std::numbers::pi * t);
        rows.push_back({"reflected_gaussian", 0.0, t, bessel_heat_kernel(x, y, t, 0.0), expect, 1e-10});
    }
    for (double a : {-0.5, 0.0, 0.6}) {
        double x = 0.4, y = 1.1, t1 = 0.2, t2 = 0.35;
        double v = detail::weighted_half_line([&](double z) { return bessel_heat_kernel(x, z, t1, a) * bessel_heat_kernel(z, y, t2, a); },
                                              a, 12.0);
        double ref = bessel_heat_kernel(x, y, t1 + t2, a);
        rows.push_back({"chapman_kolmogorov", a, t1 + t2, v / ref, 1.0, 1e-5});
    }
    return rows;
}

struct OperatorRow {
    double s = 0.0;
    std::size_t field = 0;
    double relative_l2 = 0.0, imag_residue = 0.0;
};

/// Spectral against Balakrishnan H^s on seeded band-limited fields.
inline std::vector<OperatorRow> operator_battery(const std::vector<double>& s_values, std::size_t count, std::uint64_t seed) {
    auto box = SpectralBox::centered(1, 4.0, 4.0, 32, 32);
    std::vector<TrigPolynomial> fields;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < count; ++i) fields.push_back(random_trig_polynomial(box, rng, 5, 5));
    std::vector<OperatorRow> rows(s_values.size() * count);
    for (std::size_t k = 0; k < s_values.size(); ++k) {
        BalakrishnanOperator op(box, build_balakrishnan_rule(s_values[k], box));
        parallel_for(count, [&](std::size_t i) {
            auto f = fields[i].sample();
            auto x = op.apply(f);
            auto y = apply_hs_spectral(f, s_values[k]);
            rows[k * count + i] = {s_values[k], i, relative_l2(x.field.values, y.field.values), std::max(x.imag_residue, y.imag_residue)};
        });
    }
    return rows;
}

/// Relative L2 distance between H^1 and the termwise d_t - Lap on seeded fields in n = 1, 2.
inline double heat_reduction_error(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int n : {1, 2}) {
        auto box = SpectralBox::centered(n, 2.0, 3.0, 16, 16);
        auto p = random_trig_polynomial(box, rng, 4, 4);
        worst = std::max(worst, relative_l2(apply_hs_spectral(p.sample(), 1.0).field.values, p.sample_heat().values));
    }
    return worst;
}

struct ConvergenceStudy {
    double a = 0.0;
    std::vector<std::size_t> levels;
    std::vector<double> errors, orders;
    bool exact = false;  // all errors at roundoff
    bool passed() const {
        if (exact) return true;
        for (double o : orders)
            if (!(o >= 1.0)) return false;
        return !orders.empty();
    }
};

/// U = y^2 - 2 (1 + a) t on B x [0, 1/4] under mesh refinement.
inline ConvergenceStudy convergence_study(double a, const std::vector<std::size_t>& levels) {
    ConvergenceStudy st;
    st.a = a;
    st.levels = levels;
    auto exact = [a](const SpaceTimePoint& p) { return p.y * p.y - 2.0 * (1.0 + a) * p.t; };
    st.errors.resize(levels.size());
    parallel_for(levels.size(), [&](std::size_t i) {
        std::size_t M = levels[i];
        auto g = build_graded_grid(1, 1.0, M + 1, M, default_grading_exponent(a), uniform_nodes(0.0, 0.25, M + 1));
        ExtensionProblem pr;
        pr.grid = g;
        pr.a = a;
        pr.V = Potential::zero(g);
        pr.start_data = ScalarField::sample(g, a, exact);
        pr.boundary = exact;
        auto sol = solve_backward_extension(pr);
        st.errors[i] = relative_l2(sol.U.values(), ScalarField::sample(g, a, exact).values());
    });
    st.exact = std::all_of(st.errors.begin(), st.errors.end(), [](double e) { return e < 1e-12; });
    for (std::size_t i = 1; i < st.errors.size(); ++i) st.orders.push_back(std::log2(st.errors[i - 1] / st.errors[i]));
    return st;
}

/// Trace characterization on a Gaussian bump in (x, t).
inline NpReport gaussian_bump_np(double s) {
    auto box = SpectralBox::centered(1, 8.0, 8.0, 64, 64);
    auto u = PeriodicField::sample(box, [](const std::array<double, 2>& x, double t) {
        return std::exp(-(x[0] * x[0] + t * t) / (2 * 0.3 * 0.3));
    });
    return verify_np(u, s);
}

/// Space cutoff of radius 1 with a linear tilt, time support 0.99/(e lambda).
inline ThinCutoff carleman_cutoff(double lambda, double slope = 0.3) {
    ThinCutoff phi;
    phi.radius = 1.0;
    phi.slope = {slope, 0.0};
    phi.t_support = 0.99 / (std::numbers::e * lambda);
    phi.t_flat = 0.3 * phi.t_support;
    return phi;
}

struct CarlemanBattery {
    std::vector<CarlemanReport> rows;
    double M_emp = 0.0;        // single constant for the whole battery
    double alpha_spread = 1.0;  // worst max/min of M_emp over alpha, per (function, c)
    bool all_finite = true, any_flagged = false;
    std::size_t violations_at_M = 0;
    double worst_source_residual = 0.0;
};

/// Ten functions (five profiles, V = 0 and V = 1) x alpha in {a0, 2a0, 4a0} x c = 1/(f lambda).
inline CarlemanBattery carleman_battery(double s, double alpha0, double delta, const std::vector<double>& c_factors,
                                        const CarlemanOptions& opt = {}) {
    const std::vector<std::pair<EvenProfile, double>> profiles{
        {{1.0, 0.3}, 0.3}, {{1.0, 0.0}, 0.0}, {{0.8, 0.5}, 0.2}, {{1.2, 0.1}, -0.3}, {{1.0, 0.6}, 0.5}};
    const std::vector<double> potentials{0.0, 1.0};
    const std::vector<double> alphas{alpha0, 2 * alpha0, 4 * alpha0};
    const double a = 1.0 - 2.0 * s;
    const std::size_t nf = profiles.size() * potentials.size(), nc = c_factors.size();
    std::vector<SigmaTable> tables;
    for (double al : alphas) tables.push_back(build_sigma(s, al / (delta * delta)));
    CarlemanBattery b;
    b.rows.resize(nf * alphas.size() * nc);
    parallel_for(b.rows.size(), [&](std::size_t idx) {
        std::size_t f = idx / (alphas.size() * nc), k = (idx / nc) % alphas.size(), ci = idx % nc;
        const auto& [psi, slope] = profiles[f / potentials.size()];
        const double V = potentials[f % potentials.size()];
        const double lambda = alphas[k] / (delta * delta);
        auto w = build_carleman_test_function(carleman_cutoff(lambda, slope), psi, Expression::constant(V), a,
                                              strprintf("w%zu_V%g", f / potentials.size(), V));
        b.rows[idx] = check_carleman(w, s, alphas[k], delta, 1.0 / (c_factors[ci] * lambda), tables[k], opt);
    });
    for (const auto& r : b.rows) {
        b.all_finite = b.all_finite && std::isfinite(r.M_emp);
        b.any_flagged = b.any_flagged || r.flagged;
        b.M_emp = std::max(b.M_emp, r.M_emp);
        b.worst_source_residual = std::max(b.worst_source_residual, r.source_residual);
    }
    for (const auto& r : b.rows)
        if (carleman_at(r, b.M_emp).violated()) ++b.violations_at_M;
    for (std::size_t f = 0; f < nf; ++f)
        for (std::size_t ci = 0; ci < nc; ++ci) {
            double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
            for (std::size_t k = 0; k < alphas.size(); ++k) {
                double m = b.rows[(f * alphas.size() + k) * nc + ci].M_emp;
                lo = std::min(lo, m);
                hi = std::max(hi, m);
            }
            if (hi > 0.0) b.alpha_spread = std::max(b.alpha_spread, hi / lo);
        }
    return b;
}

struct DoublingImplicationRow {
    std::string function;
    double N = 0.0;
    DoublingReport report;
};

/// The first `count` functions of a seeded bump battery with a finite hypothesis constant,
/// each checked with its minimal N.
inline std::vector<DoublingImplicationRow> doubling_implication_battery(std::size_t count, std::uint64_t seed, double a,
                                                                        std::size_t pool = 200) {
    auto fs = random_bump_battery(1, pool, seed);
    std::vector<DoublingImplicationRow> out;
    std::size_t next = 0;
    while (out.size() < count && next < fs.size()) {
        // evaluate in parallel chunks, keep battery order
        std::size_t chunk = std::min<std::size_t>(fs.size() - next, std::max<std::size_t>(default_thread_count(), 4));
        auto Ns = parallel_map<double>(chunk, [&](std::size_t i) { return minimal_hypothesis_constant(fs[next + i], a); });
        for (std::size_t i = 0; i < chunk && out.size() < count; ++i)
            if (std::isfinite(Ns[i])) out.push_back({fs[next + i].name, Ns[i], {}});
        next += chunk;
    }
    std::vector<std::size_t> idx;
    parallel_for(out.size(), [&](std::size_t i) {
        const auto& f = *std::find_if(fs.begin(), fs.end(), [&](const TestFunction& t) { return t.name == out[i].function; });
        out[i].report = check_gaussian_doubling(f, out[i].N, {0.1, 0.25, 0.5}, a);
    });
    return out;
}

/// Backward solve of the numerical monotonicity problem at refinement k.
inline MonotonicityReport monotonicity_numerical(int k, double a, const std::string& V_expr) {
    std::vector<double> t;
    for (int i = 0; i < 8 * k; ++i) t.push_back(0.04 * i / (8.0 * k));
    for (double v = 0.04; v < 25; v *= std::pow(1.25, 1.0 / k)) t.push_back(v);
    t.push_back(25.0);
    auto g = build_graded_grid(1, 5.0, static_cast<std::size_t>(40 * k + 1), static_cast<std::size_t>(24 * k), 2.0, t);
    auto data = [](const SpaceTimePoint& p) { return 1.0 + 0.2 * p.x[0] + 0.1 * p.y * p.y; };
    ExtensionProblem pr;
    pr.grid = g;
    pr.a = a;
    pr.V = expression_potential(V_expr, g);
    pr.start_data = ScalarField::sample(g, a, data);
    pr.boundary = data;
    return check_monotonicity(solve_backward_extension(pr), pr.V);
}

struct MonotonicityExact {
    int n = 1;
    double a = 0.0;
    MonotonicityReport report;
    double theta_tilde_expected = 0.0;
    double worst_mass_error = 0.0;  // relative
};

/// U = y^2 - 2(1+a) t against its closed-form masses.
inline MonotonicityExact monotonicity_exact(int n, double a) {
    std::vector<double> times{0.0};
    for (int k = 1; k <= 40; ++k) times.push_back(0.0025 * k);
    const double k = 2 * (1 + a);
    MonotonicityExact m;
    m.n = n;
    m.a = a;
    m.report = check_monotonicity([k](const SpaceTimePoint& p) { return p.y * p.y - k * p.t; }, n, a, 0.0, times);
    auto mass = [&](double R, double t) {
        return half_ball_moment(n, a, 4, R) - 2 * k * t * half_ball_moment(n, a, 2, R) + k * k * t * t * half_ball_moment(n, a, 0, R);
    };
    double q4 = 16 * half_ball_moment(n, a, 4, 4) - k * 256 * half_ball_moment(n, a, 2, 4) +
                k * k * 4096.0 / 3 * half_ball_moment(n, a, 0, 4);
    m.theta_tilde_expected = q4 / mass(1, 0);
    for (std::size_t i = 0; i < times.size(); ++i)
        m.worst_mass_error = std::max(m.worst_mass_error, std::abs(m.report.masses[i] / mass(2, times[i]) - 1.0));
    return m;
}

/// The field for measure-order and doubling, with its expected thin order when known.
inline std::pair<HarnessField, double> config_field(const ExperimentConfig& c) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (c.field_kind == "constant") {
        auto h = HarnessField::analytic("constant", c.field_n, c.a, [](const SpaceTimePoint&) { return 1.0; }, true);
        return {h, double(c.field_n)};
    }
    if (c.field_kind == "harmonic") {
        const int k = c.kappa;
        auto h = HarnessField::analytic("harmonic", 2, c.a, [k](const SpaceTimePoint& p) {
            return std::real(std::pow(std::complex<double>(p.x[0], p.x[1]), k));
        }, true);
        h.quadrature.azimuth_points = std::max<std::size_t>(64, 16 * static_cast<std::size_t>(k + 1));
        return {h, 2.0 * k + 2.0};
    }
    if (c.field_kind == "eigen") {
        auto m = eigen_mode(c.field_lambda, c.s);
        auto h = eigen_field(m);
        h.quadrature.azimuth_points = 16 * static_cast<std::size_t>(m.kappa + 1);
        return {h, 2.0 * m.kappa + 2.0};
    }
    if (c.field_kind == "snapshot") {
        auto U = read_snapshot(c.field_snapshot);
        if (std::abs(U.weight_exponent() - c.a) > 1e-12) throw ConfigError("field snapshot has a different weight exponent");
        return {HarnessField::from_field(std::move(U), nan, "snapshot"), nan};
    }
    auto pr = config_problem(c);
    return {HarnessField::from_solution(solve_backward_extension(pr), pr.V, "solve"), nan};
}

// ---------------------------------------------------------------------------
// Subcommands

namespace detail {

inline void emit(RunManifest& m, const ExperimentConfig& c, const std::string& name, const std::string& content) {
    write_file_atomic(std::filesystem::path(c.out_dir) / name, content);
    m.outputs.push_back(name);
}

inline RunManifest run_weights(const ExperimentConfig& c, StageClock& clock, RunManifest& m) {
    CsvTable t{{"s", "lambda", "N1", "N2", "N3", "N4", "N_emp", "ode_residual", "derivative_consistency"}, {}};
    auto reports = clock("sigma", [&] {
        return parallel_map<SigmaPropertyReport>(c.weight_lambdas.size(), [&](std::size_t i) {
            return verify_sigma_properties(build_sigma(c.s, c.weight_lambdas[i], c.sigma_nodes));
        });
    });
    for (const auto& R : reports) {
        std::string tag = strprintf("lambda=%g", R.lambda);
        m.check("property1 " + tag, R.upper_violation_1 <= 0.0 && std::isfinite(R.N1), "N1 = " + num(R.N1));
        m.check("property2 " + tag, R.upper_violation_2 <= 0.0 && std::isfinite(R.N2), "N2 = " + num(R.N2));
        m.check("property3 " + tag, std::isfinite(R.N3), "N3 = " + num(R.N3));
        m.check("property4 " + tag, std::isfinite(R.N4), "N4 = " + num(R.N4));
        m.check("ode_residual " + tag, R.ode_residual <= 1e-6, num(R.ode_residual));
        m.check("quadrature " + tag, R.quadrature_converged, {}, false);
        m.constant("N_emp " + tag, R.N_emp);
        t.add({num(c.s), num(R.lambda), num(R.N1), num(R.N2), num(R.N3), num(R.N4), num(R.N_emp), num(R.ode_residual),
               num(R.derivative_consistency)});
    }
    emit(m, c, "weights.csv", t.str());
    nlohmann::ordered_json js = nlohmann::ordered_json::array();
    for (const auto& R : reports) {
        auto fin = [](double v) -> nlohmann::ordered_json {
            if (std::isfinite(v)) return v;
            return num(v);
        };
        js.push_back({{"s", c.s},
                      {"lambda", R.lambda},
                      {"property1", R.upper_violation_1 <= 0.0 && std::isfinite(R.N1)},
                      {"property2", R.upper_violation_2 <= 0.0 && std::isfinite(R.N2)},
                      {"property3", std::isfinite(R.N3)},
                      {"property4", std::isfinite(R.N4)},
                      {"N1", fin(R.N1)}, {"N2", fin(R.N2)}, {"N3", fin(R.N3)}, {"N4", fin(R.N4)},
                      {"N_emp", fin(R.N_emp)},
                      {"ode_residual", R.ode_residual},
                      {"sigma_increasing", R.sigma_increasing},
                      {"sigma_over_t_decreasing", R.sigma_over_t_decreasing},
                      {"seed", c.seed},
                      {"config_hash", m.config_hash}});
    }
    emit(m, c, "weights.json", js.dump(2) + "\n");
    for (double l : c.weight_lambdas) {
        auto name = strprintf("sigma_lambda%g.csv", l);
        write_sigma_csv(build_sigma(c.s, l, c.sigma_nodes), (std::filesystem::path(c.out_dir) / name).string());
        m.outputs.push_back(name);
    }
    return m;
}

inline RunManifest run_kernels(const ExperimentConfig& c, StageClock& clock, RunManifest& m) {
    auto rows = clock("kernels", [] { return kernel_identity_checks(); });
    CsvTable t{{"check", "a", "t", "value", "target", "error", "tolerance"}, {}};
    for (const auto& r : rows) {
        m.check(strprintf("%s a=%g t=%g", r.check.c_str(), r.a, r.t), r.passed(), "error " + num(r.error()));
        t.add({r.check, num(r.a), num(r.t), num(r.value), num(r.target), num(r.error()), num(r.tolerance)});
    }
    emit(m, c, "kernels.csv", t.str());
    return m;
}

inline RunManifest run_operator(const ExperimentConfig& c, StageClock& clock, RunManifest& m) {
    auto rows = clock("battery", [&] { return operator_battery(c.operator_s, c.operator_fields, c.seed); });
    CsvTable t{{"s", "field", "relative_l2", "imag_residue"}, {}};
    double worst = 0.0;
    for (const auto& r : rows) {
        worst = std::max(worst, r.relative_l2);
        t.add({num(r.s), std::to_string(r.field), num(r.relative_l2), num(r.imag_residue)});
    }
    m.check("spectral_vs_balakrishnan", worst <= 1e-4, "worst relative L2 " + num(worst));
    double heat = clock("heat", [&] { return heat_reduction_error(c.seed); });
    m.check("order_one_is_heat_operator", heat <= 1e-10, num(heat));
    m.constant("worst_relative_l2", worst);
    emit(m, c, "operator.csv", t.str());
    return m;
}

inline RunManifest run_extension(const ExperimentConfig& c, StageClock& clock, RunManifest& m) {
    auto st = clock("convergence", [&] { return convergence_study(c.a, c.levels); });
    CsvTable t{{"a", "level", "error", "order"}, {}};
    for (std::size_t i = 0; i < st.levels.size(); ++i)
        t.add({num(c.a), std::to_string(st.levels[i]), num(st.errors[i]), i ? num(st.orders[i - 1]) : ""});
    m.check("convergence", st.passed(), st.exact ? "exact to roundoff" : "orders " + num(*std::min_element(st.orders.begin(), st.orders.end())));
    emit(m, c, "convergence.csv", t.str());
    auto np = clock("trace_characterization", [&] { return gaussian_bump_np(c.s); });
    m.check("trace_characterization", np.relative_l2 <= 1e-2, "relative L2 " + num(np.relative_l2));
    m.constant("trace_relative_l2", np.relative_l2);
    auto pr = config_problem(c);
    auto sol = clock("solve", [&] { return solve_backward_extension(pr); });
    m.check("solution_finite", sol.U.all_finite());
    m.check("trace_fit", !sol.trace_flag, "fit residual " + num(sol.trace_fit_residual), false);
    m.constant("V_norm1", pr.V.norm_1());
    m.constant("boundary_ratio", sol.boundary_ratio);
    m.constant("condition_estimate", sol.condition_estimate);
    std::filesystem::create_directories(c.out_dir);
    write_snapshot(sol.U, (std::filesystem::path(c.out_dir) / "solution").string());
    m.outputs.push_back("solution.bin");
    m.outputs.push_back("solution.json");
    return m;
}

inline std::string battery_csv(const BatteryReport& b) {
    CsvTable t{{"function", "parameters", "lhs", "rhs", "margin", "empirical_constant", "quadrature_error", "status"}, {}};
    for (const auto& r : b.rows) {
        std::string p;
        for (const auto& [k, v] : r.parameters) p += (p.empty() ? "" : ";") + k + "=" + num(v);
        t.add({r.function, p, num(r.lhs), num(r.rhs), num(r.margin), num(r.empirical_constant), num(r.quadrature_error), r.status});
    }
    return t.str();
}

inline RunManifest run_inequalities(const ExperimentConfig& c, StageClock& clock, RunManifest& m) {
    auto want = [&](const char* w) { return std::find(c.which.begin(), c.which.end(), w) != c.which.end(); };
    if (want("hardy") || want("trace")) {
        auto fs = random_bump_battery(1, c.battery, c.seed);
        if (want("hardy")) {
            auto b = clock("hardy", [&] { return hardy_battery(fs, c.hardy_b, c.a_values); });
            m.check("hardy_zero_violations", b.violations == 0, std::to_string(b.violations) + " of " + std::to_string(b.rows.size()));
            m.check("hardy_resolved", b.unresolved == 0, std::to_string(b.unresolved) + " unresolved", false);
            emit(m, c, "hardy.csv", battery_csv(b));
        }
        if (want("trace")) {
            auto b = clock("trace", [&] { return trace_battery(fs, c.trace_A, c.a_values); });
            m.check("trace_zero_violations", b.violations == 0, std::to_string(b.violations) + " of " + std::to_string(b.rows.size()));
            m.check("trace_resolved", b.unresolved == 0, std::to_string(b.unresolved) + " unresolved", false);
            m.constant("C0_emp", b.empirical_constant);
            emit(m, c, "trace.csv", battery_csv(b));
        }
    }
    if (want("doubling")) {
        auto rows = clock("doubling", [&] { return doubling_implication_battery(c.doubling_functions, c.seed, c.a); });
        CsvTable t{{"function", "N", "hypothesis_max", "ratio_max", "exp_N", "status"}, {}};
        std::size_t bad = 0;
        for (const auto& r : rows) {
            if (r.report.status != "holds") ++bad;
            t.add({r.function, num(r.N), num(r.report.hypothesis_max), num(r.report.lhs), num(r.report.rhs), r.report.status});
        }
        m.check("doubling_implication", bad == 0 && rows.size() == c.doubling_functions,
                std::to_string(bad) + " of " + std::to_string(rows.size()) + " functions violate ratio <= e^N");
        emit(m, c, "doubling.csv", t.str());
    }
    if (want("carleman")) {
        auto b = clock("carleman", [&] { return carleman_battery(c.s, c.alpha0, c.delta, c.c_factors); });
        CsvTable t{{"function", "alpha", "c", "lhs", "source_term", "boundary_mass", "boundary_gradient", "M_emp", "source_residual"}, {}};
        for (const auto& r : b.rows)
            t.add({r.function, num(r.alpha), num(r.c), num(r.alpha_term + r.gradient_term), num(r.source_term), num(r.boundary_mass),
                   num(r.boundary_gradient), num(r.M_emp), num(r.source_residual)});
        m.check("carleman_single_constant", b.all_finite && b.violations_at_M == 0 && !b.any_flagged, "M_emp " + num(b.M_emp));
        m.check("carleman_alpha_stability", b.alpha_spread <= 4.0, "spread " + num(b.alpha_spread));
        m.constant("M_emp_carleman", b.M_emp);
        emit(m, c, "carleman.csv", t.str());
    }
    if (want("monotonicity")) {
        CsvTable t{{"case", "n", "a", "theta_tilde", "M_emp", "window", "admissible_slices", "status"}, {}};
        clock("monotonicity_exact", [&] {
            for (int n : {1, 2}) {
                auto e = monotonicity_exact(n, c.a);
                bool ok = e.report.status == "holds" && std::abs(e.report.theta_tilde / e.theta_tilde_expected - 1) <= 1e-6 &&
                          e.worst_mass_error <= 1e-6;
                m.check(strprintf("monotonicity_exact n=%d", n), ok, "mass error " + num(e.worst_mass_error));
                t.add({"exact", std::to_string(n), num(c.a), num(e.report.theta_tilde), num(e.report.M_emp), num(e.report.window),
                       std::to_string(e.report.admissible_slices), e.report.status});
            }
            return 0;
        });
        std::vector<double> Ms;
        clock("monotonicity_numerical", [&] {
            for (int k : c.monotonicity_levels) {
                auto r = monotonicity_numerical(k, c.a, c.potential_expr);
                Ms.push_back(r.M_emp);
                m.check(strprintf("monotonicity_numerical level=%d", k), r.status == "holds" && r.admissible_slices > 0,
                        "M_emp " + num(r.M_emp));
                t.add({strprintf("numerical_k%d", k), "1", num(c.a), num(r.theta_tilde), num(r.M_emp), num(r.window),
                       std::to_string(r.admissible_slices), r.status});
            }
            return 0;
        });
        if (Ms.size() > 1) {
            double q = *std::max_element(Ms.begin(), Ms.end()) / *std::min_element(Ms.begin(), Ms.end());
            m.check("monotonicity_refinement", q <= 2.0, "ratio " + num(q));
        }
        if (!Ms.empty()) m.constant("M_emp_monotonicity", Ms.back());
        emit(m, c, "monotonicity.csv", t.str());
    }
    return m;
}

inline RunManifest run_order(const ExperimentConfig& c, StageClock& clock, RunManifest& m) {
    auto [U, expected] = clock("field", [&] { return config_field(c); });
    auto fit = clock("fit", [&] {
        return fit_vanishing_order(U, c.region == "thin" ? OrderRegion::thin : OrderRegion::thick, c.order_radii);
    });
    CsvTable t{{"r", "integral", "uncertainty", "in_window"}, {}};
    for (std::size_t i = 0; i < fit.radii.size(); ++i)
        t.add({num(fit.radii[i]), num(fit.integrals[i]), num(fit.uncertainty[i]),
               i >= fit.window_begin && i < fit.window_end ? "1" : "0"});
    for (const auto& w : fit.warnings) m.check("fit_window", false, w, false);
    m.constant("order", fit.slope);
    m.constant("r_squared", fit.r_squared);
    if (c.region == "thin" && std::isfinite(expected))
        m.check("order_matches_expected", std::abs(fit.slope / expected - 1.0) <= 0.02,
                "fitted " + num(fit.slope) + ", expected " + num(expected));
    emit(m, c, "order_fit.csv", t.str());
    return m;
}

inline RunManifest run_doubling(const ExperimentConfig& c, StageClock& clock, RunManifest& m) {
    auto [U, expected] = clock("field", [&] { return config_field(c); });
    (void)expected;
    auto d = clock("series", [&] { return doubling_series(U, c.doubling_radii, c.M); });
    CsvTable t{{"r", "integral", "ratio", "N_formula"}, {}};
    for (std::size_t i = 0; i < d.radii.size(); ++i) t.add({num(d.radii[i]), num(d.integrals[i]), num(d.ratios[i]), num(d.N_formula)});
    m.check("ratios_finite", std::all_of(d.ratios.begin(), d.ratios.end(), [](double q) { return std::isfinite(q); }));
    m.check("ratios_below_formula", !d.flagged, "M " + num(c.M) + ", smallest sufficient M " + num(d.M_required), false);
    m.constant("theta", d.theta);
    m.constant("N_formula", d.N_formula);
    m.constant("M_required", d.M_required);
    auto tb = clock("two_ball", [&] { return two_ball_one_cylinder(U, c.two_ball_r, c.two_ball_rho, c.M); });
    m.check("two_ball_one_cylinder", tb.status == "holds", "lhs " + num(tb.lhs) + ", rhs " + num(tb.rhs), false);
    m.constant("two_ball_threshold", two_ball_threshold(U, c.two_ball_r, c.two_ball_rho));
    emit(m, c, "doubling_series.csv", t.str());
    return m;
}

inline RunManifest run_sweep(const ExperimentConfig& c, StageClock& clock, RunManifest& m) {
    SweepOptions opt;
    opt.M = c.M;
    auto rows = clock("sweep", [&] { return order_vs_potential_sweep(c.sweep_lambdas, c.s, opt); });
    CsvTable t{{"lambda", "V_norm", "order", "ratio", "theta", "N_formula"}, {}};
    for (const auto& r : rows) {
        t.add({num(r.lambda), num(r.V_norm), num(r.order), num(r.ratio), num(r.theta), num(r.N_formula)});
        m.check(strprintf("order lambda=%g", r.lambda), std::abs(r.order / r.expected_order - 1.0) <= 0.02,
                "fitted " + num(r.order) + ", expected " + num(r.expected_order));
    }
    double spread = sweep_ratio_spread(rows);
    m.check("ratio_spread", spread <= 2.0, num(spread));
    m.constant("ratio_spread", spread);
    emit(m, c, "sweep.csv", t.str());
    return m;
}

}  // namespace detail

/// Runs one subcommand, writes its CSV files and `manifest.json` into c.out_dir.
inline RunManifest run(const ExperimentConfig& c, const std::string& sub) {
    validate_config(c, sub);
    RunManifest m;
    m.subcommand = sub;
    m.config_hash = c.hash();
    m.seed = c.seed;
    StageClock clock(m);
    std::filesystem::create_directories(c.out_dir);
    if (sub == "verify-weights") detail::run_weights(c, clock, m);
    else if (sub == "verify-kernels") detail::run_kernels(c, clock, m);
    else if (sub == "verify-operator") detail::run_operator(c, clock, m);
    else if (sub == "solve-extension") detail::run_extension(c, clock, m);
    else if (sub == "verify-inequalities") detail::run_inequalities(c, clock, m);
    else if (sub == "measure-order") detail::run_order(c, clock, m);
    else if (sub == "doubling") detail::run_doubling(c, clock, m);
    else detail::run_sweep(c, clock, m);
    m.outputs.push_back("manifest.json");
    write_file_atomic(std::filesystem::path(c.out_dir) / "manifest.json", m.to_json().dump(2) + "\n");
    return m;
}

}  // namespace quclab
