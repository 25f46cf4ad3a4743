#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "quclab/carleman_weights.hpp"
#include "quclab/expression.hpp"
#include "quclab/extension_solver.hpp"
#include "quclab/jet.hpp"
#include "quclab/parallel.hpp"
#include "quclab/quadrature.hpp"
#include "quclab/special_kernels.hpp"
#include "quclab/weighted_grid.hpp"

namespace quclab {

// ---------------------------------------------------------------------------
// Smooth building blocks, generic over double and Jet2.

inline double value_of(double v) { return v; }
inline double value_of(const Jet2& j) { return j.v; }

/// exp(1 - 1/(1 - r2)) for r2 < 1, zero beyond; equals 1 at r2 = 0.
template <class T>
T bump(const T& r2) {
    using std::exp;
    if (value_of(r2) >= 1.0 - 1e-3) return T(0.0);
    return exp(T(1.0) - T(1.0) / (T(1.0) - r2));
}

/// C-infinity step: 0 for u <= 0, 1 for u >= 1.
template <class T>
T smooth_step(const T& u) {
    using std::exp;
    double v = value_of(u);
    if (v <= 1e-3) return T(0.0);
    if (v >= 1.0 - 1e-3) return T(1.0);
    T z0 = exp(T(-1.0) / u), z1 = exp(T(-1.0) / (T(1.0) - u));
    return z0 / (z0 + z1);
}

// ---------------------------------------------------------------------------
// Test functions on the closed half-space, with time as a fourth variable.

struct TestFunction {
    std::string name;
    int n = 1;
    double radius = 1.0;  // support inside the closed half-ball of this radius
    std::string smoothness = "C-infinity";
    bool even_in_y = false;
    double time_support = std::numeric_limits<double>::infinity();  // zero for t >= time_support
    double a = 0.0;                                                  // weight exponent it was built for
    std::function<double(const std::array<double, 4>&)> eval;       // (x1, x2, y, t)
    std::function<Jet2(const std::array<Jet2, 4>&)> eval_jet;
    std::function<double(const SpaceTimePoint&)> exact_operator;     // optional closed form of the extended operator
    bool has_potential = false;
    Expression potential;  // V(x1, x2, t) with lim y^a d_y w = V w

    static std::array<double, 4> coords(const SpaceTimePoint& p) { return {p.x[0], p.x[1], p.y, p.t}; }

    double value(const SpaceTimePoint& p) const { return eval(coords(p)); }

    /// Value and derivatives along one axis (0 = x1, 1 = x2, 2 = y, 3 = t).
    Jet2 along(const SpaceTimePoint& p, int axis) const {
        auto c = coords(p);
        std::array<Jet2, 4> j{Jet2(c[0]), Jet2(c[1]), Jet2(c[2]), Jet2(c[3])};
        j[static_cast<std::size_t>(axis)] = Jet2::variable(c[static_cast<std::size_t>(axis)]);
        return eval_jet(j);
    }

    /// Spatial gradient (x1, x2, y); the x2 entry is zero for n = 1.
    std::array<double, 3> spatial_gradient(const SpaceTimePoint& p) const {
        std::array<double, 3> g{along(p, 0).d, 0.0, along(p, 2).d};
        if (n == 2) g[1] = along(p, 1).d;
        return g;
    }
};

/// Wraps a generic callable f(x1, x2, y, t) usable with double and Jet2.
template <class F>
TestFunction make_test_function(std::string name, int n, double radius, F f) {
    if (n != 1 && n != 2) throw std::invalid_argument("make_test_function: n must be 1 or 2");
    TestFunction tf;
    tf.name = std::move(name);
    tf.n = n;
    tf.radius = radius;
    tf.eval = [f](const std::array<double, 4>& c) { return f(c[0], c[1], c[2], c[3]); };
    tf.eval_jet = [f](const std::array<Jet2, 4>& c) { return f(c[0], c[1], c[2], c[3]); };
    return tf;
}

inline TestFunction zero_function(int n) {
    auto tf = make_test_function("zero", n, 1.0, [](auto, auto, auto, auto) { return 0.0; });
    tf.even_in_y = true;
    return tf;
}

/// (1 - |X|^2/R^2)_+^p, only C^{p-1} across the sphere.
inline TestFunction power_bump(int n, double R, double p) {
    auto tf = make_test_function("power_bump", n, R, [n, R, p](auto x1, auto x2, auto y, auto) {
        using T = decltype(x1 * y);
        T r2 = (x1 * x1 + y * y + (n == 2 ? x2 * x2 : T(0.0))) / (R * R);
        if (value_of(r2) >= 1.0) return T(0.0);
        using std::pow;
        return T(pow(T(1.0) - r2, p));
    });
    tf.smoothness = "C^" + std::to_string(static_cast<int>(std::ceil(p)) - 1);
    tf.even_in_y = true;
    return tf;
}

/// bump(|X - X0|^2/rho^2) (1 + c0 x1 + c1 x2 + c2 y + c3 |X - X0|^2).
inline TestFunction smooth_bump(int n, std::array<double, 3> center, double rho, std::array<double, 4> poly,
                                std::string name = "smooth_bump") {
    if (!(rho > 0.0)) throw std::invalid_argument("smooth_bump: rho must be positive");
    double reach = std::sqrt(center[0] * center[0] + (n == 2 ? center[1] * center[1] : 0.0) + center[2] * center[2]) + rho;
    auto tf = make_test_function(std::move(name), n, reach, [n, center, rho, poly](auto x1, auto x2, auto y, auto) {
        using T = decltype(x1 * y);
        T d1 = x1 - center[0], d2 = n == 2 ? x2 - center[1] : T(0.0), dy = y - center[2];
        T q = d1 * d1 + d2 * d2 + dy * dy;
        T b = bump(T(q / (rho * rho)));
        if (value_of(b) == 0.0) return T(0.0);
        T lin = T(1.0) + poly[0] * x1 + poly[2] * y + poly[3] * q;
        if (n == 2) lin = lin + poly[1] * x2;
        return T(b * lin);
    });
    tf.even_in_y = center[2] == 0.0 && poly[2] == 0.0;
    return tf;
}

/// exp(-|X|^2/kappa) times a smooth cutoff equal to 1 on |X| <= R/2 and 0 beyond R.
inline TestFunction gaussian_cutoff(int n, double kappa, double R) {
    auto tf = make_test_function("gaussian_cutoff", n, R, [n, kappa, R](auto x1, auto x2, auto y, auto) {
        using T = decltype(x1 * y);
        using std::exp;
        T r2 = x1 * x1 + y * y + (n == 2 ? x2 * x2 : T(0.0));
        T cut = smooth_step(T((R * R - r2) / (0.75 * R * R)));
        return T(exp(-r2 / kappa) * cut);
    });
    tf.even_in_y = true;
    return tf;
}

/// 1 on |X| <= r_flat, smoothly cut to 0 at R.
inline TestFunction plateau(int n, double r_flat, double R) {
    if (!(r_flat > 0.0 && r_flat < R)) throw std::invalid_argument("plateau: need 0 < r_flat < R");
    auto tf = make_test_function("plateau", n, R, [n, r_flat, R](auto x1, auto x2, auto y, auto) {
        using T = decltype(x1 * y);
        T r2 = x1 * x1 + y * y + (n == 2 ? x2 * x2 : T(0.0));
        return smooth_step(T((R * R - r2) / (R * R - r_flat * r_flat)));
    });
    tf.even_in_y = true;
    return tf;
}

/// Concentrated on the sphere |X| = r0: bump((|X| - r0)^2 / width^2).
inline TestFunction ring(int n, double r0, double width) {
    if (!(width > 0.0 && width < r0)) throw std::invalid_argument("ring: need 0 < width < r0");
    auto tf = make_test_function("ring", n, r0 + width, [n, r0, width](auto x1, auto x2, auto y, auto) {
        using T = decltype(x1 * y);
        using std::sqrt;
        T r2 = x1 * x1 + y * y + (n == 2 ? x2 * x2 : T(0.0));
        double rv = std::sqrt(value_of(r2));
        if (rv <= r0 - width || rv >= r0 + width) return T(0.0);
        T d = sqrt(r2) - r0;
        return bump(T(d * d / (width * width)));
    });
    tf.even_in_y = true;
    return tf;
}

/// Seeded battery of smooth bumps with random centers, widths and linear-quadratic factors.
inline std::vector<TestFunction> random_bump_battery(int n, std::size_t count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(-1.0, 1.0), uy(-0.5, 1.0), ur(0.4, 1.5), uc(-1.0, 1.0), uq(-0.5, 0.5);
    std::vector<TestFunction> out;
    for (std::size_t k = 0; k < count; ++k) {
        std::array<double, 3> c{ux(rng), n == 2 ? ux(rng) : 0.0, uy(rng)};
        double rho = ur(rng);
        std::array<double, 4> p{uc(rng), n == 2 ? uc(rng) : 0.0, uc(rng), uq(rng)};
        // keep part of the support inside the half-space
        if (c[2] + rho <= 0.05) c[2] = 0.1 - rho;
        out.push_back(smooth_bump(n, c, rho, p, "bump_" + std::to_string(k)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reports.

struct InequalityReport {
    std::string inequality;
    std::string function;
    double lhs = 0.0, rhs = 0.0, margin = 0.0;
    double empirical_constant = 0.0;
    std::vector<std::pair<std::string, double>> parameters;
    double quadrature_error = 0.0;
    bool resolved = true;
    std::string status = "holds";  // holds, violated, vacuous, unresolved

    bool violated(double slack = 1e-12) const { return margin < -slack * std::abs(rhs); }
    double parameter(const std::string& key) const {
        for (const auto& [k, v] : parameters)
            if (k == key) return v;
        throw std::out_of_range("InequalityReport: no parameter " + key);
    }
};

struct BatteryReport {
    std::string inequality;
    std::vector<InequalityReport> rows;
    double empirical_constant = 0.0;  // max over rows
    std::size_t violations = 0, unresolved = 0, vacuous = 0;
};

/// Deterministic merge: rows sorted by function name then parameter tuple.
inline BatteryReport merge_reports(std::string inequality, std::vector<InequalityReport> rows) {
    std::stable_sort(rows.begin(), rows.end(), [](const InequalityReport& l, const InequalityReport& r) {
        if (l.function != r.function) return l.function < r.function;
        return l.parameters < r.parameters;
    });
    BatteryReport b;
    b.inequality = std::move(inequality);
    for (const auto& r : rows) {
        if (std::isnan(r.lhs) || std::isnan(r.rhs)) throw std::domain_error("merge_reports: NaN in report");
        b.empirical_constant = std::max(b.empirical_constant, r.empirical_constant);
        if (!r.resolved) ++b.unresolved;
        if (r.status == "vacuous") ++b.vacuous;
        else if (r.status == "violated") ++b.violations;
    }
    b.rows = std::move(rows);
    return b;
}

// ---------------------------------------------------------------------------
// Cubature on half-balls and thin balls.

inline QuadratureOptions lab_quadrature() {
    QuadratureOptions o;
    o.radial_panels = 8;
    o.radial_order = 16;
    o.elevation_order = 32;
    o.azimuth_points = 48;
    return o;
}

namespace detail {

struct LabPoint {
    SpaceTimePoint p;
    double w;
};

inline std::vector<LabPoint> lab_points(const Cubature& c, double t) {
    std::vector<LabPoint> out(c.weights.size());
    for (std::size_t i = 0; i < c.weights.size(); ++i) {
        out[i].p.x = {c.offsets[i][0], c.offsets[i][1]};
        out[i].p.y = c.offsets[i][2];
        out[i].p.t = t;
        out[i].w = c.weights[i];
    }
    return out;
}

// extra refinement levels tried before a row is reported unresolved
constexpr int max_refinements = 2;

inline QuadratureOptions refined(QuadratureOptions o) {
    o.radial_panels *= 2;
    o.elevation_order += 16;
    o.azimuth_points = o.azimuth_points * 3 / 2;
    return o;
}

inline void check_a(double a, const char* who) {
    if (!(a > -1.0 && a < 1.0)) throw std::domain_error(std::string(who) + ": a must lie in (-1, 1)");
}

// e^{-46} ~ 1e-20: Gaussian tails beyond this radius are below any reported digit.
inline double gaussian_reach(double b, double support) { return std::min(support, std::sqrt(4.0 * b * 46.0)); }

}  // namespace detail

/// Closed-form moment int_{B_R^+} y^{m+a} dX.
inline double half_ball_moment(int n, double a, double m, double R) {
    double p = m + a;
    double d = n + 1 + p;
    double angular = n == 1 ? std::sqrt(std::numbers::pi) * gamma_fn(0.5 * (p + 1)) / gamma_fn(0.5 * p + 1)
                            : 2.0 * std::numbers::pi / (p + 1.0);
    return std::pow(R, d) / d * angular;
}

// ---------------------------------------------------------------------------
// Hardy inequality in Gaussian space.

namespace detail {
// {int y^a h^2 |X|^2/(8b) e, int y^a |grad h|^2 e, int y^a h^2 e} with e = exp(-|X|^2/4b).
inline std::array<double, 3> hardy_integrals(const TestFunction& h, double b, double a, const QuadratureOptions& o) {
    double R = gaussian_reach(b, h.radius);
    auto pts = lab_points(half_ball_cubature(h.n, a, R, o), 0.0);
    std::array<double, 3> s{0.0, 0.0, 0.0};
    for (const auto& q : pts) {
        double r2 = q.p.x[0] * q.p.x[0] + q.p.x[1] * q.p.x[1] + q.p.y * q.p.y;
        double e = std::exp(-r2 / (4.0 * b));
        double v = h.value(q.p);
        if (v == 0.0) {
            auto g = h.spatial_gradient(q.p);
            s[1] += q.w * (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]) * e;
            continue;
        }
        auto g = h.spatial_gradient(q.p);
        s[0] += q.w * v * v * r2 / (8.0 * b) * e;
        s[1] += q.w * (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]) * e;
        s[2] += q.w * v * v * e;
    }
    return s;
}
}  // namespace detail

inline InequalityReport check_hardy(const TestFunction& h, double b, double a, const QuadratureOptions& opt = lab_quadrature()) {
    detail::check_a(a, "check_hardy");
    if (!(b > 0.0)) throw std::domain_error("check_hardy: b must be positive");
    const double k = 0.5 * (h.n + 1 + a);
    auto rhs_of = [&](const std::array<double, 3>& c) { return 2.0 * b * c[1] + k * c[2]; };
    QuadratureOptions o = opt;
    auto c0 = detail::hardy_integrals(h, b, a, o);
    auto c1 = detail::hardy_integrals(h, b, a, o = detail::refined(o));
    for (int level = 0; level < detail::max_refinements; ++level) {
        double err = std::max(std::abs(c1[0] - c0[0]), std::abs(rhs_of(c1) - rhs_of(c0)));
        if (err <= 1e-2 * rhs_of(c1)) break;
        c0 = c1;
        c1 = detail::hardy_integrals(h, b, a, o = detail::refined(o));
    }
    InequalityReport r;
    r.inequality = "hardy";
    r.function = h.name;
    r.parameters = {{"a", a}, {"b", b}, {"n", double(h.n)}};
    r.lhs = c1[0];
    r.rhs = rhs_of(c1);
    double rhs0 = rhs_of(c0);
    r.quadrature_error = std::max(std::abs(c1[0] - c0[0]), std::abs(r.rhs - rhs0));
    r.margin = r.rhs - r.lhs;
    r.empirical_constant = r.rhs > 0.0 ? r.lhs / r.rhs : 0.0;
    r.resolved = r.quadrature_error <= 1e-2 * r.rhs || r.rhs == 0.0;
    r.status = !r.resolved ? "unresolved" : (r.violated() ? "violated" : "holds");
    return r;
}

// ---------------------------------------------------------------------------
// Trace inequality, checked against the sharp constant 2^{-a} Gamma((1-a)/2) / Gamma((1+a)/2).

/// Best constant in int f(x,0)^2 <= C (A^{1+a} int f^2 y^a + A^{a-1} int |grad f|^2 y^a).
inline double sharp_trace_constant(double a) { return extension_trace_constant(a); }

namespace detail {
// {int f(x,0)^2 dx, int f^2 y^a, int |grad f|^2 y^a}
inline std::array<double, 3> trace_integrals(const TestFunction& f, double a, const QuadratureOptions& o) {
    std::array<double, 3> s{0.0, 0.0, 0.0};
    for (const auto& q : lab_points(thin_ball_cubature(f.n, f.radius, o), 0.0)) {
        double v = f.value(q.p);
        s[0] += q.w * v * v;
    }
    for (const auto& q : lab_points(half_ball_cubature(f.n, a, f.radius, o), 0.0)) {
        double v = f.value(q.p);
        auto g = f.spatial_gradient(q.p);
        s[1] += q.w * v * v;
        s[2] += q.w * (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
    }
    return s;
}
}  // namespace detail

inline InequalityReport check_trace(const TestFunction& f, double A, double a, const QuadratureOptions& opt = lab_quadrature()) {
    detail::check_a(a, "check_trace");
    if (!(A > 1.0)) throw std::domain_error("check_trace: A must exceed 1");
    auto bracket = [&](const std::array<double, 3>& c) { return std::pow(A, 1 + a) * c[1] + std::pow(A, a - 1) * c[2]; };
    const double C0 = sharp_trace_constant(a);
    QuadratureOptions o = opt;
    auto c0 = detail::trace_integrals(f, a, o);
    auto c1 = detail::trace_integrals(f, a, o = detail::refined(o));
    for (int level = 0; level < detail::max_refinements; ++level) {
        double err = std::max(std::abs(c1[0] - c0[0]), C0 * std::abs(bracket(c1) - bracket(c0)));
        if (err <= 1e-2 * C0 * bracket(c1)) break;
        c0 = c1;
        c1 = detail::trace_integrals(f, a, o = detail::refined(o));
    }
    InequalityReport r;
    r.inequality = "trace";
    r.function = f.name;
    r.parameters = {{"A", A}, {"a", a}, {"n", double(f.n)}};
    r.lhs = c1[0];
    double br = bracket(c1);
    r.rhs = C0 * br;
    r.quadrature_error = std::max(std::abs(c1[0] - c0[0]), C0 * std::abs(br - bracket(c0)));
    r.margin = r.rhs - r.lhs;
    r.empirical_constant = br > 0.0 ? r.lhs / br : 0.0;
    r.resolved = r.quadrature_error <= 1e-2 * r.rhs || r.rhs == 0.0;
    r.status = !r.resolved ? "unresolved" : (r.violated() ? "violated" : "holds");
    return r;
}

/// Every (function, b, a) triple, evaluated in parallel and merged by sorted key.
inline BatteryReport hardy_battery(const std::vector<TestFunction>& fs, const std::vector<double>& b_values,
                                   const std::vector<double>& a_values, const QuadratureOptions& opt = lab_quadrature()) {
    const std::size_t nb = b_values.size(), na = a_values.size();
    auto rows = parallel_map<InequalityReport>(fs.size() * nb * na, [&](std::size_t i) {
        return check_hardy(fs[i / (nb * na)], b_values[(i / na) % nb], a_values[i % na], opt);
    });
    return merge_reports("hardy", std::move(rows));
}

inline BatteryReport trace_battery(const std::vector<TestFunction>& fs, const std::vector<double>& A_values,
                                   const std::vector<double>& a_values, const QuadratureOptions& opt = lab_quadrature()) {
    const std::size_t nA = A_values.size(), na = a_values.size();
    auto rows = parallel_map<InequalityReport>(fs.size() * nA * na, [&](std::size_t i) {
        return check_trace(fs[i / (nA * na)], A_values[(i / na) % nA], a_values[i % na], opt);
    });
    return merge_reports("trace", std::move(rows));
}

// ---------------------------------------------------------------------------
// Gaussian doubling implication. The free small parameter of the hypothesis is the
// Gaussian time b, required for every b <= 1/(12N).

struct DoublingReport : InequalityReport {
    double N = 1.0;
    bool hypothesis_holds = false;
    double hypothesis_max = 0.0;  // max over tested b of the hypothesis quotient
    std::vector<double> b_values, quotients;
    std::vector<double> radii, ratios;  // int_{B_2r} / int_{B_r}
};

/// Hypothesis quotient [2b int y^a |grad h|^2 e + (n+1+a)/2 int y^a h^2 e] / int y^a h^2 e.
inline double doubling_quotient(const TestFunction& h, double b, double a, const QuadratureOptions& opt = lab_quadrature()) {
    auto s = detail::hardy_integrals(h, b, a, opt);
    if (!(s[2] > 0.0)) return std::numeric_limits<double>::infinity();
    return (2.0 * b * s[1] + 0.5 * (h.n + 1 + a) * s[2]) / s[2];
}

/// Default b grid for a given N: 24 log-spaced values on [1e-4/(12N), 1/(12N)].
inline std::vector<double> doubling_b_grid(double N) {
    std::vector<double> b;
    for (int k = 0; k < 24; ++k) b.push_back(std::pow(10.0, -4.0 * k / 23.0) / (12.0 * N));
    return b;
}

inline DoublingReport check_gaussian_doubling(const TestFunction& h, double N, const std::vector<double>& radii, double a,
                                              std::vector<double> b_values = {},
                                              const QuadratureOptions& opt = lab_quadrature()) {
    detail::check_a(a, "check_gaussian_doubling");
    if (!(N >= 1.0 && std::isfinite(N))) throw std::domain_error("check_gaussian_doubling: N must be finite and >= 1");
    if (b_values.empty()) b_values = doubling_b_grid(N);
    DoublingReport r;
    r.inequality = "doubling";
    r.function = h.name;
    r.N = N;
    r.parameters = {{"N", N}, {"a", a}, {"n", double(h.n)}};
    r.hypothesis_holds = true;
    for (double b : b_values) {
        if (!(b > 0.0 && b <= 1.0 / (12.0 * N) * (1.0 + 1e-12)))
            throw std::domain_error("check_gaussian_doubling: b values must lie in (0, 1/(12N)]");
        double q = doubling_quotient(h, b, a, opt);
        r.b_values.push_back(b);
        r.quotients.push_back(q);
        r.hypothesis_max = std::max(r.hypothesis_max, q);
        if (!(q <= N)) r.hypothesis_holds = false;
    }
    double worst = 0.0;
    for (double rad : radii) {
        if (!(rad > 0.0 && rad <= 0.5)) throw std::domain_error("check_gaussian_doubling: radii must lie in (0, 1/2]");
        double inner = 0.0, outer = 0.0;
        for (const auto& q : detail::lab_points(half_ball_cubature(h.n, a, rad, opt), 0.0)) {
            double v = h.value(q.p);
            inner += q.w * v * v;
        }
        for (const auto& q : detail::lab_points(half_ball_cubature(h.n, a, 2 * rad, opt), 0.0)) {
            double v = h.value(q.p);
            outer += q.w * v * v;
        }
        double ratio = inner > 0.0 ? outer / inner : std::numeric_limits<double>::infinity();
        r.radii.push_back(rad);
        r.ratios.push_back(ratio);
        worst = std::max(worst, ratio);
    }
    r.lhs = worst;
    r.rhs = std::exp(N);
    r.margin = r.rhs - r.lhs;
    r.empirical_constant = std::log(worst);
    if (!r.hypothesis_holds) r.status = "vacuous";
    else r.status = r.margin < -1e-12 * r.rhs ? "violated" : "holds";
    return r;
}

/// Smallest N >= 1 for which the hypothesis holds on every b of doubling_b_grid(N), by
/// bisection (the admissible b set shrinks as N grows).
inline double minimal_hypothesis_constant(const TestFunction& h, double a, const QuadratureOptions& opt = lab_quadrature()) {
    auto ok = [&](double N) {
        for (double b : doubling_b_grid(N))
            if (!(doubling_quotient(h, b, a, opt) <= N)) return false;
        return true;
    };
    if (ok(1.0)) return 1.0;
    double lo = 1.0, hi = 2.0;
    while (!ok(hi)) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e6) return std::numeric_limits<double>::infinity();
    }
    for (int k = 0; k < 40; ++k) {
        double m = 0.5 * (lo + hi);
        (ok(m) ? hi : lo) = m;
    }
    return hi;
}

// ---------------------------------------------------------------------------
// Carleman test functions w = phi (psi + V psi~ y^{1-a}/(1-a)).

/// phi(x, t) = bump(|x - x0|^2/rho^2) (1 + p.(x - x0) + q t) tau(t), with tau = 1 for
/// t <= t_flat and 0 for t >= t_support.
struct ThinCutoff {
    int n = 1;
    std::array<double, 2> center{0.0, 0.0};
    double radius = 1.0;
    std::array<double, 2> slope{0.0, 0.0};
    double time_slope = 0.0;
    double t_flat = 0.0, t_support = 1.0;

    template <class T>
    T operator()(const T& x1, const T& x2, const T& t) const {
        T d1 = x1 - center[0], d2 = n == 2 ? x2 - center[1] : T(0.0);
        T q = d1 * d1 + d2 * d2;
        T b = bump(T(q / (radius * radius)));
        if (value_of(b) == 0.0) return T(0.0);
        T tau = smooth_step(T((t_support - t) / (t_support - t_flat)));
        T lin = T(1.0) + slope[0] * d1 + slope[1] * d2 + time_slope * t;
        return b * lin * tau;
    }
};

/// Even profile bump(y^2/rho^2)(1 + kappa y^2); equals 1 at y = 0.
struct EvenProfile {
    double radius = 1.0;
    double curvature = 0.0;

    template <class T>
    T operator()(const T& y) const {
        return bump(T(y * y / (radius * radius))) * (T(1.0) + curvature * y * y);
    }
};

/// Builds w = phi (psi + V psi~ y^{1-a}/(1-a)), psi~ = bump(y^2/rho^2) with psi's radius.
/// Then y^a d_y w -> phi V = V w on y = 0.
inline TestFunction build_carleman_test_function(const ThinCutoff& phi, const EvenProfile& psi, const Expression& V, double a,
                                                 std::string name = "carleman_w") {
    if (!(a < 1.0)) throw std::domain_error("build_carleman_test_function: a must be below 1");
    detail::check_a(a, "build_carleman_test_function");
    if (!(phi.t_support > phi.t_flat)) throw std::invalid_argument("build_carleman_test_function: t_support <= t_flat");
    if (phi.n == 1 && V.uses_variable(Expression::x2))
        throw std::invalid_argument("build_carleman_test_function: V uses x2 with n = 1");
    const EvenProfile psit{psi.radius, 0.0};
    const bool zero_v = V.is_constant() && V.constant_value() == 0.0;
    auto f = [phi, psi, psit, V, a, zero_v](auto x1, auto x2, auto y, auto t) {
        using T = decltype(x1 * y);
        T ph = phi(T(x1), T(x2), T(t));
        T core = psi(T(y));
        if (!zero_v) {
            using std::pow;
            T Vv = V.evaluate<T>({T(x1), T(x2), T(t)});
            core = core + Vv * psit(T(y)) * T(pow(T(y), 1.0 - a)) / (1.0 - a);
        }
        return T(ph * core);
    };
    double reach = std::sqrt(std::pow(std::hypot(phi.center[0], phi.center[1]) + phi.radius, 2) + psi.radius * psi.radius);
    auto tf = make_test_function(std::move(name), phi.n, reach, f);
    tf.a = a;
    tf.time_support = phi.t_support;
    tf.even_in_y = zero_v;
    tf.has_potential = true;
    tf.potential = V;
    tf.smoothness = zero_v ? "C-infinity" : "C^{1,1-a} in y";
    // Closed form: y^a (w_t + Lap_x w) + phi [a y^{a-1} psi' + y^a psi'' + V(psi~'(2-a)/(1-a) + y psi~''/(1-a))].
    TestFunction copy = tf;
    tf.exact_operator = [copy, phi, psi, psit, V, a, zero_v](const SpaceTimePoint& p) {
        double y = p.y;
        double ya = std::pow(y, a);
        double tang = copy.along(p, 3).d + copy.along(p, 0).dd + (copy.n == 2 ? copy.along(p, 1).dd : 0.0);
        Jet2 ps = psi(Jet2::variable(y));
        double ph = phi(p.x[0], p.x[1], p.t);
        double radial = a * std::pow(y, a - 1.0) * ps.d + ya * ps.dd;
        if (!zero_v) {
            Jet2 pt = psit(Jet2::variable(y));
            radial += V(p.x[0], p.x[1], p.t) * (pt.d * (2.0 - a) / (1.0 - a) + y * pt.dd / (1.0 - a));
        }
        return ya * tang + ph * radial;
    };
    return tf;
}

/// Extended operator y^a (w_t + Lap_x w) + d_y(y^a d_y w) by finite differences with step h.
/// The y part uses z = y^{1-a}, where d_y(y^a d_y) = (1-a)^2 y^{-a} d_zz, one-sided for z < 2h.
/// For a < 0 the even part of w is only C^1 in z, so near the boundary it switches to
/// u = log y, where d_y(y^a d_y) = y^{a-2}(d_uu + (a-1) d_u). The time step is h times the time support.
inline double extended_operator_fd(const TestFunction& w, double a, const SpaceTimePoint& p, double h = 1e-3) {
    if (!(p.y > 0.0)) throw std::domain_error("extended_operator_fd: y must be positive");
    auto at = [&](double x1, double x2, double y, double t) { return w.eval({x1, x2, y, t}); };
    const double x1 = p.x[0], x2 = p.x[1], y = p.y, t = p.t;
    auto d2 = [](auto f, double k) { return (-f(2 * k) + 16 * f(k) - 30 * f(0.0) + 16 * f(-k) - f(-2 * k)) / (12 * k * k); };
    auto d1 = [](auto f, double k) { return (-f(2 * k) + 8 * f(k) - 8 * f(-k) + f(-2 * k)) / (12 * k); };
    double lap = d2([&](double e) { return at(x1 + e, x2, y, t); }, h);
    if (w.n == 2) lap += d2([&](double e) { return at(x1, x2 + e, y, t); }, h);
    const double ht = std::isfinite(w.time_support) ? h * std::min(1.0, w.time_support) : h;
    double wt = d1([&](double e) { return at(x1, x2, y, t + e); }, ht);
    const double q = 1.0 - a;
    const double z = std::pow(y, q);
    double radial;
    auto W = [&](double zz) { return at(x1, x2, std::pow(zz, 1.0 / q), t); };
    if (z >= 2.0 * h) {
        radial = q * q * std::pow(y, -a) * d2([&](double e) { return W(z + e); }, h);
    } else if (a >= 0.0) {
        double wzz = (35 * W(z) - 104 * W(z + h) + 114 * W(z + 2 * h) - 56 * W(z + 3 * h) + 11 * W(z + 4 * h)) / (12 * h * h);
        radial = q * q * std::pow(y, -a) * wzz;
    } else {
        const double hu = 0.02;
        auto Wu = [&](double e) { return at(x1, x2, y * std::exp(e), t); };
        radial = std::pow(y, a - 2.0) * (d2(Wu, hu) + (a - 1.0) * d1(Wu, hu));
    }
    return std::pow(y, a) * (wt + lap) + radial;
}

/// Weighted Neumann trace lim y^a d_y w at (x, t), from the y^{1-a} coefficient of a fit.
inline double carleman_trace_defect(const TestFunction& w, double a, std::array<double, 2> x, double t) {
    if (!w.has_potential) throw std::invalid_argument("carleman_trace_defect: function carries no potential");
    // y^a d_y w at small y, extrapolated in y^{1-a}
    auto flux = [&](double y) {
        SpaceTimePoint p;
        p.x = x;
        p.y = y;
        p.t = t;
        return std::pow(y, a) * w.along(p, 2).d;
    };
    double y1 = 1e-6, y2 = 2e-6;
    double f1 = flux(y1), f2 = flux(y2);
    double z1 = std::pow(y1, 1 + a), z2 = std::pow(y2, 1 + a);
    double lim = f1 - (f2 - f1) / (z2 - z1) * z1;
    SpaceTimePoint p0;
    p0.x = x;
    p0.y = 0.0;
    p0.t = t;
    return lim - w.potential(x[0], x[1], t) * w.value(p0);
}

// ---------------------------------------------------------------------------
// Carleman estimate in the shifted form: for t >= 0 with weights sigma(t+c) and G_c,
//   alpha^2 I[sigma^{-2a} w^2 G_c] + alpha I[sigma^{1-2a} |grad w|^2 G_c]
//   <= M I[sigma^{1-2a} y^{-a} |H w|^2 G_c] + sigma(c)^{-2a} {-(c/M) B_grad + M alpha B_mass}.

struct CarlemanOptions {
    QuadratureOptions space = [] {
        QuadratureOptions o;
        o.radial_panels = 6;
        o.radial_order = 12;
        o.elevation_order = 24;
        o.azimuth_points = 32;
        return o;
    }();
    std::size_t time_order = 6;
    double fd_step = 1e-3;
    double source_tolerance = 1e-2;  // FD versus closed-form source term
};

struct CarlemanReport : InequalityReport {
    double s = 0.5, alpha = 0.0, delta = 0.0, lambda = 0.0, c = 0.0;
    // All integrals below carry the factor sigma(c)^{2 alpha}.
    double alpha_term = 0.0, gradient_term = 0.0;
    double source_term = 0.0, source_term_exact = 0.0;
    double boundary_gradient = 0.0, boundary_mass = 0.0;
    double log_scale = 0.0;  // -2 alpha log sigma(c)
    double source_residual = 0.0;
    double M_emp = 0.0;
    bool flagged = false;

    /// rhs - lhs of the estimate at a given M (scaled units).
    double margin_at(double M) const {
        return M * source_term + M * alpha * boundary_mass - (c / M) * boundary_gradient - (alpha_term + gradient_term);
    }
};

/// Smallest M > 0 with M S + M alpha B - c G / M >= L.
inline double minimal_carleman_constant(double L, double S, double alpha, double B, double c, double G) {
    double A = S + alpha * B, C = c * G;
    if (L <= 0.0 && C <= 0.0) return 0.0;
    if (!(A > 0.0)) return std::numeric_limits<double>::infinity();
    return (L + std::sqrt(L * L + 4.0 * A * C)) / (2.0 * A);
}

inline CarlemanReport check_carleman(const TestFunction& w, double s, double alpha, double delta, double c,
                                     const SigmaTable& table, const CarlemanOptions& opt = {}) {
    if (!(s > 0.0 && s < 1.0)) throw std::domain_error("check_carleman: s must lie in (0, 1)");
    const double a = 1.0 - 2.0 * s;
    if (!w.has_potential) throw std::invalid_argument("check_carleman: w must come from build_carleman_test_function");
    if (std::abs(w.a - a) > 1e-12) throw std::invalid_argument("check_carleman: w was built for a different a");
    if (!(delta > 0.0 && delta < 1.0)) throw std::domain_error("check_carleman: delta must lie in (0, 1)");
    if (!(alpha > 0.0)) throw std::domain_error("check_carleman: alpha must be positive");
    const double lambda = alpha / (delta * delta);
    if (std::abs(table.lambda() - lambda) > 1e-9 * lambda || std::abs(table.s() - s) > 1e-15)
        throw std::invalid_argument("check_carleman: sigma table built for different s or lambda");
    if (!(c > 0.0 && c <= 1.0 / (5.0 * lambda) * (1.0 + 1e-12)))
        throw std::domain_error("check_carleman: c must lie in (0, 1/(5 lambda)]");
    if (!(w.time_support <= 1.0 / (std::numbers::e * lambda) * (1.0 + 1e-12)))
        throw std::domain_error("check_carleman: time support must lie in [0, 1/(e lambda))");
    if (!(w.radius <= 4.0 + 1e-12)) throw std::domain_error("check_carleman: spatial support must lie in B_4^+");

    CarlemanReport r;
    r.inequality = "carleman";
    r.function = w.name;
    r.s = s;
    r.alpha = alpha;
    r.delta = delta;
    r.lambda = lambda;
    r.c = c;
    r.parameters = {{"alpha", alpha}, {"c", c}, {"delta", delta}, {"s", s}};
    const double log_sc = table.log_sigma_at(c);
    r.log_scale = -2.0 * alpha * log_sc;
    const double kexp = 0.5 * (w.n + 1 + a);

    // Time panels graded from t = 0, where sigma(t+c)^{-2 alpha} concentrates on a scale c/(2 alpha).
    std::vector<double> br{0.0};
    for (double tau = c / (2.0 * alpha); tau < w.time_support; tau *= 2.0) br.push_back(tau);
    br.push_back(w.time_support);
    Rule tr = composite_gauss_legendre(br, opt.time_order);

    double T1 = 0, T2 = 0, S = 0, Sx = 0;
    for (std::size_t k = 0; k < tr.size(); ++k) {
        const double t = tr.nodes[k], tc = t + c;
        const double ls = table.log_sigma_at(tc);
        const double sig_rel = std::exp(-2.0 * alpha * (ls - log_sc));  // sigma(t+c)^{-2a} / sigma(c)^{-2a}
        const double R = detail::gaussian_reach(tc, w.radius);
        const double gpref = std::pow(tc, -kexp);
        for (const auto& q : detail::lab_points(half_ball_cubature(w.n, a, R, opt.space), t)) {
            double r2 = q.p.x[0] * q.p.x[0] + q.p.x[1] * q.p.x[1] + q.p.y * q.p.y;
            double G = gpref * std::exp(-r2 / (4.0 * tc));
            double v = w.value(q.p);
            auto g = w.spatial_gradient(q.p);
            double wt = tr.weights[k] * q.w * sig_rel * G;
            T1 += wt * v * v;
            T2 += wt * std::exp(ls) * (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
        }
        for (const auto& q : detail::lab_points(half_ball_cubature(w.n, -a, R, opt.space), t)) {
            double r2 = q.p.x[0] * q.p.x[0] + q.p.x[1] * q.p.x[1] + q.p.y * q.p.y;
            double G = gpref * std::exp(-r2 / (4.0 * tc));
            double wt = tr.weights[k] * q.w * sig_rel * std::exp(ls) * G;
            double hf = extended_operator_fd(w, a, q.p, opt.fd_step);
            S += wt * hf * hf;
            if (w.exact_operator) {
                double he = w.exact_operator(q.p);
                Sx += wt * he * he;
            }
        }
    }
    // Boundary terms at t = 0 against G(X, c).
    double Bg = 0, Bm = 0;
    {
        const double R = detail::gaussian_reach(c, w.radius);
        const double gpref = std::pow(c, -kexp);
        for (const auto& q : detail::lab_points(half_ball_cubature(w.n, a, R, opt.space), 0.0)) {
            double r2 = q.p.x[0] * q.p.x[0] + q.p.x[1] * q.p.x[1] + q.p.y * q.p.y;
            double G = gpref * std::exp(-r2 / (4.0 * c));
            double v = w.value(q.p);
            auto g = w.spatial_gradient(q.p);
            Bm += q.w * v * v * G;
            Bg += q.w * (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]) * G;
        }
    }
    r.alpha_term = alpha * alpha * T1;
    r.gradient_term = alpha * T2;
    r.source_term = S;
    r.source_term_exact = w.exact_operator ? Sx : std::numeric_limits<double>::quiet_NaN();
    r.boundary_gradient = Bg;
    r.boundary_mass = Bm;
    r.source_residual = (w.exact_operator && Sx > 0.0) ? std::abs(S - Sx) / Sx : 0.0;
    r.flagged = r.source_residual > opt.source_tolerance;
    r.lhs = r.alpha_term + r.gradient_term;
    r.M_emp = minimal_carleman_constant(r.lhs, S, alpha, Bm, c, Bg);
    r.empirical_constant = r.M_emp;
    r.rhs = r.M_emp * (S + alpha * Bm) - (r.M_emp > 0.0 ? c / r.M_emp * Bg : 0.0);
    r.margin = r.rhs - r.lhs;
    r.resolved = !r.flagged;
    r.status = r.flagged ? "unresolved" : "holds";
    return r;
}

/// Battery evaluation at a fixed M: a row is violated when the estimate fails for that M.
inline InequalityReport carleman_at(const CarlemanReport& r, double M) {
    InequalityReport out = r;
    out.rhs = M * (r.source_term + r.alpha * r.boundary_mass) - (M > 0.0 ? r.c / M * r.boundary_gradient : 0.0);
    out.margin = out.rhs - out.lhs;
    out.status = r.flagged ? "unresolved" : (out.violated() ? "violated" : "holds");
    out.parameters.push_back({"M", M});
    return out;
}

struct SharpnessProbe {
    double M = 0.0, V_norm1 = 0.0;
    double alpha_admissible = 0.0, alpha_low = 0.0;
    double margin_admissible = 0.0, margin_low = 0.0;
    bool holds_admissible = false, holds_low = false;
};

/// Probe: evaluate with alpha = M (1 + ||V||_1^{1/2s}) and with alpha 100 times smaller,
/// keeping M. make_w(lambda) must return an admissible function for that lambda.
inline SharpnessProbe carleman_sharpness_probe(const std::function<TestFunction(double)>& make_w, double s, double M,
                                               double V_norm1, double delta, const CarlemanOptions& opt = {}) {
    SharpnessProbe p;
    p.M = M;
    p.V_norm1 = V_norm1;
    p.alpha_admissible = M * (1.0 + std::pow(V_norm1, 1.0 / (2.0 * s)));
    p.alpha_low = p.alpha_admissible / 100.0;
    auto run = [&](double alpha, double& margin, bool& holds) {
        double lambda = alpha / (delta * delta);
        auto table = build_sigma(s, lambda, 256);
        auto r = check_carleman(make_w(lambda), s, alpha, delta, 1.0 / (8.0 * lambda), table, opt);
        margin = r.margin_at(M);
        holds = margin >= -1e-12 * std::abs(r.lhs);
    };
    run(p.alpha_admissible, p.margin_admissible, p.holds_admissible);
    run(p.alpha_low, p.margin_low, p.holds_low);
    return p;
}

// ---------------------------------------------------------------------------
// Monotonicity in time:
//   M e^{||V||_1^{1/2s}} int_{B_2^+} U(t)^2 y^a >= int_{B_1^+} U(0)^2 y^a
// for 0 <= t <= 1 / (M log(M (1 + ||V||_1) Theta~) + M^2 (||V||_1^{1/2s} + 1)).

struct MonotonicityData {
    double a = 0.0;
    double V_norm1 = 1.0;
    double q4_integral = 0.0;   // int_{Q_4^+} U^2 y^a
    double initial_mass = 0.0;  // int_{B_1^+} U(0)^2 y^a
    std::vector<double> times;  // slices, first one t = 0
    std::vector<double> masses; // int_{B_2^+} U(t)^2 y^a
};

struct MonotonicityReport : InequalityReport {
    double theta_tilde = 0.0;
    double V_norm1 = 1.0;
    double M_emp = std::numeric_limits<double>::infinity();
    double window = 0.0;
    std::size_t admissible_slices = 0;  // with t > 0, at M_emp
    bool flagged = false;
    std::vector<double> times, masses;
};

inline double monotonicity_window(double M, double V_norm1, double s, double theta_tilde) {
    return 1.0 / (M * std::log(M * (1.0 + V_norm1) * theta_tilde) + M * M * (std::pow(V_norm1, 1.0 / (2.0 * s)) + 1.0));
}

/// Minimal M over the trial grid (default 2 * 1.01^k) for which the window formula and
/// the inequality hold together on every admissible slice.
inline MonotonicityReport evaluate_monotonicity(const MonotonicityData& d, std::vector<double> M_trial = {}) {
    if (d.times.size() != d.masses.size() || d.times.empty())
        throw std::invalid_argument("evaluate_monotonicity: times and masses must match");
    if (!(d.initial_mass > 0.0)) throw std::domain_error("evaluate_monotonicity: zero initial mass");
    const double s = 0.5 * (1.0 - d.a);
    if (M_trial.empty())
        for (int k = 1; k <= 4000; ++k) M_trial.push_back(2.0 * std::pow(1.01, k));
    MonotonicityReport r;
    r.inequality = "monotonicity";
    r.theta_tilde = d.q4_integral / d.initial_mass;
    r.V_norm1 = d.V_norm1;
    r.times = d.times;
    r.masses = d.masses;
    r.parameters = {{"V_norm1", d.V_norm1}, {"a", d.a}};
    const double ev = std::exp(std::pow(d.V_norm1, 1.0 / (2.0 * s)));
    for (double M : M_trial) {
        if (!(M > 2.0) || M * std::log(M * r.theta_tilde) < 1.0) continue;
        double T = monotonicity_window(M, d.V_norm1, s, r.theta_tilde);
        bool ok = true;
        double worst = std::numeric_limits<double>::infinity();
        std::size_t adm = 0;
        for (std::size_t k = 0; k < d.times.size(); ++k) {
            if (d.times[k] > T) continue;
            if (d.times[k] > 0.0) ++adm;
            double lhs = M * ev * d.masses[k];
            worst = std::min(worst, lhs);
            if (lhs < d.initial_mass) ok = false;
        }
        if (ok) {
            r.M_emp = M;
            r.window = T;
            r.admissible_slices = adm;
            r.lhs = worst;
            r.rhs = d.initial_mass;
            break;
        }
    }
    // As an inequality "rhs >= lhs" the roles are swapped: report margin = min lhs-side - initial mass.
    r.margin = r.lhs - r.rhs;
    r.empirical_constant = r.M_emp;
    r.flagged = !std::isfinite(r.M_emp) || r.admissible_slices == 0;
    r.resolved = !r.flagged;
    r.status = !std::isfinite(r.M_emp) ? "violated" : (r.flagged ? "unresolved" : "holds");
    return r;
}

/// Exact-field front end: U is any callable, slices are given times in [0, 16].
inline MonotonicityReport check_monotonicity(const std::function<double(const SpaceTimePoint&)>& U, int n, double a,
                                             double V_norm1, const std::vector<double>& times,
                                             std::vector<double> M_trial = {}, const QuadratureOptions& opt = lab_quadrature()) {
    detail::check_a(a, "check_monotonicity");
    MonotonicityData d;
    d.a = a;
    d.V_norm1 = V_norm1;
    QuadratureOptions qt = opt;
    qt.time_panels = 16;
    d.q4_integral = weighted_integral(U, Region::cylinder(4.0, 0.0), n, a, {}, qt);
    d.initial_mass = weighted_integral(U, Region::half_ball(1.0, 0.0), n, a, {}, opt);
    for (double t : times) {
        d.times.push_back(t);
        d.masses.push_back(weighted_integral(U, Region::half_ball(2.0, t), n, a, {}, opt));
    }
    auto r = evaluate_monotonicity(d, std::move(M_trial));
    r.function = "field";
    return r;
}

/// Grid front end: U solved on B_5^+ x [0, T] with T >= 16; slices are the grid times.
inline MonotonicityReport check_monotonicity(const Solution& sol, const Potential& V, std::vector<double> M_trial = {},
                                             const QuadratureOptions& opt = lab_quadrature()) {
    const auto& U = sol.U;
    const auto& g = U.grid();
    if (g.t.front() != 0.0 || g.t.back() < 16.0 - 1e-12)
        throw std::domain_error("check_monotonicity: the grid must cover t in [0, 16]");
    if (g.tangential_extent < 4.0 - 1e-12 || g.extension_extent() < 4.0 - 1e-12)
        throw std::domain_error("check_monotonicity: the grid must contain B_4^+");
    MonotonicityData d;
    d.a = U.weight_exponent();
    d.V_norm1 = V.norm_1();
    d.q4_integral = weighted_integral(U, Region::cylinder(4.0, 0.0), {}, opt);
    d.initial_mass = weighted_integral(U, Region::half_ball(1.0, 0.0), {}, opt);
    for (double t : g.t) {
        if (t > 16.0) break;
        d.times.push_back(t);
        d.masses.push_back(weighted_integral(U, Region::half_ball(2.0, t), {}, opt));
    }
    auto r = evaluate_monotonicity(d, std::move(M_trial));
    r.function = "solution";
    return r;
}

}  // namespace quclab
