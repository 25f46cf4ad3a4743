#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "quclab/experiment.hpp"

using namespace quclab;

namespace {

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("quclab_test_" + name);
    std::filesystem::remove_all(p);
    return p;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string config_error(const std::string& text) {
    try {
        parse_config(text, "cfg.toml");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(ExpressionPotential, NormsOfSimpleExpressions) {
    auto g = build_graded_grid(1, 5.0, 401, 4, 1.0, uniform_nodes(0.0, 1.0, 5));
    auto zero = expression_potential("0", g);
    EXPECT_DOUBLE_EQ(zero.norm_1(), 1.0);
    EXPECT_EQ(zero.sup_value(), 0.0);
    EXPECT_DOUBLE_EQ(expression_potential("2", g).norm_1(), 3.0);
    auto c = expression_potential("0.5*cos(x1)", g);
    // sup over grid nodes; sin(x1) peaks between nodes at spacing 0.025
    EXPECT_LE(c.norm_1(), 2.0);
    EXPECT_NEAR(c.norm_1(), 2.0, 1e-5);
    EXPECT_NEAR(c.fd_norm_1() / c.norm_1(), 1.0, 0.01);
    EXPECT_THROW(expression_potential("0.5*cos(", g), std::exception);
}

TEST(Config, DefaultsAndDerivedWeight) {
    auto c = parse_config("s = 0.25\nseed = 9\n[order]\nradii = [0.5, 0.25]\n");
    EXPECT_DOUBLE_EQ(c.a, 0.5);
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.order_radii.size(), 2u);
    EXPECT_NO_THROW(parse_config("s = 0.25\na = 0.5\n"));
}

TEST(Config, Rejections) {
    EXPECT_NE(config_error("s = 0.25\na = 0.0\n").find("1 - 2s"), std::string::npos);
    EXPECT_NE(config_error("s = 0.5\n\nbogus = 1\n").find("line 3"), std::string::npos);
    EXPECT_NE(config_error("s = 0.5\n[grid]\nnx = \"many\"\n").find("line 3"), std::string::npos);
    EXPECT_NE(config_error("s = 0.5\n[grid\n").find("cfg.toml:2"), std::string::npos);
    EXPECT_FALSE(config_error("s = 1.5\n").empty());
    EXPECT_FALSE(config_error("s = 0.5\n[potential]\nexpr = \"1\"\nsnapshot = \"x\"\n").empty());
}

TEST(Config, SubcommandValidation) {
    auto c = parse_config("s = 0.5\n");
    EXPECT_THROW(validate_config(c, "measure-order"), ConfigError);  // empty radii
    EXPECT_THROW(validate_config(c, "doubling"), ConfigError);
    EXPECT_THROW(validate_config(c, "no-such-command"), ConfigError);
    auto d = parse_config("s = 0.5\n[field]\nkind = \"snapshot\"\nsnapshot = \"missing\"\n[order]\nradii = [0.1]\n");
    EXPECT_THROW(validate_config(d, "measure-order"), ConfigError);
    auto p = parse_config("s = 0.5\n[potential]\nsnapshot = \"/nonexistent/base\"\n");
    EXPECT_THROW(validate_config(p, "verify-kernels"), ConfigError);
    auto w = parse_config("s = 0.5\n[inequalities]\nwhich = [\"hardy\", \"nope\"]\n");
    EXPECT_THROW(validate_config(w, "verify-inequalities"), ConfigError);
    auto sw = parse_config("s = 0.5\n[sweep]\nlambdas = [64.0, 16.0]\n");
    EXPECT_THROW(validate_config(sw, "sweep-potential"), ConfigError);
}

TEST(Config, HashTracksContent) {
    auto a = parse_config("s = 0.5\nseed = 1\n");
    auto b = parse_config("s = 0.5\nseed = 2\n");
    auto c = parse_config("seed = 1\ns = 0.5\n");
    EXPECT_NE(a.hash(), b.hash());
    EXPECT_EQ(a.hash(), c.hash());
    EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
    EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

TEST(Runner, VerifyWeightsReport) {
    auto out = scratch("weights");
    auto c = parse_config("s = 0.5\nseed = 4\n[weights]\nlambdas = [100.0]\n");
    c.out_dir = out.string();
    auto m = run(c, "verify-weights");
    EXPECT_TRUE(m.ok());
    auto js = nlohmann::json::parse(slurp(out / "weights.json"));
    ASSERT_EQ(js.size(), 1u);
    for (const char* k : {"property1", "property2", "property3", "property4"}) EXPECT_TRUE(js[0][k].get<bool>()) << k;
    EXPECT_TRUE(js[0]["N_emp"].is_number());
    EXPECT_TRUE(std::isfinite(js[0]["N_emp"].get<double>()));
    EXPECT_EQ(js[0]["seed"].get<int>(), 4);

    auto man = nlohmann::json::parse(slurp(out / "manifest.json"));
    EXPECT_EQ(man["subcommand"], "verify-weights");
    EXPECT_EQ(man["config_hash"], c.hash());
    EXPECT_EQ(man["seed"].get<int>(), 4);
    EXPECT_EQ(man["sign_convention"], kSignConvention);
    EXPECT_TRUE(man["passed"].get<bool>());
    EXPECT_TRUE(man["constants"].contains("N_emp lambda=100"));
    EXPECT_TRUE(man["wall_clock_seconds"].contains("sigma"));
    EXPECT_FALSE(std::filesystem::exists(out / "manifest.json.tmp"));
}

TEST(Runner, RepeatedRunIsByteIdentical) {
    auto c = parse_config("s = 0.5\nseed = 11\n[operator]\ns_values = [0.5]\nfields = 4\n");
    c.out_dir = scratch("rep1").string();
    run(c, "verify-operator");
    auto first = slurp(std::filesystem::path(c.out_dir) / "operator.csv");
    c.out_dir = scratch("rep2").string();
    run(c, "verify-operator");
    EXPECT_EQ(first, slurp(std::filesystem::path(c.out_dir) / "operator.csv"));
    EXPECT_GT(first.size(), 40u);
}

TEST(Runner, MeasureOrderOnHarmonicField) {
    auto c = parse_config("s = 0.5\n[field]\nkind = \"harmonic\"\nkappa = 2\n[order]\nradii = [0.5, 0.25, 0.125, 0.0625, 0.03125]\n");
    c.out_dir = scratch("order").string();
    auto m = run(c, "measure-order");
    EXPECT_TRUE(m.ok());
    auto it = std::find_if(m.constants.begin(), m.constants.end(), [](auto& p) { return p.first == "order"; });
    ASSERT_NE(it, m.constants.end());
    EXPECT_NEAR(it->second, 6.0, 0.12);
}

TEST(Runner, HardFailureMarksManifest) {
    RunManifest m;
    m.check("soft", false, "", false);
    EXPECT_TRUE(m.ok());
    m.check("hard", false);
    EXPECT_FALSE(m.ok());
    EXPECT_FALSE(m.to_json()["passed"].get<bool>());
}

TEST(Runner, SolveExtensionWritesSnapshotThatLoadsAsPotential) {
    auto c = parse_config("s = 0.5\n[grid]\nnx = 41\nny = 12\nt_end = 1.0\n[extension]\nlevels = [8, 16]\n");
    c.out_dir = scratch("solve").string();
    auto m = run(c, "solve-extension");
    EXPECT_TRUE(m.ok());
    auto base = (std::filesystem::path(c.out_dir) / "solution").string();
    auto U = read_snapshot(base);
    EXPECT_EQ(U.grid().nx(), 41u);
    auto d = parse_config("s = 0.5\n[potential]\nsnapshot = \"" + base + "\"\n");
    EXPECT_NO_THROW(validate_config(d, "solve-extension"));
    auto pr = config_problem(d);
    EXPECT_TRUE(std::isfinite(pr.V.norm_1()));
}
