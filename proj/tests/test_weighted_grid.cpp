#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <gtest/gtest.h>

#include "quclab/weighted_grid.hpp"

using namespace quclab;

TEST(BuildGrid, UniformAndPowerLawNodes) {
    auto g1 = build_graded_grid(1, 1.0, 5, 4, 1.0);
    std::vector<double> e1{0, 0.25, 0.5, 0.75, 1.0};
    for (std::size_t j = 0; j < 5; ++j) EXPECT_DOUBLE_EQ(g1->y[j], e1[j]);
    auto g2 = build_graded_grid(1, 1.0, 5, 4, 2.0);
    std::vector<double> e2{0, 1.0 / 16, 0.25, 9.0 / 16, 1.0};
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(g2->y[j], e2[j], 1e-15);
}

TEST(BuildGrid, GradedSpacingNearBoundary) {
    auto g = build_graded_grid(2, 5.0, 9, 64, 2.0);
    EXPECT_LT(g->y[1] - g->y[0], 5.0 / 64);
    for (std::size_t j = 0; j < g->ny(); ++j)
        EXPECT_NEAR(g->y[j], 5.0 * std::pow(j / 64.0, 2.0), 1e-12 * 5.0);
}

TEST(BuildGrid, Rejections) {
    EXPECT_THROW(build_graded_grid(1, 0.0, 5, 4, 1.0), std::invalid_argument);
    EXPECT_THROW(build_graded_grid(1, 1.0, 3, 4, 1.0), std::invalid_argument);
    EXPECT_THROW(build_graded_grid(1, 1.0, 5, 3, 1.0), std::invalid_argument);
    EXPECT_THROW(build_graded_grid(1, 1.0, 5, 4, 0.5), std::invalid_argument);
    EXPECT_THROW(build_graded_grid(3, 1.0, 5, 4, 1.0), std::invalid_argument);
}

TEST(BuildGrid, DefaultGrading) {
    EXPECT_DOUBLE_EQ(default_grading_exponent(0.5), 2.0);
    EXPECT_DOUBLE_EQ(default_grading_exponent(-0.5), 4.0);
}

static double one(const SpaceTimePoint&) { return 1.0; }

TEST(WeightedIntegral, HalfDiscArea) {
    for (double r : {0.3, 1.0, 2.5}) {
        double v = weighted_integral(one, Region::half_ball(r), 1, 0.0);
        EXPECT_NEAR(v, 0.5 * std::numbers::pi * r * r, 1e-12 * r * r);
    }
}

TEST(WeightedIntegral, Homogeneity) {
    for (int n : {1, 2})
        for (double a : {-0.5, 0.0, 0.5}) {
            double i1 = weighted_integral(one, Region::half_ball(0.7), n, a);
            double i2 = weighted_integral(one, Region::half_ball(1.4), n, a);
            EXPECT_NEAR(i2 / i1 / std::pow(2.0, n + 1 + a), 1.0, 1e-6) << n << " " << a;
        }
}

TEST(WeightedIntegral, MatchesBruteForceRiemannSum) {
    // Dense midpoint sum of y^{1/2} over cells whose centers lie in the unit half-disc.
    const std::size_t N = 2000;
    const double h = 1.0 / N;
    double brute = 0.0;
    for (std::size_t i = 0; i < 2 * N; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            double x = -1.0 + (i + 0.5) * h, y = (j + 0.5) * h;
            if (x * x + y * y < 1.0) brute += std::sqrt(y) * h * h;
        }
    double v = weighted_integral(one, Region::half_ball(1.0), 1, 0.5);
    EXPECT_NEAR(v / brute, 1.0, 2e-3);
    // Closed form: sqrt(pi) Gamma(3/4) / (2.5 Gamma(5/4)).
    double exact = std::sqrt(std::numbers::pi) * std::tgamma(0.75) / (2.5 * std::tgamma(1.25));
    EXPECT_NEAR(v / exact, 1.0, 1e-12);
}

TEST(WeightedIntegral, PowerAndUnweightedVariants) {
    auto f = [](const SpaceTimePoint& p) { return 2.0 + 0.0 * p.y; };
    double w2 = weighted_integral(f, Region::half_ball(1.0), 1, 0.0, {2, true});
    double w1 = weighted_integral(f, Region::half_ball(1.0), 1, 0.0, {1, true});
    EXPECT_NEAR(w2, 2.0 * w1, 1e-12);
    double uw = weighted_integral(one, Region::half_ball(1.0), 1, 0.7, {1, false});
    EXPECT_NEAR(uw, 0.5 * std::numbers::pi, 1e-12);
    double thin = weighted_integral(one, Region::thin_ball(0.5), 2, 0.3);
    EXPECT_NEAR(thin, std::numbers::pi * 0.25, 1e-12);
    double cyl = weighted_integral(one, Region::cylinder(0.5, 1.0), 1, 0.0);
    EXPECT_NEAR(cyl, 0.5 * std::numbers::pi * 0.25 * 0.25, 1e-12);
}

TEST(WeightedIntegral, GridFieldChecks) {
    auto g = build_graded_grid(1, 2.0, 41, 32, 2.0, uniform_nodes(0.0, 1.0, 5));
    auto U = ScalarField::sample(g, 0.5, [](const SpaceTimePoint&) { return 1.0; });
    double v = weighted_integral(U, Region::half_ball(1.0));
    double exact = std::sqrt(std::numbers::pi) * std::tgamma(0.75) / (2.5 * std::tgamma(1.25));
    EXPECT_NEAR(v / exact, 1.0, 1e-12);
    EXPECT_THROW(weighted_integral(U, Region::half_ball(2.5)), std::out_of_range);
    EXPECT_THROW(weighted_integral(U, Region::cylinder(1.5)), std::out_of_range);
    U.values()[7] = std::nan("");
    EXPECT_THROW(weighted_integral(U, Region::half_ball(1.0)), std::domain_error);
}

TEST(WeightedIntegral, GridSliceExactForPiecewiseLinear) {
    const double a = -0.5;
    auto g = build_graded_grid(1, 1.0, 11, 8, 4.0);
    auto U = ScalarField::sample(g, a, [](const SpaceTimePoint& p) { return 3.0 * p.y + 1.0; });
    double v = grid_slice_integral(U, 0, {1, true});
    double exact = 2.0 * (3.0 / (2 + a) + 1.0 / (1 + a));
    EXPECT_NEAR(v, exact, 1e-13);
}

TEST(Gradient, ExactForAffineAndQuadratic) {
    auto g = build_graded_grid(2, 1.0, 9, 12, 2.0);
    auto U = ScalarField::sample(g, 0.0, [](const SpaceTimePoint& p) { return 2.0 * p.x[0] - p.x[1] + 0.5 * p.y; });
    auto grad = gradient(U);
    ASSERT_EQ(grad.size(), 3u);
    for (double v : grad[0].values()) EXPECT_NEAR(v, 2.0, 1e-12);
    for (double v : grad[1].values()) EXPECT_NEAR(v, -1.0, 1e-12);
    for (double v : grad[2].values()) EXPECT_NEAR(v, 0.5, 1e-12);
    auto Q = ScalarField::sample(g, 0.0, [](const SpaceTimePoint& p) { return p.y * p.y; });
    auto gq = gradient(Q);
    for (std::size_t j = 0; j < g->ny(); ++j) EXPECT_NEAR(gq[2].at(3, 4, j, 0), 2.0 * g->y[j], 1e-12);
}

TEST(Gradient, SecondOrderOnSine) {
    std::vector<double> err;
    for (std::size_t N : {41u, 81u, 161u}) {
        auto g = build_graded_grid(1, 1.0, N, 4, 1.0);
        auto U = ScalarField::sample(g, 0.0, [](const SpaceTimePoint& p) { return std::sin(2 * std::numbers::pi * p.x[0]); });
        auto d = gradient(U)[0];
        double e = 0.0;
        for (std::size_t i = 0; i < N; ++i)
            e = std::max(e, std::abs(d.at(i, 0, 0, 0) - 2 * std::numbers::pi * std::cos(2 * std::numbers::pi * g->x[i])));
        err.push_back(e);
    }
    EXPECT_GE(std::log2(err[0] / err[1]), 1.9);
    EXPECT_GE(std::log2(err[1] / err[2]), 1.9);
}

TEST(WeightedDivergence, ConstantGivesZero) {
    auto g = build_graded_grid(1, 1.0, 9, 8, 2.0);
    auto U = ScalarField::sample(g, 0.3, [](const SpaceTimePoint&) { return 4.0; });
    auto div = weighted_divergence(gradient(U), 0.3);
    for (double v : div.values()) EXPECT_EQ(v, 0.0);
}

TEST(WeightedDivergence, QuadraticProfileSecondOrderOnUniformMesh) {
    for (double a : {-0.5, 0.0, 0.5}) {
        std::vector<double> err;
        for (std::size_t M : {20u, 40u, 80u}) {
            auto g = build_graded_grid(1, 1.0, 5, M, 1.0);
            VectorField v{ScalarField(g, a), ScalarField::sample(g, a, [](const SpaceTimePoint& p) { return 2.0 * p.y; })};
            auto div = weighted_divergence(v, a);
            double e = 0.0;
            for (std::size_t j = 0; j < g->ny(); ++j)
                if (g->y[j] >= 0.2 && g->y[j] <= 0.8)
                    e = std::max(e, std::abs(div.at(2, 0, j, 0) - 2 * (1 + a) * std::pow(g->y[j], a)));
            err.push_back(e);
        }
        if (a == 0.0) {
            // Centered flux differences are exact on quadratics without a weight.
            for (double e : err) EXPECT_LT(e, 1e-10);
            continue;
        }
        EXPECT_GE(std::log2(err[0] / err[1]), 1.9) << a;
        EXPECT_GE(std::log2(err[1] / err[2]), 1.9) << a;
    }
}

TEST(WeightedDivergence, HarmonicProfileOnGradedMesh) {
    for (double a : {-0.5, 0.5}) {
        std::vector<double> err;
        for (std::size_t M : {32u, 64u, 128u}) {
            auto g = build_graded_grid(1, 1.0, 5, M, default_grading_exponent(a));
            auto vy = ScalarField::sample(g, a, [a](const SpaceTimePoint& p) {
                return p.y > 0 ? (1 - a) * std::pow(p.y, -a) : 0.0;
            });
            auto div = weighted_divergence({ScalarField(g, a), vy}, a);
            double e = 0.0;
            for (std::size_t j = 2; j + 1 < g->ny(); ++j)
                if (g->y[j] >= 0.1) e = std::max(e, std::abs(div.at(2, 0, j, 0)));
            err.push_back(e);
        }
        EXPECT_LT(err[1], err[0]);
        EXPECT_LT(err[2], err[1]);
        EXPECT_LT(err[2], 0.05);
    }
}

TEST(WeightedDivergence, DiscreteIntegrationByParts) {
    const double a = 0.4;
    auto bump = [](double x, double y, double R) {
        double q = (x * x + y * y) / (R * R);
        return q < 1 ? std::exp(1 - 1 / (1 - q)) : 0.0;
    };
    std::vector<double> defect;
    for (std::size_t N : {33u, 65u, 129u}) {
        auto g = build_graded_grid(1, 1.0, N, N - 1, 1.0);
        auto phi = ScalarField::sample(g, a, [&](const SpaceTimePoint& p) { return bump(p.x[0] - 0.1, p.y, 0.8); });
        auto psi = ScalarField::sample(g, a, [&](const SpaceTimePoint& p) { return bump(p.x[0], p.y, 0.7) * (1 + p.x[0]); });
        auto gphi = gradient(phi), gpsi = gradient(psi);
        auto dot = ScalarField(g, a);
        for (std::size_t i = 0; i < dot.values().size(); ++i)
            dot.values()[i] = gphi[0].values()[i] * gpsi[0].values()[i] + gphi[1].values()[i] * gpsi[1].values()[i];
        auto div = weighted_divergence(gpsi, a);
        auto prod = ScalarField(g, a);
        for (std::size_t i = 0; i < prod.values().size(); ++i) prod.values()[i] = phi.values()[i] * div.values()[i];
        double lhs = grid_slice_integral(dot, 0, {1, true}) + grid_slice_integral(prod, 0, {1, false});
        defect.push_back(std::abs(lhs));
    }
    EXPECT_LT(defect[1], defect[0]);
    EXPECT_LT(defect[2], defect[1]);
    EXPECT_LT(defect[2], 2.0 / 128);
}

TEST(Snapshot, RoundTripAndSidecar) {
    auto g = build_graded_grid(2, 1.5, 5, 4, 2.0, {0.0, 0.5, 1.0});
    auto U = ScalarField::sample(g, -0.25, [](const SpaceTimePoint& p) { return p.x[0] + 10 * p.x[1] + 100 * p.y + p.t; });
    auto dir = std::filesystem::temp_directory_path() / "quclab_snapshot_test";
    std::filesystem::create_directories(dir);
    std::string base = (dir / "u").string();
    write_snapshot(U, base);
    auto V = read_snapshot(base);
    EXPECT_EQ(V.values(), U.values());
    EXPECT_EQ(V.grid().y, g->y);
    EXPECT_EQ(V.weight_exponent(), -0.25);
    EXPECT_EQ(std::filesystem::file_size(base + ".bin"), g->size() * 8);
    // Row-major (x, y, t): the second stored value is the next time node.
    std::ifstream is(base + ".bin", std::ios::binary);
    double first[2];
    is.read(reinterpret_cast<char*>(first), 16);
    EXPECT_DOUBLE_EQ(first[1] - first[0], 0.5);
    write_region_integrals_csv((dir / "r.csv").string(), {{"half_ball", 0.5, 1.25}});
    std::ifstream csv(dir / "r.csv");
    std::string header;
    std::getline(csv, header);
    EXPECT_EQ(header, "region,r,value");
    std::filesystem::remove_all(dir);
}

TEST(Interpolation, OutsideGridThrows) {
    auto g = build_graded_grid(1, 1.0, 5, 4, 2.0);
    ScalarField U(g, 0.0);
    SpaceTimePoint p;
    p.x[0] = 1.5;
    EXPECT_THROW(U(p), std::out_of_range);
}
