#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/bessel.hpp>

#include "quclab/extension_solver.hpp"

using namespace quclab;

namespace {

double weighted_error(const ScalarField& U, const std::function<double(const SpaceTimePoint&)>& exact) {
    auto E = ScalarField::sample(U.grid_ptr(), U.weight_exponent(), exact);
    return relative_l2(U.values(), E.values());
}

Solution solve_exact_family(double a, std::size_t M, ExtensionScheme scheme, double grading) {
    auto g = build_graded_grid(1, 1.0, M + 1, M, grading, uniform_nodes(0.0, 0.25, M + 1));
    auto exact = [a](const SpaceTimePoint& p) { return p.y * p.y - 2.0 * (1.0 + a) * p.t; };
    ExtensionProblem pr;
    pr.grid = g;
    pr.a = a;
    pr.V = Potential::zero(g);
    pr.start_data = ScalarField::sample(g, a, exact);
    pr.boundary = exact;
    SolverConfig cfg;
    cfg.scheme = scheme;
    return solve_backward_extension(pr, cfg);
}

// (2 / Gamma(s)) (w/2)^s K_s(w) with K_s(w) = \int_0^inf e^{-w cosh u} cosh(s u) du for Re w > 0.
std::complex<double> bessel_profile_oracle(double s, std::complex<double> w) {
    auto part = [&](bool imag) {
        auto f = [&](double u) {
            auto v = std::exp(-w * std::cosh(u)) * std::cosh(s * u);
            return imag ? v.imag() : v.real();
        };
        return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, 60.0, 25, 1e-14);
    };
    std::complex<double> K(part(false), part(true));
    return 2.0 / std::tgamma(s) * std::pow(w / 2.0, s) * K;
}

}  // namespace

// ---------------------------------------------------------------------------
// Potential

TEST(Potential, ConstantAndExpressionNorms) {
    auto g = build_graded_grid(1, 1.0, 41, 8, 2.0, uniform_nodes(0.0, 0.5, 11));
    auto c = Potential::constant(g, -2.5);
    EXPECT_DOUBLE_EQ(c.norm_1(), 3.5);
    EXPECT_TRUE(c.time_independent());
    auto v = Potential::from_expression(g, Expression::parse("0.5*cos(x1)"));
    EXPECT_NEAR(v.norm_1(), 0.5 + 0.5 * std::sin(1.0) + 1.0, 1e-12);
    EXPECT_TRUE(v.time_independent());
    EXPECT_TRUE(v.consistent_with_fd(0.1));
    auto w = Potential::from_expression(g, Expression::parse("x1*t + sin(3*t)"));
    // sup|V| at (1, 0.5), sup|V_x| = 0.5, sup|V_t| = |x1 + 3 cos(3t)| at (1, 0).
    EXPECT_NEAR(w.norm_1(), (0.5 + std::sin(1.5)) + 0.5 + 4.0 + 1.0, 1e-12);
    EXPECT_FALSE(w.time_independent());
    EXPECT_TRUE(w.consistent_with_fd(0.1));
}

TEST(Potential, FunctionAndSamplesAgreeWithFiniteDifferences) {
    auto g = build_graded_grid(2, 1.0, 33, 8, 2.0, uniform_nodes(0.0, 1.0, 21));
    auto f = [](const std::array<double, 2>& x, double t) { return std::sin(x[0]) * std::cos(x[1]) + 0.2 * t; };
    auto p = Potential::from_function(g, f);
    auto q = Potential::from_samples(p.values());
    EXPECT_GE(p.norm_1(), 1.0);
    EXPECT_TRUE(p.consistent_with_fd(0.1));
    EXPECT_NEAR(q.norm_1(), p.fd_norm_1(), 1e-12);
    EXPECT_NEAR(q.norm_1(), p.norm_1(), 0.1 * p.norm_1());
}

TEST(Potential, Rejections) {
    auto g1 = build_graded_grid(1, 1.0, 9, 8, 2.0);
    EXPECT_THROW(Potential::from_expression(g1, Expression::parse("x2")), std::invalid_argument);
    EXPECT_THROW(Potential::from_expression(g1, Expression::parse("1 / x1")), std::domain_error);
}

// ---------------------------------------------------------------------------
// Finite-volume solver

TEST(ExtensionSolver, ExactSolutionConvergesAtOrderAtLeastOne) {
    for (double a : {-0.5, 0.5}) {
        std::vector<double> err;
        for (std::size_t M : {8, 16, 32, 64})
            err.push_back(weighted_error(solve_exact_family(a, M, ExtensionScheme::flux_form, default_grading_exponent(a)).U,
                                         [a](const SpaceTimePoint& p) { return p.y * p.y - 2 * (1 + a) * p.t; }));
        for (std::size_t i = 1; i < err.size(); ++i) {
            EXPECT_LT(err[i], err[i - 1]) << "a=" << a;
            EXPECT_GE(std::log2(err[i - 1] / err[i]), 1.0) << "a=" << a << " level " << i;
        }
    }
}

TEST(ExtensionSolver, UniformMeshZeroWeightIsExactOnQuadratic) {
    // a = 0 on a uniform mesh: the scheme reproduces y^2 - 2t up to rounding.
    for (std::size_t M : {8, 16, 32}) {
        auto sol = solve_exact_family(0.0, M, ExtensionScheme::flux_form, 1.0);
        EXPECT_LT(weighted_error(sol.U, [](const SpaceTimePoint& p) { return p.y * p.y - 2 * p.t; }), 1e-12);
    }
}

TEST(ExtensionSolver, SubstitutionSchemeConvergesAndAgrees) {
    for (double a : {-0.5, 0.5}) {
        auto exact = [a](const SpaceTimePoint& p) { return p.y * p.y - 2 * (1 + a) * p.t; };
        double prev = 0.0;
        for (std::size_t M : {16, 32, 64}) {
            auto z = solve_exact_family(a, M, ExtensionScheme::z_substitution, default_grading_exponent(a));
            auto f = solve_exact_family(a, M, ExtensionScheme::flux_form, default_grading_exponent(a));
            double ez = weighted_error(z.U, exact);
            if (prev > 0.0) EXPECT_GE(std::log2(prev / ez), 1.0);
            prev = ez;
            EXPECT_LT(relative_l2(z.U.values(), f.U.values()), 10 * std::max(ez, weighted_error(f.U, exact)));
        }
    }
}

TEST(ExtensionSolver, ConstantIsPreserved) {
    auto g = build_graded_grid(1, 1.0, 17, 16, 2.0, uniform_nodes(0.0, 0.5, 9));
    ExtensionProblem pr;
    pr.grid = g;
    pr.a = 0.3;
    pr.V = Potential::zero(g);
    pr.start_data = ScalarField::sample(g, 0.3, [](const SpaceTimePoint&) { return 1.0; });
    pr.boundary = [](const SpaceTimePoint&) { return 1.0; };
    auto sol = solve_backward_extension(pr);
    for (double v : sol.U.values()) EXPECT_NEAR(v, 1.0, 1e-12);
    EXPECT_LE(interior_residual(sol), 1e-12);
}

TEST(ExtensionSolver, HarmonicPolynomialsAreStationaryInTwoDimensions) {
    for (int kappa : {1, 2, 3}) {
        auto g = build_graded_grid(2, 1.0, 17, 12, 2.0, uniform_nodes(0.0, 0.2, 5));
        auto f = [kappa](const SpaceTimePoint& p) { return std::real(std::pow(std::complex<double>(p.x[0], p.x[1]), kappa)); };
        ExtensionProblem pr;
        pr.grid = g;
        pr.a = -0.4;
        pr.V = Potential::zero(g);
        pr.start_data = ScalarField::sample(g, -0.4, f);
        pr.boundary = f;
        auto sol = solve_backward_extension(pr);
        auto E = ScalarField::sample(g, -0.4, f);
        double worst = 0.0;
        for (std::size_t i = 0; i < E.values().size(); ++i) worst = std::max(worst, std::abs(E.values()[i] - sol.U.values()[i]));
        EXPECT_LT(worst, 1e-9) << "kappa=" << kappa;
    }
}

TEST(ExtensionSolver, NeumannTraceMatchesImposedFlux) {
    std::vector<double> gap;
    for (std::size_t M : {16, 32, 64}) {
        auto g = build_graded_grid(1, 1.0, M + 1, M, 2.0, uniform_nodes(0.0, 0.1, 11));
        auto V = Potential::from_expression(g, Expression::parse("0.5*cos(x1)"));
        ExtensionProblem pr;
        pr.grid = g;
        pr.a = 0.0;
        pr.V = V;
        pr.start_data = ScalarField::sample(g, 0.0, [](const SpaceTimePoint& p) {
            return std::cos(std::numbers::pi * p.x[0] / 2) * std::cos(std::numbers::pi * p.y / 2);
        });
        auto sol = solve_backward_extension(pr);
        double worst = 0.0, scale = 0.0;
        // The start slice is data, not a solution of the boundary condition.
        for (std::size_t i = 1; i + 1 < g->nx(); ++i)
            for (std::size_t k = 0; k + 1 < g->nt(); ++k) {
                double vu = V.at(i, 0, k) * sol.U.at(i, 0, 0, k);
                worst = std::max(worst, std::abs(sol.neumann_trace.at(i, 0, k) - vu));
                scale = std::max(scale, std::abs(vu));
            }
        gap.push_back(worst / scale);
    }
    EXPECT_LT(gap[1], gap[0]);
    EXPECT_LT(gap[2], gap[1]);
    EXPECT_LT(gap[1], 5e-3);
}

TEST(ExtensionSolver, ForwardAndMirroredBackwardAgree) {
    const double a = -0.3, T = 0.2;
    auto tn = uniform_nodes(0.0, T, 9);
    auto g = build_graded_grid(1, 1.0, 17, 16, default_grading_exponent(a), tn);
    auto Vf = [](const std::array<double, 2>& x, double t) { return 0.3 + std::sin(x[0]) * t; };
    auto data = [](const SpaceTimePoint& p) { return std::exp(-4 * p.x[0] * p.x[0] - 4 * p.y * p.y); };
    ExtensionProblem fw;
    fw.grid = g;
    fw.a = a;
    fw.V = Potential::from_function(g, Vf);
    fw.start_data = ScalarField::sample(g, a, data);
    fw.orientation = TimeOrientation::forward;
    auto sf = solve_extension(fw);
    ExtensionProblem bw = fw;
    bw.V = Potential::from_function(g, [&](const std::array<double, 2>& x, double t) { return Vf(x, T - t); });
    auto sb = solve_backward_extension(bw);
    double worst = 0.0;
    for (std::size_t i = 0; i < g->nx(); ++i)
        for (std::size_t j = 0; j < g->ny(); ++j)
            for (std::size_t k = 0; k < g->nt(); ++k)
                worst = std::max(worst, std::abs(sf.U.at(i, 0, j, k) - sb.U.at(i, 0, j, g->nt() - 1 - k)));
    EXPECT_LT(worst, 1e-12);
}

TEST(ExtensionSolver, ValidatesInputs) {
    auto g = build_graded_grid(1, 1.0, 17, 16, 2.0, uniform_nodes(0.0, 0.5, 9));
    auto other = build_graded_grid(1, 1.0, 21, 16, 2.0, uniform_nodes(0.0, 0.5, 9));
    ExtensionProblem pr;
    pr.grid = g;
    pr.a = 0.0;
    pr.V = Potential::zero(other);
    pr.start_data = ScalarField(g, 0.0);
    EXPECT_THROW(solve_backward_extension(pr), std::invalid_argument);
    pr.V = Potential::zero(g);
    pr.start_data = ScalarField(other, 0.0);
    EXPECT_THROW(solve_backward_extension(pr), std::invalid_argument);
    pr.start_data = ScalarField(g, 0.0);
    SolverConfig cfg;
    cfg.thin = ThinCondition::dirichlet;
    EXPECT_THROW(solve_backward_extension(pr, cfg), std::invalid_argument);
    auto sol = solve_backward_extension(pr);
    EXPECT_GT(sol.condition_estimate, 0.0);
    EXPECT_TRUE(std::isfinite(sol.condition_estimate));
}

// ---------------------------------------------------------------------------
// Weighted Neumann trace and residual

TEST(NeumannTrace, PowerProfileOnDefaultMesh) {
    for (double a : {-0.5, 0.0, 0.5}) {
        auto g = build_graded_grid(1, 1.0, 9, 32, default_grading_exponent(a));
        auto U = ScalarField::sample(g, a, [a](const SpaceTimePoint& p) { return std::pow(p.y, 1 - a); });
        auto tr = weighted_neumann_trace(U);
        for (double v : tr.trace.values()) EXPECT_NEAR(v, 1 - a, 0.01 * (1 - a));
        EXPECT_FALSE(tr.flagged);
    }
}

TEST(NeumannTrace, EvenProfilesHaveZeroTrace) {
    for (double a : {-0.5, 0.5}) {
        auto g = build_graded_grid(1, 1.0, 9, 32, default_grading_exponent(a));
        auto U = ScalarField::sample(g, a, [](const SpaceTimePoint& p) { return p.y * p.y + p.x[0]; });
        auto tr = weighted_neumann_trace(U);
        double umax = 0.0;
        for (double v : U.values()) umax = std::max(umax, std::abs(v));
        EXPECT_LE(tr.trace.max_abs(), 1e-3 * umax);
    }
}

TEST(NeumannTrace, RoughDataIsFlaggedAndCoarseMeshRejected) {
    auto g = build_graded_grid(1, 1.0, 9, 32, 2.0);
    auto U = ScalarField::sample(g, 0.0, [](const SpaceTimePoint& p) { return std::cos(40 * std::sqrt(p.y)); });
    EXPECT_TRUE(weighted_neumann_trace(U).flagged);
    auto coarse = build_graded_grid(1, 1.0, 9, 8, 1.0);
    EXPECT_THROW(weighted_neumann_trace(ScalarField(coarse, 0.0)), std::invalid_argument);
}

TEST(InteriorResidual, ExactSolutionSmallRandomFieldLarge) {
    for (double a : {-0.5, 0.5}) {
        auto sol = solve_exact_family(a, 32, ExtensionScheme::flux_form, default_grading_exponent(a));
        auto exact = ScalarField::sample(sol.U.grid_ptr(), a, [a](const SpaceTimePoint& p) { return p.y * p.y - 2 * (1 + a) * p.t; });
        EXPECT_LT(interior_residual(exact, TimeOrientation::backward), 1e-10);
        EXPECT_LT(sol.residual_norm, 0.05);
        std::mt19937_64 rng(7);
        std::uniform_real_distribution<double> d(-1.0, 1.0);
        ScalarField noise(sol.U.grid_ptr(), a);
        for (double& v : noise.values()) v = d(rng);
        EXPECT_GT(interior_residual(noise, TimeOrientation::backward), 1.0);
    }
}

// ---------------------------------------------------------------------------
// Kernel extension

TEST(KernelExtension, ProfileMatchesBesselClosedFormOnRealSymbols) {
    for (double s : {0.25, 0.5, 0.75}) {
        auto rule = build_extension_kernel_rule(s, 1e-3, 0.5, 25.0);
        for (double y : {1e-3, 0.01, 0.1, 0.5, 2.0})
            for (double z : {0.6, 1.0, 7.0, 100.0}) {
                double w = std::sqrt(z) * y;
                double exact = 2.0 / std::tgamma(s) * std::pow(w / 2, s) * boost::math::cyl_bessel_k(s, w);
                EXPECT_NEAR(std::abs(kernel_extension_profile(rule, y, z) - exact), 0.0, 1e-12) << s << " " << y << " " << z;
            }
    }
}

TEST(KernelExtension, ProfileMatchesIntegralRepresentationOnComplexSymbols) {
    for (double s : {0.25, 0.75}) {
        auto rule = build_extension_kernel_rule(s, 1e-2, 0.5, 25.0);
        for (double y : {0.05, 0.4, 1.5})
            for (std::complex<double> z : {std::complex<double>(2.0, 20.0), std::complex<double>(0.0, 5.0),
                                           std::complex<double>(40.0, -3.0)}) {
                auto oracle = bessel_profile_oracle(s, std::sqrt(z) * y);
                EXPECT_LT(std::abs(kernel_extension_profile(rule, y, z) - oracle), 1e-9) << s << " " << y << " " << z;
            }
    }
}

TEST(KernelExtension, ZeroDataGivesZero) {
    auto box = SpectralBox::centered(1, 4.0, 4.0, 16, 16);
    PeriodicField u{box, std::vector<double>(box.size(), 0.0)};
    auto ext = extend_via_kernel(u, 0.5, graded_nodes(0.02, 20, 2.0));
    for (double v : ext.U.values()) EXPECT_EQ(v, 0.0);
    auto rep = verify_np(u, 0.5);
    EXPECT_EQ(rep.relative_l2, 0.0);
    for (double v : rep.lhs.values) EXPECT_EQ(v, 0.0);
}

TEST(KernelExtension, TraceCharacterizationGaussianBump) {
    auto box = SpectralBox::centered(1, 8.0, 8.0, 64, 64);
    auto u = PeriodicField::sample(box, [](const std::array<double, 2>& x, double t) {
        return std::exp(-(x[0] * x[0] + t * t) / (2 * 0.3 * 0.3));
    });
    auto rep = verify_np(u, 0.5);
    EXPECT_LE(rep.relative_l2, 5e-3);
    EXPECT_FALSE(rep.quadrature_flag);
    EXPECT_FALSE(rep.band_flag);
}

TEST(KernelExtension, TraceCharacterizationSineTimesBump) {
    auto box = SpectralBox::centered(1, 1.0, 8.0, 32, 64);
    auto u = PeriodicField::sample(box, [](const std::array<double, 2>& x, double t) {
        return std::sin(2 * std::numbers::pi * x[0]) * std::exp(-t * t / (2 * 0.4 * 0.4));
    });
    auto rep = verify_np(u, 0.75);
    EXPECT_LE(rep.relative_l2, 1e-2);
    EXPECT_FALSE(rep.quadrature_flag);
}

TEST(KernelExtension, TraceCharacterizationTwoDimensions) {
    auto box = SpectralBox::centered(2, 6.0, 6.0, 24, 24);
    auto u = PeriodicField::sample(box, [](const std::array<double, 2>& x, double t) {
        return std::exp(-(x[0] * x[0] + 2 * x[1] * x[1] + t * t) / (2 * 0.5 * 0.5));
    });
    auto rep = verify_np(u, 0.6);
    EXPECT_LE(rep.relative_l2, 5e-3);
}

TEST(KernelExtension, AgreesWithFiniteVolumeSolverOnBump) {
    // Backward solver with Dirichlet thin data u(x, -t) against the kernel extension transported by t -> -t.
    const std::size_t mt = 64, M = 32;
    auto box = SpectralBox::centered(1, 8.0, 8.0, 64, mt);
    auto ufun = [](const std::array<double, 2>& x, double t) { return std::exp(-(x[0] * x[0] + t * t) / (2 * 0.25)); };
    auto u = PeriodicField::sample(box, ufun);
    auto ys = graded_nodes(3.0, M, 2.0);
    auto ext = extend_via_kernel(u, 0.5, ys);
    auto jidx = [&](double y) {
        return static_cast<std::size_t>(std::lower_bound(ys.begin(), ys.end(), y - 1e-12) - ys.begin());
    };
    auto kval = [&](const SpaceTimePoint& p) {
        auto i = static_cast<std::size_t>(std::llround((p.x[0] + 4.0) / 8.0 * 64.0)) % 64;
        auto k = static_cast<std::size_t>(std::llround((-p.t + 4.0) / 8.0 * static_cast<double>(mt))) % mt;
        return ext.U.at(i, 0, jidx(p.y), k);
    };
    auto base = build_graded_grid(1, 4.0, 65, M, 2.0, uniform_nodes(0.0, 2.0, 17));
    auto grid = std::make_shared<HalfSpaceGrid>(*base);
    grid->y = ys;
    ExtensionProblem pr;
    pr.grid = grid;
    pr.a = 0.0;
    pr.V = Potential::zero(grid);
    pr.start_data = ScalarField::sample(grid, 0.0, kval);
    pr.boundary = kval;
    pr.thin_values = [&](const std::array<double, 2>& x, double t) { return ufun(x, -t); };
    SolverConfig cfg;
    cfg.thin = ThinCondition::dirichlet;
    cfg.theta = 0.5;
    auto sol = solve_backward_extension(pr, cfg);
    auto ref = ScalarField::sample(grid, 0.0, kval);
    EXPECT_LT(relative_l2(sol.U.values(), ref.values()), 0.01);
}
