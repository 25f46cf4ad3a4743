#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/bessel.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <numbers>

#include "quclab/fractional_operator.hpp"
#include "quclab/quc_harness.hpp"

using namespace quclab;
using boost::math::quadrature::gauss_kronrod;

namespace {

// int_{B_R^+} y^a by nested Gauss-Kronrod.
double half_ball_measure(int n, double a, double R) {
    auto inner = [&](double rho) {  // int_0^{sqrt(R^2 - rho^2)} y^a dy
        return std::pow(std::max(0.0, R * R - rho * rho), 0.5 * (1 + a)) / (1 + a);
    };
    if (n == 1) return 2.0 * gauss_kronrod<double, 61>::integrate(inner, 0.0, R, 15, 1e-13);
    return 2.0 * std::numbers::pi * gauss_kronrod<double, 61>::integrate([&](double r) { return r * inner(r); }, 0.0, R, 15, 1e-13);
}

HarnessField constant_field(int n, double a) {
    auto h = HarnessField::analytic("one", n, a, [](const SpaceTimePoint&) { return 1.0; });
    h.V_norm1 = 1.0;
    return h;
}

// Re (x1 + i x2)^k: harmonic in x, independent of y and t, zero Neumann data.
HarnessField harmonic_field(int k, double a) {
    return HarnessField::analytic("harmonic", 2, a, [k](const SpaceTimePoint& p) {
        return std::real(std::pow(std::complex<double>(p.x[0], p.x[1]), k));
    }, true);
}

std::shared_ptr<const HalfSpaceGrid> solve_grid(double scale = 1.0) {
    std::vector<double> t;
    for (int i = 0; i < 8; ++i) t.push_back(0.04 * i / 8.0);
    for (double v = 0.04; v < 25; v *= 1.25) t.push_back(v);
    t.push_back(25.0);
    auto g = build_graded_grid(1, 5.0, 321, 48, 2.0, t);
    if (scale == 1.0) return g;
    auto s = std::make_shared<HalfSpaceGrid>(*g);
    for (double& v : s->x) v /= scale;
    for (double& v : s->y) v /= scale;
    for (double& v : s->t) v /= scale * scale;
    s->tangential_extent /= scale;
    return s;
}

Solution solve_on(std::shared_ptr<const HalfSpaceGrid> g, const Expression& V, std::function<double(const SpaceTimePoint&)> data) {
    ExtensionProblem pr;
    pr.grid = g;
    pr.a = 0.0;
    pr.V = Potential::from_expression(g, V);
    pr.start_data = ScalarField::sample(g, 0.0, data);
    pr.boundary = data;
    return solve_backward_extension(pr);
}

double data_1d(const SpaceTimePoint& p) { return 1.0 + 0.2 * p.x[0] + 0.1 * p.y * p.y; }

}  // namespace

TEST(Theta, ConstantMatchesMeasureOracle) {
    for (int n : {1, 2})
        for (double a : {-0.5, 0.0, 0.5}) {
            auto U = constant_field(n, a);
            double expect = 25.0 * half_ball_measure(n, a, 5.0) / half_ball_measure(n, a, 1.0);
            EXPECT_NEAR(compute_theta(U) / expect, 1.0, 1e-9) << n << " " << a;
            // Theta_rho = 16 (4 / rho)^{n+1+a} / rho^2
            for (double rho : {0.25, 0.5}) {
                double tr = 16.0 * half_ball_measure(n, a, 4.0) / (rho * rho * half_ball_measure(n, a, rho));
                EXPECT_NEAR(compute_theta_rho(U, rho) / tr, 1.0, 1e-9);
            }
        }
}

TEST(Theta, DegenerateSliceThrows) {
    auto U = HarnessField::analytic("t", 1, 0.0, [](const SpaceTimePoint& p) { return p.t; });
    EXPECT_THROW(compute_theta(U), DegenerateSliceError);
    EXPECT_THROW(compute_theta_rho(U, 0.5), DegenerateSliceError);
    EXPECT_THROW(compute_theta_rho(constant_field(1, 0.0), 1.5), std::domain_error);
}

TEST(Theta, RatiosBundle) {
    auto r = theta_ratios(constant_field(1, 0.0), {0.5});
    EXPECT_NEAR(r.theta_tilde, 16.0 * 16.0, 1e-8);
    EXPECT_NEAR(r.initial_mass, std::numbers::pi / 2.0, 1e-10);
}

TEST(Doubling, ConstantGivesDimensionalRatio) {
    for (double a : {-0.5, 0.0, 0.5}) {
        auto d = doubling_series(constant_field(1, a), {0.5, 0.25, 0.125}, 10.0);
        for (double q : d.ratios) EXPECT_NEAR(q, std::pow(2.0, 2.0 + a), 1e-6 * q);
        EXPECT_FALSE(d.flagged);
        EXPECT_LE(doubling_bound(d.M_required, d.V_norm1, d.s, d.theta), doubling_bound(d.M_required * 1.02, d.V_norm1, d.s, d.theta));
        EXPECT_GE(doubling_bound(d.M_required, d.V_norm1, d.s, d.theta), d.ratios.front() * (1 - 1e-12));
    }
}

TEST(Doubling, HarmonicPolynomialRatio) {
    for (int k : {1, 3}) {
        auto U = harmonic_field(k, 0.0);
        U.quadrature.azimuth_points = 64;
        auto d = doubling_series(U, {0.5, 0.25}, 10.0);
        for (double q : d.ratios) EXPECT_NEAR(q / std::pow(2.0, 2 * k + 3), 1.0, 0.02);
    }
}

TEST(Doubling, NumericalSolutionBelowFormula) {
    auto g = solve_grid();
    auto V = Expression::parse("0.5*cos(x1)");
    auto sol = solve_on(g, V, data_1d);
    auto U = HarnessField::from_solution(sol, Potential::from_expression(g, V));
    EXPECT_NEAR(U.V_norm1, 2.0, 1e-3);
    auto d = doubling_series(U, {0.5, 0.25, 0.125}, 10.0);
    EXPECT_FALSE(d.flagged);
    for (double q : d.ratios) EXPECT_LT(q, d.N_formula);
    EXPECT_TRUE(std::isfinite(d.M_required));
    EXPECT_THROW(doubling_series(U, {0.05}, 10.0), std::domain_error);  // below 3 cells
    EXPECT_THROW(doubling_series(U, {0.75}, 10.0), std::domain_error);
}

TEST(TwoBall, ConstantAndHomogeneous) {
    auto one = constant_field(1, 0.0);
    auto rep = two_ball_one_cylinder(one, 0.5, 0.5, 10.0);
    EXPECT_EQ(rep.status, "holds");
    // independent evaluation of the right side
    double in = half_ball_measure(1, 0.0, 0.5), cyl = 16.0 * half_ball_measure(1, 0.0, 4.0);
    double M1 = 10.0 * std::log(10.0 * 2.0) + 10.0;
    double tau = 1.0 / 11.0;
    EXPECT_NEAR(rep.rhs / (std::exp(M1 * tau) * std::pow(in, tau) * std::pow(10.0 * cyl, 1 - tau)), 1.0, 1e-9);
    EXPECT_NEAR(rep.lhs / in, 1.0, 1e-9);
    EXPECT_LE(two_ball_threshold(one, 0.5, 0.5), 10.0);

    auto h = harmonic_field(2, 0.0);
    h.quadrature.azimuth_points = 64;
    EXPECT_EQ(two_ball_one_cylinder(h, 0.125, 0.5, 10.0).status, "holds");
    double Mt = two_ball_threshold(h, 0.125, 0.5);
    EXPECT_TRUE(std::isfinite(Mt));
    EXPECT_EQ(two_ball_one_cylinder(h, 0.125, 0.5, Mt).status, "holds");
    EXPECT_THROW(two_ball_one_cylinder(h, 0.6, 0.5, 10.0), std::domain_error);
}

TEST(Fit, ThinConstantSlopeIsDimension) {
    for (int n : {1, 2}) {
        auto f = fit_vanishing_order(constant_field(n, 0.0), OrderRegion::thin, dyadic_radii(1, 6));
        EXPECT_NEAR(f.slope, n, 1e-3);
        EXPECT_NEAR(f.r_squared, 1.0, 1e-9);
    }
}

TEST(Fit, HarmonicPolynomialOrders) {
    for (double a : {-0.5, 0.0, 0.5}) {
        auto U = harmonic_field(3, a);
        U.quadrature.azimuth_points = 64;
        auto thin = fit_vanishing_order(U, OrderRegion::thin, dyadic_radii(1, 6));
        EXPECT_NEAR(thin.slope / 8.0, 1.0, 0.02);
        auto thick = fit_vanishing_order(U, OrderRegion::thick, dyadic_radii(1, 5));
        EXPECT_NEAR(thick.slope / (6.0 + 2.0 + 1.0 + a + 2.0), 1.0, 0.02);
    }
}

TEST(Fit, CalibrationAcrossOrders) {
    for (int k = 0; k <= 5; ++k) {
        auto U = harmonic_field(k, 0.0);
        U.quadrature.azimuth_points = 64;
        EXPECT_NEAR(fit_vanishing_order(U, OrderRegion::thin, dyadic_radii(1, 6)).slope, 2.0 * k + 2.0, 0.02 * (2.0 * k + 2.0));
    }
}

TEST(Fit, WindowRules) {
    EXPECT_THROW(fit_vanishing_order(constant_field(1, 0.0), OrderRegion::thin, {0.5, 0.25, 0.125}), std::invalid_argument);
    // support away from the origin: the small radii see zero and leave the window
    auto ring = HarnessField::analytic("ring", 1, 0.0, [](const SpaceTimePoint& p) { return std::abs(p.x[0]) > 0.1 ? 1.0 : 0.0; });
    EXPECT_THROW(fit_vanishing_order(ring, OrderRegion::thin, dyadic_radii(1, 8)), std::domain_error);
}

TEST(Rescaled, NormalizationsAreOne) {
    auto U = HarnessField::analytic("mix", 1, 0.0, [](const SpaceTimePoint& p) {
        return 1.0 + p.x[0] + p.x[0] * p.x[0] - p.y * p.y + 0.1 * p.t;
    });
    for (auto kind : {Normalization::initial_slice, Normalization::cylinder})
        for (const auto& rf : rescaled_sequence(U, {1.0, 0.5, 0.125}, kind)) {
            double v = kind == Normalization::initial_slice ? rf.field.weighted(Region::half_ball(0.5, 0.0))
                                                            : rf.field.weighted(Region::cylinder(1.0, 0.0));
            EXPECT_NEAR(v, 1.0, 1e-6);
        }
    auto id = rescaled_sequence(U, {1.0}, Normalization::cylinder).front();
    SpaceTimePoint p{{0.3, 0.0}, 0.2, 0.4};
    EXPECT_NEAR(id.field.value(p), U.value(p) / std::sqrt(id.normalization), 1e-14);
}

TEST(Rescaled, HomogeneousIsSelfSimilar) {
    auto U = harmonic_field(2, 0.0);
    auto seq = rescaled_sequence(U, {1.0, 0.25, 1.0 / 64}, Normalization::initial_slice);
    SpaceTimePoint p{{0.3, -0.2}, 0.1, 0.2};
    for (const auto& rf : seq) EXPECT_NEAR(rf.field.value(p) / seq.front().field.value(p), 1.0, 1e-8);
}

TEST(Rescaled, PotentialExpression) {
    auto V = Expression::parse("0.5*cos(x1) + x2*t");
    auto W = rescaled_potential(V, 0.5, 0.0);
    for (double x : {-0.7, 0.0, 1.3})
        EXPECT_NEAR(W(x, 0.4, 0.9), 0.5 * V(0.5 * x, 0.2, 0.225), 1e-15);
    EXPECT_NEAR(rescaled_potential(Expression::constant(2.0), 0.25, 0.5)(0, 0, 0), 2.0 * std::sqrt(0.25), 1e-15);
}

TEST(Rescaled, GridRescalingMatchesResolve) {
    const double r = 0.5;
    auto V = Expression::parse("0.5*cos(x1)");
    auto base = solve_on(solve_grid(), V, data_1d);
    auto scaled = rescale_grid_field(base.U, r);
    auto direct = solve_on(solve_grid(r), rescaled_potential(V, r, 0.0), [r](const SpaceTimePoint& p) {
        SpaceTimePoint q = p;
        q.x = {r * p.x[0], 0.0};
        q.y = r * p.y;
        q.t = r * r * p.t;
        return data_1d(q);
    });
    double err = 0.0, top = 0.0;
    for (std::size_t i = 0; i < scaled.values().size(); ++i) {
        err = std::max(err, std::abs(scaled.values()[i] - direct.U.values()[i]));
        top = std::max(top, std::abs(direct.U.values()[i]));
    }
    EXPECT_LT(err / top, 1e-8);
}

TEST(Eigen, ProfileMatchesBoost) {
    for (double s : {0.25, 0.5, 0.75})
        for (double z : {1e-3, 0.3, 2.0, 10.0}) {
            double ref = std::pow(2.0, 1 - s) / boost::math::tgamma(s) * std::pow(z, s) * boost::math::cyl_bessel_k(s, z);
            EXPECT_NEAR(extension_profile(s, z), ref, 1e-12);
        }
    EXPECT_EQ(extension_profile(0.5, 0.0), 1.0);
    // s = 1/2: the profile is e^{-z}
    EXPECT_NEAR(extension_profile(0.5, 1.7), std::exp(-1.7), 1e-14);
}

TEST(Eigen, SolvesExtensionEquation) {
    // Lap_x U + y^{-a} d_y(y^a d_y U) = 0, by central differences
    for (double s : {0.25, 0.5, 0.75}) {
        auto m = eigen_mode(9.0, s);
        const double a = m.a(), h = 1e-4;
        SpaceTimePoint p{{0.31, 0.17}, 0.4, 0.0};
        auto at = [&](double dx1, double dx2, double dy) {
            SpaceTimePoint q = p;
            q.x = {p.x[0] + dx1, p.x[1] + dx2};
            q.y += dy;
            return m.U(q);
        };
        double lap = (at(h, 0, 0) + at(-h, 0, 0) + at(0, h, 0) + at(0, -h, 0) - 4 * at(0, 0, 0)) / (h * h);
        double fp = std::pow(p.y + 0.5 * h, a) * (at(0, 0, h) - at(0, 0, 0));
        double fm = std::pow(p.y - 0.5 * h, a) * (at(0, 0, 0) - at(0, 0, -h));
        double ext = (fp - fm) / (h * h) / std::pow(p.y, a);
        EXPECT_NEAR(lap + ext, 0.0, 1e-5 * std::abs(lap));
    }
}

TEST(Eigen, SignConvention) {
    // C0* lim y^a d_y U = -lambda^s u = V u
    for (double s : {0.25, 0.5, 0.75}) {
        auto m = eigen_mode(16.0, s);
        const double y = 1e-7, sl = std::sqrt(m.lambda);
        double dth = -std::pow(2.0, 1 - s) / boost::math::tgamma(s) * std::pow(sl * y, s) *
                     boost::math::cyl_bessel_k(1 - s, sl * y) * sl;
        double flux = sharp_trace_constant(m.a()) * std::pow(y, m.a()) * dth;
        EXPECT_NEAR(flux / m.V(), 1.0, 1e-3);
    }
    // H^s of a periodic eigenfunction of -Lap is lambda^s times it
    auto box = SpectralBox::centered(1, 2.0, 2.0, 32, 8);
    auto f = PeriodicField::sample(box, [](const std::array<double, 2>& x, double) { return std::cos(2.0 * std::numbers::pi * x[0]); });
    const double lambda = 4.0 * std::numbers::pi * std::numbers::pi;
    for (double s : {0.25, 0.5, 0.75}) {
        auto out = apply_hs_spectral(f, s);
        for (std::size_t i = 0; i < f.values.size(); ++i)
            EXPECT_NEAR(out.field.values[i], std::pow(lambda, s) * f.values[i], 1e-10);
    }
}

TEST(Eigen, MassReductionMatchesCubature) {
    for (double s : {0.25, 0.5, 0.75}) {
        auto m = eigen_mode(4.0, s);
        QuadratureOptions q;
        q.radial_panels = 16;
        q.radial_order = 24;
        q.elevation_order = 64;
        q.azimuth_points = 64;
        double cub = weighted_integral([&](const SpaceTimePoint& p) { return m.U(p); }, Region::half_ball(1.0), 2, m.a(), {}, q);
        EXPECT_NEAR(eigen_half_ball_mass(m, 1.0) / cub, 1.0, 2e-4) << s;
    }
    // kappa = 0 against Boost nested Gauss-Kronrod
    auto m = eigen_mode(0.16, 0.5);
    ASSERT_EQ(m.kappa, 0);
    auto inner = [&](double rho) {
        double h = std::sqrt(std::max(0.0, 1.0 - rho * rho));
        return gauss_kronrod<double, 31>::integrate([&](double y) { return std::exp(-0.8 * y); }, 0.0, h, 10, 1e-13);
    };
    double ref = 2 * std::numbers::pi * gauss_kronrod<double, 61>::integrate([&](double rho) {
        double j = boost::math::cyl_bessel_j(0, 0.4 * rho);
        return rho * j * j * inner(rho);
    }, 0.0, 1.0, 15, 1e-13);
    EXPECT_NEAR(eigen_half_ball_mass(m, 1.0) / ref, 1.0, 1e-9);
}

TEST(Eigen, ZeroModeThinOrderIsDimension) {
    auto row = sweep_point(0.16, 0.5);
    EXPECT_EQ(row.kappa, 0);
    EXPECT_NEAR(row.order, 2.0, 0.04);
}

TEST(Eigen, SweepRatioBounded) {
    for (double s : {0.5, 0.75}) {
        auto rows = order_vs_potential_sweep({16.0, 64.0, 256.0}, s);
        ASSERT_EQ(rows.size(), 3u);
        for (const auto& r : rows) {
            EXPECT_NEAR(r.order / r.expected_order, 1.0, 0.02) << r.lambda;
            EXPECT_GT(r.theta, 0.0);
            EXPECT_TRUE(std::isfinite(r.N_formula));
        }
        EXPECT_LE(sweep_ratio_spread(rows), 2.0);
    }
    EXPECT_THROW(order_vs_potential_sweep({64.0, 16.0}, 0.5), std::invalid_argument);
    SweepOptions coarse;
    coarse.azimuth_points = 16;
    EXPECT_THROW(sweep_point(64.0, 0.5, coarse), std::domain_error);
}

TEST(Eigen, ProfileMatchesKernelExtension) {
    // time-independent eigenfunction of -Lap extended by the semigroup kernel
    auto box = SpectralBox::centered(1, 1.0, 1.0, 16, 8);
    auto u = PeriodicField::sample(box, [](const std::array<double, 2>& x, double) { return std::cos(2.0 * std::numbers::pi * x[0]); });
    const double sl = 2.0 * std::numbers::pi;
    for (double s : {0.25, 0.5, 0.75}) {
        auto ys = graded_nodes(0.5, 40, 2.0);
        auto ext = extend_via_kernel(u, s, ys);
        const auto& g = ext.U.grid();
        double err = 0.0;
        for (std::size_t i = 0; i < g.nx(); ++i)
            for (std::size_t j = 0; j < g.ny(); ++j)
                err = std::max(err, std::abs(ext.U.at(i, 0, j, 0) - std::cos(sl * g.x[i]) * extension_profile(s, sl * g.y[j])));
        EXPECT_LT(err, 1e-6) << s;
    }
}
