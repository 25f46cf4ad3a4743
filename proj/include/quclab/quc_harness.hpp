#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "quclab/expression.hpp"
#include "quclab/extension_solver.hpp"
#include "quclab/inequality_lab.hpp"
#include "quclab/parallel.hpp"
#include "quclab/quadrature.hpp"
#include "quclab/weighted_grid.hpp"

namespace quclab {

struct DegenerateSliceError : std::domain_error {
    using std::domain_error::domain_error;
};

/// A solution of the extension problem seen through its quadratures: an analytic callable
/// or grid samples. Regions follow the backward convention t in [0, r^2).
struct HarnessField {
    std::string name = "U";
    int n = 1;
    double a = 0.0;
    double V_norm1 = 1.0;
    std::function<double(const SpaceTimePoint&)> eval;
    std::shared_ptr<const ScalarField> samples;
    bool stationary = false;
    // optional R -> int_{B_R^+} U^2 y^a for stationary fields with a cheaper exact reduction
    std::function<double(double)> half_ball_mass;
    QuadratureOptions quadrature;

    static HarnessField analytic(std::string name, int n, double a, std::function<double(const SpaceTimePoint&)> f,
                                 bool stationary = false) {
        if (n != 1 && n != 2) throw std::invalid_argument("HarnessField: n must be 1 or 2");
        if (!(a > -1.0 && a < 1.0)) throw std::domain_error("HarnessField: a must lie in (-1, 1)");
        HarnessField h;
        h.name = std::move(name);
        h.n = n;
        h.a = a;
        h.eval = std::move(f);
        h.stationary = stationary;
        return h;
    }

    static HarnessField from_field(ScalarField U, double V_norm1 = 1.0, std::string name = "solution") {
        HarnessField h;
        h.name = std::move(name);
        auto p = std::make_shared<const ScalarField>(std::move(U));
        h.n = p->grid().n;
        h.a = p->weight_exponent();
        h.V_norm1 = V_norm1;
        h.samples = p;
        h.eval = [p](const SpaceTimePoint& x) { return (*p)(x); };
        return h;
    }

    static HarnessField from_solution(const Solution& sol, const Potential& V, std::string name = "solution") {
        return from_field(sol.U, V.norm_1(), std::move(name));
    }

    double value(const SpaceTimePoint& p) const { return eval(p); }

    /// Grid spacing relevant for a ball of radius r (zero for analytic fields).
    double resolution(double r) const {
        if (!samples) return 0.0;
        const auto& g = samples->grid();
        double h = 0.0;
        for (std::size_t i = 0; i + 1 < g.x.size(); ++i) h = std::max(h, g.x[i + 1] - g.x[i]);
        for (std::size_t j = 0; j + 1 < g.y.size() && g.y[j] < r; ++j) h = std::max(h, g.y[j + 1] - g.y[j]);
        return h;
    }

    /// int U^2 y^a over a thick region.
    double weighted(const Region& region, const QuadratureOptions& opt) const {
        const bool cyl = region.kind == RegionKind::cylinder;
        if ((stationary || half_ball_mass) && (cyl || region.kind == RegionKind::half_ball)) {
            double m = half_ball_mass ? half_ball_mass(region.radius)
                                      : weighted_integral(eval, Region::half_ball(region.radius, region.t0), n, a, {}, opt);
            return cyl ? region.radius * region.radius * m : m;
        }
        if (samples) return weighted_integral(*samples, region, {}, opt);
        return weighted_integral(eval, region, n, a, {}, opt);
    }
    double weighted(const Region& region) const { return weighted(region, quadrature); }

    /// int_{B_r} U(x, 0, t)^2 dx on the thin set.
    double thin(double r, double t, const QuadratureOptions& opt) const {
        Integrand w{2, false};
        if (samples) return weighted_integral(*samples, Region::thin_ball(r, t), w, opt);
        return weighted_integral(eval, Region::thin_ball(r, t), n, a, w, opt);
    }
};

namespace detail {
inline QuadratureOptions harness_refined(QuadratureOptions o) {
    o.radial_panels *= 2;
    o.radial_order += 8;
    o.elevation_order += 16;
    o.azimuth_points *= 2;
    o.time_panels *= 2;
    return o;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Energy ratios.

/// Theta = int_{Q_5^+} U^2 y^a / int_{B_1^+} U(., 0)^2 y^a.
inline double compute_theta(const HarnessField& U) {
    double den = U.weighted(Region::half_ball(1.0, 0.0));
    double num = U.weighted(Region::cylinder(5.0, 0.0));
    if (!(den > 1e-13 * num) || den <= 0.0) throw DegenerateSliceError("compute_theta: degenerate initial slice");
    return num / den;
}

/// Theta_rho = int_{Q_4^+} U^2 y^a / (rho^2 int_{B_rho^+} U(., 0)^2 y^a).
inline double compute_theta_rho(const HarnessField& U, double rho) {
    if (!(rho > 0.0 && rho < 1.0)) throw std::domain_error("compute_theta_rho: rho must lie in (0, 1)");
    double den = U.weighted(Region::half_ball(rho, 0.0));
    double num = U.weighted(Region::cylinder(4.0, 0.0));
    if (!(den > 1e-13 * num) || den <= 0.0) throw DegenerateSliceError("compute_theta_rho: degenerate initial slice");
    return num / (rho * rho * den);
}

struct ThetaRatios {
    double theta = 0.0;
    std::vector<double> rho, theta_rho;
    double theta_tilde = 0.0;  // int_{Q_4^+} / int_{B_1^+}
    double initial_mass = 0.0;
};

inline ThetaRatios theta_ratios(const HarnessField& U, const std::vector<double>& rhos) {
    ThetaRatios r;
    r.theta = compute_theta(U);
    r.initial_mass = U.weighted(Region::half_ball(1.0, 0.0));
    r.theta_tilde = U.weighted(Region::cylinder(4.0, 0.0)) / r.initial_mass;
    for (double rho : rhos) {
        r.rho.push_back(rho);
        r.theta_rho.push_back(compute_theta_rho(U, rho));
    }
    return r;
}

// ---------------------------------------------------------------------------
// Doubling on the initial slice.

/// N = exp{M (log(M (1 + ||V||_1) Theta) + ||V||_1^{1/2s})}.
inline double doubling_bound(double M, double V_norm1, double s, double theta) {
    return std::exp(M * (std::log(M * (1.0 + V_norm1) * theta) + std::pow(V_norm1, 1.0 / (2.0 * s))));
}

/// Log-spaced trial constants 10^{-2} .. 10^{3}.
inline std::vector<double> default_M_grid() {
    std::vector<double> g;
    for (int k = 0; k <= 1000; ++k) g.push_back(std::pow(10.0, -2.0 + 0.005 * k));
    return g;
}

struct DoublingSeries {
    std::vector<double> radii, integrals, ratios;  // ratios[k] = I(2 r_k) / I(r_k)
    double M = 10.0, theta = 0.0, V_norm1 = 1.0, s = 0.5;
    double N_formula = 0.0;
    bool flagged = false;  // some ratio above N_formula
    double M_required = std::numeric_limits<double>::infinity();  // smallest trial M with every ratio <= N
};

inline DoublingSeries doubling_series(const HarnessField& U, const std::vector<double>& radii, double M,
                                      double theta = std::numeric_limits<double>::quiet_NaN()) {
    if (radii.empty()) throw std::invalid_argument("doubling_series: no radii");
    DoublingSeries d;
    d.M = M;
    d.s = 0.5 * (1.0 - U.a);
    d.V_norm1 = U.V_norm1;
    d.theta = std::isnan(theta) ? compute_theta(U) : theta;
    for (double r : radii) {
        if (!(r > 0.0 && r <= 0.5)) throw std::domain_error("doubling_series: radii must lie in (0, 1/2]");
        if (r < 3.0 * U.resolution(r)) throw std::domain_error("doubling_series: radius below 3 grid cells (unresolved)");
        double in = U.weighted(Region::half_ball(r, 0.0)), out = U.weighted(Region::half_ball(2.0 * r, 0.0));
        if (!(in > 0.0)) throw DegenerateSliceError("doubling_series: zero integral on B_r");
        d.radii.push_back(r);
        d.integrals.push_back(in);
        d.ratios.push_back(out / in);
    }
    d.N_formula = doubling_bound(M, d.V_norm1, d.s, d.theta);
    const double worst = *std::max_element(d.ratios.begin(), d.ratios.end());
    d.flagged = worst > d.N_formula;
    for (double m : default_M_grid())
        if (doubling_bound(m, d.V_norm1, d.s, d.theta) >= worst) {
            d.M_required = m;
            break;
        }
    return d;
}

// ---------------------------------------------------------------------------
// Two-ball one-cylinder inequality.

struct TwoBallReport : InequalityReport {
    double tau = 1.0;  // 1 / (1 + M log2(2 rho / r))
    double M1 = 0.0;
    double inner = 0.0, outer = 0.0, cylinder = 0.0;
};

namespace detail {
inline TwoBallReport two_ball_eval(double inner, double outer, double cyl, double r, double rho, double M, double V_norm1,
                                   double s) {
    TwoBallReport rep;
    rep.inequality = "two_ball_one_cylinder";
    const double L = std::log2(2.0 * rho / r);
    rep.tau = 1.0 / (1.0 + M * L);
    rep.M1 = M * std::log(M * (1.0 + V_norm1)) + M * std::pow(V_norm1, 1.0 / (2.0 * s));
    rep.inner = inner;
    rep.outer = outer;
    rep.cylinder = cyl;
    rep.lhs = outer;
    // in log space: the factors can be large
    double lr = rep.M1 * L * rep.tau + rep.tau * std::log(inner) + (1.0 - rep.tau) * std::log(M * cyl);
    rep.rhs = std::exp(lr);
    rep.margin = rep.rhs - rep.lhs;
    rep.empirical_constant = M;
    rep.parameters = {{"M", M}, {"r", r}, {"rho", rho}};
    rep.status = rep.violated() ? "violated" : "holds";
    return rep;
}
}  // namespace detail

inline TwoBallReport two_ball_one_cylinder(const HarnessField& U, double r, double rho, double M) {
    if (!(r > 0.0 && r <= rho && rho < 1.0)) throw std::domain_error("two_ball_one_cylinder: need 0 < r <= rho < 1");
    if (!(M > 0.0)) throw std::domain_error("two_ball_one_cylinder: M must be positive");
    if (r < 3.0 * U.resolution(r)) throw std::domain_error("two_ball_one_cylinder: radius below 3 grid cells (unresolved)");
    double inner = U.weighted(Region::half_ball(r, 0.0));
    if (!(inner > 0.0)) throw DegenerateSliceError("two_ball_one_cylinder: zero integral on B_r");
    auto rep = detail::two_ball_eval(inner, U.weighted(Region::half_ball(rho, 0.0)), U.weighted(Region::cylinder(4.0, 0.0)), r,
                                     rho, M, U.V_norm1, 0.5 * (1.0 - U.a));
    rep.function = U.name;
    return rep;
}

/// Smallest M on the trial grid for which the two-ball one-cylinder inequality holds.
inline double two_ball_threshold(const HarnessField& U, double r, double rho, const std::vector<double>& M_grid = default_M_grid()) {
    if (!(r > 0.0 && r <= rho && rho < 1.0)) throw std::domain_error("two_ball_threshold: need 0 < r <= rho < 1");
    double inner = U.weighted(Region::half_ball(r, 0.0)), outer = U.weighted(Region::half_ball(rho, 0.0));
    double cyl = U.weighted(Region::cylinder(4.0, 0.0));
    for (double M : M_grid)
        if (detail::two_ball_eval(inner, outer, cyl, r, rho, M, U.V_norm1, 0.5 * (1.0 - U.a)).status == "holds") return M;
    return std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------------------
// Vanishing-order fits.

enum class OrderRegion { thin, thick };

struct VanishingOrderFit {
    std::vector<double> radii, integrals, uncertainty;
    double slope = 0.0, intercept = 0.0, r_squared = 0.0;
    std::size_t window_begin = 0, window_end = 0;  // half-open index range used
    std::vector<std::string> warnings;
};

/// {2^{-k}} for k in [k_min, k_max].
inline std::vector<double> dyadic_radii(int k_min, int k_max) {
    std::vector<double> r;
    for (int k = k_min; k <= k_max; ++k) r.push_back(std::ldexp(1.0, -k));
    return r;
}

/// Dyadic radii from 2^{-k_min}, capped at k <= log2(extent / 3h) for grid fields.
inline std::vector<double> admissible_dyadic_radii(const HarnessField& U, int k_min, int count) {
    int k_max = k_min + count - 1;
    if (U.samples) {
        const auto& g = U.samples->grid();
        double extent = std::min(g.tangential_extent, g.extension_extent());
        double h = U.resolution(std::ldexp(1.0, -k_min));
        k_max = std::min(k_max, static_cast<int>(std::floor(std::log2(extent / (3.0 * h)))));
    }
    if (k_max < k_min) throw std::domain_error("admissible_dyadic_radii: no resolvable radius");
    return dyadic_radii(k_min, k_max);
}

/// Least-squares slope of log I(r) against log r, I = int_{B_r} u(., 0)^2 (thin) or
/// int_{Q_r^+} U^2 y^a (thick). Radii are sorted decreasing.
inline VanishingOrderFit fit_vanishing_order(const HarnessField& U, OrderRegion kind, std::vector<double> radii) {
    std::sort(radii.begin(), radii.end(), std::greater<>());
    radii.erase(std::unique(radii.begin(), radii.end()), radii.end());
    if (radii.size() < 4) throw std::invalid_argument("fit_vanishing_order: need at least 4 radii");
    VanishingOrderFit fit;
    const QuadratureOptions fine = detail::harness_refined(U.quadrature);
    auto integral = [&](double r, const QuadratureOptions& o) {
        return kind == OrderRegion::thin ? U.thin(r, 0.0, o) : U.weighted(Region::cylinder(r, 0.0), o);
    };
    for (double r : radii) {
        if (U.samples && r < 3.0 * U.resolution(r)) throw std::domain_error("fit_vanishing_order: radius below 3 grid cells");
        double i0 = integral(r, U.quadrature), i1 = integral(r, fine);
        fit.radii.push_back(r);
        fit.integrals.push_back(i1);
        fit.uncertainty.push_back(i1 > 0.0 ? std::abs(i1 - i0) / i1 : std::numeric_limits<double>::infinity());
    }
    std::size_t end = radii.size();
    // drop underflowed or nonpositive values from the small end
    while (end > 0 && !(fit.integrals[end - 1] > 0.0 && std::isfinite(std::log(fit.integrals[end - 1])))) {
        fit.warnings.push_back("nonpositive integral at r = " + std::to_string(fit.radii[end - 1]) + ", window shrunk");
        --end;
    }
    // the two smallest radii leave the window when their uncertainty exceeds 5%
    for (int k = 0; k < 2 && end > 0 && fit.uncertainty[end - 1] > 0.05; ++k) {
        fit.warnings.push_back("uncertain integral at r = " + std::to_string(fit.radii[end - 1]) + ", excluded");
        --end;
    }
    for (std::size_t i = 0; i < end; ++i)
        if (!(fit.integrals[i] > 0.0)) throw std::domain_error("fit_vanishing_order: nonpositive integral inside the window");
    if (end < 4) throw std::domain_error("fit_vanishing_order: fewer than 4 usable radii");
    fit.window_begin = 0;
    fit.window_end = end;
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    const double m = static_cast<double>(end);
    for (std::size_t i = 0; i < end; ++i) {
        double x = std::log(fit.radii[i]), y = std::log(fit.integrals[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    }
    double vx = sxx - sx * sx / m, vy = syy - sy * sy / m, cxy = sxy - sx * sy / m;
    fit.slope = cxy / vx;
    fit.intercept = (sy - fit.slope * sx) / m;
    fit.r_squared = vy > 0.0 ? cxy * cxy / (vx * vy) : 1.0;
    return fit;
}

// ---------------------------------------------------------------------------
// Rescaled sequences.

enum class Normalization {
    initial_slice,  // int_{B_{1/2}^+} U_j(., 0)^2 y^a = 1
    cylinder        // int_{Q_1^+} U_j^2 y^a = 1
};

struct RescaledField {
    double r = 1.0;
    double normalization = 1.0;  // the divisor before the square root
    HarnessField field;
};

/// r^{1-a} V(r x, r^2 t), the potential seen by U(r X, r^2 t).
inline Expression rescaled_potential(const Expression& V, double r, double a) { return V.rescaled(r, r * r, std::pow(r, 1.0 - a)); }

/// Exact rescaling of grid samples: nodes divided by (r, r, r^2), values multiplied by factor.
inline ScalarField rescale_grid_field(const ScalarField& U, double r, double factor = 1.0) {
    if (!(r > 0.0)) throw std::domain_error("rescale_grid_field: r must be positive");
    const auto& g = U.grid();
    auto ng = std::make_shared<HalfSpaceGrid>(g);
    for (double& v : ng->x) v /= r;
    for (double& v : ng->y) v /= r;
    for (double& v : ng->t) v /= r * r;
    ng->tangential_extent = g.tangential_extent / r;
    std::vector<double> vals = U.values();
    for (double& v : vals) v *= factor;
    return ScalarField(ng, U.weight_exponent(), std::move(vals));
}

inline std::vector<RescaledField> rescaled_sequence(const HarnessField& U, const std::vector<double>& radii, Normalization kind) {
    std::vector<RescaledField> out;
    const double d = U.n + 1 + U.a;
    for (double r : radii) {
        if (!(r > 0.0)) throw std::domain_error("rescaled_sequence: radii must be positive");
        if (U.samples && r < 3.0 * U.resolution(r)) throw std::domain_error("rescaled_sequence: radius below grid resolution");
        double norm = kind == Normalization::initial_slice ? U.weighted(Region::half_ball(0.5 * r, 0.0)) / std::pow(r, d)
                                                           : U.weighted(Region::cylinder(r, 0.0)) / std::pow(r, d + 2.0);
        if (!(norm > 0.0)) throw DegenerateSliceError("rescaled_sequence: zero normalization integral");
        const double f = 1.0 / std::sqrt(norm);
        RescaledField rf;
        rf.r = r;
        rf.normalization = norm;
        if (U.samples) {
            rf.field = HarnessField::from_field(rescale_grid_field(*U.samples, r, f), U.V_norm1, U.name + "_rescaled");
        } else {
            auto base = U.eval;
            rf.field = HarnessField::analytic(U.name + "_rescaled", U.n, U.a, [base, r, f](const SpaceTimePoint& p) {
                SpaceTimePoint q = p;
                q.x = {r * p.x[0], r * p.x[1]};
                q.y = r * p.y;
                q.t = r * r * p.t;
                return f * base(q);
            }, U.stationary);
        }
        rf.field.quadrature = U.quadrature;
        out.push_back(std::move(rf));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Eigenfunction family and the order-versus-potential sweep.

/// Stationary extension profile theta_s(z) = 2^{1-s} / Gamma(s) z^s K_s(z), theta_s(0) = 1.
/// U = u(x) theta_s(sqrt(lambda) y) extends an eigenfunction -Lap u = lambda u.
inline double extension_profile(double s, double z) {
    if (!(s > 0.0 && s < 1.0)) throw std::domain_error("extension_profile: s must lie in (0, 1)");
    if (z <= 0.0) return 1.0;
    if (z > 700.0) return 0.0;
    return std::pow(2.0, 1.0 - s) / std::tgamma(s) * std::pow(z, s) * std::cyl_bessel_k(s, z);
}

struct EigenMode {
    double lambda = 16.0;
    double s = 0.5;
    int kappa = 4;  // round(sqrt(lambda))

    double a() const { return 1.0 - 2.0 * s; }
    double V() const { return -std::pow(lambda, s); }  // H^s u = -V u
    double V_norm1() const { return std::abs(V()) + 1.0; }
    /// u(x) = J_kappa(sqrt(lambda) |x|) cos(kappa theta), n = 2.
    double u(double x1, double x2) const {
        double r = std::hypot(x1, x2);
        if (r == 0.0) return kappa == 0 ? 1.0 : 0.0;
        return std::cyl_bessel_j(static_cast<double>(kappa), std::sqrt(lambda) * r) * std::cos(kappa * std::atan2(x2, x1));
    }
    double U(const SpaceTimePoint& p) const { return u(p.x[0], p.x[1]) * extension_profile(s, std::sqrt(lambda) * p.y); }
};

inline EigenMode eigen_mode(double lambda, double s) {
    if (!(lambda > 0.0)) throw std::domain_error("eigen_mode: lambda must be positive");
    return {lambda, s, static_cast<int>(std::lround(std::sqrt(lambda)))};
}

/// int_{B_R^+} U^2 y^a in cylindrical coordinates: c_k int_0^R rho J_k(sqrt(l) rho)^2 P(sqrt(R^2 - rho^2)) drho,
/// P(h) = int_0^h theta_s(sqrt(l) y)^2 y^a dy, c_k = pi (2 pi for k = 0).
inline double eigen_half_ball_mass(const EigenMode& m, double R) {
    const double a = m.a(), q = 1.0 + a, sl = std::sqrt(m.lambda);
    // y = w^{1/q} removes the endpoint weight
    auto P = [&](double h) {
        if (h <= 0.0) return 0.0;
        auto f = [&](double w) {
            double y = std::pow(w, 1.0 / q);
            double th = extension_profile(m.s, sl * y);
            return th * th / q;
        };
        double top = std::pow(std::min(h, 60.0 / sl), q);
        return integrate_adaptive(f, 0.0, top, 1e-15, 1e-12, 4000).value;
    };
    auto g = [&](double rho) {
        double j = std::cyl_bessel_j(static_cast<double>(m.kappa), sl * rho);
        return rho * j * j * P(std::sqrt(std::max(0.0, R * R - rho * rho)));
    };
    // panels follow the Bessel oscillation
    const std::size_t panels = std::max<std::size_t>(8, static_cast<std::size_t>(std::ceil(2.0 * sl * R / std::numbers::pi)));
    double sum = 0.0;
    for (std::size_t k = 0; k < panels; ++k)
        sum += integrate_adaptive(g, R * k / panels, R * (k + 1) / panels, 1e-300, 1e-11, 400).value;
    return (m.kappa == 0 ? 2.0 : 1.0) * std::numbers::pi * sum;
}

inline HarnessField eigen_field(const EigenMode& m) {
    auto h = HarnessField::analytic("eigen_l" + std::to_string(m.lambda), 2, m.a(), [m](const SpaceTimePoint& p) { return m.U(p); },
                                    true);
    h.V_norm1 = m.V_norm1();
    h.half_ball_mass = [m](double R) { return eigen_half_ball_mass(m, R); };
    return h;
}

struct SweepOptions {
    double M = 10.0;
    int fit_count = 6;
    std::size_t radial_order = 24;
    std::size_t azimuth_points = 0;  // 0: 16 (kappa + 1)
};

struct SweepRow {
    double lambda = 0.0, s = 0.5;
    int kappa = 0;
    double V_norm = 0.0;
    double order = 0.0;           // fitted thin slope
    double expected_order = 0.0;  // 2 kappa + n
    double ratio = 0.0;           // order / (1 + ||V||_1^{1/2s})
    double theta = 0.0, initial_mass = 0.0;
    double N_formula = 0.0;
    double r_squared = 0.0;
    VanishingOrderFit fit;
};

/// One sweep point: thin fit on dyadic radii below 1/(2 sqrt(lambda)), Theta from the
/// cylindrical reduction, and N = M (1/int_{B_1^+} U(0)^2 y^a + log(M Theta) + ||V||_1^{1/2s} + 1).
inline SweepRow sweep_point(double lambda, double s, const SweepOptions& opt = {}) {
    EigenMode m = eigen_mode(lambda, s);
    HarnessField F = eigen_field(m);
    QuadratureOptions q;
    q.radial_panels = 2;
    q.radial_order = opt.radial_order;
    q.azimuth_points = opt.azimuth_points ? opt.azimuth_points : 16u * static_cast<std::size_t>(m.kappa + 1);
    const int k0 = std::max(0, static_cast<int>(std::ceil(std::log2(2.0 * std::sqrt(lambda)))));
    auto radii = dyadic_radii(k0, k0 + opt.fit_count - 1);
    // at least 8 nodes per wavelength, radially and in angle
    const double wavelength = 2.0 * std::numbers::pi / std::sqrt(lambda);
    double radial_density = static_cast<double>(q.radial_panels * q.radial_order) / radii.front();
    if (radial_density * wavelength < 8.0 || q.azimuth_points < 8u * static_cast<std::size_t>(std::max(m.kappa, 1)))
        throw std::domain_error("sweep_point: unresolved oscillation (fewer than 8 nodes per wavelength)");
    F.quadrature = q;
    SweepRow row;
    row.lambda = lambda;
    row.s = s;
    row.kappa = m.kappa;
    row.V_norm = m.V_norm1();
    row.fit = fit_vanishing_order(F, OrderRegion::thin, radii);
    row.order = row.fit.slope;
    row.r_squared = row.fit.r_squared;
    row.expected_order = 2.0 * m.kappa + 2.0;
    row.ratio = row.order / (1.0 + std::pow(row.V_norm, 1.0 / (2.0 * s)));
    row.initial_mass = eigen_half_ball_mass(m, 1.0);
    row.theta = 25.0 * eigen_half_ball_mass(m, 5.0) / row.initial_mass;
    row.N_formula = opt.M * (1.0 / row.initial_mass + std::log(opt.M * row.theta) + std::pow(row.V_norm, 1.0 / (2.0 * s)) + 1.0);
    return row;
}

inline std::vector<SweepRow> order_vs_potential_sweep(std::vector<double> lambdas, double s, const SweepOptions& opt = {}) {
    if (lambdas.empty()) throw std::invalid_argument("order_vs_potential_sweep: empty lambda list");
    for (std::size_t i = 1; i < lambdas.size(); ++i)
        if (!(lambdas[i] > lambdas[i - 1])) throw std::invalid_argument("order_vs_potential_sweep: lambdas must increase");
    return parallel_map<SweepRow>(lambdas.size(), [&](std::size_t i) { return sweep_point(lambdas[i], s, opt); });
}

/// max / min of the sweep ratios.
inline double sweep_ratio_spread(const std::vector<SweepRow>& rows) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& r : rows) {
        lo = std::min(lo, r.ratio);
        hi = std::max(hi, r.ratio);
    }
    return hi / lo;
}

}  // namespace quclab
