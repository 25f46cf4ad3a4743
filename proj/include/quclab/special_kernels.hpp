#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "quclab/weighted_grid.hpp"

namespace quclab {

// ---------------------------------------------------------------------------
// Gamma function

namespace detail {
inline constexpr std::array<double, 9> lanczos_coeffs = {
    0.99999999999980993,     676.5203681218851,     -1259.1392167224028,
    771.32342877765313,      -176.61502916214059,   12.507343278686905,
    -0.13857109526572012,    9.9843695780195716e-6, 1.5056327351493116e-7};
}

/// Gamma function (Lanczos, g = 7), reflection below 1/2.
inline double gamma_fn(double x) {
    if (x < 0.5) {
        if (x == std::floor(x)) throw std::domain_error("gamma_fn: pole");
        return std::numbers::pi / (std::sin(std::numbers::pi * x) * gamma_fn(1.0 - x));
    }
    if (x > 171.6) return std::numeric_limits<double>::infinity();
    x -= 1.0;
    double acc = detail::lanczos_coeffs[0];
    const double g = 7.0;
    for (std::size_t i = 1; i < detail::lanczos_coeffs.size(); ++i)
        acc += detail::lanczos_coeffs[i] / (x + static_cast<double>(i));
    double tt = x + g + 0.5;
    return std::sqrt(2.0 * std::numbers::pi) * std::pow(tt, x + 0.5) * std::exp(-tt) * acc;
}

/// log Gamma for x > 0.
inline double log_gamma_fn(double x) {
    if (!(x > 0.0)) throw std::domain_error("log_gamma_fn: x must be positive");
    if (x < 0.5) return std::log(std::numbers::pi / std::sin(std::numbers::pi * x)) - log_gamma_fn(1.0 - x);
    x -= 1.0;
    double acc = detail::lanczos_coeffs[0];
    for (std::size_t i = 1; i < detail::lanczos_coeffs.size(); ++i)
        acc += detail::lanczos_coeffs[i] / (x + static_cast<double>(i));
    double tt = x + 7.5;
    return 0.5 * std::log(2.0 * std::numbers::pi) + (x + 0.5) * std::log(tt) - tt + std::log(acc);
}

/// Regularized lower incomplete gamma P(s, x).
inline double regularized_gamma_p(double s, double x) {
    if (!(s > 0.0) || x < 0.0) throw std::domain_error("regularized_gamma_p: bad arguments");
    if (x == 0.0) return 0.0;
    const double lead = s * std::log(x) - x - log_gamma_fn(s);
    if (x < s + 1.0) {
        double term = 1.0 / s, sum = term;
        for (int k = 1; k < 500; ++k) {
            term *= x / (s + k);
            sum += term;
            if (std::abs(term) < 1e-17 * std::abs(sum)) break;
        }
        return sum * std::exp(lead);
    }
    // Lentz continued fraction for Q.
    const double tiny = 1e-300;
    double b = x + 1.0 - s, c = 1.0 / tiny, d = 1.0 / b, h = d;
    for (int i = 1; i < 500; ++i) {
        double an = -i * (i - s);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-16) break;
    }
    return 1.0 - std::exp(lead) * h;
}

// ---------------------------------------------------------------------------
// Modified Bessel function of the first kind

/// I_nu for real order nu > -1 and z >= 0: power series below the switch point,
/// large-argument expansion beyond.
class BesselEvaluator {
public:
    explicit BesselEvaluator(double nu, int series_terms = 40, double switch_z = 20.0)
        : nu_(nu), terms_(series_terms), switch_(switch_z) {
        if (!(nu > -1.0)) throw std::domain_error("BesselEvaluator: order must exceed -1");
        if (series_terms < 8) throw std::invalid_argument("BesselEvaluator: need >= 8 series terms");
        if (!(switch_z > 0.0)) throw std::invalid_argument("BesselEvaluator: switch must be positive");
        inv_gamma_ = 1.0 / gamma_fn(nu + 1.0);
    }

    double order() const { return nu_; }
    int series_terms() const { return terms_; }
    double switch_point() const { return switch_; }

    /// Size of the first omitted series term relative to the partial sum at the switch point.
    double truncation_bound() const {
        double q = 0.25 * switch_ * switch_, term = inv_gamma_, sum = 0.0;
        for (int k = 0; k < terms_; ++k) {
            sum += term;
            term *= q / ((k + 1.0) * (k + 1.0 + nu_));
        }
        return term / sum;
    }

    /// (z/2)^{-nu} I_nu(z): finite at z = 0 where it equals 1/Gamma(nu+1).
    double normalized(double z) const {
        check(z);
        if (z < switch_) return series(z);
        return std::exp(z - nu_ * std::log(0.5 * z)) * asymptotic_scaled(z);
    }

    /// e^{-z} I_nu(z).
    double scaled(double z) const {
        check(z);
        if (z < switch_) return std::exp(-z) * std::pow(0.5 * z, nu_) * series(z);
        return asymptotic_scaled(z);
    }

    double operator()(double z) const {
        check(z);
        if (z == 0.0) return nu_ == 0.0 ? 1.0 : (nu_ > 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
        if (z < switch_) return std::pow(0.5 * z, nu_) * series(z);
        return std::exp(z) * asymptotic_scaled(z);
    }

private:
    static void check(double z) {
        if (!(z >= 0.0)) throw std::domain_error("bessel_i: negative argument");
    }
    double series(double z) const {
        double q = 0.25 * z * z, term = inv_gamma_, sum = 0.0;
        for (int k = 0; k < terms_; ++k) {
            sum += term;
            term *= q / ((k + 1.0) * (k + 1.0 + nu_));
            if (term < 1e-18 * sum) break;
        }
        return sum;
    }
    double asymptotic_scaled(double z) const {
        const double mu = 4.0 * nu_ * nu_;
        double term = 1.0, sum = 1.0, prev = 1.0;
        for (int k = 1; k < 60; ++k) {
            double odd = 2.0 * k - 1.0;
            term *= -(mu - odd * odd) / (k * 8.0 * z);
            if (std::abs(term) > prev) break;
            sum += term;
            prev = std::abs(term);
            if (prev < 1e-17 * std::abs(sum)) break;
        }
        return sum / std::sqrt(2.0 * std::numbers::pi * z);
    }

    double nu_;
    int terms_;
    double switch_;
    double inv_gamma_;
};

inline double bessel_i(double nu, double z) { return BesselEvaluator(nu)(z); }

// ---------------------------------------------------------------------------
// Kernels

/// Point (x, y) of the thick half-space, x in R^n with n <= 2.
struct ThickPoint {
    std::array<double, 2> x{0.0, 0.0};
    double y = 0.0;
};

struct KernelParams {
    double a = 0.0;
    int n = 1;

    void validate() const {
        if (!(a > -1.0 && a < 1.0)) throw std::domain_error("KernelParams: a must lie in (-1, 1)");
        if (n != 1 && n != 2) throw std::domain_error("KernelParams: n must be 1 or 2");
    }
};

/// Bessel heat kernel p_a(x, y; t) of the operator y^{-a} d/dy (y^a d/dy) on (0, inf),
/// symmetric with respect to y^a dy.
inline double bessel_heat_kernel(double x, double y, double t, double a) {
    if (!(t > 0.0)) throw std::domain_error("bessel_heat_kernel: t must be positive");
    if (x < 0.0 || y < 0.0) throw std::domain_error("bessel_heat_kernel: x, y must be >= 0");
    if (!(a > -1.0 && a < 1.0)) throw std::domain_error("bessel_heat_kernel: a must lie in (-1, 1)");
    const double nu = 0.5 * (a - 1.0);
    const BesselEvaluator I(nu);
    const double z = x * y / (2.0 * t);
    const double pre = std::pow(2.0 * t, -0.5 * (1.0 + a));
    if (z < I.switch_point())
        return pre * std::pow(2.0, 0.5 * (1.0 - a)) * std::exp(-(x * x + y * y) / (4.0 * t)) * I.normalized(z);
    const double d = x - y;
    return pre * std::exp(-d * d / (4.0 * t)) * std::pow(z, 0.5 * (1.0 - a)) * I.scaled(z);
}

/// Tangential heat kernel (4 pi t)^{-n/2} exp(-|x - y|^2 / 4t).
inline double tangential_heat_kernel(const std::array<double, 2>& x, const std::array<double, 2>& y, double t,
                                     int n) {
    if (!(t > 0.0)) throw std::domain_error("tangential_heat_kernel: t must be positive");
    double d2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double d = x[static_cast<std::size_t>(i)] - y[static_cast<std::size_t>(i)];
        d2 += d * d;
    }
    return std::pow(4.0 * std::numbers::pi * t, -0.5 * n) * std::exp(-d2 / (4.0 * t));
}

/// Caloric kernel: tangential Gaussian times p_a in the extension variable.
inline double caloric_kernel(const ThickPoint& Y, const ThickPoint& X, double t, const KernelParams& kp) {
    kp.validate();
    if (!(t > 0.0)) throw std::domain_error("caloric_kernel: t must be positive");
    return tangential_heat_kernel(Y.x, X.x, t, kp.n) * bessel_heat_kernel(X.y, Y.y, t, kp.a);
}

/// Closed form of the caloric kernel with X on the thin set.
inline double caloric_kernel_thin(const ThickPoint& Y, const std::array<double, 2>& x, double t,
                                  const KernelParams& kp) {
    kp.validate();
    if (!(t > 0.0)) throw std::domain_error("caloric_kernel_thin: t must be positive");
    double d2 = Y.y * Y.y;
    for (int i = 0; i < kp.n; ++i) {
        double d = x[static_cast<std::size_t>(i)] - Y.x[static_cast<std::size_t>(i)];
        d2 += d * d;
    }
    return std::pow(4.0 * std::numbers::pi, -0.5 * kp.n) * std::pow(2.0, -kp.a) / gamma_fn(0.5 * (1.0 + kp.a)) *
           std::pow(t, -0.5 * (kp.n + kp.a + 1.0)) * std::exp(-d2 / (4.0 * t));
}

inline double squared_norm(const ThickPoint& X, int n) {
    double r2 = X.y * X.y;
    for (int i = 0; i < n; ++i) r2 += X.x[static_cast<std::size_t>(i)] * X.x[static_cast<std::size_t>(i)];
    return r2;
}

/// log G(X, t) with G = t^{-(n+1+a)/2} exp(-|X|^2 / 4t).
inline double log_gaussian_weight(const ThickPoint& X, double t, const KernelParams& kp) {
    if (!(t > 0.0)) throw std::domain_error("gaussian_weight: t must be positive");
    return -0.5 * (kp.n + 1.0 + kp.a) * std::log(t) - squared_norm(X, kp.n) / (4.0 * t);
}

inline double gaussian_weight(const ThickPoint& X, double t, const KernelParams& kp) {
    if (!(t > 0.0)) throw std::domain_error("gaussian_weight: t must be positive");
    return std::pow(t, -0.5 * (kp.n + 1.0 + kp.a)) * std::exp(-squared_norm(X, kp.n) / (4.0 * t));
}

/// Shifted weight G_c(X, t) = G(X, t + c).
inline double gaussian_weight_shifted(const ThickPoint& X, double t, double c, const KernelParams& kp) {
    if (!(t + c > 0.0)) throw std::domain_error("gaussian_weight_shifted: t + c must be positive");
    return gaussian_weight(X, t + c, kp);
}

/// 2^{-a} Gamma((1-a)/2) / Gamma((1+a)/2): the constant linking the weighted Neumann
/// derivative of the extension to the fractional operator.
inline double extension_trace_constant(double a) {
    return std::pow(2.0, -a) * gamma_fn(0.5 * (1.0 - a)) / gamma_fn(0.5 * (1.0 + a));
}

/// Writes a `y,value` CSV of a kernel slice.
inline void write_kernel_slice_csv(const std::string& path, const std::vector<double>& ys,
                                   const std::vector<double>& values) {
    if (ys.size() != values.size()) throw std::invalid_argument("write_kernel_slice_csv: size mismatch");
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << "y,value\n";
    for (std::size_t i = 0; i < ys.size(); ++i) os << format_double(ys[i]) << ',' << format_double(values[i]) << '\n';
}

}  // namespace quclab
