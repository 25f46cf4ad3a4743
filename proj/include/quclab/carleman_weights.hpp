#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "quclab/quadrature.hpp"
#include "quclab/special_kernels.hpp"

namespace quclab {

struct ThetaParams {
    double s = 0.5;
    double lambda = 1.0;

    void validate() const {
        if (!(s > 0.0 && s < 1.0)) throw std::domain_error("ThetaParams: s must lie in (0, 1)");
        if (!(lambda > 0.0) || !std::isfinite(lambda)) throw std::domain_error("ThetaParams: lambda must be positive");
    }
};

/// theta_s(t) = t^s log(1/t)^{1+s} on (0, 1].
inline double theta(double s, double t) {
    if (!(t > 0.0 && t <= 1.0)) throw std::domain_error("theta: t must lie in (0, 1]");
    if (t == 1.0) return 0.0;
    double L = -std::log(t);
    return std::pow(t, s) * std::pow(L, 1.0 + s);
}

/// Sampled weight sigma_s solving d/dt log(sigma / (t sigma')) = theta_s(lambda t) / t,
/// sigma(0) = 0, sigma'(0) = 1. Stored in the scaled variable v = lambda t, on which
/// the profile depends alone:
///   g(v) = int_0^v theta_s(u)/u du,  H(v) = int_0^v (1 - e^{-g(u)})/u du,
///   sigma(t) = t e^{-H(lambda t)},   sigma'(t) = e^{-H(lambda t) - g(lambda t)}.
class SigmaTable {
public:
    SigmaTable() = default;

    double s() const { return s_; }
    double lambda() const { return lambda_; }
    std::size_t size() const { return v_.size(); }
    double t_min() const { return v_.front() / lambda_; }
    double t_max() const { return 1.0 / lambda_; }

    const std::vector<double>& t() const { return t_; }
    const std::vector<double>& sigma() const { return sigma_; }
    const std::vector<double>& sigma_prime() const { return sigma_prime_; }
    /// G(t) = int_0^t theta_s(lambda tau)/tau dtau at the nodes.
    const std::vector<double>& G_int() const { return g_; }
    /// Smallest N with t e^{-N} <= sigma and e^{-N} <= sigma' at every node.
    double N_emp() const { return n_emp_; }
    bool converged() const { return converged_; }

    struct Point {
        double sigma, sigma_prime, G, H;
    };

    /// Exact evaluation at any t in (0, 1/lambda]: cumulative node data plus a
    /// quadrature over the remaining piece.
    Point at(double t) const {
        double v = lambda_ * t;
        if (!(v > 0.0) || v > 1.0 * (1.0 + 1e-14))
            throw std::out_of_range("SigmaTable: t outside (0, 1/lambda]");
        v = std::min(v, 1.0);
        double g, H;
        auto it = std::upper_bound(v_.begin(), v_.end(), v);
        if (it == v_.begin()) {
            g = g_from_zero(v);
            H = H_from_zero(v);
        } else {
            std::size_t i = static_cast<std::size_t>(it - v_.begin()) - 1;
            g = g_[i] + g_between(v_[i], v);
            H = H_[i] + H_between(v_[i], g_[i], v);
        }
        return {t * std::exp(-H), std::exp(-H - g), g, H};
    }
    double sigma_at(double t) const { return at(t).sigma; }
    double sigma_prime_at(double t) const { return at(t).sigma_prime; }
    double log_sigma_at(double t) const { return std::log(t) - at(t).H; }

    friend SigmaTable build_sigma(double s, double lambda, std::size_t node_count, double t_min_scaled);

private:
    double theta_over_v(double v) const { return std::pow(v, s_ - 1.0) * std::pow(-std::log(v), 1.0 + s_); }

    // int_0^v theta(u)/u du with u = w^{1/s}: (1/s) int_0^{v^s} ((1/s) log(1/w))^{1+s} dw.
    double g_from_zero(double v) const {
        if (v >= 1.0) v = 1.0;
        double s = s_;
        auto r = integrate_adaptive(
            [s](double w) { return w <= 0.0 ? 0.0 : std::pow(-std::log(w) / s, 1.0 + s) / s; }, 0.0, std::pow(v, s), 0.0,
            1e-14, 4000);
        note(r.converged);
        return r.value;
    }
    double g_between(double lo, double hi) const {
        if (hi <= lo) return 0.0;
        auto r = integrate_adaptive([this](double u) { return theta_over_v(u); }, lo, hi, 0.0, 1e-14, 400);
        note(r.converged);
        return r.value;
    }
    // int_0^v (1 - e^{-g(u)})/u du, same substitution; inner g by quadrature from zero.
    double H_from_zero(double v) const {
        double s = s_;
        auto r = integrate_adaptive(
            [this, s](double w) {
                if (w <= 0.0) return 0.0;
                double u = std::pow(w, 1.0 / s);
                return -std::expm1(-g_from_zero(u)) / (s * w);
            },
            0.0, std::pow(v, s), 0.0, 1e-14, 4000);
        note(r.converged);
        return r.value;
    }
    double H_between(double lo, double g_lo, double hi) const {
        if (hi <= lo) return 0.0;
        auto r = integrate_adaptive(
            [this, lo, g_lo](double u) { return -std::expm1(-(g_lo + g_between(lo, u))) / u; }, lo, hi, 0.0, 1e-14, 400);
        note(r.converged);
        return r.value;
    }
    // Only the build path records failures; evaluation stays free of shared writes.
    void note(bool ok) const {
        if (!ok && recording_) ++quadrature_failures_;
    }

    double s_ = 0.5, lambda_ = 1.0;
    std::vector<double> v_, t_, g_, H_, sigma_, sigma_prime_;
    double n_emp_ = 0.0;
    bool converged_ = true;
    bool recording_ = false;
    mutable std::size_t quadrature_failures_ = 0;
};

/// Builds the table on node_count log-spaced nodes of [t_min_scaled/lambda, 1/lambda].
/// With t_min_scaled = 0 the left end is pushed down from 1e-8 until sigma/t >= 1 - 1e-4
/// there, so the table resolves the initial behaviour for every s.
inline SigmaTable build_sigma(double s, double lambda, std::size_t node_count = 512, double t_min_scaled = 0.0) {
    ThetaParams{s, lambda}.validate();
    if (node_count < 64) throw std::invalid_argument("build_sigma: node_count must be at least 64");
    if (!(t_min_scaled >= 0.0 && t_min_scaled < 1.0)) throw std::invalid_argument("build_sigma: t_min_scaled in [0, 1)");
    SigmaTable T;
    T.s_ = s;
    T.lambda_ = lambda;
    T.recording_ = true;
    if (t_min_scaled == 0.0) {
        t_min_scaled = 1e-8;
        while (T.H_from_zero(t_min_scaled) > 1e-4 && t_min_scaled > 1e-250) t_min_scaled *= 1e-4;
    }
    double l0 = std::log(t_min_scaled);
    for (std::size_t i = 0; i < node_count; ++i) {
        double v = i + 1 == node_count ? 1.0 : std::exp(l0 * (1.0 - double(i) / double(node_count - 1)));
        T.v_.push_back(v);
    }
    T.g_.resize(node_count);
    T.H_.resize(node_count);
    T.g_[0] = T.g_from_zero(T.v_[0]);
    T.H_[0] = T.H_from_zero(T.v_[0]);
    for (std::size_t i = 1; i < node_count; ++i) {
        T.g_[i] = T.g_[i - 1] + T.g_between(T.v_[i - 1], T.v_[i]);
        T.H_[i] = T.H_[i - 1] + T.H_between(T.v_[i - 1], T.g_[i - 1], T.v_[i]);
    }
    double n_emp = 0.0;
    for (std::size_t i = 0; i < node_count; ++i) {
        double t = T.v_[i] / lambda;
        T.t_.push_back(t);
        T.sigma_.push_back(t * std::exp(-T.H_[i]));
        T.sigma_prime_.push_back(std::exp(-T.H_[i] - T.g_[i]));
        n_emp = std::max({n_emp, T.H_[i], T.H_[i] + T.g_[i]});
    }
    T.n_emp_ = n_emp;
    T.converged_ = T.quadrature_failures_ == 0;
    T.recording_ = false;
    return T;
}

struct SigmaPropertyReport {
    double s = 0.0, lambda = 0.0;
    // Minimal constants making each property hold on the checked nodes.
    double N1 = 0.0, N2 = 0.0, N3 = 0.0, N4 = 0.0;
    double N_emp = 0.0;  // max of N1..N4
    // Violations of the N-free halves: sigma <= t and sigma' <= 1.
    double upper_violation_1 = 0.0, upper_violation_2 = 0.0;
    // max |t d/dt log(sigma/(t sigma')) - theta(lambda t)| / max theta over interior nodes.
    double ode_residual = 0.0;
    // max |d log sigma / d log t - t sigma'/sigma|: ties the sigma' column to sigma.
    double derivative_consistency = 0.0;
    double sigma_over_t_at_min = 0.0;
    bool sigma_increasing = true, sigma_over_t_decreasing = true;
    std::size_t checked_nodes = 0;
    bool quadrature_converged = true;
};

namespace detail {
// Five-point central derivative of f at t with step h.
template <class F>
double d5(F&& f, double t, double h) {
    return (-f(t + 2 * h) + 8 * f(t + h) - 8 * f(t - h) + f(t - 2 * h)) / (12 * h);
}

// Smallest N >= 0 with 3 N e^N >= R, by bisection.
inline double min_constant_property4(double R) {
    if (!(R > 0.0)) return 0.0;
    double lo = 0.0, hi = 1.0;
    while (3 * hi * std::exp(hi) < R) hi *= 2;
    for (int k = 0; k < 200; ++k) {
        double m = 0.5 * (lo + hi);
        (3 * m * std::exp(m) < R ? lo : hi) = m;
    }
    return hi;
}
}  // namespace detail

/// Checks the four properties on the table nodes. Derivatives of sigma-expressions use
/// five-point differences with step 1e-3 t (or 1e-3 in log t); the first node and nodes
/// whose stencil leaves (0, 1/lambda] are skipped for the differentiated properties.
inline SigmaPropertyReport verify_sigma_properties(const SigmaTable& T, double step = 1e-3) {
    SigmaPropertyReport R;
    R.s = T.s();
    R.lambda = T.lambda();
    const double lam = T.lambda(), s = T.s();
    const auto& t = T.t();
    const std::size_t n = t.size();
    for (std::size_t i = 0; i < n; ++i) {
        R.upper_violation_1 = std::max(R.upper_violation_1, T.sigma()[i] / t[i] - 1.0);
        R.upper_violation_2 = std::max(R.upper_violation_2, T.sigma_prime()[i] - 1.0);
        R.N1 = std::max(R.N1, std::log(t[i] / T.sigma()[i]));
        R.N2 = std::max(R.N2, -std::log(T.sigma_prime()[i]));
        if (i > 0) {
            if (!(T.sigma()[i] > T.sigma()[i - 1])) R.sigma_increasing = false;
            if (!(T.sigma()[i] / t[i] <= T.sigma()[i - 1] / t[i - 1])) R.sigma_over_t_decreasing = false;
        }
    }
    R.sigma_over_t_at_min = T.sigma().front() / t.front();

    auto f_a = [&](double x) {
        auto p = T.at(x);
        return p.sigma * std::log(p.sigma / (p.sigma_prime * x));
    };
    auto f_b = [&](double x) {
        auto p = T.at(x);
        return p.sigma * std::log(p.sigma / p.sigma_prime);
    };
    auto log_ratio = [&](double x) {
        auto p = T.at(x);
        return std::log(p.sigma / (p.sigma_prime * x));
    };
    double theta_sup = 0.0;
    for (double x : t) theta_sup = std::max(theta_sup, theta(s, std::min(lam * x, 1.0)));
    double max_ratio4 = 0.0, max_ode = 0.0;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        double x = t[i];
        double h = step * x;
        if (x * std::exp(4e-3) > T.t_max() || x + 4 * h > T.t_max()) continue;
        ++R.checked_nodes;
        double p3 = std::abs(detail::d5(f_a, x, h)) + std::abs(detail::d5(f_b, x, h));
        R.N3 = std::max(R.N3, p3 / 3.0);

        // sigma d/dt((1/sigma') d/dt log(sigma/(sigma' t))) against theta(lambda t)/t.
        double hi = 0.5 * h;
        auto inner = [&](double y) { return detail::d5(log_ratio, y, hi) / T.sigma_prime_at(y); };
        double lhs = std::abs(T.sigma_at(x) * detail::d5(inner, x, h));
        double th = theta(s, lam * x);
        if (th > 0.0) max_ratio4 = std::max(max_ratio4, lhs * x / th);

        // Defining equation, differenced in log t.
        auto by_log = [&](auto&& f) {
            return detail::d5([&](double r) { return f(std::exp(r)); }, std::log(x), 1e-3);
        };
        double res = std::abs(by_log(log_ratio) - th);
        max_ode = std::max(max_ode, res);
        auto p = T.at(x);
        double dls = by_log([&](double y) { return T.log_sigma_at(y); });
        R.derivative_consistency = std::max(R.derivative_consistency, std::abs(dls - x * p.sigma_prime / p.sigma));
    }
    R.N4 = detail::min_constant_property4(max_ratio4);
    R.ode_residual = theta_sup > 0.0 ? max_ode / theta_sup : max_ode;
    R.N_emp = std::max({R.N1, R.N2, R.N3, R.N4});
    R.quadrature_converged = T.converged();
    return R;
}

struct IntegrabilityCheck {
    double quadrature = 0.0;    // int_0^1 (1 + log 1/t) theta_s(t)/t dt
    double transformed = 0.0;   // int_0^inf (1 + r) e^{-s r} r^{1+s} dr
    double closed_form = 0.0;   // Gamma(2+s)/s^{2+s} + Gamma(3+s)/s^{3+s}
    bool converged = false;
};

inline IntegrabilityCheck integrability_condition(double s) {
    if (!(s > 0.0 && s < 1.0)) throw std::domain_error("integrability_condition: s must lie in (0, 1)");
    IntegrabilityCheck c;
    // w = t^s: theta(t)/t dt = (1/s) L^{1+s} dw, L = (1/s) log(1/w).
    auto q = integrate_adaptive(
        [s](double w) {
            if (w <= 0.0) return 0.0;
            double L = -std::log(w) / s;
            return (1.0 + L) * std::pow(L, 1.0 + s) / s;
        },
        0.0, 1.0, 0.0, 1e-12, 4000);
    // r = log(1/t); truncated where the integrand is below 1e-300 relative.
    double R = (750.0 + 4.0 * std::log(1.0 + 1.0 / s)) / s;
    auto tr = integrate_adaptive([s](double r) { return (1.0 + r) * std::exp(-s * r) * std::pow(r, 1.0 + s); }, 0.0, R,
                                 0.0, 1e-12, 4000);
    c.quadrature = q.value;
    c.transformed = tr.value;
    c.closed_form = gamma_fn(2.0 + s) / std::pow(s, 2.0 + s) + gamma_fn(3.0 + s) / std::pow(s, 3.0 + s);
    c.converged = q.converged && tr.converged;
    return c;
}

/// Evaluator for sigma^{-2 alpha}(t+c) G_c and sigma^{1-2 alpha}(t+c) G_c, with
/// G_c(X, t) = G(X, t + c). Everything is summed in log space first.
class WeightBundle {
public:
    WeightBundle(const SigmaTable& table, double alpha, double c, KernelParams kp)
        : table_(&table), alpha_(alpha), c_(c), kp_(kp) {
        kp_.validate();
        if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::domain_error("WeightBundle: alpha must be >= 0");
        if (!(c > 0.0 && c <= 1.0 / (5.0 * table.lambda()) * (1.0 + 1e-12)))
            throw std::domain_error("WeightBundle: c must lie in (0, 1/(5 lambda)]");
    }

    double alpha() const { return alpha_; }
    double c() const { return c_; }

    double log_sigma_shifted(double t) const {
        double tc = t + c_;
        if (!(t >= 0.0) || tc > table_->t_max() * (1.0 + 1e-14))
            throw std::out_of_range("WeightBundle: t + c outside the table range");
        return table_->log_sigma_at(std::min(tc, table_->t_max()));
    }
    double log_weight(const ThickPoint& X, double t) const {
        return -2.0 * alpha_ * log_sigma_shifted(t) + log_gaussian_weight(X, t + c_, kp_);
    }
    double log_weight_plus(const ThickPoint& X, double t) const {
        return (1.0 - 2.0 * alpha_) * log_sigma_shifted(t) + log_gaussian_weight(X, t + c_, kp_);
    }
    /// sigma^{-2 alpha}(t+c) G_c(X, t); may overflow to inf only if the true value does.
    double weight(const ThickPoint& X, double t) const { return std::exp(log_weight(X, t)); }
    double weight_plus(const ThickPoint& X, double t) const { return std::exp(log_weight_plus(X, t)); }
    /// sigma^{-2 alpha}(t+c) alone.
    double sigma_power(double t) const { return std::exp(-2.0 * alpha_ * log_sigma_shifted(t)); }

private:
    const SigmaTable* table_;
    double alpha_, c_;
    KernelParams kp_;
};

inline WeightBundle weight_bundle(const SigmaTable& table, double alpha, double c, KernelParams kp) {
    return WeightBundle(table, alpha, c, kp);
}

/// Writes `t,sigma,sigma_prime,G_int` rows at the table nodes.
inline void write_sigma_csv(const SigmaTable& T, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_sigma_csv: cannot open " + path);
    out << "t,sigma,sigma_prime,G_int\n";
    char buf[160];
    for (std::size_t i = 0; i < T.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", T.t()[i], T.sigma()[i], T.sigma_prime()[i], T.G_int()[i]);
        out << buf;
    }
}

}  // namespace quclab
