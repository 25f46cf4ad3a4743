#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <mutex>
#include <numbers>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include <fftw3.h>

#include "quclab/quadrature.hpp"
#include "quclab/special_kernels.hpp"

namespace quclab {

using cplx = std::complex<double>;

/// Periodic box in (x, t): n tangential axes sharing one period, plus time.
struct SpectralBox {
    int n = 1;
    double period_x = 1.0;
    double period_t = 1.0;
    std::size_t modes_x = 32;
    std::size_t modes_t = 32;
    double x_origin = -0.5;  // left end of every tangential axis
    double t_origin = -0.5;

    static SpectralBox centered(int n, double period_x, double period_t, std::size_t modes_x, std::size_t modes_t) {
        return {n, period_x, period_t, modes_x, modes_t, -0.5 * period_x, -0.5 * period_t};
    }

    void validate() const {
        if (n != 1 && n != 2) throw std::invalid_argument("SpectralBox: n must be 1 or 2");
        if (!(period_x > 0.0) || !(period_t > 0.0)) throw std::invalid_argument("SpectralBox: periods must be positive");
        if (modes_x < 2 || modes_t < 2 || modes_x % 2 || modes_t % 2)
            throw std::invalid_argument("SpectralBox: mode counts must be even and >= 2");
    }
    std::size_t size() const { return (n == 1 ? modes_x : modes_x * modes_x) * modes_t; }
    double x_node(std::size_t i) const { return x_origin + period_x * static_cast<double>(i) / static_cast<double>(modes_x); }
    double t_node(std::size_t k) const { return t_origin + period_t * static_cast<double>(k) / static_cast<double>(modes_t); }
    std::size_t index(std::size_t i1, std::size_t i2, std::size_t k) const {
        return ((n == 1 ? i1 : i1 * modes_x + i2)) * modes_t + k;
    }
    /// Frequency of FFT index i for an axis with m modes and the given period.
    static double frequency(std::size_t i, std::size_t m, double period) {
        auto ii = static_cast<long long>(i), mm = static_cast<long long>(m);
        return static_cast<double>(ii < mm / 2 ? ii : ii - mm) / period;
    }
    /// Smallest nonzero modulus of the heat symbol on the box.
    double min_symbol_modulus() const {
        double zx = 4.0 * std::numbers::pi * std::numbers::pi / (period_x * period_x);
        double zt = 2.0 * std::numbers::pi / period_t;
        return std::min(zx, zt);
    }
    double max_symbol_modulus() const {
        double xi = 0.5 * static_cast<double>(modes_x) / period_x;
        double sg = 0.5 * static_cast<double>(modes_t) / period_t;
        return std::abs(cplx(4.0 * std::numbers::pi * std::numbers::pi * n * xi * xi, 2.0 * std::numbers::pi * sg));
    }
    double max_time_frequency() const { return 2.0 * std::numbers::pi * 0.5 * static_cast<double>(modes_t) / period_t; }
};

/// Real samples on a SpectralBox, layout (x1, [x2], t) row-major.
struct PeriodicField {
    SpectralBox box;
    std::vector<double> values;

    template <class F>
    static PeriodicField sample(const SpectralBox& box, F&& f) {
        box.validate();
        PeriodicField out{box, std::vector<double>(box.size())};
        std::size_t n2 = box.n == 2 ? box.modes_x : 1;
        for (std::size_t i1 = 0; i1 < box.modes_x; ++i1)
            for (std::size_t i2 = 0; i2 < n2; ++i2)
                for (std::size_t k = 0; k < box.modes_t; ++k) {
                    std::array<double, 2> x{box.x_node(i1), box.n == 2 ? box.x_node(i2) : 0.0};
                    out.values[box.index(i1, i2, k)] = f(x, box.t_node(k));
                }
        return out;
    }
    double l2_norm() const {
        double s = 0.0;
        for (double v : values) s += v * v;
        return std::sqrt(s);
    }
};

namespace detail {

inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

// Unnormalized multidimensional DFT of complex data in place.
inline void fft_inplace(std::vector<cplx>& data, const SpectralBox& box, int sign) {
    std::array<int, 3> dims{};
    int rank = box.n + 1;
    dims[0] = static_cast<int>(box.modes_x);
    if (box.n == 2) dims[1] = static_cast<int>(box.modes_x);
    dims[static_cast<std::size_t>(box.n)] = static_cast<int>(box.modes_t);
    auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> lock(fftw_planner_mutex());
        plan = fftw_plan_dft(rank, dims.data(), ptr, ptr, sign, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    {
        std::lock_guard<std::mutex> lock(fftw_planner_mutex());
        fftw_destroy_plan(plan);
    }
}

}  // namespace detail

/// Fourier coefficients of a PeriodicField together with the mode geometry.
class SpectralData {
public:
    explicit SpectralData(const PeriodicField& f) : box_(f.box), coeffs_(f.values.begin(), f.values.end()) {
        box_.validate();
        if (f.values.size() != box_.size()) throw std::invalid_argument("SpectralData: shape mismatch");
        detail::fft_inplace(coeffs_, box_, FFTW_FORWARD);
    }
    SpectralData(const SpectralBox& box, std::vector<cplx> coeffs) : box_(box), coeffs_(std::move(coeffs)) {}

    const SpectralBox& box() const { return box_; }
    const std::vector<cplx>& coeffs() const { return coeffs_; }

    /// Calls f(flat index, |xi|^2, sigma, time-Nyquist flag) for every mode.
    template <class F>
    void for_each_mode(F&& f) const {
        std::size_t n2 = box_.n == 2 ? box_.modes_x : 1;
        for (std::size_t i1 = 0; i1 < box_.modes_x; ++i1) {
            double k1 = SpectralBox::frequency(i1, box_.modes_x, box_.period_x);
            for (std::size_t i2 = 0; i2 < n2; ++i2) {
                double k2 = box_.n == 2 ? SpectralBox::frequency(i2, box_.modes_x, box_.period_x) : 0.0;
                for (std::size_t m = 0; m < box_.modes_t; ++m) {
                    double sg = SpectralBox::frequency(m, box_.modes_t, box_.period_t);
                    f(box_.index(i1, i2, m), k1 * k1 + k2 * k2, sg, m == box_.modes_t / 2);
                }
            }
        }
    }

    /// Inverse transform of multiplier * coeffs; returns the real part and the relative
    /// size of the discarded imaginary part.
    template <class M>
    std::pair<PeriodicField, double> apply(M&& multiplier) const {
        std::vector<cplx> work(coeffs_.size());
        for_each_mode([&](std::size_t idx, double xi2, double sg, bool nyq) {
            cplx m = multiplier(idx, xi2, sg);
            if (nyq) m = cplx(m.real(), 0.0);
            work[idx] = m * coeffs_[idx];
        });
        detail::fft_inplace(work, box_, FFTW_BACKWARD);
        const double inv = 1.0 / static_cast<double>(work.size());
        PeriodicField out{box_, std::vector<double>(work.size())};
        double re2 = 0.0, im2 = 0.0;
        for (std::size_t i = 0; i < work.size(); ++i) {
            out.values[i] = work[i].real() * inv;
            re2 += out.values[i] * out.values[i];
            im2 += work[i].imag() * work[i].imag() * inv * inv;
        }
        double residue = re2 > 0.0 ? std::sqrt(im2 / re2) : std::sqrt(im2);
        return {std::move(out), residue};
    }

    /// Fraction of the L2 energy carried by the outermost tangential and temporal mode shells.
    double band_edge_energy() const {
        double total = 0.0, edge = 0.0;
        const double kx = 0.5 * static_cast<double>(box_.modes_x) / box_.period_x;
        const double kt = 0.5 * static_cast<double>(box_.modes_t) / box_.period_t;
        const double dx = 1.0 / box_.period_x, dt = 1.0 / box_.period_t;
        for_each_mode([&](std::size_t idx, double xi2, double sg, bool) {
            double e = std::norm(coeffs_[idx]);
            total += e;
            if (std::sqrt(xi2) >= kx - 1.5 * dx || std::abs(sg) >= kt - 1.5 * dt) edge += e;
        });
        return total > 0.0 ? edge / total : 0.0;
    }

private:
    SpectralBox box_;
    std::vector<cplx> coeffs_;
};

/// Heat symbol 4 pi^2 |xi|^2 + 2 pi i sigma.
inline cplx heat_symbol(double xi2, double sigma) {
    return {4.0 * std::numbers::pi * std::numbers::pi * xi2, 2.0 * std::numbers::pi * sigma};
}

/// Principal power z^s; zero at the origin.
inline cplx principal_power(cplx z, double s) {
    if (z == cplx(0.0, 0.0)) return {0.0, 0.0};
    return std::exp(s * cplx(std::log(std::abs(z)), std::arg(z)));
}

struct OperatorResult {
    PeriodicField field;
    double imag_residue = 0.0;
};

inline void check_order(double s) {
    if (!(s > 0.0 && s <= 1.0)) throw std::domain_error("fractional order s must lie in (0, 1]");
}

/// H^s by its Fourier symbol.
inline OperatorResult apply_hs_spectral(const PeriodicField& f, double s) {
    check_order(s);
    SpectralData d(f);
    auto [out, res] = d.apply([s](std::size_t, double xi2, double sg) { return principal_power(heat_symbol(xi2, sg), s); });
    return {std::move(out), res};
}

/// Evolutive semigroup: Gaussian convolution in x composed with the time shift t -> t - tau.
inline OperatorResult evolutive_semigroup(const PeriodicField& f, double tau) {
    if (tau < 0.0) throw std::domain_error("evolutive_semigroup: tau must be >= 0");
    SpectralData d(f);
    auto [out, res] = d.apply([tau](std::size_t, double xi2, double sg) { return std::exp(-heat_symbol(xi2, sg) * tau); });
    return {std::move(out), res};
}

/// Quadrature in the semigroup variable for s/Gamma(1-s) \int_0^inf tau^{-1-s} (1 - e^{-z tau}) dtau.
/// The weights carry the factor s/Gamma(1-s) tau^{-1-s}; the part beyond t_max is handled
/// by a closed form ("-1" term) and a large-argument expansion (e^{-z tau} term).
struct BalakrishnanRule {
    double s = 0.5;
    std::vector<double> nodes;
    std::vector<double> weights;
    double t_max = 0.0;
    bool singular_endpoint_substitution = true;
    double tolerance = 1e-10;
};

struct BalakrishnanParams {
    double z_min = 1.0;      // smallest nonzero |z| to be treated
    double z_max = 1.0;      // largest |z|
    double omega_max = 0.0;  // largest |Im z|
    double tolerance = 1e-10;
    std::size_t order = 16;
    double t_max = 0.0;      // 0 means 40 / z_min
};

inline BalakrishnanRule build_balakrishnan_rule(double s, const BalakrishnanParams& p) {
    if (!(s > 0.0 && s < 1.0)) throw std::domain_error("build_balakrishnan_rule: s must lie in (0, 1)");
    if (!(p.z_min > 0.0) || p.z_max < p.z_min) throw std::invalid_argument("build_balakrishnan_rule: bad symbol range");
    BalakrishnanRule r;
    r.s = s;
    r.tolerance = p.tolerance;
    r.t_max = p.t_max > 0.0 ? p.t_max : 40.0 / p.z_min;
    const double cs = s / gamma_fn(1.0 - s);
    const double T = r.t_max;
    const double tau_a = std::min(0.5 / p.z_max, T);
    // Near zero: tau = tau_a v^{1/(1-s)} turns tau^{-1-s} (1 - e^{-z tau}) into a bounded integrand.
    {
        const Rule g = gauss_legendre_on(0.0, 1.0, 24);
        for (std::size_t i = 0; i < g.size(); ++i) {
            double v = g.nodes[i];
            double tau = tau_a * std::pow(v, 1.0 / (1.0 - s));
            double jac = tau_a / (1.0 - s) * std::pow(v, s / (1.0 - s));
            r.nodes.push_back(tau);
            r.weights.push_back(cs * g.weights[i] * std::pow(tau, -1.0 - s) * jac);
        }
    }
    const double l_osc = p.omega_max > 0.0 ? 8.0 / p.omega_max : std::numeric_limits<double>::infinity();
    auto push_panel = [&](double lo, double hi) {
        Rule g = gauss_legendre_on(lo, hi, p.order);
        for (std::size_t i = 0; i < g.size(); ++i) {
            r.nodes.push_back(g.nodes[i]);
            r.weights.push_back(cs * g.weights[i] * std::pow(g.nodes[i], -1.0 - s));
        }
    };
    double lo = tau_a;
    while (lo < T) {
        double hi = std::min({2.0 * lo, lo + l_osc, T});
        if (T - hi < 1e-3 * (hi - lo)) hi = T;
        push_panel(lo, hi);
        lo = hi;
    }
    return r;
}

inline BalakrishnanRule build_balakrishnan_rule(double s, const SpectralBox& box, double tolerance = 1e-10) {
    box.validate();
    BalakrishnanParams p;
    p.z_min = box.min_symbol_modulus();
    p.z_max = box.max_symbol_modulus();
    p.omega_max = box.max_time_frequency();
    p.tolerance = tolerance;
    return build_balakrishnan_rule(s, p);
}

struct BalakrishnanMultiplier {
    cplx value;
    double tail_error;  // size of the first neglected term of the tail expansion
};

/// 1 - e^{-w} without cancellation for small |w|.
inline cplx one_minus_exp(cplx w) {
    if (std::abs(w) < 1e-2) return w * (1.0 - w / 2.0 * (1.0 - w / 3.0 * (1.0 - w / 4.0 * (1.0 - w / 5.0))));
    return 1.0 - std::exp(-w);
}

/// \int_T^inf tau^{-1-s} e^{-z tau} dtau by its large-|zT| expansion. Returns the value and
/// the size of the last term kept.
inline std::pair<cplx, double> power_exp_tail(cplx z, double T, double s) {
    cplx zt = z * T;
    cplx term = std::exp(-zt) * std::pow(T, -s) / zt;
    cplx series(0.0, 0.0);
    double last = std::abs(term);
    for (int k = 0; k < 60; ++k) {
        series += term;
        cplx next = term * (-(1.0 + s + k)) / zt;
        if (std::abs(next) > std::abs(term)) {
            last = std::abs(term);
            break;
        }
        term = next;
        last = std::abs(term);
        if (last < 1e-18) break;
    }
    return {series, last};
}

/// The rule applied to a single symbol value z.
inline BalakrishnanMultiplier balakrishnan_multiplier(const BalakrishnanRule& rule, cplx z) {
    if (z == cplx(0.0, 0.0)) return {{0.0, 0.0}, 0.0};
    const double s = rule.s, T = rule.t_max;
    const double cs = s / gamma_fn(1.0 - s);
    cplx sum(0.0, 0.0);
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
        double tau = rule.nodes[i];
        sum += rule.weights[i] * one_minus_exp(z * tau);
    }
    // \int_T^inf tau^{-1-s} dtau = T^{-s}/s; the oscillatory part by parts.
    auto [series, last] = power_exp_tail(z, T, s);
    sum += cs * (std::pow(T, -s) / s - series);
    return {sum, cs * last};
}

struct BalakrishnanResult {
    PeriodicField field;
    double imag_residue = 0.0;
    double tail_estimate = 0.0;        // worst tail expansion remainder over the modes
    double band_limit_estimate = 0.0;  // relative energy near the highest resolved modes
    bool tail_flag = false;
};

/// Precomputed multipliers of a rule on one box, reusable across fields.
class BalakrishnanOperator {
public:
    BalakrishnanOperator(const SpectralBox& box, BalakrishnanRule rule) : box_(box), rule_(std::move(rule)) {
        box_.validate();
        mult_.resize(box_.size());
        SpectralData probe(box_, std::vector<cplx>(box_.size()));
        probe.for_each_mode([&](std::size_t idx, double xi2, double sg, bool) {
            cplx z = heat_symbol(xi2, sg);
            auto m = balakrishnan_multiplier(rule_, z);
            mult_[idx] = m.value;
            if (z != cplx(0.0, 0.0)) {
                tail_ = std::max(tail_, m.tail_error / std::max(1.0, std::abs(principal_power(z, rule_.s))));
                if (std::abs(z) * rule_.t_max < 40.0) short_ = true;
            }
        });
    }

    const BalakrishnanRule& rule() const { return rule_; }
    double tail_estimate() const { return tail_; }
    bool tail_flag() const { return short_ || tail_ > rule_.tolerance; }

    BalakrishnanResult apply(const PeriodicField& f) const {
        if (f.box.size() != box_.size() || f.box.n != box_.n)
            throw std::invalid_argument("BalakrishnanOperator: box mismatch");
        SpectralData d(f);
        auto [out, res] = d.apply([this](std::size_t idx, double, double) { return mult_[idx]; });
        BalakrishnanResult r{std::move(out), res, tail_, d.band_edge_energy(), tail_flag()};
        return r;
    }

private:
    SpectralBox box_;
    BalakrishnanRule rule_;
    std::vector<cplx> mult_;
    double tail_ = 0.0;
    bool short_ = false;
};

/// H^s by the semigroup quadrature.
inline BalakrishnanResult apply_hs_balakrishnan(const PeriodicField& f, double s, const BalakrishnanRule& rule) {
    if (!(s > 0.0 && s < 1.0)) throw std::domain_error("apply_hs_balakrishnan: s must lie in (0, 1)");
    if (std::abs(rule.s - s) > 1e-15) throw std::invalid_argument("apply_hs_balakrishnan: rule built for another s");
    return BalakrishnanOperator(f.box, rule).apply(f);
}

inline BalakrishnanResult apply_hs_balakrishnan(const PeriodicField& f, double s) {
    return apply_hs_balakrishnan(f, s, build_balakrishnan_rule(s, f.box));
}

/// Relative L2 distance ||f - g|| / ||g||.
inline double relative_l2(const std::vector<double>& f, const std::vector<double>& g) {
    if (f.size() != g.size()) throw std::invalid_argument("relative_l2: size mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        num += (f[i] - g[i]) * (f[i] - g[i]);
        den += g[i] * g[i];
    }
    return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

/// Real trigonometric polynomial sum c cos(ph) + d sin(ph), ph = 2 pi (k.x / P_x + m t / P_t).
struct TrigPolynomial {
    struct Term {
        int k1, k2, m;
        double c, d;
    };
    SpectralBox box;
    std::vector<Term> terms;

    double operator()(const std::array<double, 2>& x, double t) const {
        double v = 0.0;
        for (const auto& tm : terms) {
            double ph = phase(tm, x, t);
            v += tm.c * std::cos(ph) + tm.d * std::sin(ph);
        }
        return v;
    }
    /// (d_t - Lap) applied term by term.
    double heat(const std::array<double, 2>& x, double t) const {
        const double tp = 2.0 * std::numbers::pi;
        double v = 0.0;
        for (const auto& tm : terms) {
            double ph = phase(tm, x, t);
            double kx = tp * tm.k1 / box.period_x, ky = tp * tm.k2 / box.period_x, w = tp * tm.m / box.period_t;
            double f = tm.c * std::cos(ph) + tm.d * std::sin(ph), df = -tm.c * std::sin(ph) + tm.d * std::cos(ph);
            v += w * df + (kx * kx + ky * ky) * f;
        }
        return v;
    }
    PeriodicField sample() const { return PeriodicField::sample(box, *this); }
    PeriodicField sample_heat() const {
        return PeriodicField::sample(box, [this](const std::array<double, 2>& x, double t) { return heat(x, t); });
    }

private:
    double phase(const Term& tm, const std::array<double, 2>& x, double t) const {
        return 2 * std::numbers::pi * (tm.k1 * x[0] / box.period_x + tm.k2 * x[1] / box.period_x + tm.m * t / box.period_t);
    }
};

/// Random coefficients with Gaussian decay exp(-0.15 (|k|^2 + m^2)) on |k| <= kmax, |m| <= mmax.
inline TrigPolynomial random_trig_polynomial(const SpectralBox& box, std::mt19937_64& rng, int kmax, int mmax) {
    std::normal_distribution<double> N(0.0, 1.0);
    TrigPolynomial p{box, {}};
    for (int k1 = -kmax; k1 <= kmax; ++k1)
        for (int k2 = (box.n == 2 ? -kmax : 0); k2 <= (box.n == 2 ? kmax : 0); ++k2)
            for (int m = -mmax; m <= mmax; ++m) {
                double decay = std::exp(-0.15 * (k1 * k1 + k2 * k2 + m * m));
                double c = N(rng) * decay;
                double d = N(rng) * decay;
                p.terms.push_back({k1, k2, m, c, d});
            }
    return p;
}

}  // namespace quclab
