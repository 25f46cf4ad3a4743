#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <mutex>
#include <numbers>
#include <queue>
#include <stdexcept>
#include <tuple>
#include <vector>

#include <Eigen/Eigenvalues>

namespace quclab {

/// Nodes and weights of a one-dimensional rule.
struct Rule {
    std::vector<double> nodes;
    std::vector<double> weights;

    std::size_t size() const { return nodes.size(); }
};

namespace detail {

inline Rule compute_gauss_legendre(std::size_t n) {
    Rule r;
    r.nodes.resize(n);
    r.weights.resize(n);
    for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) /
                            (static_cast<double>(n) + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (std::size_t k = 2; k <= n; ++k) {
                double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / static_cast<double>(k);
                p0 = p1;
                p1 = pk;
            }
            dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
            double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        {
            double p0 = 1.0, p1 = x;
            for (std::size_t k = 2; k <= n; ++k) {
                double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / static_cast<double>(k);
                p0 = p1;
                p1 = pk;
            }
            dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
        }
        double w = 2.0 / ((1.0 - x * x) * dp * dp);
        r.nodes[i] = -x;
        r.nodes[n - 1 - i] = x;
        r.weights[i] = w;
        r.weights[n - 1 - i] = w;
    }
    if (n % 2 == 1) r.nodes[n / 2] = 0.0;
    return r;
}

// Golub-Welsch for the weight (1-x)^alpha (1+x)^beta on [-1, 1].
inline Rule compute_gauss_jacobi(std::size_t n, double alpha, double beta) {
    Eigen::VectorXd diag(static_cast<Eigen::Index>(n));
    Eigen::VectorXd sub(static_cast<Eigen::Index>(n > 1 ? n - 1 : 1));
    const double ab = alpha + beta;
    for (std::size_t k = 0; k < n; ++k) {
        double kk = static_cast<double>(k);
        double denom = (2 * kk + ab) * (2 * kk + ab + 2);
        if (k == 0)
            diag[0] = (beta - alpha) / (ab + 2);
        else
            diag[static_cast<Eigen::Index>(k)] = (beta * beta - alpha * alpha) / denom;
    }
    for (std::size_t k = 1; k < n; ++k) {
        double kk = static_cast<double>(k);
        double num = 4 * kk * (kk + alpha) * (kk + beta) * (kk + ab);
        double den = (2 * kk + ab) * (2 * kk + ab) * (2 * kk + ab + 1) * (2 * kk + ab - 1);
        sub[static_cast<Eigen::Index>(k - 1)] = std::sqrt(num / den);
    }
    Rule r;
    r.nodes.resize(n);
    r.weights.resize(n);
    const double mu0 = std::exp((ab + 1) * std::log(2.0) + std::lgamma(alpha + 1) +
                                std::lgamma(beta + 1) - std::lgamma(ab + 2));
    if (n == 1) {
        r.nodes[0] = diag[0];
        r.weights[0] = mu0;
        return r;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
    for (std::size_t i = 0; i < n; ++i) {
        auto ii = static_cast<Eigen::Index>(i);
        r.nodes[i] = es.eigenvalues()[ii];
        double v0 = es.eigenvectors()(0, ii);
        r.weights[i] = mu0 * v0 * v0;
    }
    return r;
}

}  // namespace detail

/// Gauss-Legendre rule on [-1, 1]. Cached per size.
inline const Rule& gauss_legendre(std::size_t n) {
    if (n == 0) throw std::invalid_argument("gauss_legendre: n must be positive");
    static std::mutex mu;
    static std::map<std::size_t, Rule> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, detail::compute_gauss_legendre(n)).first;
    return it->second;
}

/// Gauss-Jacobi rule on [-1, 1] for the weight (1-x)^alpha (1+x)^beta.
inline const Rule& gauss_jacobi(std::size_t n, double alpha, double beta) {
    if (n == 0) throw std::invalid_argument("gauss_jacobi: n must be positive");
    if (!(alpha > -1.0) || !(beta > -1.0))
        throw std::invalid_argument("gauss_jacobi: exponents must exceed -1");
    static std::mutex mu;
    static std::map<std::tuple<std::size_t, double, double>, Rule> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_tuple(n, alpha, beta);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, detail::compute_gauss_jacobi(n, alpha, beta)).first;
    return it->second;
}

/// Gauss-Legendre rule mapped to [a, b].
inline Rule gauss_legendre_on(double a, double b, std::size_t n) {
    const Rule& ref = gauss_legendre(n);
    Rule r;
    r.nodes.resize(n);
    r.weights.resize(n);
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    for (std::size_t i = 0; i < n; ++i) {
        r.nodes[i] = mid + half * ref.nodes[i];
        r.weights[i] = half * ref.weights[i];
    }
    return r;
}

/// Rule for \int_0^L u^p f(u) du: the weight u^p is carried by the weights.
inline Rule gauss_power_on(double L, double p, std::size_t n) {
    const Rule& ref = gauss_jacobi(n, 0.0, p);
    Rule r;
    r.nodes.resize(n);
    r.weights.resize(n);
    const double scale = std::pow(0.5 * L, p + 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        r.nodes[i] = 0.5 * L * (1.0 + ref.nodes[i]);
        r.weights[i] = scale * ref.weights[i];
    }
    return r;
}

/// Composite Gauss-Legendre over consecutive breakpoints.
inline Rule composite_gauss_legendre(const std::vector<double>& breaks, std::size_t n) {
    Rule r;
    for (std::size_t k = 0; k + 1 < breaks.size(); ++k) {
        if (!(breaks[k + 1] > breaks[k])) continue;
        Rule p = gauss_legendre_on(breaks[k], breaks[k + 1], n);
        r.nodes.insert(r.nodes.end(), p.nodes.begin(), p.nodes.end());
        r.weights.insert(r.weights.end(), p.weights.begin(), p.weights.end());
    }
    return r;
}

struct IntegrationResult {
    double value = 0.0;
    double error = 0.0;
    bool converged = false;
    std::size_t evaluations = 0;
};

namespace detail {

struct KronrodSegment {
    double a, b, value, error;
    bool operator<(const KronrodSegment& o) const { return error < o.error; }
};

template <class F>
KronrodSegment gk15(F&& f, double a, double b, std::size_t& evals) {
    static constexpr std::array<double, 8> xk = {
        0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
        0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
        0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
        0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
    static constexpr std::array<double, 8> wk = {
        0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
        0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
        0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
        0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
    static constexpr std::array<double, 4> wg = {
        0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
        0.381830050505118944950369775488975, 0.417959183673469387755102040816327};
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    double fc = f(c);
    double resk = fc * wk[7];
    double resg = fc * wg[3];
    for (int j = 0; j < 7; ++j) {
        double dx = h * xk[static_cast<std::size_t>(j)];
        double f1 = f(c - dx), f2 = f(c + dx);
        resk += wk[static_cast<std::size_t>(j)] * (f1 + f2);
        if (j % 2 == 1) resg += wg[static_cast<std::size_t>(j / 2)] * (f1 + f2);
    }
    evals += 15;
    return {a, b, resk * h, std::abs((resk - resg) * h)};
}

}  // namespace detail

/// Globally adaptive Gauss-Kronrod (7/15) on [a, b].
template <class F>
IntegrationResult integrate_adaptive(F&& f, double a, double b, double abs_tol = 1e-13,
                                     double rel_tol = 1e-12, std::size_t max_segments = 2000) {
    IntegrationResult out;
    if (a == b) {
        out.converged = true;
        return out;
    }
    std::priority_queue<detail::KronrodSegment> heap;
    auto first = detail::gk15(f, a, b, out.evaluations);
    double total = first.value, err = first.error;
    heap.push(first);
    while (err > std::max(abs_tol, rel_tol * std::abs(total)) && heap.size() < max_segments) {
        auto worst = heap.top();
        heap.pop();
        double m = 0.5 * (worst.a + worst.b);
        auto left = detail::gk15(f, worst.a, m, out.evaluations);
        auto right = detail::gk15(f, m, worst.b, out.evaluations);
        total += left.value + right.value - worst.value;
        err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
    // Re-sum to limit drift from the running updates.
    double sum = 0.0, esum = 0.0;
    while (!heap.empty()) {
        sum += heap.top().value;
        esum += heap.top().error;
        heap.pop();
    }
    out.value = sum;
    out.error = esum;
    out.converged = esum <= std::max(abs_tol, rel_tol * std::abs(sum));
    return out;
}

}  // namespace quclab
