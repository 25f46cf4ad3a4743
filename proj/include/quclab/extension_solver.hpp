#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include "quclab/expression.hpp"
#include "quclab/fractional_operator.hpp"
#include "quclab/special_kernels.hpp"
#include "quclab/weighted_grid.hpp"

namespace quclab {

// ---------------------------------------------------------------------------
// Potential

/// Potential V(x, t) sampled on the thin grid, with ||V||_1 = sup|V| + sup|grad_x V| + sup|V_t| + 1.
class Potential {
public:
    using Function = std::function<double(const std::array<double, 2>&, double)>;

    Potential() = default;

    static Potential constant(std::shared_ptr<const HalfSpaceGrid> grid, double c) {
        Potential p;
        p.values_ = ThinField::sample(grid, [c](const std::array<double, 2>&, double) { return c; });
        p.sup_v_ = std::abs(c);
        p.time_independent_ = true;
        return p;
    }
    static Potential zero(std::shared_ptr<const HalfSpaceGrid> grid) { return constant(std::move(grid), 0.0); }

    /// Exact derivatives from the expression tree.
    static Potential from_expression(std::shared_ptr<const HalfSpaceGrid> grid, const Expression& e) {
        if (grid->n == 1 && e.uses_variable(Expression::x2))
            throw std::invalid_argument("Potential: expression uses x2 on a one-dimensional grid");
        auto d1 = e.derivative(Expression::x1), d2 = e.derivative(Expression::x2), dt = e.derivative(Expression::t);
        return from_function(
            grid, [e](const std::array<double, 2>& x, double t) { return e(x[0], x[1], t); },
            [d1](const std::array<double, 2>& x, double t) { return d1(x[0], x[1], t); },
            [d2](const std::array<double, 2>& x, double t) { return d2(x[0], x[1], t); },
            [dt](const std::array<double, 2>& x, double t) { return dt(x[0], x[1], t); }, !e.uses_variable(Expression::t));
    }

    /// Missing derivatives are replaced by central differences of f with a small step.
    static Potential from_function(std::shared_ptr<const HalfSpaceGrid> grid, Function f, Function d_x1 = {},
                                   Function d_x2 = {}, Function d_t = {}, bool time_independent = false) {
        auto fd = [&f](int axis) -> Function {
            return [f, axis](const std::array<double, 2>& x, double t) {
                std::array<double, 2> xp = x, xm = x;
                double tp = t, tm = t;
                double base = axis == 2 ? t : x[static_cast<std::size_t>(axis)];
                double h = 1e-6 * std::max(1.0, std::abs(base));
                if (axis == 2) {
                    tp += h;
                    tm -= h;
                } else {
                    xp[static_cast<std::size_t>(axis)] += h;
                    xm[static_cast<std::size_t>(axis)] -= h;
                }
                return (f(xp, tp) - f(xm, tm)) / (2.0 * h);
            };
        };
        if (!d_x1) d_x1 = fd(0);
        if (!d_x2) d_x2 = fd(1);
        if (!d_t) d_t = fd(2);
        Potential p;
        p.values_ = ThinField::sample(grid, f);
        p.time_independent_ = time_independent || grid->nt() == 1;
        const auto& g = *grid;
        std::size_t n2 = g.n == 2 ? g.nx() : 1;
        for (std::size_t i1 = 0; i1 < g.nx(); ++i1)
            for (std::size_t i2 = 0; i2 < n2; ++i2)
                for (std::size_t k = 0; k < g.nt(); ++k) {
                    std::array<double, 2> x{g.x[i1], g.n == 2 ? g.x[i2] : 0.0};
                    double v = p.values_.at(i1, i2, k);
                    double gx = d_x1(x, g.t[k]);
                    double gy = g.n == 2 ? d_x2(x, g.t[k]) : 0.0;
                    double vt = g.nt() > 1 ? d_t(x, g.t[k]) : 0.0;
                    if (!std::isfinite(v) || !std::isfinite(gx) || !std::isfinite(gy) || !std::isfinite(vt))
                        throw std::domain_error("Potential: non-finite value or derivative");
                    p.sup_v_ = std::max(p.sup_v_, std::abs(v));
                    p.sup_grad_ = std::max(p.sup_grad_, std::hypot(gx, gy));
                    p.sup_t_ = std::max(p.sup_t_, std::abs(vt));
                }
        return p;
    }

    /// Derivatives from grid differences of the samples.
    static Potential from_samples(const ThinField& v) {
        Potential p;
        p.values_ = v;
        for (double x : v.values())
            if (!std::isfinite(x)) throw std::domain_error("Potential: non-finite sample");
        auto [sv, sg, st] = p.grid_sups();
        p.sup_v_ = sv;
        p.sup_grad_ = sg;
        p.sup_t_ = st;
        p.time_independent_ = v.grid().nt() == 1;
        return p;
    }

    const ThinField& values() const { return values_; }
    const HalfSpaceGrid& grid() const { return values_.grid(); }
    const std::shared_ptr<const HalfSpaceGrid>& grid_ptr() const { return values_.grid_ptr(); }
    double at(std::size_t i1, std::size_t i2, std::size_t k) const { return values_.at(i1, i2, k); }
    bool time_independent() const { return time_independent_; }

    double sup_value() const { return sup_v_; }
    double sup_gradient() const { return sup_grad_; }
    double sup_time_derivative() const { return sup_t_; }
    double norm_1() const { return sup_v_ + sup_grad_ + sup_t_ + 1.0; }

    /// ||V||_1 with every derivative replaced by grid differences of the samples.
    double fd_norm_1() const {
        auto [sv, sg, st] = grid_sups();
        return sv + sg + st + 1.0;
    }
    bool consistent_with_fd(double rel_tol = 0.1) const {
        return std::abs(fd_norm_1() - norm_1()) <= rel_tol * norm_1();
    }

private:
    std::array<double, 3> grid_sups() const {
        const auto& g = values_.grid();
        std::size_t n2 = g.n == 2 ? g.nx() : 1;
        auto diff = [](const std::vector<double>& z, std::size_t i, auto&& value) {
            if (z.size() == 1) return 0.0;
            if (z.size() == 2) return (value(1) - value(0)) / (z[1] - z[0]);
            std::size_t s0 = 0;
            auto c = detail::derivative_stencil(z, i, s0);
            return c[0] * value(s0) + c[1] * value(s0 + 1) + c[2] * value(s0 + 2);
        };
        double sv = 0.0, sg = 0.0, st = 0.0;
        for (std::size_t i1 = 0; i1 < g.nx(); ++i1)
            for (std::size_t i2 = 0; i2 < n2; ++i2)
                for (std::size_t k = 0; k < g.nt(); ++k) {
                    sv = std::max(sv, std::abs(values_.at(i1, i2, k)));
                    double gx = diff(g.x, i1, [&](std::size_t m) { return values_.at(m, i2, k); });
                    double gy = g.n == 2 ? diff(g.x, i2, [&](std::size_t m) { return values_.at(i1, m, k); }) : 0.0;
                    double vt = diff(g.t, k, [&](std::size_t m) { return values_.at(i1, i2, m); });
                    sg = std::max(sg, std::hypot(gx, gy));
                    st = std::max(st, std::abs(vt));
                }
        return {sv, sg, st};
    }

    ThinField values_;
    double sup_v_ = 0.0, sup_grad_ = 0.0, sup_t_ = 0.0;
    bool time_independent_ = false;
};

// ---------------------------------------------------------------------------
// Problem and solution types

/// backward: x^a U_t + div(x^a grad U) = 0, marched from the last time node down to the first.
/// forward:  x^a U_t - div(x^a grad U) = 0, marched from the first time node up.
enum class TimeOrientation { backward, forward };

enum class ExtensionScheme { flux_form, z_substitution };

enum class ThinCondition { weighted_neumann, dirichlet };

struct ExtensionProblem {
    std::shared_ptr<const HalfSpaceGrid> grid;
    double a = 0.0;
    Potential V;
    ScalarField start_data;  // only the slice where marching starts is read
    std::function<double(const SpaceTimePoint&)> boundary;               // lateral and top values; empty means zero
    std::function<double(const std::array<double, 2>&, double)> thin_values;  // for ThinCondition::dirichlet
    TimeOrientation orientation = TimeOrientation::backward;

    std::size_t start_slice() const { return orientation == TimeOrientation::backward ? grid->nt() - 1 : 0; }

    void validate() const {
        if (!grid) throw std::invalid_argument("ExtensionProblem: missing grid");
        grid->validate();
        if (!(a > -1.0 && a < 1.0)) throw std::invalid_argument("ExtensionProblem: a must lie in (-1, 1)");
        if (start_data.values().size() != grid->size())
            throw std::invalid_argument("ExtensionProblem: start data does not match the grid");
        if (std::abs(start_data.weight_exponent() - a) > 1e-15)
            throw std::invalid_argument("ExtensionProblem: start data carries a different weight exponent");
        const auto& vg = V.values().grid_ptr();
        if (!vg) throw std::invalid_argument("ExtensionProblem: missing potential");
        const auto& g = *grid;
        const auto& h = *vg;
        if (h.n != g.n || h.x != g.x || h.t != g.t)
            throw std::invalid_argument("ExtensionProblem: potential grid does not match the thin grid");
    }
};

struct SolverConfig {
    ExtensionScheme scheme = ExtensionScheme::flux_form;
    ThinCondition thin = ThinCondition::weighted_neumann;
    double theta = 1.0;  // 1 implicit Euler, 0.5 Crank-Nicolson
    double tolerance = 1e-10;
    int max_iterations = 20000;
    double trace_fit_tolerance = 1e-4;
};

struct SolverError : std::runtime_error {
    SolverError(const std::string& what, double cond) : std::runtime_error(what), condition_estimate(cond) {}
    double condition_estimate;
};

struct Solution {
    ScalarField U;
    double residual_norm = 0.0;
    ThinField neumann_trace;
    double trace_fit_residual = 0.0;
    bool trace_flag = false;
    TimeOrientation orientation = TimeOrientation::backward;
    double boundary_ratio = 0.0;      // max |U| on the artificial boundary over max |U|
    double condition_estimate = 0.0;  // worst pivot ratio or diagonal ratio seen
    std::size_t linear_iterations = 0;
    bool quadrature_flag = false;  // kernel construction only
    double quadrature_tail = 0.0;
};

struct TraceResult {
    ThinField trace;
    double max_fit_residual = 0.0;
    bool flagged = false;
};

namespace detail {

// Least-squares fit of c0 + c1 y^{1-a} + c2 y^2 to the first five nodes; returns (c0, c1, c2, rms residual).
inline std::array<double, 4> fit_trace_expansion(const std::vector<double>& y, const double* u, double a) {
    constexpr int m = 5;
    Eigen::Matrix<double, m, 3> A;
    Eigen::Matrix<double, m, 1> b;
    for (int i = 0; i < m; ++i) {
        double yi = y[static_cast<std::size_t>(i)];
        A(i, 0) = 1.0;
        A(i, 1) = std::pow(yi, 1.0 - a);
        A(i, 2) = yi * yi;
        b(i) = u[i];
    }
    // Column scaling keeps the normal matrix well conditioned on very small y.
    Eigen::Vector3d scale = A.colwise().norm().transpose();
    for (int c = 0; c < 3; ++c)
        if (scale(c) > 0.0) A.col(c) /= scale(c);
    Eigen::Vector3d c = A.colPivHouseholderQr().solve(b);
    double rms = std::sqrt((A * c - b).squaredNorm() / m);
    for (int k = 0; k < 3; ++k) c(k) /= scale(k);
    return {c(0), c(1), c(2), rms};
}

}  // namespace detail

/// lim_{y -> 0} y^a U_y from the expansion c0 + c1 y^{1-a} + c2 y^2 fitted on the first five
/// y-nodes; the limit is (1 - a) c1. The worst fit residual relative to max |U| near y = 0 is reported
/// and flagged above `fit_tolerance`.
inline TraceResult weighted_neumann_trace(const ScalarField& U, double fit_tolerance = 1e-4) {
    const auto& g = U.grid();
    const double a = U.weight_exponent();
    if (g.ny() < 5) throw std::invalid_argument("weighted_neumann_trace: need at least 5 y-nodes");
    std::size_t below = 0;
    for (std::size_t j = 1; j < g.ny(); ++j)
        if (g.y[j] <= 0.1 * g.extension_extent()) ++below;
    if (below < 4)
        throw std::invalid_argument("weighted_neumann_trace: fewer than 4 cells below 0.1 * extent (unresolved)");
    TraceResult out{ThinField(U.grid_ptr()), 0.0, false};
    std::size_t n2 = g.n == 2 ? g.nx() : 1;
    double scale = 0.0, worst = 0.0;
    std::array<double, 5> col{};
    for (std::size_t i1 = 0; i1 < g.nx(); ++i1)
        for (std::size_t i2 = 0; i2 < n2; ++i2)
            for (std::size_t k = 0; k < g.nt(); ++k) {
                for (std::size_t j = 0; j < 5; ++j) {
                    col[j] = U.at(i1, i2, j, k);
                    scale = std::max(scale, std::abs(col[j]));
                }
                auto c = detail::fit_trace_expansion(g.y, col.data(), a);
                out.trace.at(i1, i2, k) = (1.0 - a) * c[1];
                worst = std::max(worst, c[3]);
            }
    out.max_fit_residual = scale > 0.0 ? worst / scale : 0.0;
    out.flagged = out.max_fit_residual > fit_tolerance;
    return out;
}

inline TraceResult weighted_neumann_trace(const Solution& sol, double fit_tolerance = 1e-4) {
    return weighted_neumann_trace(sol.U, fit_tolerance);
}

/// Weighted L2 norm of the equation residual over interior nodes (0 < y < Y, lateral nodes
/// excluded), divided by the weighted L2 norm of U. Uses the grid gradient and flux-form
/// divergence, independent of the solver's stencil.
inline double interior_residual(const ScalarField& U, TimeOrientation orientation) {
    const auto& g = U.grid();
    const double a = U.weight_exponent();
    ScalarField div = weighted_divergence(gradient(U), a);
    const std::size_t M = g.ny();
    std::vector<double> mass(M), mean_w(M), wx(g.nx(), 0.0), wt(g.nt(), 0.0);
    for (std::size_t j = 0; j < M; ++j) {
        double lo = j == 0 ? 0.0 : 0.5 * (g.y[j - 1] + g.y[j]);
        double hi = j + 1 == M ? g.y[M - 1] : 0.5 * (g.y[j] + g.y[j + 1]);
        mass[j] = (std::pow(hi, 1 + a) - std::pow(lo, 1 + a)) / (1 + a);
        mean_w[j] = mass[j] / (hi - lo);
    }
    for (std::size_t i = 0; i + 1 < g.nx(); ++i) {
        wx[i] += 0.5 * (g.x[i + 1] - g.x[i]);
        wx[i + 1] += 0.5 * (g.x[i + 1] - g.x[i]);
    }
    if (g.nt() == 1)
        wt[0] = 1.0;
    else
        for (std::size_t k = 0; k + 1 < g.nt(); ++k) {
            wt[k] += 0.5 * (g.t[k + 1] - g.t[k]);
            wt[k + 1] += 0.5 * (g.t[k + 1] - g.t[k]);
        }
    const double sign = orientation == TimeOrientation::backward ? 1.0 : -1.0;
    std::size_t n2 = g.n == 2 ? g.nx() : 1;
    double num = 0.0, den = 0.0;
    for (std::size_t i1 = 0; i1 < g.nx(); ++i1)
        for (std::size_t i2 = 0; i2 < n2; ++i2) {
            double wxx = wx[i1] * (g.n == 2 ? wx[i2] : 1.0);
            bool interior_x = i1 > 0 && i1 + 1 < g.nx() && (g.n == 1 || (i2 > 0 && i2 + 1 < g.nx()));
            for (std::size_t j = 0; j < M; ++j)
                for (std::size_t k = 0; k < g.nt(); ++k) {
                    double w = wxx * mass[j] * wt[k];
                    double u = U.at(i1, i2, j, k);
                    den += w * u * u;
                    if (!interior_x || j == 0 || j + 1 == M) continue;
                    double ut = 0.0;
                    if (g.nt() == 2) {
                        ut = (U.at(i1, i2, j, 1) - U.at(i1, i2, j, 0)) / (g.t[1] - g.t[0]);
                    } else if (g.nt() > 2) {
                        std::size_t s0 = 0;
                        auto c = detail::derivative_stencil(g.t, k, s0);
                        for (std::size_t q = 0; q < 3; ++q)
                            if (s0 + q != k) ut += c[q] * (U.at(i1, i2, j, s0 + q) - u);
                    }
                    double r = sign * ut + div.at(i1, i2, j, k) / mean_w[j];
                    num += w * r * r;
                }
        }
    return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

inline double interior_residual(const Solution& sol) { return interior_residual(sol.U, sol.orientation); }

// ---------------------------------------------------------------------------
// Finite-volume solver

namespace detail {

struct ExtensionStencil {
    std::vector<double> mass;  // \int y^a over the dual cell of each y-node
    std::vector<double> face;  // fitted face weight between y_j and y_{j+1}
};

inline ExtensionStencil extension_stencil(const std::vector<double>& y, double a, ExtensionScheme scheme) {
    const std::size_t M = y.size();
    ExtensionStencil st;
    st.mass.resize(M);
    st.face.resize(M - 1);
    const double b = 1.0 - a;
    std::vector<double> split(M - 1);
    for (std::size_t j = 0; j + 1 < M; ++j) {
        double z0 = std::pow(y[j], b), z1 = std::pow(y[j + 1], b);
        // Face weight 1 / \int y^{-a} dy: exact for profiles c0 + c1 y^{1-a}.
        st.face[j] = b / (z1 - z0);
        split[j] = scheme == ExtensionScheme::flux_form ? 0.5 * (y[j] + y[j + 1]) : std::pow(0.5 * (z0 + z1), 1.0 / b);
    }
    for (std::size_t j = 0; j < M; ++j) {
        double lo = j == 0 ? 0.0 : split[j - 1];
        double hi = j + 1 == M ? y[M - 1] : split[j];
        st.mass[j] = (std::pow(hi, 1 + a) - std::pow(lo, 1 + a)) / (1 + a);
    }
    return st;
}

}  // namespace detail

/// Implicit theta-scheme for the extension problem with the weighted Neumann coupling
/// lim y^a U_y = V U imposed as the flux through the bottom face. Lateral and top nodes are
/// Dirichlet. The marching direction follows the problem's orientation.
inline Solution solve_extension(const ExtensionProblem& problem, const SolverConfig& config = {}) {
    problem.validate();
    if (!(config.theta >= 0.5 && config.theta <= 1.0))
        throw std::invalid_argument("solve_extension: theta must lie in [0.5, 1]");
    if (config.thin == ThinCondition::dirichlet && !problem.thin_values)
        throw std::invalid_argument("solve_extension: Dirichlet thin condition needs thin values");
    using SpMat = Eigen::SparseMatrix<double>;
    using Vec = Eigen::VectorXd;
    const auto& g = *problem.grid;
    const double a = problem.a;
    const std::size_t nx = g.nx(), ny = g.ny(), nt = g.nt();
    const std::size_t n2 = g.n == 2 ? nx : 1;
    if (nx < 3 || ny < 3) throw std::invalid_argument("solve_extension: grid too small");
    const double h = g.tangential_spacing();
    for (std::size_t i = 1; i + 1 < nx; ++i)
        if (std::abs(g.x[i + 1] - g.x[i] - h) > 1e-9 * h)
            throw std::invalid_argument("solve_extension: tangential nodes must be uniform");
    const auto st = detail::extension_stencil(g.y, a, config.scheme);
    const bool neumann = config.thin == ThinCondition::weighted_neumann;

    const std::size_t S = g.tangential_count() * ny;  // nodes of one time slice
    auto slice_index = [&](std::size_t i1, std::size_t i2, std::size_t j) {
        return (g.n == 1 ? i1 : i1 * nx + i2) * ny + j;
    };
    std::vector<long> unknown(S, -1);
    std::vector<std::size_t> unknown_nodes;
    for (std::size_t i1 = 0; i1 < nx; ++i1)
        for (std::size_t i2 = 0; i2 < n2; ++i2)
            for (std::size_t j = 0; j < ny; ++j) {
                bool lateral = i1 == 0 || i1 + 1 == nx || (g.n == 2 && (i2 == 0 || i2 + 1 == nx));
                bool known = lateral || j + 1 == ny || (!neumann && j == 0);
                if (known) continue;
                unknown[slice_index(i1, i2, j)] = static_cast<long>(unknown_nodes.size());
                unknown_nodes.push_back(slice_index(i1, i2, j));
            }
    const auto NI = static_cast<Eigen::Index>(unknown_nodes.size());
    if (NI == 0) throw std::invalid_argument("solve_extension: no interior unknowns");

    // Rows: unknown nodes; columns: every node of the slice.
    auto assemble = [&](std::size_t k) {
        std::vector<Eigen::Triplet<double>> tr;
        tr.reserve(unknown_nodes.size() * static_cast<std::size_t>(3 + 2 * g.n));
        for (std::size_t i1 = 0; i1 < nx; ++i1)
            for (std::size_t i2 = 0; i2 < n2; ++i2)
                for (std::size_t j = 0; j < ny; ++j) {
                    std::size_t p = slice_index(i1, i2, j);
                    long row = unknown[p];
                    if (row < 0) continue;
                    auto r = static_cast<Eigen::Index>(row);
                    double diag = 0.0;
                    auto add = [&](std::size_t q, double c) {
                        tr.emplace_back(r, static_cast<Eigen::Index>(q), c);
                        diag -= c;
                    };
                    add(slice_index(i1, i2, j + 1), st.face[j]);
                    if (j > 0) add(slice_index(i1, i2, j - 1), st.face[j - 1]);
                    const double cx = st.mass[j] / (h * h);
                    add(slice_index(i1 - 1, i2, j), cx);
                    add(slice_index(i1 + 1, i2, j), cx);
                    if (g.n == 2) {
                        add(slice_index(i1, i2 - 1, j), cx);
                        add(slice_index(i1, i2 + 1, j), cx);
                    }
                    if (j == 0) diag -= problem.V.at(i1, i2, k);  // bottom flux V U
                    tr.emplace_back(r, static_cast<Eigen::Index>(p), diag);
                }
        SpMat L(NI, static_cast<Eigen::Index>(S));
        L.setFromTriplets(tr.begin(), tr.end());
        return L;
    };

    SpMat select(static_cast<Eigen::Index>(S), NI);
    {
        std::vector<Eigen::Triplet<double>> tr;
        for (std::size_t u = 0; u < unknown_nodes.size(); ++u)
            tr.emplace_back(static_cast<Eigen::Index>(unknown_nodes[u]), static_cast<Eigen::Index>(u), 1.0);
        select.setFromTriplets(tr.begin(), tr.end());
    }
    Vec mass_i(NI);
    for (std::size_t u = 0; u < unknown_nodes.size(); ++u)
        mass_i[static_cast<Eigen::Index>(u)] = st.mass[unknown_nodes[u] % ny];

    auto known_values = [&](std::size_t k) {
        Vec ub = Vec::Zero(static_cast<Eigen::Index>(S));
        for (std::size_t i1 = 0; i1 < nx; ++i1)
            for (std::size_t i2 = 0; i2 < n2; ++i2)
                for (std::size_t j = 0; j < ny; ++j) {
                    std::size_t p = slice_index(i1, i2, j);
                    if (unknown[p] >= 0) continue;
                    SpaceTimePoint pt;
                    pt.x = {g.x[i1], g.n == 2 ? g.x[i2] : 0.0};
                    pt.y = g.y[j];
                    pt.t = g.t[k];
                    double v = 0.0;
                    if (j == 0 && !neumann)
                        v = problem.thin_values(pt.x, pt.t);
                    else if (problem.boundary)
                        v = problem.boundary(pt);
                    ub[static_cast<Eigen::Index>(p)] = v;
                }
        return ub;
    };

    Solution sol;
    sol.orientation = problem.orientation;
    sol.U = ScalarField(problem.grid, a);
    const std::size_t k0 = problem.start_slice();
    Vec U_old(static_cast<Eigen::Index>(S));
    for (std::size_t i1 = 0; i1 < nx; ++i1)
        for (std::size_t i2 = 0; i2 < n2; ++i2)
            for (std::size_t j = 0; j < ny; ++j) {
                double v = problem.start_data.at(i1, i2, j, k0);
                U_old[static_cast<Eigen::Index>(slice_index(i1, i2, j))] = v;
                sol.U.at(i1, i2, j, k0) = v;
            }

    SpMat L_old = assemble(k0);
    double last_dt = -1.0;
    SpMat A;
    Eigen::SimplicialLDLT<SpMat> ldlt;
    Eigen::SparseLU<SpMat> lu;
    bool use_lu = false;
    for (std::size_t step = 1; step < nt; ++step) {
        const std::size_t k_old = problem.orientation == TimeOrientation::backward ? nt - step : step - 1;
        const std::size_t k_new = problem.orientation == TimeOrientation::backward ? nt - 1 - step : step;
        const double dt = std::abs(g.t[k_new] - g.t[k_old]);
        SpMat L_new = problem.V.time_independent() ? L_old : assemble(k_new);
        Vec ub = known_values(k_new);
        Vec rhs = mass_i.cwiseProduct(select.transpose() * U_old) / dt + config.theta * (L_new * ub);
        if (config.theta < 1.0) rhs += (1.0 - config.theta) * (L_old * U_old);
        const bool rebuild = dt != last_dt || !problem.V.time_independent();
        if (rebuild) {
            SpMat LII = L_new * select;
            SpMat D(NI, NI);
            D.reserve(Eigen::VectorXi::Constant(NI, 1));
            for (Eigen::Index i = 0; i < NI; ++i) D.insert(i, i) = mass_i[i] / dt;
            A = D - config.theta * LII;
            A.makeCompressed();
            last_dt = dt;
        }
        Vec x;
        if (g.n == 1) {
            if (rebuild) {
                use_lu = false;
                ldlt.compute(A);
                double cond = std::numeric_limits<double>::infinity();
                if (ldlt.info() == Eigen::Success) {
                    Eigen::VectorXd d = ldlt.vectorD().cwiseAbs();
                    cond = d.minCoeff() > 0.0 ? d.maxCoeff() / d.minCoeff() : cond;
                }
                if (!(cond < 1e14)) {
                    lu.compute(A);
                    if (lu.info() != Eigen::Success) throw SolverError("solve_extension: singular system", cond);
                    use_lu = true;
                }
                sol.condition_estimate = std::max(sol.condition_estimate, cond);
            }
            x = use_lu ? Vec(lu.solve(rhs)) : Vec(ldlt.solve(rhs));
        } else {
            Vec guess = select.transpose() * U_old;
            Vec diag = A.diagonal();
            double dmax = diag.cwiseAbs().maxCoeff(), dmin = diag.cwiseAbs().minCoeff();
            double cond = dmin > 0.0 ? dmax / dmin : std::numeric_limits<double>::infinity();
            sol.condition_estimate = std::max(sol.condition_estimate, cond);
            bool done = false;
            if (diag.minCoeff() > 0.0) {
                Eigen::ConjugateGradient<SpMat, Eigen::Lower | Eigen::Upper, Eigen::DiagonalPreconditioner<double>> cg;
                cg.setTolerance(config.tolerance);
                cg.setMaxIterations(config.max_iterations);
                cg.compute(A);
                x = cg.solveWithGuess(rhs, guess);
                sol.linear_iterations += static_cast<std::size_t>(cg.iterations());
                done = cg.info() == Eigen::Success;
            }
            if (!done) {
                Eigen::BiCGSTAB<SpMat, Eigen::DiagonalPreconditioner<double>> bi;
                bi.setTolerance(config.tolerance);
                bi.setMaxIterations(config.max_iterations);
                bi.compute(A);
                x = bi.solveWithGuess(rhs, guess);
                sol.linear_iterations += static_cast<std::size_t>(bi.iterations());
                if (bi.info() != Eigen::Success)
                    throw SolverError("solve_extension: iterative solve did not converge", cond);
            }
        }
        Vec U_new = ub + select * x;
        for (std::size_t i1 = 0; i1 < nx; ++i1)
            for (std::size_t i2 = 0; i2 < n2; ++i2)
                for (std::size_t j = 0; j < ny; ++j)
                    sol.U.at(i1, i2, j, k_new) = U_new[static_cast<Eigen::Index>(slice_index(i1, i2, j))];
        U_old = std::move(U_new);
        L_old = std::move(L_new);
    }
    if (!sol.U.all_finite()) throw SolverError("solve_extension: non-finite solution", sol.condition_estimate);

    double umax = 0.0, bmax = 0.0;
    for (std::size_t i1 = 0; i1 < nx; ++i1)
        for (std::size_t i2 = 0; i2 < n2; ++i2)
            for (std::size_t j = 0; j < ny; ++j) {
                bool edge = unknown[slice_index(i1, i2, j)] < 0 && !(j == 0 && !neumann);
                for (std::size_t k = 0; k < nt; ++k) {
                    double v = std::abs(sol.U.at(i1, i2, j, k));
                    umax = std::max(umax, v);
                    if (edge) bmax = std::max(bmax, v);
                }
            }
    sol.boundary_ratio = umax > 0.0 ? bmax / umax : 0.0;
    sol.residual_norm = interior_residual(sol.U, sol.orientation);
    if (g.ny() >= 5) {
        std::size_t below = 0;
        for (std::size_t j = 1; j < g.ny(); ++j)
            if (g.y[j] <= 0.1 * g.extension_extent()) ++below;
        if (below >= 4) {
            auto tr = weighted_neumann_trace(sol.U, config.trace_fit_tolerance);
            sol.neumann_trace = std::move(tr.trace);
            sol.trace_fit_residual = tr.max_fit_residual;
            sol.trace_flag = tr.flagged;
        } else {
            sol.neumann_trace = ThinField(problem.grid);
            sol.trace_flag = true;
        }
    }
    return sol;
}

/// The backward problem x^a U_t + div(x^a grad U) = 0 on [t_0, t_K], data on the slice t_K.
inline Solution solve_backward_extension(ExtensionProblem problem, const SolverConfig& config = {}) {
    problem.orientation = TimeOrientation::backward;
    return solve_extension(problem, config);
}

// ---------------------------------------------------------------------------
// Extension by the semigroup kernel

/// Nodes in the semigroup variable tau shared by every y, for
/// Phi_y(z) = 1 + Gamma(s)^{-1} \int_0^inf K_y(tau) (e^{-z tau} - 1) dtau,
/// K_y(tau) = (y^2 / 4 tau)^s e^{-y^2 / 4 tau} / tau. Phi_y(z) is the Fourier multiplier
/// taking the thin data to the extension at height y.
struct ExtensionKernelRule {
    double s = 0.5;
    std::vector<double> nodes;
    std::vector<double> weights;  // plain quadrature weights
    double t_max = 0.0;
};

inline ExtensionKernelRule build_extension_kernel_rule(double s, double y_min, double z_min, double omega_max,
                                                       std::size_t order = 16, double t_max = 0.0) {
    if (!(s > 0.0 && s < 1.0)) throw std::domain_error("build_extension_kernel_rule: s must lie in (0, 1)");
    if (!(y_min > 0.0) || !(z_min > 0.0)) throw std::invalid_argument("build_extension_kernel_rule: bad range");
    ExtensionKernelRule r;
    r.s = s;
    r.t_max = t_max > 0.0 ? t_max : 40.0 / z_min;
    const double T = r.t_max;
    const double l_osc = omega_max > 0.0 ? 8.0 / omega_max : std::numeric_limits<double>::infinity();
    // Below y_min^2 / 400 the kernel is below e^{-100} for every y >= y_min.
    double lo = std::min(y_min * y_min / 400.0, 0.5 * T);
    while (lo < T) {
        double hi = std::min({2.0 * lo, lo + l_osc, T});
        if (T - hi < 1e-3 * (hi - lo)) hi = T;
        Rule g = gauss_legendre_on(lo, hi, order);
        r.nodes.insert(r.nodes.end(), g.nodes.begin(), g.nodes.end());
        r.weights.insert(r.weights.end(), g.weights.begin(), g.weights.end());
        lo = hi;
    }
    return r;
}

inline ExtensionKernelRule build_extension_kernel_rule(double s, double y_min, const SpectralBox& box,
                                                       std::size_t order = 16) {
    box.validate();
    return build_extension_kernel_rule(s, y_min, box.min_symbol_modulus(), box.max_time_frequency(), order);
}

/// Per-height weights of an ExtensionKernelRule.
class KernelProfiles {
public:
    KernelProfiles(const ExtensionKernelRule& rule, const std::vector<double>& ys) : rule_(rule), ys_(ys) {
        const double s = rule.s, T = rule.t_max, gs = gamma_fn(s);
        const auto N = static_cast<Eigen::Index>(rule.nodes.size());
        kw_.resize(static_cast<Eigen::Index>(ys.size()), N);
        tail_one_.resize(ys.size());
        tail_pref_.resize(ys.size());
        for (std::size_t j = 0; j < ys.size(); ++j) {
            double y = ys[j];
            if (y < 0.0) throw std::invalid_argument("KernelProfiles: y must be >= 0");
            double q = 0.25 * y * y;
            for (Eigen::Index i = 0; i < N; ++i) {
                double tau = rule.nodes[static_cast<std::size_t>(i)];
                double v = y == 0.0 ? 0.0 : std::exp(s * std::log(q / tau) - q / tau) / tau;
                kw_(static_cast<Eigen::Index>(j), i) = v * rule.weights[static_cast<std::size_t>(i)] / gs;
            }
            // Beyond T: \int_T^inf K_y = gamma(s, y^2/4T); in the oscillatory part e^{-q/tau} is
            // expanded in powers of q/tau.
            tail_one_[j] = y == 0.0 ? 0.0 : regularized_gamma_p(s, q / T);
            tail_pref_[j] = y == 0.0 ? 0.0 : std::pow(q, s) / gs;
            q_max_ = std::max(q_max_, q);
        }
        double term = 1.0;
        for (int m = 1; m < 40 && term > 1e-17; ++m) {
            term *= q_max_ / T / m;
            tail_terms_ = m + 1;
        }
    }
    std::size_t size() const { return ys_.size(); }
    const std::vector<double>& heights() const { return ys_; }

    /// Phi_y(z) for every height; the second member is the tail expansion remainder.
    std::pair<Eigen::VectorXcd, double> evaluate(cplx z) const {
        const auto N = static_cast<Eigen::Index>(rule_.nodes.size());
        const auto J = static_cast<Eigen::Index>(ys_.size());
        Eigen::VectorXcd out = Eigen::VectorXcd::Ones(J);
        if (z == cplx(0.0, 0.0)) return {out, 0.0};
        Eigen::VectorXd er(N), ei(N);
        for (Eigen::Index i = 0; i < N; ++i) {
            cplx e = -one_minus_exp(z * rule_.nodes[static_cast<std::size_t>(i)]);
            er[i] = e.real();
            ei[i] = e.imag();
        }
        Eigen::VectorXd pr = kw_ * er, pi = kw_ * ei;
        std::vector<cplx> series(static_cast<std::size_t>(tail_terms_));
        double last = 0.0;
        for (int m = 0; m < tail_terms_; ++m) {
            auto [v, l] = power_exp_tail(z, rule_.t_max, rule_.s + m);
            series[static_cast<std::size_t>(m)] = v;
            if (m == 0) last = l;
        }
        double worst = 0.0;
        for (Eigen::Index j = 0; j < J; ++j) {
            auto jj = static_cast<std::size_t>(j);
            double q = 0.25 * ys_[jj] * ys_[jj];
            cplx tail(0.0, 0.0);
            double c = 1.0;
            for (int m = 0; m < tail_terms_; ++m) {
                tail += c * series[static_cast<std::size_t>(m)];
                c *= -q / (m + 1);
            }
            out[j] += cplx(pr[j], pi[j]) + tail_pref_[jj] * tail - tail_one_[jj];
            worst = std::max(worst, tail_pref_[jj] * last);
        }
        return {out, worst};
    }

private:
    ExtensionKernelRule rule_;
    std::vector<double> ys_;
    Eigen::MatrixXd kw_;
    std::vector<double> tail_one_, tail_pref_;
    double q_max_ = 0.0;
    int tail_terms_ = 1;
};

/// Phi_y(z) for a single height and symbol value.
inline cplx kernel_extension_profile(const ExtensionKernelRule& rule, double y, cplx z) {
    return KernelProfiles(rule, {y}).evaluate(z).first[0];
}

/// Extension of periodic thin data u by the semigroup kernel, solving the forward problem
/// d_t(x^a U) - div(x^a grad U) = 0 with U(., 0, .) = u. The grid uses the box nodes
/// tangentially and in time and `y_nodes` (y_nodes[0] == 0) in the extension variable.
inline Solution extend_via_kernel(const PeriodicField& u, double s, const std::vector<double>& y_nodes,
                                  double tolerance = 1e-8, double trace_fit_tolerance = 1e-4) {
    const SpectralBox& box = u.box;
    box.validate();
    if (!(s > 0.0 && s < 1.0)) throw std::domain_error("extend_via_kernel: s must lie in (0, 1)");
    if (y_nodes.size() < 2 || y_nodes.front() != 0.0) throw std::invalid_argument("extend_via_kernel: y_nodes[0] must be 0");
    const double a = 1.0 - 2.0 * s;
    auto grid = std::make_shared<HalfSpaceGrid>();
    grid->n = box.n;
    grid->tangential_extent = 0.5 * box.period_x;
    for (std::size_t i = 0; i < box.modes_x; ++i) grid->x.push_back(box.x_node(i));
    grid->y = y_nodes;
    for (std::size_t k = 0; k < box.modes_t; ++k) grid->t.push_back(box.t_node(k));
    grid->validate();

    const auto rule = build_extension_kernel_rule(s, y_nodes[1], box);
    KernelProfiles prof(rule, y_nodes);
    SpectralData data(u);
    const std::size_t J = y_nodes.size();
    std::vector<std::vector<cplx>> table(J, std::vector<cplx>(box.size()));
    double tail = 0.0;
    bool short_tail = false;
    data.for_each_mode([&](std::size_t idx, double xi2, double sg, bool) {
        cplx z = heat_symbol(xi2, sg);
        auto [phi, rem] = prof.evaluate(z);
        for (std::size_t j = 0; j < J; ++j) table[j][idx] = phi[static_cast<Eigen::Index>(j)];
        tail = std::max(tail, rem);
        if (z != cplx(0.0, 0.0) && std::abs(z) * rule.t_max < 40.0) short_tail = true;
    });

    Solution sol;
    sol.orientation = TimeOrientation::forward;
    sol.U = ScalarField(grid, a);
    const std::size_t n2 = box.n == 2 ? box.modes_x : 1;
    for (std::size_t j = 0; j < J; ++j) {
        auto [slice, res] = data.apply([&](std::size_t idx, double, double) { return table[j][idx]; });
        (void)res;
        for (std::size_t i1 = 0; i1 < box.modes_x; ++i1)
            for (std::size_t i2 = 0; i2 < n2; ++i2)
                for (std::size_t k = 0; k < box.modes_t; ++k) sol.U.at(i1, i2, j, k) = slice.values[box.index(i1, i2, k)];
    }
    sol.quadrature_tail = tail;
    sol.quadrature_flag = short_tail || tail > tolerance;
    if (J >= 5) {
        auto tr = weighted_neumann_trace(sol.U, trace_fit_tolerance);
        sol.neumann_trace = std::move(tr.trace);
        sol.trace_fit_residual = tr.max_fit_residual;
        sol.trace_flag = tr.flagged;
    } else {
        sol.neumann_trace = ThinField(grid);
        sol.trace_flag = true;
    }
    sol.residual_norm = std::numeric_limits<double>::quiet_NaN();  // periodic in x: no interior in the FV sense
    return sol;
}

struct NpOptions {
    double y_extent = 0.02;
    std::size_t y_cells = 20;
    double grading = 2.0;
    double tolerance = 1e-8;
};

struct NpReport {
    double s = 0.5;
    double relative_l2 = 0.0;
    PeriodicField lhs;  // trace constant times the weighted Neumann trace
    PeriodicField rhs;  // -H^s u
    double band_edge_energy = 0.0;
    double trace_fit_residual = 0.0;
    bool quadrature_flag = false;
    bool band_flag = false;
};

/// Compares 2^{-a} Gamma((1-a)/2) / Gamma((1+a)/2) times the weighted Neumann trace of the
/// kernel extension with -H^s u computed by its Fourier symbol.
inline NpReport verify_np(const PeriodicField& u, double s, const NpOptions& opt = {}) {
    const double a = 1.0 - 2.0 * s;
    auto ys = graded_nodes(opt.y_extent, opt.y_cells, opt.grading);
    Solution ext = extend_via_kernel(u, s, ys, opt.tolerance);
    NpReport rep;
    rep.s = s;
    rep.lhs = PeriodicField{u.box, ext.neumann_trace.values()};
    const double c = extension_trace_constant(a);
    for (double& v : rep.lhs.values) v *= c;
    rep.rhs = apply_hs_spectral(u, s).field;
    for (double& v : rep.rhs.values) v = -v;
    rep.relative_l2 = relative_l2(rep.lhs.values, rep.rhs.values);
    rep.band_edge_energy = SpectralData(u).band_edge_energy();
    rep.band_flag = rep.band_edge_energy > 1e-10;
    rep.trace_fit_residual = ext.trace_fit_residual;
    rep.quadrature_flag = ext.quadrature_flag;
    return rep;
}

}  // namespace quclab
