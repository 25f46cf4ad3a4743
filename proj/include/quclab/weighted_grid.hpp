#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "quclab/quadrature.hpp"

namespace quclab {

/// A point of the thick space-time: tangential x (first n entries used), extension y >= 0, time t.
struct SpaceTimePoint {
    std::array<double, 2> x{0.0, 0.0};
    double y = 0.0;
    double t = 0.0;
};

/// Uniform nodes lo, ..., hi (count >= 2).
inline std::vector<double> uniform_nodes(double lo, double hi, std::size_t count) {
    if (count < 2) throw std::invalid_argument("uniform_nodes: count must be >= 2");
    std::vector<double> v(count);
    for (std::size_t i = 0; i < count; ++i)
        v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
    v.back() = hi;
    return v;
}

/// Power-graded nodes hi * (j/M)^p, j = 0..M.
inline std::vector<double> graded_nodes(double hi, std::size_t cells, double p) {
    std::vector<double> v(cells + 1);
    for (std::size_t j = 0; j <= cells; ++j)
        v[j] = hi * std::pow(static_cast<double>(j) / static_cast<double>(cells), p);
    return v;
}

/// Grading exponent that spreads the measure y^a dy evenly over the cells.
inline double default_grading_exponent(double a) { return a >= 0.0 ? 2.0 : 2.0 / (1.0 + a); }

/// Tensor grid of the half-space in space-time, graded toward y = 0.
struct HalfSpaceGrid {
    int n = 1;
    double tangential_extent = 1.0;
    std::vector<double> x;  // tangential nodes, identical on every axis
    std::vector<double> y;  // extension nodes, y[0] == 0
    std::vector<double> t;  // time nodes
    double grading_exponent = 1.0;

    std::size_t nx() const { return x.size(); }
    std::size_t ny() const { return y.size(); }
    std::size_t nt() const { return t.size(); }
    std::size_t tangential_count() const { return n == 1 ? nx() : nx() * nx(); }
    std::size_t size() const { return tangential_count() * ny() * nt(); }
    std::size_t thin_size() const { return tangential_count() * nt(); }
    double extension_extent() const { return y.back(); }
    double tangential_spacing() const { return x[1] - x[0]; }

    std::size_t index(std::size_t ix1, std::size_t ix2, std::size_t iy, std::size_t it) const {
        std::size_t tang = n == 1 ? ix1 : ix1 * nx() + ix2;
        return (tang * ny() + iy) * nt() + it;
    }
    std::size_t thin_index(std::size_t ix1, std::size_t ix2, std::size_t it) const {
        std::size_t tang = n == 1 ? ix1 : ix1 * nx() + ix2;
        return tang * nt() + it;
    }

    void validate() const {
        if (n != 1 && n != 2) throw std::invalid_argument("HalfSpaceGrid: n must be 1 or 2");
        auto increasing = [](const std::vector<double>& v) {
            for (std::size_t i = 1; i < v.size(); ++i)
                if (!(v[i] > v[i - 1])) return false;
            return true;
        };
        if (x.size() < 2 || y.size() < 2 || t.empty())
            throw std::invalid_argument("HalfSpaceGrid: node arrays too short");
        if (y.front() != 0.0) throw std::invalid_argument("HalfSpaceGrid: y[0] must be 0");
        if (!increasing(x) || !increasing(y) || !increasing(t))
            throw std::invalid_argument("HalfSpaceGrid: node arrays must be strictly increasing");
    }
};

struct GridSpec {
    int n = 1;
    double tangential_extent = 1.0;
    double extension_extent = 0.0;  // 0 means: same as tangential_extent
    std::size_t tangential_nodes = 33;
    std::size_t extension_cells = 32;
    double grading_exponent = 2.0;
    std::vector<double> time_nodes{0.0};
};

inline std::shared_ptr<const HalfSpaceGrid> build_graded_grid(const GridSpec& spec) {
    if (spec.n != 1 && spec.n != 2) throw std::invalid_argument("build_graded_grid: n must be 1 or 2");
    if (!(spec.tangential_extent > 0.0) || spec.extension_extent < 0.0)
        throw std::invalid_argument("build_graded_grid: extents must be positive");
    if (spec.tangential_nodes < 4 || spec.extension_cells < 4)
        throw std::invalid_argument("build_graded_grid: counts must be >= 4");
    if (!(spec.grading_exponent >= 1.0))
        throw std::invalid_argument("build_graded_grid: grading exponent must be >= 1");
    auto g = std::make_shared<HalfSpaceGrid>();
    g->n = spec.n;
    g->tangential_extent = spec.tangential_extent;
    g->x = uniform_nodes(-spec.tangential_extent, spec.tangential_extent, spec.tangential_nodes);
    double Y = spec.extension_extent > 0.0 ? spec.extension_extent : spec.tangential_extent;
    g->y = graded_nodes(Y, spec.extension_cells, spec.grading_exponent);
    g->t = spec.time_nodes;
    g->grading_exponent = spec.grading_exponent;
    g->validate();
    return g;
}

/// Convenience overload: (n, extent, tangential count, extension cells, grading).
inline std::shared_ptr<const HalfSpaceGrid> build_graded_grid(int n, double extent, std::size_t tangential_nodes,
                                                              std::size_t extension_cells, double grading,
                                                              std::vector<double> time_nodes = {0.0}) {
    GridSpec s;
    s.n = n;
    s.tangential_extent = extent;
    s.tangential_nodes = tangential_nodes;
    s.extension_cells = extension_cells;
    s.grading_exponent = grading;
    s.time_nodes = std::move(time_nodes);
    return build_graded_grid(s);
}

namespace detail {

// Bracketing cell and linear weight for v in nodes; throws when v is outside.
inline std::pair<std::size_t, double> locate(const std::vector<double>& nodes, double v) {
    const double lo = nodes.front(), hi = nodes.back();
    const double slack = 1e-12 * std::max({1.0, std::abs(lo), std::abs(hi)});
    if (nodes.size() == 1) {
        if (std::abs(v - lo) > slack) throw std::out_of_range("point outside grid");
        return {0, 0.0};
    }
    if (v < lo - slack || v > hi + slack) throw std::out_of_range("point outside grid");
    v = std::clamp(v, lo, hi);
    auto it = std::upper_bound(nodes.begin(), nodes.end(), v);
    std::size_t i = static_cast<std::size_t>(it - nodes.begin());
    if (i == 0) i = 1;
    if (i >= nodes.size()) i = nodes.size() - 1;
    --i;
    double w = (v - nodes[i]) / (nodes[i + 1] - nodes[i]);
    return {i, w};
}

}  // namespace detail

/// Values on the thick grid, with the weight exponent a attached.
class ScalarField {
public:
    ScalarField() = default;
    ScalarField(std::shared_ptr<const HalfSpaceGrid> grid, double a)
        : grid_(std::move(grid)), values_(grid_->size(), 0.0), a_(a) {
        check_a();
    }
    ScalarField(std::shared_ptr<const HalfSpaceGrid> grid, double a, std::vector<double> values)
        : grid_(std::move(grid)), values_(std::move(values)), a_(a) {
        check_a();
        if (values_.size() != grid_->size()) throw std::invalid_argument("ScalarField: shape mismatch");
    }

    template <class F>
    static ScalarField sample(std::shared_ptr<const HalfSpaceGrid> grid, double a, F&& f) {
        ScalarField out(grid, a);
        const auto& g = *grid;
        std::size_t n2 = g.n == 2 ? g.nx() : 1;
        for (std::size_t i1 = 0; i1 < g.nx(); ++i1)
            for (std::size_t i2 = 0; i2 < n2; ++i2)
                for (std::size_t j = 0; j < g.ny(); ++j)
                    for (std::size_t k = 0; k < g.nt(); ++k) {
                        SpaceTimePoint p;
                        p.x[0] = g.x[i1];
                        p.x[1] = g.n == 2 ? g.x[i2] : 0.0;
                        p.y = g.y[j];
                        p.t = g.t[k];
                        out.values_[g.index(i1, i2, j, k)] = f(p);
                    }
        return out;
    }

    const HalfSpaceGrid& grid() const { return *grid_; }
    const std::shared_ptr<const HalfSpaceGrid>& grid_ptr() const { return grid_; }
    double weight_exponent() const { return a_; }
    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }

    double& at(std::size_t i1, std::size_t i2, std::size_t iy, std::size_t it) {
        return values_[grid_->index(i1, i2, iy, it)];
    }
    double at(std::size_t i1, std::size_t i2, std::size_t iy, std::size_t it) const {
        return values_[grid_->index(i1, i2, iy, it)];
    }

    /// Multilinear interpolation; throws std::out_of_range outside the grid.
    double operator()(const SpaceTimePoint& p) const {
        const auto& g = *grid_;
        auto [i1, w1] = detail::locate(g.x, p.x[0]);
        std::size_t i2 = 0;
        double w2 = 0.0;
        if (g.n == 2) std::tie(i2, w2) = detail::locate(g.x, p.x[1]);
        auto [j, wy] = detail::locate(g.y, p.y);
        auto [k, wt] = detail::locate(g.t, p.t);
        const bool tt = g.nt() > 1;
        double sum = 0.0;
        for (int d1 = 0; d1 < 2; ++d1) {
            double c1 = d1 ? w1 : 1.0 - w1;
            if (c1 == 0.0) continue;
            for (int d2 = 0; d2 < (g.n == 2 ? 2 : 1); ++d2) {
                double c2 = g.n == 2 ? (d2 ? w2 : 1.0 - w2) : 1.0;
                if (c2 == 0.0) continue;
                for (int dy = 0; dy < 2; ++dy) {
                    double cy = dy ? wy : 1.0 - wy;
                    if (cy == 0.0) continue;
                    for (int dt = 0; dt < (tt ? 2 : 1); ++dt) {
                        double ct = tt ? (dt ? wt : 1.0 - wt) : 1.0;
                        if (ct == 0.0) continue;
                        sum += c1 * c2 * cy * ct *
                               at(i1 + static_cast<std::size_t>(d1), i2 + static_cast<std::size_t>(d2),
                                  j + static_cast<std::size_t>(dy), k + static_cast<std::size_t>(dt));
                    }
                }
            }
        }
        return sum;
    }

    double resolution() const { return grid_->tangential_spacing(); }
    const std::vector<double>& time_breakpoints() const { return grid_->t; }

    bool all_finite() const {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
    }

private:
    void check_a() const {
        if (!(a_ > -1.0 && a_ < 1.0)) throw std::invalid_argument("ScalarField: a must lie in (-1, 1)");
    }
    std::shared_ptr<const HalfSpaceGrid> grid_;
    std::vector<double> values_;
    double a_ = 0.0;
};

/// Values on the thin set (tangential nodes x time nodes) of a grid.
class ThinField {
public:
    ThinField() = default;
    explicit ThinField(std::shared_ptr<const HalfSpaceGrid> grid)
        : grid_(std::move(grid)), values_(grid_->thin_size(), 0.0) {}
    ThinField(std::shared_ptr<const HalfSpaceGrid> grid, std::vector<double> values)
        : grid_(std::move(grid)), values_(std::move(values)) {
        if (values_.size() != grid_->thin_size()) throw std::invalid_argument("ThinField: shape mismatch");
    }

    template <class F>
    static ThinField sample(std::shared_ptr<const HalfSpaceGrid> grid, F&& f) {
        ThinField out(grid);
        const auto& g = *grid;
        std::size_t n2 = g.n == 2 ? g.nx() : 1;
        for (std::size_t i1 = 0; i1 < g.nx(); ++i1)
            for (std::size_t i2 = 0; i2 < n2; ++i2)
                for (std::size_t k = 0; k < g.nt(); ++k) {
                    std::array<double, 2> x{g.x[i1], g.n == 2 ? g.x[i2] : 0.0};
                    out.values_[g.thin_index(i1, i2, k)] = f(x, g.t[k]);
                }
        return out;
    }

    const HalfSpaceGrid& grid() const { return *grid_; }
    const std::shared_ptr<const HalfSpaceGrid>& grid_ptr() const { return grid_; }
    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }
    double& at(std::size_t i1, std::size_t i2, std::size_t it) { return values_[grid_->thin_index(i1, i2, it)]; }
    double at(std::size_t i1, std::size_t i2, std::size_t it) const {
        return values_[grid_->thin_index(i1, i2, it)];
    }

    double operator()(const std::array<double, 2>& x, double t) const {
        const auto& g = *grid_;
        auto [i1, w1] = detail::locate(g.x, x[0]);
        std::size_t i2 = 0;
        double w2 = 0.0;
        if (g.n == 2) std::tie(i2, w2) = detail::locate(g.x, x[1]);
        auto [k, wt] = detail::locate(g.t, t);
        const bool tt = g.nt() > 1;
        double sum = 0.0;
        for (int d1 = 0; d1 < 2; ++d1)
            for (int d2 = 0; d2 < (g.n == 2 ? 2 : 1); ++d2)
                for (int dt = 0; dt < (tt ? 2 : 1); ++dt) {
                    double c = (d1 ? w1 : 1.0 - w1) * (g.n == 2 ? (d2 ? w2 : 1.0 - w2) : 1.0) *
                               (tt ? (dt ? wt : 1.0 - wt) : 1.0);
                    if (c == 0.0) continue;
                    sum += c * at(i1 + static_cast<std::size_t>(d1), i2 + static_cast<std::size_t>(d2),
                                  k + static_cast<std::size_t>(dt));
                }
        return sum;
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : values_) m = std::max(m, std::abs(v));
        return m;
    }

private:
    std::shared_ptr<const HalfSpaceGrid> grid_;
    std::vector<double> values_;
};

/// Thin restriction U(x, 0, t).
inline ThinField thin_trace(const ScalarField& U) {
    ThinField out(U.grid_ptr());
    const auto& g = U.grid();
    std::size_t n2 = g.n == 2 ? g.nx() : 1;
    for (std::size_t i1 = 0; i1 < g.nx(); ++i1)
        for (std::size_t i2 = 0; i2 < n2; ++i2)
            for (std::size_t k = 0; k < g.nt(); ++k) out.at(i1, i2, k) = U.at(i1, i2, 0, k);
    return out;
}

enum class RegionKind { half_ball, thin_ball, cylinder, thin_cylinder, time_slice };

inline const char* to_string(RegionKind k) {
    switch (k) {
        case RegionKind::half_ball: return "half_ball";
        case RegionKind::thin_ball: return "thin_ball";
        case RegionKind::cylinder: return "cylinder";
        case RegionKind::thin_cylinder: return "thin_cylinder";
        case RegionKind::time_slice: return "time_slice";
    }
    return "unknown";
}

/// Balls are centered on the thin set; cylinders extend forward in time over [t0, t0 + r^2].
struct Region {
    RegionKind kind = RegionKind::half_ball;
    double radius = 1.0;
    std::array<double, 2> center{0.0, 0.0};
    double t0 = 0.0;

    static Region half_ball(double r, double t0 = 0.0) { return {RegionKind::half_ball, r, {0, 0}, t0}; }
    static Region thin_ball(double r, double t0 = 0.0) { return {RegionKind::thin_ball, r, {0, 0}, t0}; }
    static Region cylinder(double r, double t0 = 0.0) { return {RegionKind::cylinder, r, {0, 0}, t0}; }
    static Region thin_cylinder(double r, double t0 = 0.0) { return {RegionKind::thin_cylinder, r, {0, 0}, t0}; }
    static Region time_slice(double t0) { return {RegionKind::time_slice, 1.0, {0, 0}, t0}; }
};

/// Integrand selection: field^power, times y^a when weighted.
struct Integrand {
    int power = 2;
    bool weighted = true;
};

struct QuadratureOptions {
    std::size_t radial_panels = 4;
    std::size_t radial_order = 16;
    std::size_t elevation_order = 24;
    std::size_t azimuth_points = 64;
    std::size_t time_panels = 8;
    std::size_t time_order = 8;
};

/// Spatial cubature: offsets relative to the center plus weights.
struct Cubature {
    std::vector<std::array<double, 3>> offsets;  // (x1, x2, y)
    std::vector<double> weights;
};

namespace detail {

inline Rule radial_rule(double R, double power, const QuadratureOptions& opt) {
    Rule r;
    const std::size_t P = std::max<std::size_t>(1, opt.radial_panels);
    const double h = R / static_cast<double>(P);
    Rule first = gauss_power_on(h, power, opt.radial_order);
    r = first;
    for (std::size_t p = 1; p < P; ++p) {
        Rule panel = gauss_legendre_on(h * static_cast<double>(p), h * static_cast<double>(p + 1), opt.radial_order);
        for (std::size_t i = 0; i < panel.size(); ++i) {
            r.nodes.push_back(panel.nodes[i]);
            r.weights.push_back(panel.weights[i] * std::pow(panel.nodes[i], power));
        }
    }
    return r;
}

// Rule on (0, pi/2] in the elevation angle chi for sin^a(chi) * cos^m(chi).
inline Rule elevation_rule(double a, int cos_power, std::size_t order) {
    const double half_pi = 0.5 * std::numbers::pi;
    Rule base = gauss_power_on(half_pi, a, order);
    for (std::size_t i = 0; i < base.size(); ++i) {
        double c = base.nodes[i];
        base.weights[i] *= std::pow(std::sin(c) / c, a) * std::pow(std::cos(c), cos_power);
    }
    return base;
}

}  // namespace detail

/// Cubature for \int_{B_R^+} f(X) y^a dX (weighted) or dX (a = 0 passed).
inline Cubature half_ball_cubature(int n, double a, double R, const QuadratureOptions& opt = {}) {
    Cubature c;
    Rule rad = detail::radial_rule(R, n + a, opt);
    if (n == 1) {
        Rule el = detail::elevation_rule(a, 0, opt.elevation_order);
        for (std::size_t i = 0; i < rad.size(); ++i)
            for (std::size_t m = 0; m < el.size(); ++m) {
                double rho = rad.nodes[i], chi = el.nodes[m];
                double w = rad.weights[i] * el.weights[m];
                double dx = rho * std::cos(chi), y = rho * std::sin(chi);
                c.offsets.push_back({dx, 0.0, y});
                c.weights.push_back(w);
                c.offsets.push_back({-dx, 0.0, y});
                c.weights.push_back(w);
            }
    } else {
        Rule el = detail::elevation_rule(a, 1, opt.elevation_order);
        const std::size_t A = opt.azimuth_points;
        const double dth = 2.0 * std::numbers::pi / static_cast<double>(A);
        for (std::size_t i = 0; i < rad.size(); ++i)
            for (std::size_t m = 0; m < el.size(); ++m)
                for (std::size_t q = 0; q < A; ++q) {
                    double rho = rad.nodes[i], chi = el.nodes[m], th = dth * (static_cast<double>(q) + 0.5);
                    double h = rho * std::cos(chi);
                    c.offsets.push_back({h * std::cos(th), h * std::sin(th), rho * std::sin(chi)});
                    c.weights.push_back(rad.weights[i] * el.weights[m] * dth);
                }
    }
    return c;
}

/// Cubature for \int_{B_R} f(x) dx on the thin set.
inline Cubature thin_ball_cubature(int n, double R, const QuadratureOptions& opt = {}) {
    Cubature c;
    if (n == 1) {
        std::vector<double> br;
        const std::size_t P = 2 * std::max<std::size_t>(1, opt.radial_panels);
        for (std::size_t p = 0; p <= P; ++p) br.push_back(-R + 2.0 * R * static_cast<double>(p) / static_cast<double>(P));
        Rule r = composite_gauss_legendre(br, opt.radial_order);
        for (std::size_t i = 0; i < r.size(); ++i) {
            c.offsets.push_back({r.nodes[i], 0.0, 0.0});
            c.weights.push_back(r.weights[i]);
        }
    } else {
        Rule rad = detail::radial_rule(R, 1.0, opt);
        const std::size_t A = opt.azimuth_points;
        const double dth = 2.0 * std::numbers::pi / static_cast<double>(A);
        for (std::size_t i = 0; i < rad.size(); ++i)
            for (std::size_t q = 0; q < A; ++q) {
                double th = dth * (static_cast<double>(q) + 0.5);
                c.offsets.push_back({rad.nodes[i] * std::cos(th), rad.nodes[i] * std::sin(th), 0.0});
                c.weights.push_back(rad.weights[i] * dth);
            }
    }
    return c;
}

namespace detail {

template <class F>
concept HasTimeBreakpoints = requires(const F& f) {
    { f.time_breakpoints() } -> std::convertible_to<const std::vector<double>&>;
};

template <class F>
Rule time_rule(const F& f, double t0, double t1, const QuadratureOptions& opt) {
    if constexpr (HasTimeBreakpoints<F>) {
        const auto& tb = f.time_breakpoints();
        std::vector<double> br{t0};
        for (double v : tb)
            if (v > t0 && v < t1) br.push_back(v);
        br.push_back(t1);
        return composite_gauss_legendre(br, 3);
    } else {
        std::vector<double> br;
        const std::size_t P = std::max<std::size_t>(1, opt.time_panels);
        for (std::size_t p = 0; p <= P; ++p) br.push_back(t0 + (t1 - t0) * static_cast<double>(p) / static_cast<double>(P));
        return composite_gauss_legendre(br, opt.time_order);
    }
}

inline double apply_power(double v, int power) { return power == 1 ? v : v * v; }

}  // namespace detail

/// Quadrature of field^power (times y^a when weighted) over a region. The field is any
/// callable double(const SpaceTimePoint&); n and a describe the geometry and weight.
template <class F>
double weighted_integral(const F& field, const Region& region, int n, double a, Integrand what = {},
                         const QuadratureOptions& opt = {}) {
    if (n != 1 && n != 2) throw std::invalid_argument("weighted_integral: n must be 1 or 2");
    if (what.power != 1 && what.power != 2) throw std::invalid_argument("weighted_integral: power must be 1 or 2");
    if (!(region.radius > 0.0)) throw std::invalid_argument("weighted_integral: radius must be positive");
    const double wa = what.weighted ? a : 0.0;
    auto spatial = [&](const Cubature& cub, double t) {
        double sum = 0.0;
        for (std::size_t i = 0; i < cub.weights.size(); ++i) {
            SpaceTimePoint p;
            p.x = {region.center[0] + cub.offsets[i][0], region.center[1] + cub.offsets[i][1]};
            p.y = cub.offsets[i][2];
            p.t = t;
            double v = field(p);
            if (std::isnan(v)) throw std::domain_error("weighted_integral: NaN in field");
            sum += cub.weights[i] * detail::apply_power(v, what.power);
        }
        return sum;
    };
    switch (region.kind) {
        case RegionKind::half_ball:
            return spatial(half_ball_cubature(n, wa, region.radius, opt), region.t0);
        case RegionKind::thin_ball:
            return spatial(thin_ball_cubature(n, region.radius, opt), region.t0);
        case RegionKind::cylinder:
        case RegionKind::thin_cylinder: {
            Cubature cub = region.kind == RegionKind::cylinder ? half_ball_cubature(n, wa, region.radius, opt)
                                                               : thin_ball_cubature(n, region.radius, opt);
            Rule tr = detail::time_rule(field, region.t0, region.t0 + region.radius * region.radius, opt);
            double sum = 0.0;
            for (std::size_t k = 0; k < tr.size(); ++k) sum += tr.weights[k] * spatial(cub, tr.nodes[k]);
            return sum;
        }
        case RegionKind::time_slice:
            throw std::invalid_argument("weighted_integral: time_slice requires a ScalarField");
    }
    return 0.0;
}

/// Integral over the whole grid slice at time index k: piecewise-linear data in y integrated
/// exactly against y^a on every cell, trapezoidal in x.
inline double grid_slice_integral(const ScalarField& U, std::size_t k, Integrand what = {}) {
    const auto& g = U.grid();
    const double a = what.weighted ? U.weight_exponent() : 0.0;
    const std::size_t M = g.ny();
    std::vector<double> lo(M, 0.0), hi(M, 0.0);  // weights for left/right node of each cell
    for (std::size_t j = 0; j + 1 < M; ++j) {
        double y0 = g.y[j], y1 = g.y[j + 1], h = y1 - y0;
        double m0 = (std::pow(y1, 1 + a) - std::pow(y0, 1 + a)) / (1 + a);
        double m1 = (std::pow(y1, 2 + a) - std::pow(y0, 2 + a)) / (2 + a);
        double B = (m1 - y0 * m0) / h;
        lo[j] += m0 - B;
        hi[j + 1] += B;
    }
    std::vector<double> wy(M);
    for (std::size_t j = 0; j < M; ++j) wy[j] = lo[j] + hi[j];
    std::vector<double> wx(g.nx(), 0.0);
    for (std::size_t i = 0; i + 1 < g.nx(); ++i) {
        double h = g.x[i + 1] - g.x[i];
        wx[i] += 0.5 * h;
        wx[i + 1] += 0.5 * h;
    }
    double sum = 0.0;
    std::size_t n2 = g.n == 2 ? g.nx() : 1;
    for (std::size_t i1 = 0; i1 < g.nx(); ++i1)
        for (std::size_t i2 = 0; i2 < n2; ++i2) {
            double w = wx[i1] * (g.n == 2 ? wx[i2] : 1.0);
            for (std::size_t j = 0; j < M; ++j) {
                double v = U.at(i1, i2, j, k);
                if (std::isnan(v)) throw std::domain_error("grid_slice_integral: NaN in field");
                sum += w * wy[j] * detail::apply_power(v, what.power);
            }
        }
    return sum;
}

/// Region integral of a ScalarField with extent and finiteness checks.
inline double weighted_integral(const ScalarField& U, const Region& region, Integrand what = {},
                                const QuadratureOptions& opt = {}) {
    const auto& g = U.grid();
    if (!U.all_finite()) throw std::domain_error("weighted_integral: NaN in field");
    if (region.kind == RegionKind::time_slice) {
        auto it = std::lower_bound(g.t.begin(), g.t.end(), region.t0 - 1e-12);
        if (it == g.t.end() || std::abs(*it - region.t0) > 1e-12)
            throw std::out_of_range("weighted_integral: time slice not on grid");
        return grid_slice_integral(U, static_cast<std::size_t>(it - g.t.begin()), what);
    }
    const double tol = 1e-12 * g.tangential_extent;
    for (int d = 0; d < g.n; ++d)
        if (std::abs(region.center[static_cast<std::size_t>(d)]) + region.radius > g.tangential_extent + tol)
            throw std::out_of_range("weighted_integral: region exceeds tangential extent");
    const bool thick = region.kind == RegionKind::half_ball || region.kind == RegionKind::cylinder;
    if (thick && region.radius > g.extension_extent() + tol)
        throw std::out_of_range("weighted_integral: region exceeds extension extent");
    const bool timed = region.kind == RegionKind::cylinder || region.kind == RegionKind::thin_cylinder;
    const double t1 = region.t0 + (timed ? region.radius * region.radius : 0.0);
    if (region.t0 < g.t.front() - 1e-12 || t1 > g.t.back() + 1e-12)
        throw std::out_of_range("weighted_integral: region exceeds time range");
    return weighted_integral(U, region, g.n, U.weight_exponent(), what, opt);
}

/// Components in the order x1, (x2), y.
using VectorField = std::vector<ScalarField>;

namespace detail {

// Second-order derivative weights at node i of a nonuniform 1D grid.
inline std::array<double, 3> derivative_stencil(const std::vector<double>& z, std::size_t i, std::size_t& start) {
    const std::size_t N = z.size();
    if (i == 0) {
        double h1 = z[1] - z[0], h2 = z[2] - z[1];
        start = 0;
        return {-(2 * h1 + h2) / (h1 * (h1 + h2)), (h1 + h2) / (h1 * h2), -h1 / (h2 * (h1 + h2))};
    }
    if (i == N - 1) {
        double h1 = z[N - 2] - z[N - 3], h2 = z[N - 1] - z[N - 2];
        start = N - 3;
        return {h2 / (h1 * (h1 + h2)), -(h1 + h2) / (h1 * h2), (2 * h2 + h1) / (h2 * (h1 + h2))};
    }
    double h1 = z[i] - z[i - 1], h2 = z[i + 1] - z[i];
    start = i - 1;
    return {-h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2))};
}

// Derivative along one axis (0 = x1, 1 = x2, 2 = y) of a grid field.
inline ScalarField axis_derivative(const ScalarField& U, int axis) {
    const auto& g = U.grid();
    const auto& z = axis == 2 ? g.y : g.x;
    if (z.size() < 3) throw std::invalid_argument("gradient: need >= 3 nodes per axis");
    ScalarField out(U.grid_ptr(), U.weight_exponent());
    std::size_t n2 = g.n == 2 ? g.nx() : 1;
    for (std::size_t i1 = 0; i1 < g.nx(); ++i1)
        for (std::size_t i2 = 0; i2 < n2; ++i2)
            for (std::size_t j = 0; j < g.ny(); ++j) {
                std::size_t idx = axis == 0 ? i1 : (axis == 1 ? i2 : j);
                std::size_t s0 = 0;
                auto c = derivative_stencil(z, idx, s0);
                auto value = [&](std::size_t m, std::size_t k) {
                    return axis == 0 ? U.at(m, i2, j, k) : (axis == 1 ? U.at(i1, m, j, k) : U.at(i1, i2, m, k));
                };
                for (std::size_t k = 0; k < g.nt(); ++k) {
                    // Differences against the center node: exact zero on constants.
                    const double vc = value(idx, k);
                    double d = 0.0;
                    for (std::size_t q = 0; q < 3; ++q)
                        if (s0 + q != idx) d += c[q] * (value(s0 + q, k) - vc);
                    out.at(i1, i2, j, k) = d;
                }
            }
    return out;
}

}  // namespace detail

/// Spatial gradient (x1, [x2], y), second order on nonuniform nodes.
inline VectorField gradient(const ScalarField& U) {
    VectorField out;
    for (int d = 0; d < U.grid().n; ++d) out.push_back(detail::axis_derivative(U, d));
    out.push_back(detail::axis_derivative(U, 2));
    return out;
}

/// div(y^a v) in flux form. The y-flux through the face between y_j and y_{j+1} is
/// ((y_j + y_{j+1})/2)^a times the face average of v_y; the bottom face carries
/// boundary_flux (the limit of y^a v_y at y = 0, zero by default). Tangential parts use
/// the dual-cell average of y^a times the centered difference.
inline ScalarField weighted_divergence(const VectorField& v, double a,
                                       const std::optional<ThinField>& boundary_flux = std::nullopt) {
    if (v.empty()) throw std::invalid_argument("weighted_divergence: empty vector field");
    const auto& g = v[0].grid();
    if (v.size() != static_cast<std::size_t>(g.n + 1))
        throw std::invalid_argument("weighted_divergence: component count mismatch");
    for (const auto& c : v)
        if (c.values().size() != v[0].values().size())
            throw std::invalid_argument("weighted_divergence: shape mismatch");
    if (!(a > -1.0 && a < 1.0)) throw std::invalid_argument("weighted_divergence: a must lie in (-1, 1)");
    const std::size_t M = g.ny();
    std::vector<double> face(M - 1), face_w(M - 1), lo(M), hi(M), mean_w(M);
    for (std::size_t j = 0; j + 1 < M; ++j) {
        face[j] = 0.5 * (g.y[j] + g.y[j + 1]);
        face_w[j] = std::pow(face[j], a);
    }
    for (std::size_t j = 0; j < M; ++j) {
        lo[j] = j == 0 ? 0.0 : face[j - 1];
        hi[j] = j + 1 == M ? g.y[M - 1] : face[j];
        mean_w[j] = (std::pow(hi[j], 1 + a) - std::pow(lo[j], 1 + a)) / ((1 + a) * (hi[j] - lo[j]));
    }
    ScalarField out(v[0].grid_ptr(), a);
    std::vector<ScalarField> dx;
    for (int d = 0; d < g.n; ++d) dx.push_back(detail::axis_derivative(v[static_cast<std::size_t>(d)], d));
    const ScalarField& vy = v.back();
    std::size_t n2 = g.n == 2 ? g.nx() : 1;
    for (std::size_t i1 = 0; i1 < g.nx(); ++i1)
        for (std::size_t i2 = 0; i2 < n2; ++i2)
            for (std::size_t k = 0; k < g.nt(); ++k)
                for (std::size_t j = 0; j < M; ++j) {
                    double fup = j + 1 < M ? face_w[j] * 0.5 * (vy.at(i1, i2, j, k) + vy.at(i1, i2, j + 1, k))
                                           : std::pow(g.y[M - 1], a) * vy.at(i1, i2, j, k);
                    double fdn;
                    if (j == 0)
                        fdn = boundary_flux ? boundary_flux->at(i1, i2, k) : 0.0;
                    else
                        fdn = face_w[j - 1] * 0.5 * (vy.at(i1, i2, j - 1, k) + vy.at(i1, i2, j, k));
                    double div = (fup - fdn) / (hi[j] - lo[j]);
                    for (int d = 0; d < g.n; ++d) div += mean_w[j] * dx[static_cast<std::size_t>(d)].at(i1, i2, j, k);
                    out.at(i1, i2, j, k) = div;
                }
    return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace detail {

inline void write_le_doubles(std::ostream& os, const std::vector<double>& v) {
    for (double d : v) {
        auto bits = std::bit_cast<std::uint64_t>(d);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        os.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
    }
}

inline std::vector<double> read_le_doubles(std::istream& is, std::size_t count) {
    std::vector<double> v(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t bits = 0;
        is.read(reinterpret_cast<char*>(&bits), sizeof(bits));
        if (!is) throw std::runtime_error("snapshot: truncated binary file");
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        v[i] = std::bit_cast<double>(bits);
    }
    return v;
}

}  // namespace detail

/// Writes `<base>.bin` (little-endian float64, row-major (x, y, t)) and `<base>.json`.
inline void write_snapshot(const ScalarField& U, const std::string& base) {
    const auto& g = U.grid();
    {
        std::ofstream os(base + ".bin", std::ios::binary);
        if (!os) throw std::runtime_error("snapshot: cannot open " + base + ".bin");
        detail::write_le_doubles(os, U.values());
    }
    nlohmann::json j;
    j["n"] = g.n;
    j["extents"] = {{"tangential", g.tangential_extent}, {"extension", g.extension_extent()}};
    j["grading_exponent"] = g.grading_exponent;
    j["x"] = g.x;
    j["y"] = g.y;
    j["t"] = g.t;
    j["a"] = U.weight_exponent();
    std::vector<std::size_t> shape;
    for (int d = 0; d < g.n; ++d) shape.push_back(g.nx());
    shape.push_back(g.ny());
    shape.push_back(g.nt());
    j["shape"] = shape;
    j["dtype"] = "float64";
    j["byte_order"] = "little";
    std::ofstream js(base + ".json");
    if (!js) throw std::runtime_error("snapshot: cannot open " + base + ".json");
    js << j.dump(2) << '\n';
}

inline ScalarField read_snapshot(const std::string& base) {
    std::ifstream js(base + ".json");
    if (!js) throw std::runtime_error("snapshot: missing sidecar " + base + ".json");
    nlohmann::json j = nlohmann::json::parse(js);
    auto g = std::make_shared<HalfSpaceGrid>();
    g->n = j.at("n").get<int>();
    g->tangential_extent = j.at("extents").at("tangential").get<double>();
    g->grading_exponent = j.value("grading_exponent", 1.0);
    g->x = j.at("x").get<std::vector<double>>();
    g->y = j.at("y").get<std::vector<double>>();
    g->t = j.at("t").get<std::vector<double>>();
    g->validate();
    std::ifstream is(base + ".bin", std::ios::binary);
    if (!is) throw std::runtime_error("snapshot: missing binary " + base + ".bin");
    auto values = detail::read_le_doubles(is, g->size());
    return ScalarField(g, j.at("a").get<double>(), std::move(values));
}

struct RegionIntegralRow {
    std::string region;
    double r = 0.0;
    double value = 0.0;
};

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_region_integrals_csv(const std::string& path, const std::vector<RegionIntegralRow>& rows) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << "region,r,value\n";
    for (const auto& r : rows) os << r.region << ',' << format_double(r.r) << ',' << format_double(r.value) << '\n';
}

}  // namespace quclab
