#pragma once

#include <cmath>

namespace quclab {

/// Second-order forward-mode number along one direction: value, first and second derivative.
struct Jet2 {
    double v = 0.0, d = 0.0, dd = 0.0;

    constexpr Jet2() = default;
    constexpr Jet2(double value) : v(value) {}  // NOLINT: implicit lift of constants
    constexpr Jet2(double value, double first, double second) : v(value), d(first), dd(second) {}

    static constexpr Jet2 variable(double value) { return {value, 1.0, 0.0}; }

    Jet2& operator+=(const Jet2& o) { v += o.v; d += o.d; dd += o.dd; return *this; }
    Jet2& operator-=(const Jet2& o) { v -= o.v; d -= o.d; dd -= o.dd; return *this; }
    Jet2& operator*=(const Jet2& o) { return *this = *this * o; }
    Jet2& operator/=(const Jet2& o) { return *this = *this / o; }

    friend Jet2 operator+(Jet2 a, const Jet2& b) { return a += b; }
    friend Jet2 operator-(Jet2 a, const Jet2& b) { return a -= b; }
    friend Jet2 operator-(const Jet2& a) { return {-a.v, -a.d, -a.dd}; }
    friend Jet2 operator*(const Jet2& a, const Jet2& b) {
        return {a.v * b.v, a.d * b.v + a.v * b.d, a.dd * b.v + 2.0 * a.d * b.d + a.v * b.dd};
    }
    friend Jet2 operator/(const Jet2& a, const Jet2& b) {
        // a * (1/b), with 1/b expanded by the chain rule.
        double r = 1.0 / b.v;
        Jet2 inv{r, -b.d * r * r, (2.0 * b.d * b.d * r - b.dd) * r * r};
        return a * inv;
    }
};

// Chain rule for a scalar function with derivatives f0, f1, f2 at the value.
inline Jet2 chain(const Jet2& a, double f0, double f1, double f2) {
    return {f0, f1 * a.d, f2 * a.d * a.d + f1 * a.dd};
}

inline Jet2 exp(const Jet2& a) {
    double e = std::exp(a.v);
    return chain(a, e, e, e);
}
inline Jet2 sin(const Jet2& a) {
    double s = std::sin(a.v), c = std::cos(a.v);
    return chain(a, s, c, -s);
}
inline Jet2 cos(const Jet2& a) {
    double s = std::sin(a.v), c = std::cos(a.v);
    return chain(a, c, -s, -c);
}
inline Jet2 log(const Jet2& a) { return chain(a, std::log(a.v), 1.0 / a.v, -1.0 / (a.v * a.v)); }
inline Jet2 pow(const Jet2& a, double p) {
    if (p == 0.0) return Jet2(1.0);
    double f0 = std::pow(a.v, p);
    double f1 = p == 1.0 ? 1.0 : p * std::pow(a.v, p - 1.0);
    double f2 = (p == 1.0) ? 0.0 : (p == 2.0 ? 2.0 : p * (p - 1.0) * std::pow(a.v, p - 2.0));
    return chain(a, f0, f1, f2);
}
inline Jet2 sqrt(const Jet2& a) { return pow(a, 0.5); }

}  // namespace quclab
