#pragma once

#include <array>
#include <cmath>
#include <functional>

#include "errors.hpp"

namespace massgrid {

namespace detail {

/// 16-point Gauss-Legendre nodes/weights on [-1,1], computed once by Newton
/// iteration on P_16 (accurate to machine precision; avoids long literals).
struct GaussLegendre16 {
    std::array<double, 16> x{}, w{};
    GaussLegendre16() {
        constexpr int m = 16;
        for (int k = 0; k < m / 2; ++k) {
            // Chebyshev-style initial guess, then Newton on P_m.
            double t = std::cos(M_PI * (k + 0.75) / (m + 0.5));
            for (int it = 0; it < 100; ++it) {
                double p0 = 1.0, p1 = t;
                for (int j = 2; j <= m; ++j) {
                    double p2 = ((2.0 * j - 1.0) * t * p1 - (j - 1.0) * p0) / j;
                    p0 = p1;
                    p1 = p2;
                }
                double dp = m * (t * p1 - p0) / (t * t - 1.0);
                double dt = p1 / dp;
                t -= dt;
                if (std::fabs(dt) < 1e-16) break;
            }
            double p0 = 1.0, p1 = t;
            for (int j = 2; j <= m; ++j) {
                double p2 = ((2.0 * j - 1.0) * t * p1 - (j - 1.0) * p0) / j;
                p0 = p1;
                p1 = p2;
            }
            double dp = m * (t * p1 - p0) / (t * t - 1.0);
            double wk = 2.0 / ((1.0 - t * t) * dp * dp);
            x[std::size_t(k)] = -t;
            x[std::size_t(m - 1 - k)] = t;
            w[std::size_t(k)] = wk;
            w[std::size_t(m - 1 - k)] = wk;
        }
    }
};

inline const GaussLegendre16& gl16() {
    static const GaussLegendre16 g;
    return g;
}

} // namespace detail

/// Composite 16-point Gauss-Legendre over `panels` equal subintervals.
template <class F>
double integrate_panels(F&& f, double a, double b, int panels) {
    const auto& gl = detail::gl16();
    double sum = 0.0;
    double w = (b - a) / panels;
    for (int p = 0; p < panels; ++p) {
        double lo = a + p * w;
        double mid = lo + 0.5 * w, half = 0.5 * w;
        double s = 0.0;
        for (int k = 0; k < 16; ++k)
            s += gl.w[std::size_t(k)] * f(mid + half * gl.x[std::size_t(k)]);
        sum += s * half;
    }
    return sum;
}

/// Adaptive (dyadically refined) integration to a relative tolerance.
/// Starts from `panels0` panels and doubles until two successive composite
/// rules agree to rel_tol (absolute floor `abs_floor` guards integrals ~ 0).
template <class F>
double integrate_adaptive(F&& f, double a, double b, double rel_tol = 1e-13,
                          int panels0 = 2, double abs_floor = 1e-300) {
    double prev = integrate_panels(f, a, b, panels0);
    for (int panels = panels0 * 2; panels <= (1 << 22); panels *= 2) {
        double cur = integrate_panels(f, a, b, panels);
        double scale = std::max(std::fabs(cur), abs_floor);
        if (std::fabs(cur - prev) <= rel_tol * scale) return cur;
        prev = cur;
    }
    throw NotConverged("adaptive quadrature failed to reach tolerance");
}

} // namespace massgrid
