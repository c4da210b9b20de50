#pragma once

#include <cmath>
#include <limits>
#include <ostream>

#include "operator.hpp"
#include "quadrature.hpp"
#include "smoothstep.hpp"

namespace massgrid {

/// Surface area of the unit (n-1)-sphere, 2 pi^{n/2} / Gamma(n/2).
inline double sphere_area(int n) {
    return 2.0 * std::pow(M_PI, 0.5 * n) / std::tgamma(0.5 * n);
}

/// Green-function normalization kappa_n = 1 / ((n-2) omega_{n-1}), so that
/// Delta (kappa_n r^{2-n}) = dirac_0 in the flat distributional sense.
inline double green_normalization(int n) {
    return 1.0 / ((n - 2) * sphere_area(n));
}

/// Radial cut-off psi: kappa_n on [0, delta], quintic smoothstep descent to 0
/// on [delta, 2 delta], 0 beyond. C^2 with psi' = psi'' = 0 at both ends.
struct CutoffProfile {
    double delta;
    double kappa;

    double psi(double r) const {
        if (r <= delta) return kappa;
        if (r >= 2.0 * delta) return 0.0;
        return kappa * (1.0 - smoothstep((r - delta) / delta));
    }
    double dpsi(double r) const {
        if (r <= delta || r >= 2.0 * delta) return 0.0;
        return -kappa * smoothstep_d1((r - delta) / delta) / delta;
    }
    double d2psi(double r) const {
        if (r <= delta || r >= 2.0 * delta) return 0.0;
        return -kappa * smoothstep_d2((r - delta) / delta) / (delta * delta);
    }
};

/// Singular comparison kernel eta = psi(r) r^{2-n} at the marked point, and
/// the analytic source F_eta = Delta_flat eta (supported on the annulus
/// delta < r < 2 delta, zero at p by convention):
///   F_eta(r) = -psi''(r) r^{2-n} + (n-3) psi'(r) r^{1-n}.
/// c0 = int_M eta F_eta dv = omega_{n-1} int_delta^{2delta} psi F_eta r dr.
struct SingularKernel {
    GridPtr grid;
    CutoffProfile cut;
    double omega = 0.0;  // sphere area omega_{n-1}
    double c0 = 0.0;
    ScalarField r;       // torus distance to p
    ScalarField eta;     // NaN at p itself (never consumed by the solvers)
    ScalarField F_eta;   // 0 at p

    SingularKernel(GridPtr g) : grid(g), cut{0.0, 0.0}, r(g), eta(g), F_eta(g) {}
};

inline double F_eta_radial(const CutoffProfile& c, int n, double rr) {
    if (rr <= c.delta || rr >= 2.0 * c.delta) return 0.0;
    return -c.d2psi(rr) * std::pow(rr, 2 - n) + (n - 3) * c.dpsi(rr) * std::pow(rr, 1 - n);
}

/// c0 by direct quadrature of the defining pairing.
inline double c0_pairing(const CutoffProfile& c, int n) {
    double w = sphere_area(n);
    return w * integrate_adaptive(
                   [&](double rr) { return c.psi(rr) * F_eta_radial(c, n, rr) * rr; },
                   c.delta, 2.0 * c.delta);
}

/// c0 by the integration-by-parts route (independent oracle):
///   c0 = omega int_delta^{2delta} k'(r)^2 r^{n-1} dr - kappa_n delta^{2-n},
/// with k(r) = psi(r) r^{2-n}.
inline double c0_flux(const CutoffProfile& c, int n) {
    double w = sphere_area(n);
    auto kprime = [&](double rr) {
        return c.dpsi(rr) * std::pow(rr, 2 - n) +
               (2 - n) * c.psi(rr) * std::pow(rr, 1 - n);
    };
    double grad = w * integrate_adaptive(
                          [&](double rr) {
                              double kp = kprime(rr);
                              return kp * kp * std::pow(rr, n - 1);
                          },
                          c.delta, 2.0 * c.delta);
    return grad - c.kappa * std::pow(c.delta, 2 - n);
}

/// Build the kernel fields on a grid. Requires the cut-off to fit inside the
/// flat ball (2 delta <= r_flat) and to be resolved (2 delta >= 8h).
inline SingularKernel build_kernel(const ConformalMetric& m, double delta) {
    const TorusGrid& g = *m.grid;
    if (!(delta > 0.0)) throw GeometryError("delta must be positive");
    if (2.0 * delta > m.r_flat + 1e-12 * m.r_flat)
        throw GeometryError("cut-off support exceeds the flat ball: need 2*delta <= r_flat");
    if (2.0 * delta < 8.0 * g.h - 1e-12 * g.h)
        throw ResolutionError("cut-off annulus under-resolved: need 2*delta >= 8h");

    SingularKernel k(m.grid);
    k.cut = CutoffProfile{delta, green_normalization(g.n)};
    k.omega = sphere_area(g.n);
    const int n = g.n;
    for (std::size_t i = 0; i < g.nodes; ++i) {
        double rr = g.r_to_p(i);
        k.r.v[i] = rr;
        if (i == g.p) {
            k.eta.v[i] = std::numeric_limits<double>::quiet_NaN();
            k.F_eta.v[i] = 0.0;
        } else {
            k.eta.v[i] = k.cut.psi(rr) * std::pow(rr, 2 - n);
            k.F_eta.v[i] = F_eta_radial(k.cut, n, rr);
        }
    }
    k.c0 = c0_pairing(k.cut, n);
    return k;
}

/// Debug CSV of the kernel fields, one row per node.
inline void export_kernel_csv(const SingularKernel& k, std::ostream& os) {
    os << "node_index,r,eta,F_eta\n";
    for (std::size_t i = 0; i < k.grid->nodes; ++i)
        os << i << ',' << k.r.v[i] << ',' << k.eta.v[i] << ',' << k.F_eta.v[i] << '\n';
}

} // namespace massgrid
