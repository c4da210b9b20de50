#pragma once

#include <cmath>

#include "expression.hpp"
#include "field.hpp"

namespace massgrid {

/// Conformally flat torus metric g = e^{2 phi} * (flat), normalized so that
/// phi vanishes identically on the flat ball B(p, r_flat).
struct ConformalMetric {
    GridPtr grid;
    ScalarField phi;
    double r_flat = 0.0;

    int n() const { return grid->n; }
    double h() const { return grid->h; }
};

/// Tolerance below which phi counts as flat on the marked ball.
inline constexpr double kFlatTol = 1e-14;

/// Build + validate a metric from a conformal-factor expression.
/// The sampled phi is normalized by subtracting phi(p) (so a globally
/// constant factor reduces to the flat torus); any residual above 1e-14 on
/// the flat ball raises FlatnessViolation.
inline ConformalMetric build_metric(const GridPtr& grid, const ExprPtr& phi_expr,
                                    double r_flat) {
    const TorusGrid& g = *grid;
    if (!(r_flat > 0.0))
        throw GeometryError("r_flat must be positive");
    if (2.0 * r_flat > 0.5 * g.L)
        throw GeometryError("flat ball too large: need 2*r_flat <= L/2");
    if (r_flat < 8.0 * g.h - 1e-12 * g.h)
        throw ResolutionError("flat ball under-resolved: need r_flat >= 8h");

    ConformalMetric m;
    m.grid = grid;
    m.phi = sample(phi_expr, grid);
    m.r_flat = r_flat;

    double c = m.phi.v[g.p];
    if (c != 0.0)
        for (double& x : m.phi.v) x -= c;

    for (std::size_t i = 0; i < g.nodes; ++i) {
        if (g.r_to_p(i) <= r_flat && std::fabs(m.phi.v[i]) > kFlatTol)
            throw FlatnessViolation("conformal factor does not vanish on the "
                                    "flat ball (|phi| = " +
                                    std::to_string(std::fabs(m.phi.v[i])) +
                                    " at r = " + std::to_string(g.r_to_p(i)) + ")");
    }
    return m;
}

/// Flat metric on the given grid (phi = 0), r_flat defaulting to L/4.
inline ConformalMetric flat_metric(const GridPtr& grid, double r_flat = 0.0) {
    if (r_flat == 0.0) r_flat = 0.25 * grid->L;
    return build_metric(grid, Expr::constant(0.0), r_flat);
}

/// Volume element e^{n phi} h^n per node.
inline ScalarField volume_element(const ConformalMetric& m) {
    const TorusGrid& g = *m.grid;
    ScalarField V(m.grid);
    double hn = std::pow(g.h, g.n);
    for (std::size_t i = 0; i < g.nodes; ++i)
        V.v[i] = (m.phi.v[i] == 0.0) ? hn : std::exp(g.n * m.phi.v[i]) * hn;
    return V;
}

/// integral of `field` against the conformal volume form (fixed-order sum).
inline double integrate(const ScalarField& field, const ConformalMetric& m) {
    check_grid(field, *m.grid, "integrate");
    const TorusGrid& g = *m.grid;
    double hn = std::pow(g.h, g.n);
    double s = 0.0;
    for (std::size_t i = 0; i < g.nodes; ++i) {
        double w = (m.phi.v[i] == 0.0) ? hn : std::exp(g.n * m.phi.v[i]) * hn;
        s += field.v[i] * w;
    }
    return s;
}

/// Scalar curvature of g = e^{2 phi} xi via the conformal Laplacian law:
/// scal_g = (4(n-1)/(n-2)) * w^{-(n+2)/(n-2)} * Delta_flat w,
/// w = e^{(n-2) phi / 2}, with the flat Laplacian evaluated by the standard
/// second-order (2n+1)-point stencil (geometer's sign: Delta = -sum d^2).
/// Identically zero wherever phi vanishes on the whole stencil, so exactly
/// zero well inside the flat ball.
inline ScalarField compute_scalar_curvature(const ConformalMetric& m) {
    const TorusGrid& g = *m.grid;
    const int n = g.n;
    ScalarField w(m.grid), scal(m.grid);
    for (std::size_t i = 0; i < g.nodes; ++i)
        w.v[i] = (m.phi.v[i] == 0.0) ? 1.0 : std::exp(0.5 * (n - 2) * m.phi.v[i]);
    double inv_h2 = 1.0 / (g.h * g.h);
    double pref = 4.0 * (n - 1) / double(n - 2);
    double expo = -double(n + 2) / double(n - 2);
    for (std::size_t i = 0; i < g.nodes; ++i) {
        double lap = 0.0;
        for (int a = 0; a < n; ++a)
            lap += 2.0 * w.v[i] - w.v[g.neighbor(i, a, +1)] - w.v[g.neighbor(i, a, -1)];
        lap *= inv_h2;
        scal.v[i] = (lap == 0.0) ? 0.0 : pref * std::pow(w.v[i], expo) * lap;
    }
    return scal;
}

/// Yamabe potential (n-2)/(4(n-1)) * scal_g, the zeroth-order term of the
/// conformal Laplacian L_g.
inline ScalarField yamabe_potential(const ConformalMetric& m) {
    ScalarField f = compute_scalar_curvature(m);
    const int n = m.grid->n;
    double c = double(n - 2) / (4.0 * (n - 1));
    for (double& x : f.v) x *= c;
    return f;
}

} // namespace massgrid
