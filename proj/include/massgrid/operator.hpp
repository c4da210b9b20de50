#pragma once

#include <array>
#include <cmath>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "metric.hpp"

namespace massgrid {

/// Number of worker threads for matvec slabs. Controlled by MASSGRID_THREADS;
/// results are bitwise identical for any thread count (gather-only matvec,
/// serial reductions everywhere else).
inline int thread_count() {
    static int cached = [] {
        if (const char* s = std::getenv("MASSGRID_THREADS")) {
            int k = std::atoi(s);
            if (k >= 1) return k;
        }
        unsigned hc = std::thread::hardware_concurrency();
        int k = hc ? int(hc) : 1;
        return k > 16 ? 16 : k;
    }();
    return cached;
}

/// Run fn(begin, end) over [0, total) split into contiguous chunks.
template <class Fn>
inline void parallel_ranges(std::size_t total, Fn&& fn) {
    int T = thread_count();
    if (T <= 1 || total < 4096) {
        fn(std::size_t{0}, total);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(T - 1);
    std::size_t chunk = (total + T - 1) / T;
    for (int t = 1; t < T; ++t) {
        std::size_t b = chunk * t, e = std::min(total, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    fn(std::size_t{0}, std::min(total, chunk));
    for (auto& th : pool) th.join();
}

/// Potential term f of P_f = Delta_g + f. Must vanish on the flat ball.
struct Potential {
    ScalarField f;
};

inline Potential build_potential(const ConformalMetric& m, const ExprPtr& f_expr) {
    Potential p{sample(f_expr, m.grid)};
    const TorusGrid& g = *m.grid;
    for (std::size_t i = 0; i < g.nodes; ++i)
        if (g.r_to_p(i) <= m.r_flat && std::fabs(p.f.v[i]) > kFlatTol)
            throw FlatnessViolation("potential does not vanish on the flat ball "
                                    "(|f| = " + std::to_string(std::fabs(p.f.v[i])) +
                                    " at r = " + std::to_string(g.r_to_p(i)) + ")");
    return p;
}

inline Potential zero_potential(const ConformalMetric& m) {
    return Potential{ScalarField(m.grid)};
}

/// Assembled discrete operator A = S + diag(V f):
///   (S u)(x)     = sum_a w[a][x](u(x)-u(x+e_a)) + w[a][x-e_a](u(x)-u(x-e_a))
///   w[a][x]      = h^{n-2} e^{(n-2)(phi(x)+phi(x+e_a))/2}   (face weight)
///   V(x)         = e^{n phi(x)} h^n                          (lumped volume)
/// A is symmetric; u^T A u discretizes int (|du|_g^2 + f u^2) dv_g.
/// An optional node mask imposes Dirichlet conditions by subspace projection:
/// inactive nodes read as 0 and receive 0.
struct OperatorSpec {
    GridPtr grid;
    std::array<std::vector<double>, kMaxDim> w; // face weights, w[a][x] for (x, x+e_a)
    std::vector<double> V;
    std::vector<double> Vf;
    std::vector<unsigned char> mask; // empty => all nodes active
    bool f_is_zero = true;

    // Fault-injection hook for the verify mutation test. When fault_skew is
    // nonzero, apply() adds an extra term on one side of the face
    // (fault_node, fault_node + e_0) only, so A loses symmetry and the
    // summation-by-parts / cut-off identities fail detectably. A symmetric
    // data mutation (w, V, Vf) could not achieve this: those identities are
    // per-face algebra and hold for arbitrary weights.
    double fault_skew = 0.0;
    std::size_t fault_node = 0;

    bool active(std::size_t i) const { return mask.empty() || mask[i]; }
    std::size_t active_count() const {
        if (mask.empty()) return grid->nodes;
        std::size_t c = 0;
        for (unsigned char m : mask) c += m;
        return c;
    }
};

inline OperatorSpec assemble(const ConformalMetric& m, const Potential& pot) {
    check_same_grid(m.phi, pot.f, "assemble");
    const TorusGrid& g = *m.grid;
    OperatorSpec op;
    op.grid = m.grid;
    const int n = g.n;
    const double hn2 = std::pow(g.h, n - 2);
    const double hn = std::pow(g.h, n);
    const double half_nm2 = 0.5 * (n - 2);

    op.V.resize(g.nodes);
    op.Vf.resize(g.nodes);
    op.f_is_zero = true;
    for (std::size_t i = 0; i < g.nodes; ++i) {
        op.V[i] = (m.phi.v[i] == 0.0) ? hn : std::exp(n * m.phi.v[i]) * hn;
        op.Vf[i] = op.V[i] * pot.f.v[i];
        if (pot.f.v[i] != 0.0) op.f_is_zero = false;
    }
    for (int a = 0; a < n; ++a) {
        op.w[a].resize(g.nodes);
        for (std::size_t i = 0; i < g.nodes; ++i) {
            double s = m.phi.v[i] + m.phi.v[g.neighbor(i, a, +1)];
            op.w[a][i] = (s == 0.0) ? hn2 : hn2 * std::exp(half_nm2 * s);
        }
    }
    return op;
}

inline OperatorSpec assemble(const ConformalMetric& m) {
    return assemble(m, zero_potential(m));
}

/// y = A x (gather form; deterministic under any thread count).
inline void apply(const OperatorSpec& op, const std::vector<double>& x,
                  std::vector<double>& y) {
    const TorusGrid& g = *op.grid;
    if (x.size() != g.nodes) throw GridMismatch("apply: vector size != node count");
    y.resize(g.nodes);
    const int n = g.n;
    const bool masked = !op.mask.empty();
    parallel_ranges(g.nodes, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            if (masked && !op.mask[i]) { y[i] = 0.0; continue; }
            double acc = op.Vf[i] * x[i];
            for (int a = 0; a < n; ++a) {
                std::size_t ip = g.neighbor(i, a, +1);
                std::size_t im = g.neighbor(i, a, -1);
                double xp = (masked && !op.mask[ip]) ? 0.0 : x[ip];
                double xm = (masked && !op.mask[im]) ? 0.0 : x[im];
                acc += op.w[a][i] * (x[i] - xp) + op.w[a][im] * (x[i] - xm);
            }
            y[i] = acc;
        }
    });
    if (op.fault_skew != 0.0) {
        std::size_t q = op.fault_node, j = g.neighbor(q, 0, +1);
        if (!masked || (op.mask[q] && op.mask[j]))
            y[q] += op.fault_skew * op.w[0][q] * (x[q] - x[j]);
    }
}

/// Fixed-order serial dot product (reproducibility contract).
inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// Quadratic form u^T A v expanded over faces:
///   sum_faces w (u(x)-u(y))(v(x)-v(y)) + sum_x V f u v.
/// Serial, fixed order; agrees with dot(u, A v) to rounding.
inline double energy(const OperatorSpec& op, const std::vector<double>& u,
                     const std::vector<double>& v) {
    const TorusGrid& g = *op.grid;
    const bool masked = !op.mask.empty();
    auto val = [&](const std::vector<double>& z, std::size_t i) {
        return (masked && !op.mask[i]) ? 0.0 : z[i];
    };
    double s = 0.0;
    for (std::size_t i = 0; i < g.nodes; ++i) {
        for (int a = 0; a < g.n; ++a) {
            std::size_t j = g.neighbor(i, a, +1);
            s += op.w[a][i] * (val(u, i) - val(u, j)) * (val(v, i) - val(v, j));
        }
        s += op.Vf[i] * val(u, i) * val(v, i);
    }
    return s;
}

/// Dirichlet energy of the cut-off field chi against the square of u, with the
/// face value of u^2 taken as the product of the endpoint values:
///   cutoff_energy = sum_faces w u(x) u(y) (chi(x)-chi(y))^2.
/// With this convention the discrete cut-off identity
///   (chi u)^T A (chi u) = cutoff_energy + (chi^2 u)^T A u
/// is an algebraic identity (checked by cutoff_identity_defect).
inline double cutoff_energy(const OperatorSpec& op, const std::vector<double>& u,
                            const std::vector<double>& chi) {
    const TorusGrid& g = *op.grid;
    double s = 0.0;
    for (std::size_t i = 0; i < g.nodes; ++i)
        for (int a = 0; a < g.n; ++a) {
            std::size_t j = g.neighbor(i, a, +1);
            double d = chi[i] - chi[j];
            s += op.w[a][i] * u[i] * u[j] * d * d;
        }
    return s;
}

/// Relative defect of the discrete cut-off identity; zero to rounding by
/// construction, and the verify fault hook breaks it detectably.
inline double cutoff_identity_defect(const OperatorSpec& op,
                                     const std::vector<double>& u,
                                     const std::vector<double>& chi) {
    const TorusGrid& g = *op.grid;
    std::vector<double> cu(g.nodes), c2u(g.nodes);
    for (std::size_t i = 0; i < g.nodes; ++i) {
        cu[i] = chi[i] * u[i];
        c2u[i] = chi[i] * chi[i] * u[i];
    }
    std::vector<double> Acu;
    apply(op, cu, Acu);
    double lhs = dot(cu, Acu);
    double rhs = cutoff_energy(op, u, chi) + energy(op, c2u, u);
    double scale = std::fabs(lhs) + std::fabs(rhs) + 1.0;
    return std::fabs(lhs - rhs) / scale;
}

/// sum_x V(x) a(x) b(x) -- L^2(dv_g) inner product of nodal fields.
inline double v_dot(const OperatorSpec& op, const std::vector<double>& a,
                    const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += op.V[i] * a[i] * b[i];
    return s;
}

} // namespace massgrid
