#pragma once

#include <string>
#include <utility>

#include "kernel.hpp"
#include "solver.hpp"

namespace massgrid {

/// Certificate that the operator pencil (A, V) is positive definite on its
/// active subspace. Two routes:
///  - "sign": f >= 0 with either some f > 0 or a proper Dirichlet mask;
///    positivity is then exact (energy = sum of squares with a rigid mode
///    killed), lambda_min is not computed.
///  - "spectral": eigensolve; certified only when lambda_min exceeds 3x the
///    rigorous perturbation bound |Av - lambda V v| / sqrt(min V).
struct PositivityCertificate {
    bool certified = false;
    double lambda_min = std::numeric_limits<double>::quiet_NaN();
    double error_bound = 0.0;
    std::string route;
};

inline PositivityCertificate certify_positive(const OperatorSpec& op,
                                              double eigen_tol = 1e-9,
                                              std::uint64_t seed = 42) {
    const TorusGrid& g = *op.grid;
    bool f_nonneg = true, f_pos = false;
    for (std::size_t i = 0; i < g.nodes; ++i) {
        if (!op.active(i)) continue;
        if (op.Vf[i] < 0.0) f_nonneg = false;
        if (op.Vf[i] > 0.0) f_pos = true;
    }
    std::size_t act = op.active_count();
    bool proper_mask = !op.mask.empty() && act < g.nodes;
    if (act == 0) throw EmptyDomain("certify_positive: no active nodes");

    PositivityCertificate cert;
    if (f_nonneg && (f_pos || proper_mask)) {
        cert.certified = true;
        cert.route = "sign";
        return cert;
    }
    if (op.f_is_zero && !proper_mask)
        throw NotPositive("operator has the constant kernel (f = 0 on the closed torus); "
                          "no Green function exists");

    EigenReport e = smallest_eigenvalue(op, eigen_tol, 20000, seed);
    cert.route = "spectral";
    cert.lambda_min = e.lambda;
    cert.error_bound = e.residual;
    if (!(e.lambda > 0.0) || e.lambda <= 3.0 * cert.error_bound)
        throw NotPositive("operator not certified positive: lambda_min = " +
                          std::to_string(e.lambda) + " (error bound " +
                          std::to_string(cert.error_bound) + ")");
    cert.certified = true;
    return cert;
}

/// Result of one mass computation.
struct MassResult {
    double mass = 0.0;
    std::string method; // "direct" | "variational" | "dirichlet"
    double c0 = 0.0;
    SolveReport solve;
    PositivityCertificate cert;
    int n = 0, N = 0;
    double L = 0.0, delta = 0.0;
    // variational extras
    double mass_from_j = std::numeric_limits<double>::quiet_NaN(); // -min J
    bool j_monotone = true;
};

inline void fill_meta(MassResult& r, const SingularKernel& k) {
    r.c0 = k.c0;
    r.n = k.grid->n;
    r.N = k.grid->N;
    r.L = k.grid->L;
    r.delta = k.cut.delta;
}

/// Right-hand side of the defining equation A u = -V F_eta.
inline std::vector<double> kernel_rhs(const OperatorSpec& op, const SingularKernel& k) {
    if (!op.grid->same_as(*k.grid))
        throw GridMismatch("kernel_rhs: operator and kernel grids differ");
    std::vector<double> b(op.grid->nodes);
    for (std::size_t i = 0; i < b.size(); ++i)
        b[i] = op.active(i) ? -op.V[i] * k.F_eta.v[i] : 0.0;
    return b;
}

/// Solve for the regular part u of G = eta r^{2-n} + u.
inline std::vector<double> regular_part(const OperatorSpec& op, const SingularKernel& k,
                                        double tol, SolveReport& rep) {
    std::vector<double> b = kernel_rhs(op, k), u;
    rep = pcg(op, b, u, tol);
    return u;
}

/// Direct path: solve P_f u = -F_eta, mass = u(p).
inline MassResult mass_direct(const OperatorSpec& op, const SingularKernel& k,
                              const PositivityCertificate& cert, double tol = 1e-10) {
    if (!cert.certified)
        throw NotPositive("mass_direct: positivity certificate missing or not certified");
    MassResult r;
    r.method = "direct";
    r.cert = cert;
    fill_meta(r, k);
    std::vector<double> u = regular_part(op, k, tol, r.solve);
    r.mass = u[op.grid->p];
    return r;
}

inline MassResult mass_direct(const OperatorSpec& op, const SingularKernel& k,
                              double tol = 1e-10) {
    return mass_direct(op, k, certify_positive(op), tol);
}

/// J_f(u) = c0 + 2 u.(V F_eta) + u.A u  (the variational functional whose
/// infimum over smooth u is -m_f in the continuum).
inline double evaluate_J(const OperatorSpec& op, const SingularKernel& k,
                         const std::vector<double>& u) {
    if (u.size() != op.grid->nodes) throw GridMismatch("evaluate_J: field size");
    double lin = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i)
        if (op.active(i)) lin += u[i] * op.V[i] * k.F_eta.v[i];
    return k.c0 + 2.0 * lin + energy(op, u, u);
}

inline double evaluate_J(const OperatorSpec& op, const SingularKernel& k,
                         const ScalarField& u) {
    check_grid(u, *op.grid, "evaluate_J");
    return evaluate_J(op, k, u.v);
}

/// I_f(u) on the admissible class {u(p) = 0}, where I and J coincide.
inline double evaluate_I(const OperatorSpec& op, const SingularKernel& k,
                         const std::vector<double>& u) {
    if (u.size() != op.grid->nodes) throw GridMismatch("evaluate_I: field size");
    if (std::fabs(u[op.grid->p]) > 1e-12)
        throw CenterNotZero("evaluate_I requires u(p) = 0, got " +
                            std::to_string(u[op.grid->p]));
    return evaluate_J(op, k, u);
}

inline double evaluate_I(const OperatorSpec& op, const SingularKernel& k,
                         const ScalarField& u) {
    check_grid(u, *op.grid, "evaluate_I");
    return evaluate_I(op, k, u.v);
}

/// Variational path: minimize the quadratic J_f by conjugate gradients on its
/// gradient system, monitoring the J-value every iterate (must be
/// non-increasing). The reported mass is the minimizer's value at p -- the
/// same linear system as mass_direct, hence the dual-path agreement oracle;
/// -min J is recorded separately in mass_from_j (it approaches the mass at the
/// consistency order of the scheme, not at solver tolerance).
inline MassResult mass_variational(const OperatorSpec& op, const SingularKernel& k,
                                   const PositivityCertificate& cert, double tol = 1e-10,
                                   const std::vector<double>* guess = nullptr) {
    if (!cert.certified)
        throw NotPositive("mass_variational: positivity certificate missing or not certified");
    MassResult r;
    r.method = "variational";
    r.cert = cert;
    fill_meta(r, k);

    std::vector<double> b = kernel_rhs(op, k);
    std::vector<double> x;
    if (guess) x = *guess;
    double j_prev = std::numeric_limits<double>::infinity();
    double j_last = 0.0;
    bool monotone = true;
    auto monitor = [&](int, const std::vector<double>& cur) {
        double j = evaluate_J(op, k, cur);
        if (j > j_prev + 1e-12 * (std::fabs(j_prev) + std::fabs(k.c0) + 1.0))
            monotone = false;
        j_prev = j;
        j_last = j;
    };
    r.solve = pcg(op, b, x, tol, 0, monitor);
    r.mass = x[op.grid->p];
    r.mass_from_j = -j_last;
    r.j_monotone = monotone;
    return r;
}

inline MassResult mass_variational(const OperatorSpec& op, const SingularKernel& k,
                                   double tol = 1e-10) {
    return mass_variational(op, k, certify_positive(op), tol);
}

/// Composite Green function G = eta r^{2-n} + u, NaN at the marked node.
struct GreenFunction {
    GridPtr grid;
    ScalarField u; // regular part
    ScalarField G; // composite, NaN sentinel at p
    double mass = 0.0;
    SolveReport solve;
};

/// Assemble G and assert strict positivity at every active node != p.
inline GreenFunction green_function(const OperatorSpec& op, const SingularKernel& k,
                                    const PositivityCertificate& cert, double tol = 1e-10) {
    if (!cert.certified)
        throw NotPositive("green_function: positivity certificate missing or not certified");
    GreenFunction gf{op.grid, ScalarField(op.grid), ScalarField(op.grid), 0.0, {}};
    gf.u.v = regular_part(op, k, tol, gf.solve);
    gf.mass = gf.u.v[op.grid->p];
    const TorusGrid& g = *op.grid;
    for (std::size_t i = 0; i < g.nodes; ++i) {
        if (i == g.p) {
            gf.G.v[i] = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        gf.G.v[i] = k.eta.v[i] + gf.u.v[i];
        if (op.active(i) && !(gf.G.v[i] > 0.0))
            throw PositivityViolation("Green function nonpositive (G = " +
                                          std::to_string(gf.G.v[i]) + " at node " +
                                          std::to_string(i) + ", r = " +
                                          std::to_string(g.r_to_p(i)) + ")",
                                      i);
    }
    return gf;
}

inline GreenFunction green_function(const OperatorSpec& op, const SingularKernel& k,
                                    double tol = 1e-10) {
    return green_function(op, k, certify_positive(op), tol);
}

/// Distributional spot-check: sum_{x != p} G(x) (A phi)(x) -> phi(p) for
/// smooth test fields phi (O(h) accurate; the singular node is excluded).
inline double green_pairing(const GreenFunction& gf, const OperatorSpec& op,
                            const ScalarField& phi) {
    check_grid(phi, *op.grid, "green_pairing");
    std::vector<double> Aphi;
    apply(op, phi.v, Aphi);
    double s = 0.0;
    for (std::size_t i = 0; i < op.grid->nodes; ++i)
        if (i != op.grid->p) s += gf.G.v[i] * Aphi[i];
    return s;
}

/// Dirichlet mass on a subdomain: same solve on the restricted system.
/// The kernel support B(p, 2 delta) must stay clear of the boundary.
inline MassResult mass_dirichlet(const OperatorSpec& op, const SingularKernel& k,
                                 const DirichletDomain& dom, double tol = 1e-10) {
    OperatorSpec rop = restrict_dirichlet(op, dom, 2.0 * k.cut.delta * (1.0 - 1e-12));
    PositivityCertificate cert = certify_positive(rop);
    MassResult r;
    r.method = "dirichlet";
    r.cert = cert;
    fill_meta(r, k);
    std::vector<double> u = regular_part(rop, k, tol, r.solve);
    r.mass = u[op.grid->p];
    return r;
}

/// Quintic cut-off chi_s: 0 on B(p, s), 1 outside B(p, 2s).
inline ScalarField cutoff_chi(const GridPtr& grid, double s) {
    if (!(s > 0.0)) throw GeometryError("cutoff_chi: s must be positive");
    ScalarField chi(grid);
    for (std::size_t i = 0; i < grid->nodes; ++i)
        chi.v[i] = smoothstep(grid->r_to_p(i) / s - 1.0);
    return chi;
}

/// Deterministic random smooth field: a low-mode trigonometric polynomial
/// with coefficients drawn from the seeded generator.
inline ScalarField random_smooth_field(const GridPtr& grid, std::uint64_t seed,
                                       double amplitude = 1.0, int max_mode = 3) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> ki(-max_mode, max_mode);
    std::normal_distribution<double> coef(0.0, 1.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
    const TorusGrid& g = *grid;
    const int J = 6;
    ScalarField u(grid);
    std::array<int, kMaxDim> c{};
    for (int j = 0; j < J; ++j) {
        std::array<int, kMaxDim> k{};
        bool zero = true;
        for (int a = 0; a < g.n; ++a) {
            k[a] = ki(rng);
            if (k[a]) zero = false;
        }
        if (zero) k[0] = 1;
        double amp = amplitude * coef(rng) / J, th = phase(rng);
        double w = 2.0 * M_PI / g.N; // k . x * 2 pi / L with x = coord * h
        for (std::size_t i = 0; i < g.nodes; ++i) {
            g.coords(i, c);
            double arg = th;
            for (int a = 0; a < g.n; ++a) arg += w * k[a] * c[a];
            u.v[i] += amp * std::cos(arg);
        }
    }
    return u;
}

/// Blown-up energy identity. For a test field u with u(p) = 0 and the
/// composite Green function G of the same operator, with Phi_u = (eta + u)/G:
///   lhs = I_f(u),
///   rhs = sum over faces with both endpoints outside B(p, rho) of
///         w_face G(x) G(y) (Phi(x) - Phi(y))^2, minus the mass.
/// The face value of G^2 is the product of endpoint values (same convention
/// as the exact cut-off identity). Continuum identity: |dPhi|^2_gtilde
/// dv^gtilde = G^2 |dPhi|^2_g dv^g since 2n/(n-2) - 4/(n-2) = 2.
inline std::pair<double, double> blowup_identity_check(const OperatorSpec& op,
                                                       const SingularKernel& k,
                                                       const GreenFunction& gf,
                                                       const ScalarField& u, double rho) {
    const TorusGrid& g = *op.grid;
    check_grid(u, g, "blowup_identity_check");
    if (rho < 2.0 * g.h - 1e-12 * g.h)
        throw GeometryError("blowup_identity_check: need rho >= 2h");
    double lhs = evaluate_I(op, k, u);

    std::vector<double> Phi(g.nodes);
    for (std::size_t i = 0; i < g.nodes; ++i)
        Phi[i] = (i == g.p) ? 1.0 : (k.eta.v[i] + u.v[i]) / gf.G.v[i];
    double grad = 0.0;
    for (std::size_t i = 0; i < g.nodes; ++i) {
        if (k.r.v[i] <= rho) continue;
        for (int a = 0; a < g.n; ++a) {
            std::size_t j = g.neighbor(i, a, +1);
            if (k.r.v[j] <= rho) continue;
            double d = Phi[i] - Phi[j];
            grad += op.w[a][i] * gf.G.v[i] * gf.G.v[j] * d * d;
        }
    }
    return {lhs, grad - gf.mass};
}

/// Conformal change g' = u_conf^{4/(n-2)} g with u_conf == c on the flat
/// ball. The transported operator is the exact congruence A' = U A U
/// (U = diag(u_conf)); its potential is the discrete transport of
///   f' = c_n scal_{g'} + u_conf^{-4/(n-2)} (f - c_n scal_g),
/// and the kernel source transports identically (V' F'_eta = V F_eta).
/// Consequence: m' = c^{-2} m up to solver tolerance, same sign in particular.
struct ConformalRelation {
    double mass = 0.0;        // m(g)
    double mass_prime = 0.0;  // m(g')
    double ratio = 0.0;       // m'/m
    double c = 1.0;           // value of u_conf near p
    double expected_ratio = 1.0; // c^{-2}
    double congruence_defect = 0.0; // |A'x - U A U x| / |U A U x|, random x
    SolveReport solve_base, solve_prime;
};

inline ConformalRelation conformal_mass_relation(const ConformalMetric& m,
                                                 const Potential& pot,
                                                 const ExprPtr& u_conf_expr, double delta,
                                                 double tol = 1e-10) {
    const TorusGrid& g = *m.grid;
    OperatorSpec A = assemble(m, pot);
    SingularKernel K = build_kernel(m, delta);
    PositivityCertificate cert = certify_positive(A);

    ConformalRelation rel;
    {
        MassResult base = mass_direct(A, K, cert, tol);
        rel.mass = base.mass;
        rel.solve_base = base.solve;
    }

    ScalarField uc = sample(u_conf_expr, m.grid);
    double c = uc.v[g.p];
    if (!(c > 0.0)) throw GeometryError("conformal factor must be positive at p");
    for (std::size_t i = 0; i < g.nodes; ++i) {
        if (!(uc.v[i] > 0.0))
            throw GeometryError("conformal factor must be positive everywhere (node " +
                                std::to_string(i) + ")");
        if (g.r_to_p(i) <= m.r_flat && std::fabs(uc.v[i] - c) > 1e-12 * std::max(1.0, c))
            throw FlatnessViolation("conformal factor not constant on the flat ball");
    }
    rel.c = c;
    rel.expected_ratio = 1.0 / (c * c);

    // A' = U A U assembled in place: w' = w u_x u_y,
    // (V f')_x = u_x (S u)_x + u_x^2 (V f)_x, V' = V u^{2n/(n-2)}.
    OperatorSpec A2 = A;
    std::vector<double> Au;
    apply(A, uc.v, Au);
    double vexp = 2.0 * g.n / double(g.n - 2);
    for (std::size_t i = 0; i < g.nodes; ++i) {
        double Su = Au[i] - A.Vf[i] * uc.v[i];
        A2.Vf[i] = uc.v[i] * Su + uc.v[i] * uc.v[i] * A.Vf[i];
        A2.V[i] = A.V[i] * std::pow(uc.v[i], vexp);
        for (int a = 0; a < g.n; ++a)
            A2.w[a][i] = A.w[a][i] * uc.v[i] * uc.v[g.neighbor(i, a, +1)];
    }
    A2.f_is_zero = true;
    for (std::size_t i = 0; i < g.nodes; ++i)
        if (A2.Vf[i] != 0.0) { A2.f_is_zero = false; break; }

    { // congruence check on a random vector
        ScalarField x = random_smooth_field(m.grid, 1234, 1.0);
        std::vector<double> ux(g.nodes), y2(g.nodes), y1;
        for (std::size_t i = 0; i < g.nodes; ++i) ux[i] = uc.v[i] * x.v[i];
        apply(A, ux, y2);
        for (std::size_t i = 0; i < g.nodes; ++i) y2[i] *= uc.v[i];
        apply(A2, x.v, y1);
        double num = 0.0;
        for (std::size_t i = 0; i < g.nodes; ++i) {
            double d = y1[i] - y2[i];
            num += d * d;
        }
        rel.congruence_defect = std::sqrt(num) / std::max(norm2(y2), 1e-300);
    }

    // A' is congruent to A, so positivity transfers exactly.
    PositivityCertificate cert2 = cert;
    cert2.route = "congruence:" + cert.route;
    cert2.lambda_min = std::numeric_limits<double>::quiet_NaN();

    // V' F'_eta = V F_eta exactly (the cut-off rescales with the g'-distance).
    std::vector<double> b = kernel_rhs(A, K), x2;
    SolveReport rep = pcg(A2, b, x2, tol);
    rel.solve_prime = rep;
    rel.mass_prime = x2[g.p];
    rel.ratio = rel.mass_prime / rel.mass;
    if (rel.mass * rel.mass_prime < 0.0 &&
        std::fabs(rel.mass_prime) > 100.0 * tol * (1.0 + std::fabs(rel.mass)))
        throw PositivityViolation("conformal mass relation: sign mismatch between m and m'",
                                  g.p);
    return rel;
}

} // namespace massgrid
