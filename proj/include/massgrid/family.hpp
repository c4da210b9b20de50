#pragma once

#include "extrapolate.hpp"
#include "mass.hpp"

namespace massgrid {

/// Specification of the one-parameter family P_a = Delta_g + f + a phi,
/// with f and phi both vanishing on the flat ball around p.
struct FamilySpec {
    ConformalMetric metric;
    Potential f;
    ScalarField phi;
    double delta = 0.0;
    std::vector<double> a_values;
    double solver_tol = 1e-10;
    double eigen_tol = 1e-9;
    bool with_derivatives = true;
    bool with_fd = true;
    std::uint64_t seed = 42;
};

inline FamilySpec make_family(ConformalMetric metric, const ExprPtr& f_expr,
                              const ExprPtr& phi_expr, double delta,
                              std::vector<double> a_values) {
    FamilySpec s;
    s.metric = std::move(metric);
    s.f = build_potential(s.metric, f_expr);
    s.phi = build_potential(s.metric, phi_expr).f; // same flat-ball validation
    s.delta = delta;
    s.a_values = std::move(a_values);
    return s;
}

inline FamilySpec make_family(ConformalMetric metric, const ExprPtr& f_expr,
                              ScalarField phi_field, double delta,
                              std::vector<double> a_values) {
    const TorusGrid& g = *metric.grid;
    check_grid(phi_field, g, "make_family");
    for (std::size_t i = 0; i < g.nodes; ++i)
        if (g.r_to_p(i) <= metric.r_flat && std::fabs(phi_field.v[i]) > kFlatTol)
            throw FlatnessViolation("family direction phi does not vanish on the flat ball");
    FamilySpec s;
    s.metric = std::move(metric);
    s.f = build_potential(s.metric, f_expr);
    s.phi = std::move(phi_field);
    s.delta = delta;
    s.a_values = std::move(a_values);
    return s;
}

/// Shared immutable pieces of a family run.
struct FamilyContext {
    OperatorSpec base;        // assembled with f alone
    std::vector<double> Vphi; // V * phi
    SingularKernel kernel;
    double phi_min = 0.0, phi_max = 0.0;
};

inline FamilyContext make_context(const FamilySpec& s) {
    FamilyContext c{assemble(s.metric, s.f), {}, build_kernel(s.metric, s.delta)};
    c.Vphi.resize(s.phi.v.size());
    c.phi_min = c.phi_max = s.phi.v[0];
    for (std::size_t i = 0; i < c.Vphi.size(); ++i) {
        c.Vphi[i] = c.base.V[i] * s.phi.v[i];
        c.phi_min = std::min(c.phi_min, s.phi.v[i]);
        c.phi_max = std::max(c.phi_max, s.phi.v[i]);
    }
    return c;
}

inline OperatorSpec family_operator(const FamilyContext& c, double a) {
    OperatorSpec op = c.base;
    bool zero = true;
    for (std::size_t i = 0; i < op.Vf.size(); ++i) {
        op.Vf[i] += a * c.Vphi[i];
        if (op.Vf[i] != 0.0) zero = false;
    }
    op.f_is_zero = zero;
    return op;
}

/// Analytic derivatives of a |-> m(a) at one parameter value, via the
/// auxiliary solves (exact derivatives of the discrete mass):
///   A_a w   = -V phi G_a  (= -V phi u_a since phi kills the singular part),
///   A_a u'' = -2 V phi w,
/// m'(a) = w(p), m''(a) = u''(p); the quadratic form 2 w^T A_a w is reported
/// as second_form (nonnegative by positivity, equal to m'' up to O(h^2)).
struct FamilyDerivatives {
    double m_prime = 0.0;
    double m_second = 0.0;  // from the second auxiliary solve
    double second_form = 0.0; // 2 w^T A_a w >= 0
    std::vector<double> w;
};

inline FamilyDerivatives derivatives_at(const FamilyContext& c, const OperatorSpec& op_a,
                                        const std::vector<double>& u_a, double tol) {
    const std::size_t nn = u_a.size();
    std::vector<double> rhs(nn);
    for (std::size_t i = 0; i < nn; ++i) rhs[i] = -c.Vphi[i] * u_a[i];
    FamilyDerivatives d;
    pcg(op_a, rhs, d.w, tol);
    d.m_prime = d.w[op_a.grid->p];
    for (std::size_t i = 0; i < nn; ++i) rhs[i] = -2.0 * c.Vphi[i] * d.w[i];
    std::vector<double> u2;
    pcg(op_a, rhs, u2, tol);
    d.m_second = u2[op_a.grid->p];
    d.second_form = 2.0 * energy(op_a, d.w, d.w);
    return d;
}

/// Per-a record; NaN marks values not computed (see status).
struct FamilyPoint {
    double a = 0.0;
    double lambda_min = std::numeric_limits<double>::quiet_NaN();
    double mass = std::numeric_limits<double>::quiet_NaN();
    double mass_prime = std::numeric_limits<double>::quiet_NaN();
    double mass_second = std::numeric_limits<double>::quiet_NaN();
    double second_form = std::numeric_limits<double>::quiet_NaN();
    double fd_prime = std::numeric_limits<double>::quiet_NaN();
    double fd_second = std::numeric_limits<double>::quiet_NaN();
    double residual = std::numeric_limits<double>::quiet_NaN();
    std::string status = "ok";
};

struct FamilyResult {
    std::vector<FamilyPoint> points;
    double a_infinity = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

struct LambdaEval {
    double lambda;
    double err_bound;
    int sign; // +1 / -1 certified, 0 indeterminate
    double res_abs = 0.0;
};

/// Single eigensolve with a rigorous sign decision; `guess` (optional) is
/// updated in place with the converged eigenvector for warm-starting.
inline LambdaEval eval_lambda(const OperatorSpec& op, double tol, std::uint64_t seed,
                              std::vector<double>* guess) {
    EigenReport e = smallest_eigenvalue(
        op, tol, 20000, seed, (guess && !guess->empty()) ? guess : nullptr);
    if (guess) *guess = e.vec;
    LambdaEval le{e.lambda, e.residual, 0, e.residual_abs};
    if (std::fabs(le.lambda) > 3.0 * le.err_bound) le.sign = le.lambda > 0 ? 1 : -1;
    return le;
}

inline double mass_at(const FamilyContext& c, double a, double tol) {
    OperatorSpec op = family_operator(c, a);
    SolveReport rep;
    std::vector<double> u = regular_part(op, c.kernel, tol, rep);
    return u[op.grid->p];
}

} // namespace detail

/// Scan the family over spec.a_values. Points whose positivity cannot be
/// certified are recorded with a skip status instead of failing the scan.
inline FamilyResult scan(const FamilySpec& spec) {
    FamilyContext c = make_context(spec);
    FamilyResult res;
    std::vector<double> eig_guess;
    for (double a : spec.a_values) {
        FamilyPoint pt;
        pt.a = a;
        OperatorSpec op = family_operator(c, a);
        detail::LambdaEval le = detail::eval_lambda(op, spec.eigen_tol, spec.seed, &eig_guess);
        pt.lambda_min = le.lambda;
        if (le.sign <= 0) {
            pt.status = le.sign == 0 ? "skipped: positivity indeterminate"
                                     : "skipped: not positive";
            res.points.push_back(std::move(pt));
            continue;
        }
        SolveReport rep;
        std::vector<double> u_a = regular_part(op, c.kernel, spec.solver_tol, rep);
        pt.mass = u_a[op.grid->p];
        pt.residual = rep.residual;
        if (spec.with_derivatives) {
            FamilyDerivatives d = derivatives_at(c, op, u_a, spec.solver_tol);
            pt.mass_prime = d.m_prime;
            pt.mass_second = d.m_second;
            pt.second_form = d.second_form;
        }
        if (spec.with_fd) {
            double fd_tol = std::min(spec.solver_tol, 1e-12);
            // step balances O(da^2) truncation against solver-noise/da^2 in
            // the second difference; 1e-3 sits on the noise floor
            double da = 1e-2 * (1.0 + std::fabs(a));
            try {
                double mp1 = detail::mass_at(c, a + da, fd_tol);
                double mm1 = detail::mass_at(c, a - da, fd_tol);
                double mp2 = detail::mass_at(c, a + 2 * da, fd_tol);
                double mm2 = detail::mass_at(c, a - 2 * da, fd_tol);
                double fd1 = (mp1 - mm1) / (2 * da);
                double fd1_wide = (mp2 - mm2) / (4 * da);
                // step-doubling validation: halve once if the two steps disagree
                if (std::fabs(fd1 - fd1_wide) > 0.05 * (std::fabs(fd1) + 1e-30)) {
                    da *= 0.5;
                    mp1 = detail::mass_at(c, a + da, fd_tol);
                    mm1 = detail::mass_at(c, a - da, fd_tol);
                    fd1 = (mp1 - mm1) / (2 * da);
                }
                pt.fd_prime = fd1;
                pt.fd_second = (mp1 - 2.0 * pt.mass + mm1) / (da * da);
            } catch (const NotPositive&) {
                pt.status = "ok (fd skipped: positivity boundary)";
            }
        }
        res.points.push_back(std::move(pt));
    }
    return res;
}

/// Standalone derivative evaluation at one a (positivity certified here).
inline FamilyDerivatives derivatives(const FamilySpec& spec, double a) {
    FamilyContext c = make_context(spec);
    OperatorSpec op = family_operator(c, a);
    PositivityCertificate cert = certify_positive(op, spec.eigen_tol, spec.seed);
    SolveReport rep;
    std::vector<double> u_a = regular_part(op, c.kernel, spec.solver_tol, rep);
    return derivatives_at(c, op, u_a, spec.solver_tol);
}

struct AInfinityResult {
    double a_infinity = 0.0;
    double a_lo = 0.0, a_hi = 0.0;          // certified bracket
    double lambda_lo = 0.0, lambda_hi = 0.0; // eigenvalues at the bracket ends
};

/// Locate a_infinity = inf{ a > 0 : lambda_min(a) = 0 } by bisection on the
/// certified sign of lambda_min. Requires phi < 0 somewhere; throws
/// NoSignChange otherwise or when lambda_min stays positive up to a_max.
inline AInfinityResult find_a_infinity(const FamilySpec& spec, double a_max = 1e6) {
    FamilyContext c = make_context(spec);
    if (c.phi_min >= 0.0)
        throw NoSignChange("phi >= 0: positivity is preserved for every a >= 0");

    std::vector<double> guess;
    auto lam = [&](double a, double tol) {
        OperatorSpec op = family_operator(c, a);
        return detail::eval_lambda(op, tol, spec.seed, &guess);
    };

    double a = 1.0;
    for (double v : spec.a_values)
        if (v > 0.0) a = std::max(a, v);
    double lo = 0.0, hi = 0.0, lam_lo = 0.0, lam_hi = 0.0;
    bool have_hi = false;
    while (a <= a_max) {
        detail::LambdaEval le = lam(a, spec.eigen_tol);
        if (le.sign > 0) {
            lo = a;
            lam_lo = le.lambda;
            a *= 2.0;
        } else {
            hi = a;
            lam_hi = le.lambda;
            have_hi = true;
            break;
        }
    }
    if (!have_hi)
        throw NoSignChange("lambda_min stayed positive up to a_max = " +
                           std::to_string(a_max));
    if (lo == 0.0) { // first probe was already nonpositive: search downward
        a = hi / 2.0;
        while (a > 1e-12 * hi) {
            detail::LambdaEval le = lam(a, spec.eigen_tol);
            if (le.sign > 0) {
                lo = a;
                lam_lo = le.lambda;
                break;
            }
            hi = a;
            lam_hi = le.lambda;
            a /= 2.0;
        }
        if (lo == 0.0)
            throw NoSignChange("no positive lambda_min found below the sign change");
    }

    while (hi - lo > 1e-6 * hi) {
        double mid = 0.5 * (lo + hi);
        detail::LambdaEval le = lam(mid, spec.eigen_tol);
        if (le.sign > 0) {
            lo = mid;
            lam_lo = le.lambda;
        } else {
            hi = mid;
            lam_hi = le.lambda;
        }
    }

    // Certify the final bracket with a deep solve (sign margin 3x the bound
    // and eigenresidual below 1e-8); widen geometrically while an endpoint's
    // sign stays indeterminate.
    double width = hi - lo;
    double tight = std::min(spec.eigen_tol, 1e-8) * 1e-2;
    for (int k = 0; k < 40; ++k) {
        detail::LambdaEval le = lam(lo, tight);
        if (le.sign > 0 && le.res_abs < 1e-8) {
            lam_lo = le.lambda;
            break;
        }
        if (le.sign < 0) { // bracket drifted: move down
            hi = lo;
            lam_hi = le.lambda;
        }
        lo -= width;
        width *= 2.0;
        if (lo <= 0.0) throw NoSignChange("could not certify a positive bracket end");
    }
    width = hi - lo;
    for (int k = 0; k < 40; ++k) {
        detail::LambdaEval le = lam(hi, tight);
        if (le.sign < 0 && le.res_abs < 1e-8) {
            lam_hi = le.lambda;
            break;
        }
        if (le.sign > 0) {
            lo = hi;
            lam_lo = le.lambda;
        }
        hi += width;
        width *= 2.0;
        if (hi > a_max) throw NoSignChange("could not certify a negative bracket end");
    }

    AInfinityResult r;
    r.a_lo = lo;
    r.a_hi = hi;
    r.lambda_lo = lam_lo;
    r.lambda_hi = lam_hi;
    r.a_infinity = 0.5 * (lo + hi);
    return r;
}

struct DirichletLimit {
    double lim_estimate = 0.0;
    double dirichlet_value = 0.0;
    std::vector<std::pair<double, double>> ramp; // (a, m(a))
    MassResult dirichlet_result;
};

/// Point-4 limit: ramp a by factors of 4 until m(a) stalls, then compare with
/// the Dirichlet mass on Omega = complement of supp(phi). Requires phi >= 0
/// with support at distance >= 2 delta from p.
inline DirichletLimit dirichlet_limit(const FamilySpec& spec, double stall_tol = 1e-3,
                                      int max_ramp = 18) {
    FamilyContext c = make_context(spec);
    if (c.phi_min < 0.0)
        throw ConfigError("dirichlet_limit requires phi >= 0");
    if (c.phi_max <= 0.0)
        throw ConfigError("dirichlet_limit requires phi not identically zero");

    DirichletLimit out;
    double a = 1.0;
    double m_prev = 0.0;
    for (int k = 0; k < max_ramp; ++k) {
        OperatorSpec op = family_operator(c, a);
        PositivityCertificate cert = certify_positive(op, spec.eigen_tol, spec.seed);
        MassResult mr = mass_direct(op, c.kernel, cert, spec.solver_tol);
        out.ramp.emplace_back(a, mr.mass);
        if (k > 0 && std::fabs(mr.mass - m_prev) < stall_tol * (1.0 + std::fabs(m_prev))) {
            m_prev = mr.mass;
            break;
        }
        m_prev = mr.mass;
        a *= 4.0;
    }
    out.lim_estimate = m_prev;

    DirichletDomain dom = complement_of_support(spec.phi);
    out.dirichlet_result = mass_dirichlet(c.base, c.kernel, dom, spec.solver_tol);
    out.dirichlet_value = out.dirichlet_result.mass;
    return out;
}

/// Radial seed metric for the nonnegative-curvature experiment: conformal
/// factor phi = -A * ramp(r; r0, r1), flat for r <= r0 and constant past r1.
/// On a closed torus scal_g >= 0 everywhere is impossible for a nonflat
/// metric (the lattice Laplacian of w = e^{(n-2)phi/2} sums to zero), so the
/// construction guarantees scal_g >= 0 on the ball {r <= r_cross - 2h} (with
/// the drop region strictly inside) and confines the negative part to the
/// outer recovery annulus; the total curvature integral stays positive.
/// The family P_a = Delta_g + a scal_g then has the exact critical value
/// a_infinity = (n-2)/(4(n-1)): at that a the operator is the conformal
/// Laplacian, whose discrete kernel e^{-(n-2)phi/2} is exact by the same
/// algebra that makes the cut-off identity exact.
struct SeedMetric {
    ConformalMetric metric;
    ScalarField scal; // lattice scalar curvature
    double r0 = 0.0, r1 = 0.0, amplitude = 0.0;
    double r_cross = 0.0;    // continuum radius where scal changes sign
    double a_critical = 0.0; // (n-2)/(4(n-1))
    double total_curvature = 0.0;
};

inline SeedMetric nonneg_curvature_seed(const GridPtr& grid, double amplitude = 0.5) {
    const TorusGrid& g = *grid;
    const int n = g.n;
    double r_flat = 0.25 * g.L;
    double r0 = r_flat + 2.0 * g.h;
    double r1 = 0.45 * g.L;
    if (r1 - r0 < 4.0 * g.h)
        throw ConstructionFailed("seed profile annulus under-resolved at this N");

    std::vector<double> center(n);
    for (int a = 0; a < n; ++a) center[a] = g.p_coord[a] * g.h; // snapped node
    ExprPtr phi = Expr::radial(Expr::Kind::Ramp, center, r0, r1, -amplitude);
    SeedMetric s;
    s.metric = build_metric(grid, phi, r_flat);
    s.scal = compute_scalar_curvature(s.metric);
    s.r0 = r0;
    s.r1 = r1;
    s.amplitude = amplitude;
    s.a_critical = (n - 2) / (4.0 * (n - 1));

    // continuum radial profile: w(r) = exp(-(n-2)/2 A s(t)), t = (r-r0)/(r1-r0);
    // scal >= 0 where the analyst Laplacian w'' + (n-1) w'/r <= 0.
    double dr = r1 - r0;
    double k2 = 0.5 * (n - 2) * amplitude;
    auto lap_w = [&](double r) {
        double t = (r - r0) / dr;
        double s0 = smoothstep(t), s1 = smoothstep_d1(t) / dr, s2 = smoothstep_d2(t) / (dr * dr);
        double w = std::exp(-k2 * s0);
        double wp = -k2 * s1 * w;
        double wpp = (k2 * k2 * s1 * s1 - k2 * s2) * w;
        return wpp + (n - 1) * wp / r;
    };
    double r_cross = 0.0;
    double prev_r = r0 + 1e-9, prev_v = lap_w(prev_r);
    for (int i = 1; i <= 4000; ++i) {
        double r = r0 + dr * i / 4000.0;
        double v = lap_w(r);
        if (prev_v <= 0.0 && v > 0.0) {
            double a2 = prev_r, b2 = r;
            for (int it = 0; it < 80; ++it) {
                double mid = 0.5 * (a2 + b2);
                (lap_w(mid) <= 0.0 ? a2 : b2) = mid;
            }
            r_cross = 0.5 * (a2 + b2);
            break;
        }
        prev_r = r;
        prev_v = v;
    }
    if (r_cross == 0.0 || r_cross - r0 < 0.25 * dr)
        throw ConstructionFailed("seed profile: nonnegative-curvature zone too narrow");
    s.r_cross = r_cross;

    double safe = r_cross - 2.0 * g.h;
    double max_abs = 0.0;
    for (std::size_t i = 0; i < g.nodes; ++i) {
        max_abs = std::max(max_abs, std::fabs(s.scal.v[i]));
        if (g.r_to_p(i) <= safe && s.scal.v[i] < -1e-10)
            throw ConstructionFailed("seed profile: negative curvature inside the "
                                     "guaranteed zone (scal = " +
                                     std::to_string(s.scal.v[i]) + ")");
    }
    if (max_abs == 0.0) throw ConstructionFailed("seed profile: curvature identically zero");
    s.total_curvature = integrate(s.scal, s.metric);
    if (!(s.total_curvature > 0.0))
        throw ConstructionFailed("seed profile: total curvature not positive");
    return s;
}

} // namespace massgrid
