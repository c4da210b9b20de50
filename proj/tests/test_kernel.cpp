#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <massgrid/massgrid.hpp>

#include <sstream>

using namespace massgrid;

namespace {

GridPtr grid(int N = 32) { return TorusGrid::create(3, N, 1.0, {0.5, 0.5, 0.5}); }

} // namespace

TEST_CASE("kernel: normalization constants") {
    // kappa_n = 1 / ((n-2) omega_{n-1})
    CHECK(sphere_area(3) == doctest::Approx(4 * M_PI).epsilon(1e-15));
    CHECK(sphere_area(4) == doctest::Approx(2 * M_PI * M_PI).epsilon(1e-15));
    CHECK(green_normalization(3) == doctest::Approx(1.0 / (4 * M_PI)).epsilon(1e-15));
    CHECK(green_normalization(4) == doctest::Approx(1.0 / (4 * M_PI * M_PI)).epsilon(1e-15));
}

TEST_CASE("kernel: cut-off profile shape and derivatives") {
    CutoffProfile c{0.125, green_normalization(3)};
    // plateau, descent, tail
    CHECK(c.psi(0.0) == c.kappa);
    CHECK(c.psi(c.delta) == c.kappa);
    CHECK(c.psi(1.5 * c.delta) == c.kappa / 2); // smoothstep(1/2) = 1/2 exactly
    CHECK(c.psi(2 * c.delta) == 0.0);
    CHECK(c.psi(3 * c.delta) == 0.0);
    CHECK(c.psi(1.2 * c.delta) < c.kappa);
    CHECK(c.psi(1.2 * c.delta) > 0.0);
    // C^2 junctions: both derivatives vanish at delta and 2 delta
    for (double r : {c.delta, 2 * c.delta, 0.5 * c.delta, 2.5 * c.delta}) {
        CHECK(c.dpsi(r) == 0.0);
        CHECK(c.d2psi(r) == 0.0);
    }
    // finite-difference re-derivation inside the annulus
    for (double r : {1.2 * c.delta, 1.5 * c.delta, 1.8 * c.delta}) {
        double s1 = 1e-6, s2 = 1e-4;
        double fd1 = (c.psi(r + s1) - c.psi(r - s1)) / (2 * s1);
        double fd2 = (c.psi(r + s2) - 2 * c.psi(r) + c.psi(r - s2)) / (s2 * s2);
        CHECK(c.dpsi(r) == doctest::Approx(fd1).epsilon(1e-8));
        CHECK(c.d2psi(r) == doctest::Approx(fd2).epsilon(1e-5));
    }
}

TEST_CASE("kernel: F_eta is the radial flat Laplacian of the kernel") {
    // k(r) = psi(r) r^{2-n} has radial Laplacian k'' + (n-1) k'/r = -F_eta;
    // re-derive both derivatives of k by finite differences from psi alone
    for (int n : {3, 4}) {
        CutoffProfile c{0.125, green_normalization(n)};
        auto k = [&](double r) { return c.psi(r) * std::pow(r, 2 - n); };
        for (double r : {1.25 * c.delta, 1.5 * c.delta, 1.75 * c.delta}) {
            double s = 1e-4;
            double k1 = (k(r + s) - k(r - s)) / (2 * s);
            double k2 = (k(r + s) - 2 * k(r) + k(r - s)) / (s * s);
            double lap = k2 + (n - 1) * k1 / r;
            CHECK(lap == doctest::Approx(-F_eta_radial(c, n, r)).epsilon(1e-5));
        }
        // supported only on the open annulus
        CHECK(F_eta_radial(c, n, 0.5 * c.delta) == 0.0);
        CHECK(F_eta_radial(c, n, c.delta) == 0.0);
        CHECK(F_eta_radial(c, n, 2 * c.delta) == 0.0);
        CHECK(F_eta_radial(c, n, 3 * c.delta) == 0.0);
    }
}

TEST_CASE("kernel: c0 pairing agrees with the flux route") {
    for (int n : {3, 4}) {
        double delta = (n == 3) ? 0.125 : 0.1;
        CutoffProfile c{delta, green_normalization(n)};
        double a = c0_pairing(c, n), b = c0_flux(c, n);
        CHECK(a > 0.0);
        CHECK(a == doctest::Approx(b).epsilon(1e-12));
    }
    // frozen value for the canonical configuration (n = 3, delta = 1/8)
    CutoffProfile c{0.125, green_normalization(3)};
    CHECK(c0_pairing(c, 3) == doctest::Approx(0.909456817667973).epsilon(1e-12));
}

TEST_CASE("kernel: continuum source integrates to -1") {
    // omega int F_eta r^{n-1} dr = -1: the annulus source carries exactly the
    // flux of the normalized Green kernel (integration by parts)
    for (int n : {3, 4, 5}) {
        CutoffProfile c{0.125, green_normalization(n)};
        double total =
            sphere_area(n) *
            integrate_adaptive(
                [&](double r) { return F_eta_radial(c, n, r) * std::pow(r, n - 1); },
                c.delta, 2 * c.delta);
        CHECK(total == doctest::Approx(-1.0).epsilon(1e-12));
    }
}

TEST_CASE("kernel: grid sum of the source tracks the continuum to O(h^2)") {
    for (int N : {32, 64}) {
        auto g = grid(N);
        SingularKernel k = build_kernel(flat_metric(g), 0.125);
        OperatorSpec op = assemble(flat_metric(g));
        double s = 0.0;
        for (std::size_t i = 0; i < g->nodes; ++i) s += op.V[i] * k.F_eta.v[i];
        CHECK(std::fabs(s + 1.0) <= 30.0 * g->h * g->h);
    }
}

TEST_CASE("kernel: field construction on the grid") {
    auto g = grid();
    SingularKernel k = build_kernel(flat_metric(g), 0.125);
    CHECK(k.cut.delta == 0.125);
    CHECK(k.omega == doctest::Approx(4 * M_PI).epsilon(1e-15));
    // marked point: eta undefined, source zero by convention
    CHECK(std::isnan(k.eta.v[g->p]));
    CHECK(k.F_eta.v[g->p] == 0.0);
    // inside the plateau eta is the exact Green kernel, F vanishes
    std::size_t q = g->neighbor(g->p, 0, +1); // r = h
    CHECK(k.r.v[q] == doctest::Approx(g->h).epsilon(1e-15));
    CHECK(k.eta.v[q] == doctest::Approx(green_normalization(3) / g->h).epsilon(1e-14));
    CHECK(k.F_eta.v[q] == 0.0);
    // outside the support both vanish (antipodal node, r = sqrt(3)/2)
    std::array<int, kMaxDim> c{};
    g->coords(g->p, c);
    c[0] = (c[0] + 16) % 32;
    c[1] = (c[1] + 16) % 32;
    c[2] = (c[2] + 16) % 32;
    std::size_t far = g->index(c);
    CHECK(k.eta.v[far] == 0.0);
    CHECK(k.F_eta.v[far] == 0.0);
    // radiality: equidistant nodes carry identical values
    std::size_t a = g->p, b = g->p;
    for (int s = 0; s < 5; ++s) a = g->neighbor(a, 0, +1);
    for (int s = 0; s < 5; ++s) b = g->neighbor(b, 2, -1);
    CHECK(k.r.v[a] == k.r.v[b]);
    CHECK(k.eta.v[a] == k.eta.v[b]);
    CHECK(k.F_eta.v[a] == k.F_eta.v[b]);
    CHECK(k.F_eta.v[a] != 0.0); // r = 5h = 0.15625 lies in the annulus
}

TEST_CASE("kernel: build guards") {
    auto g = grid();
    ConformalMetric m = flat_metric(g); // r_flat = 0.25, h = 1/32
    CHECK_THROWS_AS(build_kernel(m, 0.0), GeometryError);
    CHECK_THROWS_AS(build_kernel(m, -0.1), GeometryError);
    CHECK_THROWS_AS(build_kernel(m, 0.13), GeometryError);     // 2 delta > r_flat
    CHECK_THROWS_AS(build_kernel(m, 0.124), ResolutionError);  // 2 delta < 8h
    CHECK_NOTHROW(build_kernel(m, 0.125));                     // exactly admissible
    // a finer grid relaxes only the resolution side
    auto g2 = grid(64);
    CHECK_NOTHROW(build_kernel(flat_metric(g2), 0.0625));
}

TEST_CASE("kernel: CSV export") {
    auto g = grid();
    SingularKernel k = build_kernel(flat_metric(g), 0.125);
    std::ostringstream os;
    export_kernel_csv(k, os);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    CHECK(line == "node_index,r,eta,F_eta");
    std::size_t rows = 0;
    bool saw_p = false;
    while (std::getline(is, line)) {
        if (line.rfind(std::to_string(g->p) + ",0,", 0) == 0) saw_p = true;
        ++rows;
    }
    CHECK(rows == g->nodes);
    CHECK(saw_p);
}
