#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "errors.hpp"

namespace massgrid {

/// Maximum spatial dimension supported by the discretization.
inline constexpr int kMaxDim = 5;

/// Hard cap on the number of lattice nodes (memory guard, ~16.7M).
inline constexpr std::uint64_t kMaxNodes = std::uint64_t(1) << 24;

/// Uniform periodic lattice on the equal-sided torus [0,L]^n with a marked
/// node p. Node i has integer coordinates c ∈ {0,..,N-1}^n and position c*h.
/// The marked point requested by the caller is snapped to the nearest node.
class TorusGrid {
public:
    int n = 0;              ///< dimension (3..5)
    int N = 0;              ///< nodes per axis (even, >= 16)
    double L = 0.0;         ///< side length
    double h = 0.0;         ///< lattice spacing L/N
    std::size_t nodes = 0;  ///< N^n
    std::size_t p = 0;      ///< flat index of the marked node
    std::array<int, kMaxDim> p_coord{};        ///< integer coords of p
    std::array<double, kMaxDim> p_requested{}; ///< caller's point, pre-snap

    /// Build a grid; `point` holds n fractional-of-L coordinates of p.
    static std::shared_ptr<const TorusGrid>
    create(int n, int N, double L, const std::vector<double>& point) {
        if (n < 3 || n > kMaxDim)
            throw GeometryError("dimension must be in [3," + std::to_string(kMaxDim) +
                                "], got " + std::to_string(n));
        if (N < 16 || N % 2 != 0)
            throw GeometryError("N must be even and >= 16, got " + std::to_string(N));
        if (!(L > 0.0))
            throw GeometryError("torus side L must be positive");
        if (point.size() != std::size_t(n))
            throw GeometryError("marked point needs exactly n coordinates");
        std::uint64_t count = 1;
        for (int a = 0; a < n; ++a) {
            count *= std::uint64_t(N);
            if (count > kMaxNodes)
                throw GeometryError("grid exceeds the node cap of " +
                                    std::to_string(kMaxNodes) + " (memory guard)");
        }
        auto g = std::make_shared<TorusGrid>();
        g->n = n;
        g->N = N;
        g->L = L;
        g->h = L / N;
        g->nodes = std::size_t(count);
        g->strides_[0] = 1;
        for (int a = 1; a < n; ++a) g->strides_[a] = g->strides_[a - 1] * std::size_t(N);
        std::size_t pi = 0;
        for (int a = 0; a < n; ++a) {
            double frac = point[std::size_t(a)] / L;
            frac -= std::floor(frac); // wrap into [0,1)
            int c = int(std::lround(frac * N)) % N;
            g->p_coord[std::size_t(a)] = c;
            g->p_requested[std::size_t(a)] = point[std::size_t(a)];
            pi += std::size_t(c) * g->strides_[a];
        }
        g->p = pi;
        return g;
    }

    std::size_t stride(int axis) const { return strides_[axis]; }

    /// Decompose a flat index into integer coordinates.
    void coords(std::size_t i, std::array<int, kMaxDim>& c) const {
        for (int a = 0; a < n; ++a) {
            c[std::size_t(a)] = int(i % std::size_t(N));
            i /= std::size_t(N);
        }
    }

    std::size_t index(const std::array<int, kMaxDim>& c) const {
        std::size_t i = 0;
        for (int a = 0; a < n; ++a) i += std::size_t(c[std::size_t(a)]) * strides_[a];
        return i;
    }

    /// Neighbor of node i along `axis` in direction ±1 (periodic wrap).
    std::size_t neighbor(std::size_t i, int axis, int dir) const {
        std::size_t s = strides_[axis];
        int c = int((i / s) % std::size_t(N));
        if (dir > 0) return (c == N - 1) ? i - s * std::size_t(N - 1) : i + s;
        return (c == 0) ? i + s * std::size_t(N - 1) : i - s;
    }

    /// Torus distance from node i to the marked node p (min over translates;
    /// on the equal-sided torus the minimum decouples per axis).
    double r_to_p(std::size_t i) const {
        double r2 = 0.0;
        for (int a = 0; a < n; ++a) {
            std::size_t s = strides_[a];
            int c = int((i / s) % std::size_t(N));
            int d = std::abs(c - p_coord[std::size_t(a)]);
            d = std::min(d, N - d);
            double x = d * h;
            r2 += x * x;
        }
        return std::sqrt(r2);
    }

    /// Torus distance from node i to an arbitrary point (absolute coords).
    double r_to_point(std::size_t i, const std::array<double, kMaxDim>& x) const {
        double r2 = 0.0;
        for (int a = 0; a < n; ++a) {
            std::size_t s = strides_[a];
            int c = int((i / s) % std::size_t(N));
            double d = std::fabs(c * h - x[std::size_t(a)]);
            d = std::fmod(d, L);
            d = std::min(d, L - d);
            r2 += d * d;
        }
        return std::sqrt(r2);
    }

    /// Offset (in nodes, wrapped to [-N/2, N/2)) of node i from p along axis.
    int offset_from_p(std::size_t i, int axis) const {
        std::size_t s = strides_[axis];
        int c = int((i / s) % std::size_t(N));
        int d = c - p_coord[std::size_t(axis)];
        if (d >= N / 2) d -= N;
        if (d < -N / 2) d += N;
        return d;
    }

    /// Snap deviation |requested - snapped| must be <= h/2 per axis; this is
    /// guaranteed by construction but exposed for validation reporting.
    double snap_deviation() const {
        double dev = 0.0;
        for (int a = 0; a < n; ++a) {
            double frac = p_requested[std::size_t(a)] / L;
            frac -= std::floor(frac);
            double d = std::fabs(frac * L - p_coord[std::size_t(a)] * h);
            d = std::min(d, L - d);
            dev = std::max(dev, d);
        }
        return dev;
    }

    bool same_as(const TorusGrid& o) const {
        return n == o.n && N == o.N && L == o.L && p == o.p;
    }

private:
    std::array<std::size_t, kMaxDim> strides_{};
};

using GridPtr = std::shared_ptr<const TorusGrid>;

} // namespace massgrid
