#pragma once

#include <vector>

#include "grid.hpp"

namespace massgrid {

/// A scalar sample per lattice node. Plain value type; the grid pointer is
/// shared so results can outlive the scope that built the grid.
struct ScalarField {
    GridPtr grid;
    std::vector<double> v;

    ScalarField() = default;
    explicit ScalarField(GridPtr g, double fill = 0.0)
        : grid(std::move(g)), v(grid->nodes, fill) {}

    std::size_t size() const { return v.size(); }
    double& operator[](std::size_t i) { return v[i]; }
    double operator[](std::size_t i) const { return v[i]; }
};

inline void check_same_grid(const ScalarField& a, const ScalarField& b,
                            const char* what) {
    if (!a.grid || !b.grid || !a.grid->same_as(*b.grid))
        throw GridMismatch(std::string("grid mismatch in ") + what);
}

inline void check_grid(const ScalarField& a, const TorusGrid& g, const char* what) {
    if (!a.grid || !a.grid->same_as(g))
        throw GridMismatch(std::string("grid mismatch in ") + what);
}

} // namespace massgrid
