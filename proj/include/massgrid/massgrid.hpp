#pragma once

// Umbrella header: discrete mass of positive elliptic operators
// P_f = Delta_g + f at a marked point of a conformally flat torus.

#include "config.hpp"
#include "errors.hpp"
#include "expression.hpp"
#include "extrapolate.hpp"
#include "family.hpp"
#include "field.hpp"
#include "grid.hpp"
#include "kernel.hpp"
#include "mass.hpp"
#include "metric.hpp"
#include "operator.hpp"
#include "quadrature.hpp"
#include "smoothstep.hpp"
#include "solver.hpp"
