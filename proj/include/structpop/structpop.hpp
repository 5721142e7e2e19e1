#pragma once

// Umbrella header: equilibria, linearized stability and direct simulation
// of size-structured population models with distributed states at birth.

#include "structpop/complex_roots.hpp"
#include "structpop/config.hpp"
#include "structpop/eigen_dense.hpp"
#include "structpop/equilibrium.hpp"
#include "structpop/errors.hpp"
#include "structpop/grid.hpp"
#include "structpop/rates.hpp"
#include "structpop/roots.hpp"
#include "structpop/simulate.hpp"
#include "structpop/stability.hpp"
#include "structpop/verify.hpp"
