#pragma once

#include "quclab/quadrature.hpp"
#include "quclab/jet.hpp"
#include "quclab/expression.hpp"
#include "quclab/parallel.hpp"
#include "quclab/weighted_grid.hpp"
#include "quclab/special_kernels.hpp"
#include "quclab/fractional_operator.hpp"
#include "quclab/extension_solver.hpp"
#include "quclab/carleman_weights.hpp"
#include "quclab/inequality_lab.hpp"
#include "quclab/quc_harness.hpp"
#include "quclab/experiment.hpp"
