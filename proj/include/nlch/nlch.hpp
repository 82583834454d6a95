#pragma once

#include "nlch/common.hpp"
#include "nlch/grid.hpp"
#include "nlch/kernels.hpp"
#include "nlch/potentials.hpp"
#include "nlch/operators.hpp"
#include "nlch/scheme.hpp"
#include "nlch/diagnostics.hpp"
