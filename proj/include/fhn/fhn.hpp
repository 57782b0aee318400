#pragma once

// Umbrella header for the FitzHugh-Nagumo inverse-estimation library.

#include "fhn/adjoint.hpp"
#include "fhn/dataset.hpp"
#include "fhn/errors.hpp"
#include "fhn/fourier.hpp"
#include "fhn/linalg.hpp"
#include "fhn/metrics.hpp"
#include "fhn/nn.hpp"
#include "fhn/noise.hpp"
#include "fhn/ode.hpp"
#include "fhn/rng.hpp"
#include "fhn/spd.hpp"
