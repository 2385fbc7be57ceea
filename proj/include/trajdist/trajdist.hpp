#pragma once

#include "trajdist/core.hpp"
#include "trajdist/systems.hpp"
#include "trajdist/costs.hpp"
#include "trajdist/lqr.hpp"
#include "trajdist/ilqr.hpp"
#include "trajdist/gaussian.hpp"
#include "trajdist/tracking.hpp"
#include "trajdist/harness.hpp"
#include "trajdist/config.hpp"
