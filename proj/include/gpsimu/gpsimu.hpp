#pragma once

/// Everything: math, simulator, the three estimators and the harness.

#include "gpsimu/mathcore.hpp"
#include "gpsimu/simulator.hpp"
#include "gpsimu/sensor_io.hpp"
#include "gpsimu/ekf16.hpp"
#include "gpsimu/aekf17.hpp"
#include "gpsimu/timesync.hpp"
#include "gpsimu/reckoner.hpp"
#include "gpsimu/config.hpp"
#include "gpsimu/harness.hpp"
