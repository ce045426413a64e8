#pragma once

// Umbrella header for the library.

#include "bipgps/csv.hpp"
#include "bipgps/design.hpp"
#include "bipgps/error.hpp"
#include "bipgps/estimators.hpp"
#include "bipgps/gps.hpp"
#include "bipgps/graph.hpp"
#include "bipgps/inference.hpp"
#include "bipgps/numerics.hpp"
#include "bipgps/parallel.hpp"
#include "bipgps/rng.hpp"
#include "bipgps/simlab.hpp"
