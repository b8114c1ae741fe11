#pragma once

// Umbrella header for the whole library.

#include "ifa/divergence.hpp"
#include "ifa/errors.hpp"
#include "ifa/factory.hpp"
#include "ifa/io.hpp"
#include "ifa/lifted.hpp"
#include "ifa/matrix.hpp"
#include "ifa/params.hpp"
#include "ifa/rng.hpp"
#include "ifa/solvers.hpp"
