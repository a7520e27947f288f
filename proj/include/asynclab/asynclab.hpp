#pragma once

#include "asynclab/error.hpp"
#include "asynclab/random.hpp"
#include "asynclab/spectral_model.hpp"
#include "asynclab/delay.hpp"
#include "asynclab/run_config.hpp"
#include "asynclab/dynamics.hpp"
#include "asynclab/theory.hpp"
#include "asynclab/diagnostics.hpp"
#include "asynclab/parallel.hpp"
#include "asynclab/experiments.hpp"
#include "asynclab/csv.hpp"
#include "asynclab/svg.hpp"
