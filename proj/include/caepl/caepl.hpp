#pragma once

// Umbrella header for the whole library.

#include "caepl/checkpoint.hpp"
#include "caepl/config.hpp"
#include "caepl/corrupt.hpp"
#include "caepl/csv.hpp"
#include "caepl/dataset.hpp"
#include "caepl/error.hpp"
#include "caepl/experiment.hpp"
#include "caepl/graph.hpp"
#include "caepl/init.hpp"
#include "caepl/metrics.hpp"
#include "caepl/models.hpp"
#include "caepl/ops.hpp"
#include "caepl/optim.hpp"
#include "caepl/rng.hpp"
#include "caepl/svg.hpp"
#include "caepl/tensor.hpp"
#include "caepl/train.hpp"
