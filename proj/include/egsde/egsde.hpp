#pragma once

#include "egsde/config.hpp"
#include "egsde/energy.hpp"
#include "egsde/experiment.hpp"
#include "egsde/extractors.hpp"
#include "egsde/grid.hpp"
#include "egsde/io.hpp"
#include "egsde/metrics.hpp"
#include "egsde/mlp.hpp"
#include "egsde/poe.hpp"
#include "egsde/random.hpp"
#include "egsde/samplers.hpp"
#include "egsde/score_models.hpp"
#include "egsde/sde.hpp"
#include "egsde/tape.hpp"
#include "egsde/toy_data.hpp"
