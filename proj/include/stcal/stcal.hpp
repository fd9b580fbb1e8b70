#pragma once

// Everything in one include.

#include "stcal/archive.hpp"
#include "stcal/calibrators.hpp"
#include "stcal/config.hpp"
#include "stcal/dlm.hpp"
#include "stcal/domain.hpp"
#include "stcal/errors.hpp"
#include "stcal/ingest.hpp"
#include "stcal/mcmc.hpp"
#include "stcal/random.hpp"
#include "stcal/sampler.hpp"
#include "stcal/scoring.hpp"
#include "stcal/simulate.hpp"
#include "stcal/spatial.hpp"
#include "stcal/timeutil.hpp"
#include "stcal/transform.hpp"
