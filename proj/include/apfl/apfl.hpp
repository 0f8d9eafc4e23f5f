#pragma once

#include "apfl/baselines.hpp"
#include "apfl/broadcast.hpp"
#include "apfl/clustering.hpp"
#include "apfl/config.hpp"
#include "apfl/coordination.hpp"
#include "apfl/dataset.hpp"
#include "apfl/errors.hpp"
#include "apfl/metrics.hpp"
#include "apfl/model.hpp"
#include "apfl/network.hpp"
#include "apfl/params.hpp"
#include "apfl/rng.hpp"
#include "apfl/rnn.hpp"
#include "apfl/runner.hpp"
#include "apfl/scenario.hpp"
#include "apfl/sim.hpp"
#include "apfl/synth.hpp"
