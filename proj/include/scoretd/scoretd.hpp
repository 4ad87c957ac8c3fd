#pragma once

#include "attack.hpp"
#include "baselines.hpp"
#include "checkpoint.hpp"
#include "de_regularizer.hpp"
#include "diffusion.hpp"
#include "error.hpp"
#include "experiments.hpp"
#include "manifolds.hpp"
#include "optimizer.hpp"
#include "oracle.hpp"
#include "rng.hpp"
#include "run_config.hpp"
#include "score_model.hpp"
#include "td_estimator.hpp"
#include "text_io.hpp"
