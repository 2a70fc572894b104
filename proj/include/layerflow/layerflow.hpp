#pragma once

#include "layerflow/backend.hpp"
#include "layerflow/caller.hpp"
#include "layerflow/catalog.hpp"
#include "layerflow/embedder.hpp"
#include "layerflow/error.hpp"
#include "layerflow/eval.hpp"
#include "layerflow/executor.hpp"
#include "layerflow/gate.hpp"
#include "layerflow/http.hpp"
#include "layerflow/parse.hpp"
#include "layerflow/predictor/assignment.hpp"
#include "layerflow/predictor/model.hpp"
#include "layerflow/predictor/network.hpp"
#include "layerflow/predictor/ordinal.hpp"
#include "layerflow/predictor/predict.hpp"
#include "layerflow/predictor/train.hpp"
#include "layerflow/prompts.hpp"
#include "layerflow/repair.hpp"
#include "layerflow/rng.hpp"
#include "layerflow/sim/env.hpp"
#include "layerflow/sim/scenarios.hpp"
#include "layerflow/sim/synth.hpp"
