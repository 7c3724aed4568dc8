// Umbrella header.
#pragma once

#include "cwm/action_text.hpp"
#include "cwm/assignment.hpp"
#include "cwm/crl.hpp"
#include "cwm/data_pipeline.hpp"
#include "cwm/decoder.hpp"
#include "cwm/eval.hpp"
#include "cwm/flow.hpp"
#include "cwm/gridworld.hpp"
#include "cwm/io.hpp"
#include "cwm/mat.hpp"
#include "cwm/mcts.hpp"
#include "cwm/nn.hpp"
#include "cwm/rng.hpp"
#include "cwm/runtime.hpp"
#include "cwm/subprocess.hpp"
#include "cwm/synth_obs.hpp"
#include "cwm/tape.hpp"
