#pragma once

#include "ge2e/common.hpp"
#include "ge2e/dsp.hpp"
#include "ge2e/eval.hpp"
#include "ge2e/io.hpp"
#include "ge2e/loss.hpp"
#include "ge2e/net.hpp"
#include "ge2e/synth.hpp"
#include "ge2e/trainer.hpp"
#include "ge2e/wav.hpp"
