// Copyright 2026 The sslse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Everything in one include.

#pragma once

#include "sslse/autodiff.hpp"
#include "sslse/checkpoint.hpp"
#include "sslse/common.hpp"
#include "sslse/config.hpp"
#include "sslse/dsp.hpp"
#include "sslse/gradcheck.hpp"
#include "sslse/gradcheck_composites.hpp"
#include "sslse/gradcheck_suite.hpp"
#include "sslse/metrics.hpp"
#include "sslse/mixsim.hpp"
#include "sslse/models.hpp"
#include "sslse/objectives.hpp"
#include "sslse/synth.hpp"
#include "sslse/training.hpp"
#include "sslse/wav.hpp"
