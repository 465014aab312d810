#pragma once

#include "gatiaa/afg.hpp"
#include "gatiaa/autodiff.hpp"
#include "gatiaa/checkpoint.hpp"
#include "gatiaa/error.hpp"
#include "gatiaa/grad_check.hpp"
#include "gatiaa/grad_suite.hpp"
#include "gatiaa/graph.hpp"
#include "gatiaa/inference.hpp"
#include "gatiaa/layers.hpp"
#include "gatiaa/metrics.hpp"
#include "gatiaa/model.hpp"
#include "gatiaa/synth.hpp"
#include "gatiaa/tensor.hpp"
#include "gatiaa/training.hpp"
