#pragma once

#include "fig/augmenter.hpp"
#include "fig/baseline.hpp"
#include "fig/encoder.hpp"
#include "fig/errors.hpp"
#include "fig/eval.hpp"
#include "fig/gradcheck.hpp"
#include "fig/graph.hpp"
#include "fig/intervener.hpp"
#include "fig/nn.hpp"
#include "fig/objective.hpp"
#include "fig/regularizer.hpp"
#include "fig/tensor.hpp"
#include "fig/trainer.hpp"
