#pragma once

#include "asdformer/training/evaluate.hpp"
#include "asdformer/training/metrics.hpp"
#include "asdformer/training/trainer.hpp"
