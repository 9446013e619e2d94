#pragma once

#include "asdformer/data/csv.hpp"
#include "asdformer/data/dataset.hpp"
#include "asdformer/data/io.hpp"
#include "asdformer/data/pearson.hpp"
#include "asdformer/data/split.hpp"
#include "asdformer/data/synth.hpp"
