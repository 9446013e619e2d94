#pragma once

#include "asdformer/numerics/adam.hpp"
#include "asdformer/numerics/gradcheck.hpp"
#include "asdformer/numerics/ops.hpp"
#include "asdformer/numerics/tensor.hpp"
