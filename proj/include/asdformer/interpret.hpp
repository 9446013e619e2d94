#pragma once

#include "asdformer/interpret/emit.hpp"
#include "asdformer/interpret/report.hpp"
