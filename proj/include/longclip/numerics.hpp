#pragma once

#include "longclip/numerics/dense_array.hpp"
#include "longclip/numerics/graph.hpp"
#include "longclip/numerics/tape.hpp"
