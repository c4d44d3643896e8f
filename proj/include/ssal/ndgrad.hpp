#pragma once

// Small reverse-mode differentiation library: tensors, a tape, the ops the
// detector needs, and an Adam optimizer. 64-bit throughout.

#include "ssal/ndgrad/conv3d.hpp"
#include "ssal/ndgrad/layers.hpp"
#include "ssal/ndgrad/losses.hpp"
#include "ssal/ndgrad/ops.hpp"
#include "ssal/ndgrad/optim.hpp"
#include "ssal/ndgrad/tape.hpp"
#include "ssal/ndgrad/tensor.hpp"
