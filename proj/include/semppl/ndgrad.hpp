#pragma once

// Dense tensors with define-by-run reverse-mode differentiation.

#include "semppl/ndgrad/batch_norm.hpp"
#include "semppl/ndgrad/gradcheck.hpp"
#include "semppl/ndgrad/ops.hpp"
#include "semppl/ndgrad/tensor.hpp"
