// SPDX-License-Identifier: Apache-2.0
//
// lgmimo: deep MIMO detection and learngene transfer workbench
// ------------------------------------------------------------------------
//
// Minimal neural-network engine: tensors, layers, batched forward/backward,
// losses, Adam, accounting and checkpoints.

#pragma once

#include "lgmimo/nn/accounting.hpp"
#include "lgmimo/nn/checkpoint.hpp"
#include "lgmimo/nn/kernels.hpp"
#include "lgmimo/nn/model.hpp"
#include "lgmimo/nn/optim.hpp"
#include "lgmimo/nn/tensor.hpp"
