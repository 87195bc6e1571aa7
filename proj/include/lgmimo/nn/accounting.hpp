// SPDX-License-Identifier: Apache-2.0
//
// lgmimo: deep MIMO detection and learngene transfer workbench
// ------------------------------------------------------------------------

#pragma once

#include <cstdint>
#include <vector>

#include "lgmimo/nn/model.hpp"

namespace lgmimo::nn {

struct LayerCount {
    std::size_t layer_index = 0;
    LayerKind kind = LayerKind::Tanh;
    std::uint64_t value = 0;
};

struct CountReport {
    std::vector<LayerCount> per_layer;
    std::uint64_t total = 0;
};

/// Trainable parameters: conv 9*Cin*Cout + Cout, dense in*out + out,
/// batchnorm 2*C (running statistics are buffers, not parameters).
inline std::uint64_t layer_params(const LayerSpec& spec)
{
    switch (spec.kind) {
    case LayerKind::Conv3x3: return 9ULL * spec.in * spec.out + spec.out;
    case LayerKind::Dense: return static_cast<std::uint64_t>(spec.in) * spec.out + spec.out;
    case LayerKind::BatchNorm: return 2ULL * spec.in;
    default: return 0;
    }
}

/// FLOPs at 2 per multiply-accumulate; only conv and dense count, biases excluded.
/// A "same"-padded conv evaluates every output position.
inline std::uint64_t layer_flops(const Layer& layer)
{
    const auto& spec = layer.spec;
    switch (spec.kind) {
    case LayerKind::Conv3x3:
        return 2ULL * 9ULL * spec.in * spec.out * static_cast<std::uint64_t>(layer.out_shape.h) * layer.out_shape.w;
    case LayerKind::Dense: return 2ULL * spec.in * spec.out;
    default: return 0;
    }
}

inline CountReport count_params(const Model& model)
{
    CountReport r;
    for (std::size_t i = 0; i < model.layers().size(); ++i) {
        const auto& l = model.layers()[i];
        const auto n = l.spec.trainable ? layer_params(l.spec) : 0;
        if (n > 0)
            r.per_layer.push_back({i, l.spec.kind, n});
        r.total += n;
    }
    return r;
}

inline CountReport count_flops(const Model& model)
{
    CountReport r;
    for (std::size_t i = 0; i < model.layers().size(); ++i) {
        const auto n = layer_flops(model.layers()[i]);
        if (n > 0)
            r.per_layer.push_back({i, model.layers()[i].spec.kind, n});
        r.total += n;
    }
    return r;
}

} // namespace lgmimo::nn
