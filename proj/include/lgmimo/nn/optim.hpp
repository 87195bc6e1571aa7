// SPDX-License-Identifier: Apache-2.0
//
// lgmimo: deep MIMO detection and learngene transfer workbench
// ------------------------------------------------------------------------

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "lgmimo/error.hpp"
#include "lgmimo/nn/model.hpp"
#include "lgmimo/nn/tensor.hpp"

namespace lgmimo::nn {

struct LossResult {
    double value = 0.0;
    Batch grad; // dLoss/dPrediction
};

/// Mean over the batch of the squared L2 error of each output vector.
inline LossResult mse_loss(const Batch& pred, const Batch& target)
{
    require(pred.n == target.n && pred.data.size() == target.data.size(), ErrorKind::LengthMismatch,
            "mse_loss: prediction and target sizes differ");
    require(pred.n > 0, ErrorKind::LengthMismatch, "mse_loss: empty batch");
    LossResult r;
    r.grad = Batch(pred.n, pred.shape);
    const double inv_n = 1.0 / pred.n;
    double sum = 0.0;
    for (std::size_t k = 0; k < pred.data.size(); ++k) {
        const double d = pred.data[k] - target.data[k];
        sum += d * d;
        r.grad.data[k] = 2.0 * d * inv_n;
    }
    r.value = sum * inv_n;
    return r;
}

/// L2 pull of selected layers toward reference parameter values.
struct AnchorBlock {
    std::size_t layer_index = 0;
    std::vector<std::vector<double>> reference; // one entry per ParamBlock of the layer
};

namespace detail {

template <typename Fn>
void for_each_anchored(Model& model, const std::vector<AnchorBlock>& anchors, Fn&& fn)
{
    for (const auto& a : anchors) {
        require(a.layer_index < model.layers().size(), ErrorKind::AnchorMismatch, "anchor layer index out of range");
        auto& layer = model.layers()[a.layer_index];
        require(layer.params.size() == a.reference.size(), ErrorKind::AnchorMismatch,
                "anchor parameter blocks do not match layer");
        for (std::size_t p = 0; p < layer.params.size(); ++p) {
            auto& block = layer.params[p];
            const auto& ref = a.reference[p];
            require(block.value.size() == ref.size(), ErrorKind::AnchorMismatch, "anchor block size mismatch");
            for (std::size_t i = 0; i < ref.size(); ++i)
                fn(block, i, ref[i]);
        }
    }
}

} // namespace detail

/// (lambda/2) * sum ||theta' - theta||^2 over the anchored layers.
inline double anchor_penalty(Model& model, const std::vector<AnchorBlock>& anchors, double lambda)
{
    double squared = 0.0;
    detail::for_each_anchored(model, anchors, [&](ParamBlock& b, std::size_t i, double ref) {
        const double d = b.value[i] - ref;
        squared += d * d;
    });
    return 0.5 * lambda * squared;
}

/// Adds the penalty gradient lambda * (theta' - theta) to the model's
/// accumulated gradients. Returns the penalty value.
inline double apply_anchor_penalty(Model& model, const std::vector<AnchorBlock>& anchors, double lambda)
{
    double squared = 0.0;
    detail::for_each_anchored(model, anchors, [&](ParamBlock& b, std::size_t i, double ref) {
        const double d = b.value[i] - ref;
        squared += d * d;
        b.grad[i] += lambda * d;
    });
    return 0.5 * lambda * squared;
}

/// Proximal step for the anchor penalty with step size `step`:
/// theta' <- (theta' + step * lambda * theta) / (1 + step * lambda).
/// Stable for any lambda; a lambda of 0 leaves the model untouched.
inline void anchor_proximal_step(Model& model, const std::vector<AnchorBlock>& anchors, double lambda, double step)
{
    if (lambda == 0.0)
        return;
    const double a = step * lambda;
    detail::for_each_anchored(model, anchors, [&](ParamBlock& b, std::size_t i, double ref) {
        b.value[i] = (b.value[i] + a * ref) / (1.0 + a);
    });
}

struct AdamState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step = 0;
    std::vector<std::vector<std::vector<double>>> m; // [layer][block][i]
    std::vector<std::vector<std::vector<double>>> v;

    void reset() noexcept
    {
        step = 0;
        m.clear();
        v.clear();
    }
};

/// One Adam update with bias correction using the model's accumulated gradients.
inline void adam_step(Model& model, AdamState& state)
{
    auto& layers = model.layers();
    if (state.m.size() != layers.size()) {
        state.m.assign(layers.size(), {});
        state.v.assign(layers.size(), {});
        for (std::size_t l = 0; l < layers.size(); ++l)
            for (const auto& p : layers[l].params) {
                state.m[l].emplace_back(p.value.size(), 0.0);
                state.v[l].emplace_back(p.value.size(), 0.0);
            }
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (!layers[l].spec.trainable)
            continue;
        for (std::size_t b = 0; b < layers[l].params.size(); ++b) {
            auto& p = layers[l].params[b];
            auto& m = state.m[l][b];
            auto& v = state.v[l][b];
            require(m.size() == p.value.size(), ErrorKind::ShapeMismatch, "adam_step: state shape mismatch");
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                const double g = p.grad[i];
                m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
                v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
                const double mhat = m[i] / c1;
                const double vhat = v[i] / c2;
                p.value[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
            }
        }
    }
}

/// Per-parameter mean absolute gradient over a set of mini-batches.
struct GradRecord {
    std::vector<std::vector<std::vector<double>>> mean_abs; // [layer][block][i]
    std::size_t batches = 0;
    bool finalized = false;

    void accumulate(const Model& model)
    {
        const auto& layers = model.layers();
        if (mean_abs.size() != layers.size()) {
            mean_abs.assign(layers.size(), {});
            for (std::size_t l = 0; l < layers.size(); ++l)
                for (const auto& p : layers[l].params)
                    mean_abs[l].emplace_back(p.grad.size(), 0.0);
            batches = 0;
            finalized = false;
        }
        require(!finalized, ErrorKind::InvalidArgument, "GradRecord: accumulate after finalize");
        for (std::size_t l = 0; l < layers.size(); ++l)
            for (std::size_t b = 0; b < layers[l].params.size(); ++b) {
                const auto& g = layers[l].params[b].grad;
                auto& acc = mean_abs[l][b];
                for (std::size_t i = 0; i < g.size(); ++i)
                    acc[i] += std::abs(g[i]);
            }
        ++batches;
    }

    void finalize()
    {
        if (batches == 0 || finalized)
            return;
        finalized = true;
        for (auto& layer : mean_abs)
            for (auto& block : layer)
                for (auto& v : block)
                    v /= static_cast<double>(batches);
    }
};

} // namespace lgmimo::nn
