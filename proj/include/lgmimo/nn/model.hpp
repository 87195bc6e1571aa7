// SPDX-License-Identifier: Apache-2.0
//
// lgmimo: deep MIMO detection and learngene transfer workbench
// ------------------------------------------------------------------------
//
// Sequential model made of the handful of layer kinds SDNet needs, with
// batched forward/backward passes.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lgmimo/error.hpp"
#include "lgmimo/nn/kernels.hpp"
#include "lgmimo/nn/tensor.hpp"
#include "lgmimo/rng.hpp"

namespace lgmimo::nn {

enum class LayerKind { Conv3x3, BatchNorm, Tanh, Flatten, Dense, UpsampleWidth2x };

inline std::string_view to_string(LayerKind kind)
{
    switch (kind) {
    case LayerKind::Conv3x3: return "conv3x3";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::Tanh: return "tanh";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
    case LayerKind::UpsampleWidth2x: return "upsample_width2x";
    }
    return "unknown";
}

inline LayerKind layer_kind_from_string(std::string_view name)
{
    for (auto k : {LayerKind::Conv3x3, LayerKind::BatchNorm, LayerKind::Tanh, LayerKind::Flatten, LayerKind::Dense,
                   LayerKind::UpsampleWidth2x})
        if (to_string(k) == name)
            return k;
    fail(ErrorKind::FormatVersionMismatch, "unknown layer kind '" + std::string(name) + "'");
}

inline constexpr double kBatchNormEpsilon = 1e-3;
inline constexpr double kBatchNormMomentum = 0.99;

struct LayerSpec {
    LayerKind kind = LayerKind::Tanh;
    int in = 0;  // channels (conv, batchnorm) or features (dense)
    int out = 0; // channels (conv, batchnorm) or features (dense)
    bool trainable = true;
    // 1..N_conv for the middle 8->8 convolutions, 0 otherwise.
    int significant_id = 0;

    static LayerSpec conv(int cin, int cout, int significant = 0) { return {LayerKind::Conv3x3, cin, cout, true, significant}; }
    static LayerSpec batchnorm(int c) { return {LayerKind::BatchNorm, c, c, true, 0}; }
    static LayerSpec tanh() { return {LayerKind::Tanh, 0, 0, true, 0}; }
    static LayerSpec flatten() { return {LayerKind::Flatten, 0, 0, true, 0}; }
    static LayerSpec dense(int in, int out) { return {LayerKind::Dense, in, out, true, 0}; }
    static LayerSpec upsample_width2x() { return {LayerKind::UpsampleWidth2x, 0, 0, true, 0}; }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ParamBlock {
    std::string name;
    std::vector<double> value;
    std::vector<double> grad;
};

struct Layer {
    LayerSpec spec;
    Shape in_shape;
    Shape out_shape;
    std::vector<ParamBlock> params; // conv/dense: kernel, bias; batchnorm: gamma, beta
    std::vector<double> running_mean;
    std::vector<double> running_var;

    [[nodiscard]] bool has_params() const noexcept { return !params.empty(); }
};

/// Descriptive metadata carried with a model through checkpoints.
struct ModelInfo {
    std::string family;      // "sdnet" for SDNet builds
    int n_conv = 0;          // number of significant (middle) convolutions
    int nt = 0;              // streams the model is wired for (input width / 2)
    int nr = 0;
    bool upsampled = false;
    double h_scale = 1.0;    // multiplier applied to channel rows of the input
    double zf_clip = 3.0;    // clip applied to the ZF row of the input
    std::uint64_t seed = 0;
    std::string config_hash;

    friend bool operator==(const ModelInfo&, const ModelInfo&) = default;
};

inline Shape infer_output_shape(const LayerSpec& spec, const Shape& in)
{
    switch (spec.kind) {
    case LayerKind::Conv3x3:
        require(in.c == spec.in, ErrorKind::ShapeMismatch,
                "conv expects " + std::to_string(spec.in) + " channels, got " + to_string(in));
        return {in.h, in.w, spec.out};
    case LayerKind::BatchNorm:
        require(in.c == spec.in && spec.in == spec.out, ErrorKind::ShapeMismatch, "batchnorm channel mismatch");
        return in;
    case LayerKind::Tanh: return in;
    case LayerKind::Flatten: return {1, 1, static_cast<int>(in.size())};
    case LayerKind::Dense:
        require(in.h == 1 && in.w == 1 && in.c == spec.in, ErrorKind::ShapeMismatch,
                "dense expects " + std::to_string(spec.in) + " features, got " + to_string(in));
        return {1, 1, spec.out};
    case LayerKind::UpsampleWidth2x: return {in.h, 2 * in.w, in.c};
    }
    fail(ErrorKind::ShapeMismatch, "unknown layer kind");
}

class Model {
public:
    Model() = default;

    /// Builds the layer stack, checks shapes end to end and allocates
    /// zero-valued parameters (batchnorm gamma = 1, running var = 1).
    Model(Shape input, std::vector<LayerSpec> specs, ModelInfo info = {})
        : info_(std::move(info)), input_shape_(input)
    {
        Shape s = input;
        layers_.reserve(specs.size());
        for (const auto& spec : specs) {
            Layer layer;
            layer.spec = spec;
            layer.in_shape = s;
            layer.out_shape = infer_output_shape(spec, s);
            switch (spec.kind) {
            case LayerKind::Conv3x3:
                layer.params.push_back({"kernel", std::vector<double>(9ULL * spec.in * spec.out, 0.0), {}});
                layer.params.push_back({"bias", std::vector<double>(static_cast<std::size_t>(spec.out), 0.0), {}});
                break;
            case LayerKind::Dense:
                layer.params.push_back({"kernel", std::vector<double>(static_cast<std::size_t>(spec.in) * spec.out, 0.0), {}});
                layer.params.push_back({"bias", std::vector<double>(static_cast<std::size_t>(spec.out), 0.0), {}});
                break;
            case LayerKind::BatchNorm:
                layer.params.push_back({"gamma", std::vector<double>(static_cast<std::size_t>(spec.in), 1.0), {}});
                layer.params.push_back({"beta", std::vector<double>(static_cast<std::size_t>(spec.in), 0.0), {}});
                layer.running_mean.assign(static_cast<std::size_t>(spec.in), 0.0);
                layer.running_var.assign(static_cast<std::size_t>(spec.in), 1.0);
                break;
            default: break;
            }
            for (auto& p : layer.params)
                p.grad.assign(p.value.size(), 0.0);
            s = layer.out_shape;
            layers_.push_back(std::move(layer));
        }
        output_shape_ = s;
    }

    [[nodiscard]] const Shape& input_shape() const noexcept { return input_shape_; }
    [[nodiscard]] const Shape& output_shape() const noexcept { return output_shape_; }
    [[nodiscard]] std::vector<Layer>& layers() noexcept { return layers_; }
    [[nodiscard]] const std::vector<Layer>& layers() const noexcept { return layers_; }
    [[nodiscard]] ModelInfo& info() noexcept { return info_; }
    [[nodiscard]] const ModelInfo& info() const noexcept { return info_; }

    [[nodiscard]] std::vector<LayerSpec> specs() const
    {
        std::vector<LayerSpec> out;
        out.reserve(layers_.size());
        for (const auto& l : layers_)
            out.push_back(l.spec);
        return out;
    }

    /// Layer indices of all Conv3x3 layers, in order.
    [[nodiscard]] std::vector<std::size_t> conv_layers() const
    {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < layers_.size(); ++i)
            if (layers_[i].spec.kind == LayerKind::Conv3x3)
                out.push_back(i);
        return out;
    }

    /// Layer index of the convolution carrying significant id `id`.
    [[nodiscard]] std::optional<std::size_t> significant_layer(int id) const
    {
        for (std::size_t i = 0; i < layers_.size(); ++i)
            if (layers_[i].spec.kind == LayerKind::Conv3x3 && layers_[i].spec.significant_id == id)
                return i;
        return std::nullopt;
    }

    [[nodiscard]] int significant_count() const
    {
        int n = 0;
        for (const auto& l : layers_)
            n += (l.spec.kind == LayerKind::Conv3x3 && l.spec.significant_id > 0) ? 1 : 0;
        return n;
    }

    void zero_grad()
    {
        for (auto& l : layers_)
            for (auto& p : l.params)
                std::fill(p.grad.begin(), p.grad.end(), 0.0);
    }

private:
    ModelInfo info_;
    Shape input_shape_;
    Shape output_shape_;
    std::vector<Layer> layers_;
};

/// Glorot-uniform kernels, zero biases, identity batchnorm; one RNG stream
/// per layer index so re-initialising a subset of layers is reproducible.
inline void glorot_init_layer(Layer& layer, std::uint64_t seed, std::size_t layer_index)
{
    RngStream rng(seed, "init", layer_index);
    const auto& spec = layer.spec;
    if (spec.kind == LayerKind::Conv3x3 || spec.kind == LayerKind::Dense) {
        const double fan_in = spec.kind == LayerKind::Conv3x3 ? 9.0 * spec.in : spec.in;
        const double fan_out = spec.kind == LayerKind::Conv3x3 ? 9.0 * spec.out : spec.out;
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& v : layer.params[0].value)
            v = rng.uniform(-limit, limit);
        std::fill(layer.params[1].value.begin(), layer.params[1].value.end(), 0.0);
    } else if (spec.kind == LayerKind::BatchNorm) {
        std::fill(layer.params[0].value.begin(), layer.params[0].value.end(), 1.0);
        std::fill(layer.params[1].value.begin(), layer.params[1].value.end(), 0.0);
        std::fill(layer.running_mean.begin(), layer.running_mean.end(), 0.0);
        std::fill(layer.running_var.begin(), layer.running_var.end(), 1.0);
    }
}

inline void glorot_init(Model& model, std::uint64_t seed)
{
    for (std::size_t i = 0; i < model.layers().size(); ++i)
        glorot_init_layer(model.layers()[i], seed, i);
}

enum class Mode { Train, Infer };

/// Per-layer state kept by a training forward pass. Reusing one cache across
/// steps keeps its buffers allocated.
struct ForwardCache {
    std::vector<Batch> inputs;                  // input of layer i; inputs.back() is the model output
    std::vector<std::vector<double>> bn_xhat;   // normalised activations (batchnorm layers)
    std::vector<std::vector<double>> bn_inv_std;
    std::array<Batch, 2> grad_work;             // backward ping-pong buffers
};

namespace detail {

inline void conv_forward_batch(const Layer& layer, const Batch& in, Batch& out)
{
    const auto& s = layer.in_shape;
    std::vector<double> padded;
    for (int b = 0; b < in.n; ++b) {
        kernels::pad_same(in.sample(b), s.h, s.w, s.c, padded);
        kernels::conv3x3_forward(padded.data(), s.h, s.w, s.c, layer.spec.out, layer.params[0].value.data(),
                                 layer.params[1].value.data(), out.sample(b).data());
    }
}

// Batchnorm statistics are summed in a fixed sequential order so results do
// not depend on buffer alignment.
inline void batchnorm_forward_batch(Layer& layer, const Batch& in, Batch& out, Mode mode,
                                    std::vector<double>* xhat_out, std::vector<double>* inv_std_out)
{
    const auto c = static_cast<std::size_t>(layer.spec.in);
    const std::size_t positions = static_cast<std::size_t>(in.n) * in.shape.h * in.shape.w;
    const auto& gamma = layer.params[0].value;
    const auto& beta = layer.params[1].value;
    const double* x = in.data.data();
    double* y = out.data.data();
    if (mode == Mode::Infer) {
        std::vector<double> scale(c);
        std::vector<double> shift(c);
        for (std::size_t ch = 0; ch < c; ++ch) {
            scale[ch] = gamma[ch] / std::sqrt(layer.running_var[ch] + kBatchNormEpsilon);
            shift[ch] = beta[ch] - layer.running_mean[ch] * scale[ch];
        }
        for (std::size_t p = 0; p < positions; ++p)
            for (std::size_t ch = 0; ch < c; ++ch)
                y[p * c + ch] = x[p * c + ch] * scale[ch] + shift[ch];
        return;
    }
    std::vector<double> mean(c, 0.0);
    std::vector<double> var(c, 0.0);
    for (std::size_t p = 0; p < positions; ++p)
        for (std::size_t ch = 0; ch < c; ++ch)
            mean[ch] += x[p * c + ch];
    for (auto& m : mean)
        m /= static_cast<double>(positions);
    for (std::size_t p = 0; p < positions; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double d = x[p * c + ch] - mean[ch];
            var[ch] += d * d;
        }
    for (auto& v : var)
        v /= static_cast<double>(positions);
    std::vector<double> inv_std(c);
    for (std::size_t ch = 0; ch < c; ++ch)
        inv_std[ch] = 1.0 / std::sqrt(var[ch] + kBatchNormEpsilon);
    std::vector<double> local;
    std::vector<double>& xhat = xhat_out ? *xhat_out : local;
    xhat.resize(positions * c);
    for (std::size_t p = 0; p < positions; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double xh = (x[p * c + ch] - mean[ch]) * inv_std[ch];
            xhat[p * c + ch] = xh;
            y[p * c + ch] = gamma[ch] * xh + beta[ch];
        }
    for (std::size_t ch = 0; ch < c; ++ch) {
        layer.running_mean[ch] = kBatchNormMomentum * layer.running_mean[ch] + (1.0 - kBatchNormMomentum) * mean[ch];
        layer.running_var[ch] = kBatchNormMomentum * layer.running_var[ch] + (1.0 - kBatchNormMomentum) * var[ch];
    }
    if (inv_std_out)
        *inv_std_out = std::move(inv_std);
}

} // namespace detail

/// Batched forward pass. Train mode normalises batchnorm with batch statistics
/// and updates running statistics; infer mode uses the running statistics, so
/// each sample's output is independent of the rest of the batch.
inline Batch forward(Model& model, const Batch& input, Mode mode, ForwardCache* cache = nullptr)
{
    require(input.shape == model.input_shape(), ErrorKind::ShapeMismatch,
            "forward: input " + to_string(input.shape) + " does not match model input " +
                to_string(model.input_shape()));
    require(input.n > 0, ErrorKind::ShapeMismatch, "forward: empty batch");
    auto& layers = model.layers();
    std::array<Batch, 2> scratch;
    if (cache) {
        cache->inputs.resize(layers.size() + 1);
        cache->bn_xhat.resize(layers.size());
        cache->bn_inv_std.resize(layers.size());
        cache->inputs[0] = input;
    }
    const Batch* cur = &input;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto& layer = layers[i];
        const Batch& current = *cur;
        Batch& next = cache ? cache->inputs[i + 1] : scratch[i % 2];
        next.reshape(current.n, layer.out_shape);
        switch (layer.spec.kind) {
        case LayerKind::Conv3x3: detail::conv_forward_batch(layer, current, next); break;
        case LayerKind::BatchNorm:
            detail::batchnorm_forward_batch(layer, current, next, mode, cache ? &cache->bn_xhat[i] : nullptr,
                                            cache ? &cache->bn_inv_std[i] : nullptr);
            break;
        case LayerKind::Tanh:
            std::copy(current.data.begin(), current.data.end(), next.data.begin());
            kernels::tanh_inplace(next.data);
            break;
        case LayerKind::Flatten: std::copy(current.data.begin(), current.data.end(), next.data.begin()); break;
        case LayerKind::Dense:
            for (int b = 0; b < current.n; ++b)
                kernels::dense_forward(current.sample(b).data(), layer.spec.in, layer.spec.out,
                                       layer.params[0].value.data(), layer.params[1].value.data(),
                                       next.sample(b).data());
            break;
        case LayerKind::UpsampleWidth2x: {
            const auto& s = layer.in_shape;
            for (int b = 0; b < current.n; ++b) {
                const auto src = current.sample(b);
                auto dst = next.sample(b);
                for (int r = 0; r < s.h; ++r)
                    for (int col = 0; col < s.w; ++col)
                        for (int ch = 0; ch < s.c; ++ch) {
                            const double v = src[(static_cast<std::size_t>(r) * s.w + col) * s.c + ch];
                            dst[(static_cast<std::size_t>(r) * 2 * s.w + 2 * col) * s.c + ch] = v;
                            dst[(static_cast<std::size_t>(r) * 2 * s.w + 2 * col + 1) * s.c + ch] = v;
                        }
            }
            break;
        }
        }
        cur = &next;
    }
    return *cur;
}

/// Backward pass from dLoss/dOutput. Parameter gradients are accumulated into
/// each ParamBlock::grad (call Model::zero_grad first). Returns dLoss/dInput.
inline Batch backward(Model& model, ForwardCache& cache, const Batch& output_grad)
{
    auto& layers = model.layers();
    require(cache.inputs.size() == layers.size() + 1, ErrorKind::ShapeMismatch, "backward: cache from another model");
    require(output_grad.shape == model.output_shape() && output_grad.n == cache.inputs.front().n,
            ErrorKind::ShapeMismatch, "backward: gradient shape does not match model output");
    const Batch* gp = &output_grad;
    for (std::size_t idx = layers.size(); idx-- > 0;) {
        const Batch& grad = *gp;
        auto& layer = layers[idx];
        const Batch& in = cache.inputs[idx];
        const Batch& out = cache.inputs[idx + 1];
        Batch& gin = cache.grad_work[idx % 2];
        gin.reshape(in.n, layer.in_shape);
        switch (layer.spec.kind) {
        case LayerKind::Conv3x3: {
            const auto& s = layer.in_shape;
            const int cout = layer.spec.out;
            const auto flipped = kernels::flip_kernel(layer.params[0].value, s.c, cout);
            std::vector<double> padded;
            for (int b = 0; b < in.n; ++b) {
                kernels::pad_same(in.sample(b), s.h, s.w, s.c, padded);
                kernels::conv3x3_weight_grad(padded.data(), s.h, s.w, s.c, cout, grad.sample(b).data(),
                                             layer.params[0].grad.data(), layer.params[1].grad.data());
                kernels::pad_same(grad.sample(b), s.h, s.w, cout, padded);
                kernels::conv3x3_forward(padded.data(), s.h, s.w, cout, s.c, flipped.data(), nullptr,
                                         gin.sample(b).data());
            }
            break;
        }
        case LayerKind::BatchNorm: {
            const auto c = static_cast<std::size_t>(layer.spec.in);
            const std::size_t positions = static_cast<std::size_t>(in.n) * in.shape.h * in.shape.w;
            const auto& xhat = cache.bn_xhat[idx];
            const auto& inv_std = cache.bn_inv_std[idx];
            require(!xhat.empty(), ErrorKind::ShapeMismatch, "backward: batchnorm cache missing (forward in infer mode?)");
            const auto& gamma = layer.params[0].value;
            auto& dgamma = layer.params[0].grad;
            auto& dbeta = layer.params[1].grad;
            std::vector<double> sum_dy(c, 0.0);
            std::vector<double> sum_dy_xhat(c, 0.0);
            const double* dy = grad.data.data();
            for (std::size_t p = 0; p < positions; ++p)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    sum_dy[ch] += dy[p * c + ch];
                    sum_dy_xhat[ch] += dy[p * c + ch] * xhat[p * c + ch];
                }
            for (std::size_t ch = 0; ch < c; ++ch) {
                dbeta[ch] += sum_dy[ch];
                dgamma[ch] += sum_dy_xhat[ch];
            }
            const double inv_n = 1.0 / static_cast<double>(positions);
            double* dx = gin.data.data();
            for (std::size_t p = 0; p < positions; ++p)
                for (std::size_t ch = 0; ch < c; ++ch)
                    dx[p * c + ch] = gamma[ch] * inv_std[ch] *
                                     (dy[p * c + ch] - inv_n * sum_dy[ch] - xhat[p * c + ch] * inv_n * sum_dy_xhat[ch]);
            break;
        }
        case LayerKind::Tanh:
            for (std::size_t k = 0; k < grad.data.size(); ++k)
                gin.data[k] = grad.data[k] * (1.0 - out.data[k] * out.data[k]);
            break;
        case LayerKind::Flatten: std::copy(grad.data.begin(), grad.data.end(), gin.data.begin()); break;
        case LayerKind::Dense:
            for (int b = 0; b < in.n; ++b)
                kernels::dense_backward(in.sample(b).data(), layer.spec.in, layer.spec.out,
                                        layer.params[0].value.data(), grad.sample(b).data(),
                                        layer.params[0].grad.data(), layer.params[1].grad.data(),
                                        gin.sample(b).data());
            break;
        case LayerKind::UpsampleWidth2x: {
            const auto& s = layer.in_shape;
            for (int b = 0; b < in.n; ++b) {
                const auto src = grad.sample(b);
                auto dst = gin.sample(b);
                for (int r = 0; r < s.h; ++r)
                    for (int col = 0; col < s.w; ++col)
                        for (int ch = 0; ch < s.c; ++ch)
                            dst[(static_cast<std::size_t>(r) * s.w + col) * s.c + ch] =
                                src[(static_cast<std::size_t>(r) * 2 * s.w + 2 * col) * s.c + ch] +
                                src[(static_cast<std::size_t>(r) * 2 * s.w + 2 * col + 1) * s.c + ch];
            }
            break;
        }
        }
        gp = &gin;
    }
    return *gp;
}

} // namespace lgmimo::nn
