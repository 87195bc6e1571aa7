// SPDX-License-Identifier: Apache-2.0
//
// lgmimo: deep MIMO detection and learngene transfer workbench
// ------------------------------------------------------------------------
//
// SDNet: a CNN that refines the ZF estimate using the LS channel estimate.
// Input is a (2Nr+1) x 2Nt x 1 map: row 0 is the ZF output, rows 1..2Nr the
// real-lifted LS channel estimate.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lgmimo/channel.hpp"
#include "lgmimo/detectors.hpp"
#include "lgmimo/error.hpp"
#include "lgmimo/neuralnet.hpp"
#include "lgmimo/numerics.hpp"
#include "lgmimo/rng.hpp"

namespace lgmimo::sdnet {

using nn::Batch;
using nn::Model;
using nn::Shape;
using nn::Tensor3;

inline constexpr int kChannels = 8;
inline constexpr double kDefaultZfClip = 3.0;

inline Shape input_shape(int nt, int nr) { return {2 * nr + 1, 2 * nt, 1}; }

/// Row 0 <- clip(x_zf), rows 1..2Nr <- h_scale * H_ls (real lift). A clip of
/// +inf and h_scale of 1 give the raw layout.
inline Tensor3 assemble_input(const RealVector& x_zf, const RealMatrix& h_ls_real, double h_scale = 1.0,
                              double zf_clip = std::numeric_limits<double>::infinity())
{
    const auto two_nt = static_cast<int>(x_zf.size());
    const auto two_nr = static_cast<int>(h_ls_real.rows());
    require(h_ls_real.cols() == two_nt && two_nt % 2 == 0 && two_nr % 2 == 0, ErrorKind::ShapeMismatch,
            "assemble_input: x_zf is " + std::to_string(two_nt) + " long but H is " + std::to_string(h_ls_real.rows()) +
                "x" + std::to_string(h_ls_real.cols()));
    Tensor3 t({two_nr + 1, two_nt, 1});
    for (int j = 0; j < two_nt; ++j)
        t.at(0, j, 0) = std::clamp(x_zf(j), -zf_clip, zf_clip);
    for (int i = 0; i < two_nr; ++i)
        for (int j = 0; j < two_nt; ++j)
            t.at(i + 1, j, 0) = h_scale * h_ls_real(i, j);
    return t;
}

/// Splits an unscaled input map back into (x_zf, H_ls real lift).
inline std::pair<RealVector, RealMatrix> disassemble_input(const Tensor3& t)
{
    const int two_nt = t.shape.w;
    const int two_nr = t.shape.h - 1;
    RealVector x(two_nt);
    RealMatrix h(two_nr, two_nt);
    for (int j = 0; j < two_nt; ++j)
        x(j) = t.at(0, j, 0);
    for (int i = 0; i < two_nr; ++i)
        for (int j = 0; j < two_nt; ++j)
            h(i, j) = t.at(i + 1, j, 0);
    return {x, h};
}

/// 1 / RMS of the real-lifted LS estimates over a set of samples.
inline double fit_h_scale(std::span<const Sample> samples)
{
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& s : samples) {
        sum += 2.0 * s.h_ls.squaredNorm(); // each complex entry appears as four reals, two per part
        count += 4U * static_cast<std::size_t>(s.h_ls.size());
    }
    require(count > 0 && sum > 0.0, ErrorKind::InvalidArgument, "fit_h_scale: empty or all-zero channel set");
    return 1.0 / std::sqrt(sum / static_cast<double>(count));
}

/// Conv stack shared by the plain and upsampled builders.
inline std::vector<nn::LayerSpec> conv_stack(int n_conv, Shape conv_input, int outputs)
{
    using nn::LayerSpec;
    std::vector<LayerSpec> specs;
    specs.push_back(LayerSpec::conv(1, kChannels));
    specs.push_back(LayerSpec::batchnorm(kChannels));
    specs.push_back(LayerSpec::tanh());
    for (int i = 1; i <= n_conv; ++i) {
        specs.push_back(LayerSpec::conv(kChannels, kChannels, i));
        specs.push_back(LayerSpec::batchnorm(kChannels));
        specs.push_back(LayerSpec::tanh());
    }
    specs.push_back(LayerSpec::conv(kChannels, 1));
    specs.push_back(LayerSpec::batchnorm(1));
    specs.push_back(LayerSpec::tanh());
    specs.push_back(LayerSpec::flatten());
    const int features = conv_input.h * conv_input.w;
    specs.push_back(LayerSpec::dense(features, outputs));
    specs.push_back(LayerSpec::tanh());
    return specs;
}

/// SDNet with N_conv significant 8->8 convolutions between the 1->8 input
/// conv and the 8->1 output conv. Parameters are zero until initialised.
inline Model build_sdnet(int n_conv, int nt, int nr)
{
    require(n_conv >= 1 && nt >= 1 && nr >= 1, ErrorKind::InvalidArgument, "build_sdnet: invalid dimensions");
    const Shape in = input_shape(nt, nr);
    auto specs = conv_stack(n_conv, in, 2 * nt);
    nn::ModelInfo info;
    info.family = "sdnet";
    info.n_conv = n_conv;
    info.nt = nt;
    info.nr = nr;
    info.zf_clip = kDefaultZfClip;
    return Model(in, std::move(specs), info);
}

/// SDNet for Nt = native_nt / 2 streams: a width-doubling upsample in front
/// of the conv stack lets convolutions trained at the native width load
/// unchanged.
inline Model build_upsampled_sdnet(int n_conv, int nt_small, int nr, int native_nt = 8)
{
    require(n_conv >= 1 && nt_small >= 1 && nr >= 1, ErrorKind::InvalidArgument,
            "build_upsampled_sdnet: invalid dimensions");
    if (2 * nt_small != native_nt)
        fail(ErrorKind::IncompatibleGeometry, "upsampled SDNet needs Nt = native Nt / 2 (native " +
                                                  std::to_string(native_nt) + ", got " + std::to_string(nt_small) + ")");
    const Shape in = input_shape(nt_small, nr);
    const Shape conv_in{in.h, 2 * in.w, 1};
    std::vector<nn::LayerSpec> specs{nn::LayerSpec::upsample_width2x()};
    const auto stack = conv_stack(n_conv, conv_in, 2 * nt_small);
    specs.insert(specs.end(), stack.begin(), stack.end());
    nn::ModelInfo info;
    info.family = "sdnet";
    info.n_conv = n_conv;
    info.nt = nt_small;
    info.nr = nr;
    info.upsampled = true;
    info.zf_clip = kDefaultZfClip;
    return Model(in, std::move(specs), info);
}

/// Fresh Glorot initialisation of a built SDNet.
inline Model make_initialized(Model model, std::uint64_t seed)
{
    nn::glorot_init(model, seed);
    model.info().seed = seed;
    return model;
}

/// Inputs and targets for a span of samples under a model's input scaling.
struct PreparedSet {
    Batch inputs;
    Batch targets;
    std::vector<RealVector> truths;

    [[nodiscard]] int size() const { return inputs.n; }
};

inline PreparedSet prepare(std::span<const Sample> samples, const nn::ModelInfo& info)
{
    require(!samples.empty(), ErrorKind::InvalidArgument, "prepare: no samples");
    const int nt = static_cast<int>(samples.front().x.size());
    const int nr = static_cast<int>(samples.front().y.size());
    require(nt == info.nt && nr == info.nr, ErrorKind::ShapeMismatch,
            "model geometry (Nt=" + std::to_string(info.nt) + ", Nr=" + std::to_string(info.nr) +
                ") does not match data (Nt=" + std::to_string(nt) + ", Nr=" + std::to_string(nr) + ")");
    PreparedSet set;
    const auto n = static_cast<int>(samples.size());
    set.inputs = Batch(n, input_shape(nt, nr));
    set.targets = Batch(n, {1, 1, 2 * nt});
    set.truths.reserve(samples.size());
    for (int i = 0; i < n; ++i) {
        const auto& s = samples[static_cast<std::size_t>(i)];
        const Tensor3 t = assemble_input(s.x_zf, complex_to_real_channel(s.h_ls), info.h_scale, info.zf_clip);
        std::copy(t.values.begin(), t.values.end(), set.inputs.sample(i).begin());
        const RealVector x = realify(s.x);
        std::copy(x.data(), x.data() + x.size(), set.targets.sample(i).begin());
        set.truths.push_back(x);
    }
    return set;
}

inline Batch gather(const Batch& src, std::span<const std::size_t> indices)
{
    Batch b(static_cast<int>(indices.size()), src.shape);
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const auto from = src.sample(static_cast<int>(indices[k]));
        std::copy(from.begin(), from.end(), b.sample(static_cast<int>(k)).begin());
    }
    return b;
}

/// Infer-mode outputs for a prepared set, evaluated in chunks.
inline std::vector<RealVector> predict(Model& model, const Batch& inputs, int chunk = 256)
{
    std::vector<RealVector> out;
    out.reserve(static_cast<std::size_t>(inputs.n));
    std::vector<std::size_t> idx;
    for (int start = 0; start < inputs.n; start += chunk) {
        const int stop = std::min(inputs.n, start + chunk);
        idx.resize(static_cast<std::size_t>(stop - start));
        std::iota(idx.begin(), idx.end(), static_cast<std::size_t>(start));
        const Batch y = nn::forward(model, gather(inputs, idx), nn::Mode::Infer);
        for (int b = 0; b < y.n; ++b) {
            const auto s = y.sample(b);
            out.emplace_back(Eigen::Map<const RealVector>(s.data(), static_cast<Eigen::Index>(s.size())));
        }
    }
    return out;
}

struct SerResult {
    double ser = 0.0;
    std::size_t errors = 0;
    std::size_t symbols = 0;

    [[nodiscard]] double standard_error() const { return ser_standard_error(ser, symbols); }
};

inline SerResult to_ser_result(const SymbolErrorCount& c) { return {c.rate(), c.errors, c.symbols}; }

inline SerResult evaluate_ser(Model& model, const PreparedSet& set)
{
    const auto pred = predict(model, set.inputs);
    return to_ser_result(count_symbol_errors(pred, set.truths));
}

/// Forward in infer mode, hard decision, symbol error rate against the truth.
inline SerResult evaluate_ser(Model& model, std::span<const Sample> samples)
{
    return evaluate_ser(model, prepare(samples, model.info()));
}

/// SER of the stored ZF outputs (hard decisions) on the same samples.
inline SerResult zf_ser(std::span<const Sample> samples)
{
    std::vector<RealVector> pred;
    std::vector<RealVector> truth;
    for (const auto& s : samples) {
        pred.push_back(s.x_zf);
        truth.push_back(realify(s.x));
    }
    return to_ser_result(count_symbol_errors(pred, truth));
}

struct TrainConfig {
    int epochs = 120;
    int batch_size = 500;
    double learning_rate = 1e-3;
    double lambda = 0.0; // anchor weight; only used with anchors
    std::uint64_t seed = 0;
    bool fit_scaling = true; // refit the channel-row scale on this task's training split
    bool validate = true;    // evaluate validation SER every epoch
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_ser = 0.0;
    double wall_ms = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&, const Model&)>;

struct TrainResult {
    std::vector<EpochRecord> log;
    nn::GradRecord final_epoch_grads;
};

/// Mini-batch Adam on the task's training split (MSE loss, plus the anchor
/// penalty when anchors are given, applied as a proximal step). Adam state starts fresh on every call.
inline TrainResult train_on_task(Model& model, const TaskDataset& dataset, const TrainConfig& cfg,
                                 const std::vector<nn::AnchorBlock>* anchors = nullptr,
                                 const EpochCallback& on_epoch = {})
{
    require(cfg.epochs >= 0 && cfg.batch_size >= 1, ErrorKind::InvalidArgument, "train_on_task: invalid config");
    TrainResult result;
    if (cfg.epochs == 0)
        return result;
    require(dataset.n_train > 0, ErrorKind::InvalidArgument, "train_on_task: empty training split");
    if (cfg.fit_scaling)
        model.info().h_scale = fit_h_scale(dataset.train());
    const PreparedSet train = prepare(dataset.train(), model.info());
    std::optional<PreparedSet> val;
    if (cfg.validate && dataset.n_val > 0)
        val = prepare(dataset.val(), model.info());

    nn::AdamState adam;
    adam.learning_rate = cfg.learning_rate;
    std::vector<std::size_t> order(static_cast<std::size_t>(train.size()));
    nn::ForwardCache cache;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), std::size_t{0});
        RngStream rng(cfg.seed, "shuffle", dataset.task_id, static_cast<std::uint64_t>(epoch));
        rng.shuffle(std::span<std::size_t>(order));
        const bool last = epoch == cfg.epochs;
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const auto stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const std::span<const std::size_t> idx(order.data() + start, stop - start);
            const Batch x = gather(train.inputs, idx);
            const Batch t = gather(train.targets, idx);
            model.zero_grad();
            const Batch y = nn::forward(model, x, nn::Mode::Train, &cache);
            auto loss = nn::mse_loss(y, t);
            nn::backward(model, cache, loss.grad);
            if (last)
                result.final_epoch_grads.accumulate(model);
            if (anchors)
                loss.value += nn::anchor_penalty(model, *anchors, cfg.lambda);
            nn::adam_step(model, adam);
            // the anchor is applied as a proximal step after Adam; folding a
            // huge lambda into the Adam gradient leaves drift of order lr
            if (anchors)
                nn::anchor_proximal_step(model, *anchors, cfg.lambda, cfg.learning_rate);
            loss_sum += loss.value * static_cast<double>(idx.size());
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        rec.val_ser = val ? evaluate_ser(model, *val).ser : 0.0;
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back(rec);
        if (on_epoch)
            on_epoch(rec, model);
    }
    result.final_epoch_grads.finalize();
    return result;
}

} // namespace lgmimo::sdnet
