// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "lgmimo/neuralnet.hpp"
#include "lgmimo/rng.hpp"
#include "lgmimo/sdnet.hpp"

using namespace lgmimo;
using namespace lgmimo::nn;

namespace {

Batch random_batch(int n, Shape s, std::uint64_t seed, double scale = 1.0)
{
    Batch b(n, s);
    RngStream rng(seed, "test-batch");
    for (auto& v : b.data)
        v = scale * rng.gaussian();
    return b;
}

// Scalar objective sum_k w_k * out_k so every output contributes with a distinct weight.
double objective(Model& m, const Batch& x, const Batch& w)
{
    const Batch y = forward(m, x, Mode::Train);
    double s = 0.0;
    for (std::size_t k = 0; k < y.data.size(); ++k)
        s += w.data[k] * y.data[k];
    return s;
}

// Direct 3x3 same-padded convolution written from the definition.
std::vector<double> naive_conv(const std::vector<double>& x, int h, int w, int cin, int cout, const std::vector<double>& k,
                               const std::vector<double>& bias)
{
    std::vector<double> y(static_cast<std::size_t>(h) * w * cout, 0.0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            for (int co = 0; co < cout; ++co) {
                double acc = bias[co];
                for (int kh = 0; kh < 3; ++kh)
                    for (int kw = 0; kw < 3; ++kw) {
                        const int rr = r + kh - 1;
                        const int cc = c + kw - 1;
                        if (rr < 0 || rr >= h || cc < 0 || cc >= w)
                            continue;
                        for (int ci = 0; ci < cin; ++ci)
                            acc += x[(static_cast<std::size_t>(rr) * w + cc) * cin + ci] *
                                   k[((static_cast<std::size_t>(kh) * 3 + kw) * cin + ci) * cout + co];
                    }
                y[(static_cast<std::size_t>(r) * w + c) * cout + co] = acc;
            }
    return y;
}

} // namespace

TEST(Accounting, IndividualModelCounts)
{
    const Model m = sdnet::build_sdnet(8, 8, 32);
    // conv1 + 8 mid convs + conv out + BN(8)*9 + BN(1) + dense 1040->16
    const std::uint64_t expected = (9 * 1 * 8 + 8) + 8 * (9 * 8 * 8 + 8) + (9 * 8 * 1 + 1) + 9 * 16 + 2 + (1040 * 16 + 16);
    EXPECT_EQ(count_params(m).total, expected);
    EXPECT_EQ(count_params(m).total, 21627U);
    const std::uint64_t flops = 1040ULL * 2 * (9 * 8 + 8 * 9 * 64 + 9 * 8) + 2ULL * 1040 * 16;
    EXPECT_EQ(count_flops(m).total, flops);
    EXPECT_EQ(count_flops(m).total, 9917440U);
    EXPECT_EQ(m.significant_count(), 8);
    EXPECT_EQ(m.input_shape(), (Shape{65, 16, 1}));
    EXPECT_EQ(m.output_shape(), (Shape{1, 1, 16}));
}

TEST(Accounting, CollectiveModelCounts)
{
    const Model m = sdnet::build_sdnet(12, 8, 32);
    EXPECT_EQ(count_params(m).total, 24027U);
    EXPECT_EQ(count_flops(m).total, 14709760U);
    EXPECT_EQ(m.significant_count(), 12);
}

TEST(Accounting, ParamsAreLinearInConvCount)
{
    const auto base = count_params(sdnet::build_sdnet(1, 8, 32)).total;
    for (int n = 2; n <= 14; ++n)
        EXPECT_EQ(count_params(sdnet::build_sdnet(n, 8, 32)).total, base + static_cast<std::uint64_t>(n - 1) * 600U);
}

TEST(Kernels, ConvMatchesDirectDefinition)
{
    const std::pair<int, int> channel_pairs[] = {{1, 8}, {8, 8}, {8, 1}, {3, 5}};
    int seed = 0;
    for (auto [cin, cout] : channel_pairs) {
        const int h = 7, w = 6;
        RngStream rng(static_cast<std::uint64_t>(++seed), "conv");
        std::vector<double> x(static_cast<std::size_t>(h) * w * cin), k(9ULL * cin * cout), b(static_cast<std::size_t>(cout));
        for (auto* v : {&x, &k, &b})
            for (auto& e : *v)
                e = rng.gaussian();
        std::vector<double> padded;
        kernels::pad_same(x, h, w, cin, padded);
        std::vector<double> y(static_cast<std::size_t>(h) * w * cout);
        kernels::conv3x3_forward(padded.data(), h, w, cin, cout, k.data(), b.data(), y.data());
        const auto ref = naive_conv(x, h, w, cin, cout, k, b);
        for (std::size_t i = 0; i < y.size(); ++i)
            EXPECT_NEAR(y[i], ref[i], 1e-12) << cin << "->" << cout << " at " << i;
    }
}

// Central differences against the analytic backward pass on a small SDNet,
// over parameters of every block and over the input.
TEST(Gradients, FiniteDifferenceAcrossSeeds)
{
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Model m = sdnet::build_sdnet(2, 2, 2);
        glorot_init(m, seed);
        // Perturb batchnorm affine terms away from identity so their gradients are generic.
        RngStream prng(seed, "perturb");
        for (auto& l : m.layers())
            if (l.spec.kind == LayerKind::BatchNorm)
                for (auto& p : l.params)
                    for (auto& v : p.value)
                        v += 0.3 * prng.gaussian();
        const Batch x = random_batch(3, m.input_shape(), seed, 1.5);
        const Batch w = random_batch(3, m.output_shape(), seed + 1000);

        m.zero_grad();
        ForwardCache cache;
        const Batch y = forward(m, x, Mode::Train, &cache);
        (void)y;
        const Batch gx = backward(m, cache, w);

        const double h = 1e-6;
        for (std::size_t li = 0; li < m.layers().size(); ++li) {
            for (std::size_t bi = 0; bi < m.layers()[li].params.size(); ++bi) {
                auto& block = m.layers()[li].params[bi];
                const std::size_t step = std::max<std::size_t>(1, block.value.size() / 7);
                for (std::size_t i = 0; i < block.value.size(); i += step) {
                    const double orig = block.value[i];
                    block.value[i] = orig + h;
                    const double fp = objective(m, x, w);
                    block.value[i] = orig - h;
                    const double fm = objective(m, x, w);
                    block.value[i] = orig;
                    const double fd = (fp - fm) / (2 * h);
                    EXPECT_NEAR(block.grad[i], fd, 1e-6 + 1e-5 * std::abs(fd))
                        << "seed " << seed << " layer " << li << " block " << block.name << " index " << i;
                }
            }
        }
        Batch xp = x;
        for (std::size_t i = 0; i < x.data.size(); i += 5) {
            xp.data[i] = x.data[i] + h;
            const double fp = objective(m, xp, w);
            xp.data[i] = x.data[i] - h;
            const double fm = objective(m, xp, w);
            xp.data[i] = x.data[i];
            const double fd = (fp - fm) / (2 * h);
            EXPECT_NEAR(gx.data[i], fd, 1e-6 + 1e-5 * std::abs(fd)) << "seed " << seed << " input " << i;
        }
    }
}

TEST(Gradients, UpsampledModelFiniteDifference)
{
    Model m = sdnet::build_upsampled_sdnet(1, 2, 2, 4);
    glorot_init(m, 5);
    const Batch x = random_batch(2, m.input_shape(), 5);
    const Batch w = random_batch(2, m.output_shape(), 6);
    m.zero_grad();
    ForwardCache cache;
    forward(m, x, Mode::Train, &cache);
    backward(m, cache, w);
    const auto li = *m.significant_layer(1);
    auto& block = m.layers()[li].params[0];
    for (std::size_t i = 0; i < block.value.size(); i += 13) {
        const double orig = block.value[i];
        block.value[i] = orig + 1e-6;
        const double fp = objective(m, x, w);
        block.value[i] = orig - 1e-6;
        const double fm = objective(m, x, w);
        block.value[i] = orig;
        EXPECT_NEAR(block.grad[i], (fp - fm) / 2e-6, 1e-6);
    }
}

TEST(BatchNorm, TrainOutputHasUnitStatistics)
{
    Model m(Shape{4, 5, 3}, {LayerSpec::batchnorm(3)});
    const Batch x = random_batch(6, m.input_shape(), 11, 25.0);
    const Batch y = forward(m, x, Mode::Train);
    for (int ch = 0; ch < 3; ++ch) {
        double mean = 0, sq = 0;
        const std::size_t n = y.data.size() / 3;
        for (std::size_t p = 0; p < n; ++p)
            mean += y.data[p * 3 + ch];
        mean /= static_cast<double>(n);
        for (std::size_t p = 0; p < n; ++p)
            sq += (y.data[p * 3 + ch] - mean) * (y.data[p * 3 + ch] - mean);
        EXPECT_NEAR(mean, 0.0, 1e-12);
        // variance is var / (var + eps); inputs have variance ~625
        EXPECT_NEAR(sq / static_cast<double>(n), 1.0, 1e-5);
    }
}

TEST(BatchNorm, RunningStatisticsFollowMomentum)
{
    Model m(Shape{2, 2, 1}, {LayerSpec::batchnorm(1)});
    Batch x(1, {2, 2, 1});
    x.data = {1.0, 2.0, 3.0, 6.0}; // mean 3, biased variance 3.5
    forward(m, x, Mode::Train);
    EXPECT_NEAR(m.layers()[0].running_mean[0], 0.01 * 3.0, 1e-15);
    EXPECT_NEAR(m.layers()[0].running_var[0], 0.99 + 0.01 * 3.5, 1e-15);
}

TEST(BatchNorm, InferOutputIndependentOfBatchComposition)
{
    Model m = sdnet::build_sdnet(1, 2, 2);
    glorot_init(m, 3);
    forward(m, random_batch(4, m.input_shape(), 1), Mode::Train);
    const Batch a = random_batch(5, m.input_shape(), 2);
    const Batch full = forward(m, a, Mode::Infer);
    Batch one(1, a.shape);
    std::copy(a.sample(3).begin(), a.sample(3).end(), one.sample(0).begin());
    const Batch single = forward(m, one, Mode::Infer);
    for (std::size_t k = 0; k < single.data.size(); ++k)
        EXPECT_DOUBLE_EQ(single.data[k], full.sample(3)[k]);
}

TEST(Adam, ZeroGradientIsFixedPoint)
{
    Model m = sdnet::build_sdnet(1, 2, 2);
    glorot_init(m, 9);
    const auto before = m.layers();
    AdamState st;
    for (int i = 0; i < 5; ++i) {
        m.zero_grad();
        adam_step(m, st);
    }
    for (std::size_t l = 0; l < before.size(); ++l)
        for (std::size_t b = 0; b < before[l].params.size(); ++b)
            EXPECT_EQ(before[l].params[b].value, m.layers()[l].params[b].value);
}

TEST(Adam, FirstStepMovesByLearningRate)
{
    Model m(Shape{1, 1, 2}, {LayerSpec::dense(2, 1)});
    m.layers()[0].params[0].grad = {3.0, -0.25};
    m.layers()[0].params[1].grad = {1e-3};
    AdamState st;
    adam_step(m, st);
    // With bias correction the first update is lr * g / (|g| + eps).
    EXPECT_NEAR(m.layers()[0].params[0].value[0], -1e-3, 1e-10);
    EXPECT_NEAR(m.layers()[0].params[0].value[1], 1e-3, 1e-10);
    EXPECT_NEAR(m.layers()[0].params[1].value[0], -1e-3 * 1e-3 / (1e-3 + 1e-8), 1e-12);
}

TEST(Adam, FrozenLayersDoNotMove)
{
    Model m = sdnet::build_sdnet(1, 2, 2);
    glorot_init(m, 4);
    const auto li = *m.significant_layer(1);
    m.layers()[li].spec.trainable = false;
    const auto before = m.layers()[li].params[0].value;
    for (auto& l : m.layers())
        for (auto& p : l.params)
            std::fill(p.grad.begin(), p.grad.end(), 1.0);
    AdamState st;
    adam_step(m, st);
    EXPECT_EQ(before, m.layers()[li].params[0].value);
    EXPECT_NE(m.layers()[0].params[0].value[0], Model(sdnet::build_sdnet(1, 2, 2)).layers()[0].params[0].value[0]);
}

TEST(Loss, MseMatchesDefinition)
{
    Batch p(2, {1, 1, 2}), t(2, {1, 1, 2});
    p.data = {1, 2, 3, 4};
    t.data = {0, 0, 0, 0};
    const auto r = mse_loss(p, t);
    EXPECT_DOUBLE_EQ(r.value, (1 + 4 + 9 + 16) / 2.0);
    EXPECT_DOUBLE_EQ(r.grad.data[3], 4.0);
}

TEST(Anchor, PenaltyAndGradient)
{
    Model m(Shape{1, 1, 2}, {LayerSpec::dense(2, 1)});
    m.layers()[0].params[0].value = {1.0, 2.0};
    AnchorBlock a{0, {{0.0, 0.0}, {0.0}}};
    m.zero_grad();
    const double pen = apply_anchor_penalty(m, {a}, 0.5);
    EXPECT_DOUBLE_EQ(pen, 0.25 * 5.0);
    EXPECT_DOUBLE_EQ(m.layers()[0].params[0].grad[1], 1.0);
    AnchorBlock bad{0, {{0.0}}};
    EXPECT_THROW(apply_anchor_penalty(m, {bad}, 0.5), Error);
}

TEST(Checkpoint, RoundTripIsBitExact)
{
    const auto dir = std::filesystem::temp_directory_path() / "lgmimo_ckpt_test";
    std::filesystem::create_directories(dir);
    Model m = sdnet::build_sdnet(3, 4, 6);
    glorot_init(m, 21);
    forward(m, random_batch(3, m.input_shape(), 2), Mode::Train); // move running stats
    m.info().h_scale = 1.2345;
    save_checkpoint(m, dir / "m.json", {{"note", "x"}});
    auto loaded = load_checkpoint(dir / "m.json");
    ASSERT_EQ(loaded.model.layers().size(), m.layers().size());
    for (std::size_t l = 0; l < m.layers().size(); ++l) {
        for (std::size_t b = 0; b < m.layers()[l].params.size(); ++b)
            EXPECT_EQ(m.layers()[l].params[b].value, loaded.model.layers()[l].params[b].value);
        EXPECT_EQ(m.layers()[l].running_var, loaded.model.layers()[l].running_var);
    }
    EXPECT_EQ(loaded.model.info().h_scale, 1.2345);
    EXPECT_EQ(loaded.manifest["provenance"]["note"], "x");
    const Batch x = random_batch(2, m.input_shape(), 8);
    EXPECT_EQ(forward(m, x, Mode::Infer).data, forward(loaded.model, x, Mode::Infer).data);
}

TEST(Checkpoint, CorruptionAndVersionAreDetected)
{
    const auto dir = std::filesystem::temp_directory_path() / "lgmimo_ckpt_test2";
    std::filesystem::create_directories(dir);
    Model m = sdnet::build_sdnet(1, 2, 2);
    glorot_init(m, 1);
    save_checkpoint(m, dir / "m.json");
    {
        std::fstream f(dir / "m.json.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(10);
        f.put('\x7f');
    }
    try {
        load_checkpoint(dir / "m.json");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::CorruptBlob);
    }
    save_checkpoint(m, dir / "m.json");
    auto text = io::read_text(dir / "m.json");
    auto j = io::json::parse(text);
    j["format_version"] = 99;
    io::write_text(dir / "m.json", j.dump());
    try {
        load_checkpoint(dir / "m.json");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::FormatVersionMismatch);
    }
}

TEST(Anchor, ProximalStepSolvesItsSubproblem)
{
    Model m(Shape{1, 1, 2}, {LayerSpec::dense(2, 1)});
    m.layers()[0].params[0].value = {1.0, -3.0};
    m.layers()[0].params[1].value = {0.5};
    const std::vector<double> v = {1.0, -3.0};
    AnchorBlock a{0, {{0.2, 0.4}, {0.0}}};
    const double lambda = 7.0, step = 0.1;
    anchor_proximal_step(m, {a}, lambda, step);
    // stationarity of (1/2 step)||w - v||^2 + (lambda/2)||w - w0||^2
    for (std::size_t i = 0; i < 2; ++i) {
        const double w = m.layers()[0].params[0].value[i];
        EXPECT_NEAR((w - v[i]) / step + lambda * (w - a.reference[0][i]), 0.0, 1e-12);
    }
    EXPECT_DOUBLE_EQ(anchor_penalty(m, {a}, 0.0), 0.0);

    const auto before = m.layers()[0].params[0].value;
    anchor_proximal_step(m, {a}, 0.0, step);
    EXPECT_EQ(m.layers()[0].params[0].value, before);
}
