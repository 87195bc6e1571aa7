// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>

#include "lgmimo/experiments.hpp"

using namespace lgmimo;
using namespace lgmimo::experiments;

namespace {

RunConfig tiny_config()
{
    RunConfig c;
    c.geometry = {2, 8, 4};
    c.samples_per_task = 60;
    c.sweep_samples = 20;
    c.snr_grid = {20.0, 30.0};
    c.collective_tasks = 2;
    c.target_tasks = 1;
    c.collective_epochs = 2;
    c.individual_epochs = 1;
    c.batch_size = 16;
    c.matrix_tasks = 2;
    c.matrix_seeds = {1};
    c.distance_pairs = 10;
    c.schemes = {"scratch", "transfer", "bottom"};
    c.seeds = {1};
    c.workers = 1;
    return c;
}

void expect_kind(const std::function<void()>& fn, ErrorKind kind)
{
    try {
        fn();
        ADD_FAILURE() << "no exception";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), kind);
    }
}

} // namespace

TEST(Pcc, ReferenceValues)
{
    const std::vector<double> x{1, 2, 3, 4, 5};
    std::vector<double> up, down;
    for (double v : x) {
        up.push_back(2 * v + 1);
        down.push_back(-v);
    }
    EXPECT_NEAR(pcc(x, up), 1.0, 1e-12);
    EXPECT_NEAR(pcc(x, down), -1.0, 1e-12);
    // hand computed: x = {1,2,3}, y = {1,3,2} gives 0.5
    EXPECT_NEAR(pcc(std::vector<double>{1, 2, 3}, std::vector<double>{1, 3, 2}), 0.5, 1e-12);
    expect_kind([&] { pcc(x, std::vector<double>(5, 1.0)); }, ErrorKind::ZeroVariance);
    expect_kind([&] { pcc(x, std::vector<double>{1, 2}); }, ErrorKind::LengthMismatch);
}

TEST(Pcc, InvariantUnderPositiveAffineMaps)
{
    RngStream rng(4, "pcc");
    std::vector<double> x(30), y(30), y2(30);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = rng.gaussian();
        y[i] = x[i] + 0.5 * rng.gaussian();
        y2[i] = 3.0 * y[i] - 7.0;
    }
    const double r = pcc(x, y);
    EXPECT_LE(std::abs(r), 1.0);
    EXPECT_NEAR(pcc(x, y2), r, 1e-12);
    EXPECT_NEAR(pcc(y, x), r, 1e-12);
}

TEST(GenError, ReferenceValues)
{
    EXPECT_NEAR(generalization_error_db(2e-2, 1e-2), 0.0, 1e-12);
    EXPECT_NEAR(generalization_error_db(0.11, 0.1), -10.0, 1e-9);
    EXPECT_NEAR(generalization_error_db(0.0, 0.1), 0.0, 1e-12); // |0 - n| / n = 1
    expect_kind([] { generalization_error_db(0.1, 0.1); }, ErrorKind::DegenerateSER);
    expect_kind([] { generalization_error_db(0.1, 0.0); }, ErrorKind::DegenerateSER);
}

TEST(GenError, MatrixSkipsDegenerateEntries)
{
    GenMatrix g;
    g.ser = {{0.1, 0.1, 0.2}, {0.3, 0.0, 0.4}, {0.5, 0.6, 0.05}};
    fill_gen_errors(g);
    // (0,1): matched SER of task 1 is zero; (1,0): 0.3 vs 0.1 is fine; (0,0) diagonal
    EXPECT_FALSE(g.gen_error[0][0]);
    EXPECT_FALSE(g.gen_error[0][1]);
    EXPECT_FALSE(g.gen_error[2][1]);
    ASSERT_TRUE(g.gen_error[1][0]);
    EXPECT_NEAR(*g.gen_error[1][0], 10.0 * std::log10(2.0), 1e-12);
    EXPECT_EQ(g.excluded, 2U);
    EXPECT_NEAR(g.mean_matched(), 0.15 / 3.0, 1e-15);
}

TEST(Helpers, Median)
{
    EXPECT_EQ(median({3, 1, 2}), 2.0);
    EXPECT_EQ(median({4, 1, 3, 2}), 2.5);
    EXPECT_THROW(median({}), Error);
}

TEST(Helpers, ParallelForFillsEveryIndexOnce)
{
    for (int workers : {1, 3}) {
        std::vector<std::atomic<int>> hits(50);
        parallel_for(hits.size(), workers, [&](std::size_t i) { hits[i]++; });
        for (const auto& h : hits)
            EXPECT_EQ(h.load(), 1);
    }
    try {
        parallel_for(10, 3, [](std::size_t i) {
            if (i == 4 || i == 7)
                fail(ErrorKind::InvalidArgument, "job " + std::to_string(i));
        });
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("job 4"), std::string::npos);
    }
}

TEST(Schemes, ParseNames)
{
    EXPECT_EQ(parse_scheme("scratch").name(), "scratch");
    EXPECT_EQ(parse_scheme("transfer").name(), "transfer");
    EXPECT_EQ(parse_scheme("bottom").name(), "learngene-bottom");
    EXPECT_EQ(parse_scheme("learngene").name(), "learngene-bottom");
    EXPECT_EQ(parse_scheme("learngene-inheriting-top").name(), "learngene-inheriting-top");
    EXPECT_THROW(parse_scheme("sideways"), Error);
}

TEST(Schemes, TransferredRatios)
{
    const Geometry g;
    const auto target = generate_dataset(make_task(2, 9, {}, g), 20, 25.0, dataset_options(g), 2);
    const auto collective = sdnet::make_initialized(sdnet::build_sdnet(learngene::kCollectiveConvs, g.nt, g.nr), 3);
    learngene::GradSigLog log;
    for (std::uint64_t k = 0; k < 3; ++k) {
        std::vector<double> col;
        for (int l = 1; l <= learngene::kCollectiveConvs; ++l)
            col.push_back(l >= 9 ? 0.0 : 1.0);
        log.append(k, 1, col);
    }
    const auto unit = learngene::extract_learngene(collective, log);
    const auto base = sdnet::build_sdnet(learngene::kIndividualConvs, g.nt, g.nr);
    sdnet::TrainConfig cfg;
    cfg.epochs = 0;
    SchemeInputs in;
    in.unit = &unit;
    in.collective = &collective;
    in.pretrained = &collective; // wrong architecture on purpose, replaced below

    EXPECT_EQ(run_scheme(parse_scheme("scratch"), target, cfg, in, base).record.transferred_ratio, 0.0);
    const auto lg = run_scheme(parse_scheme("bottom"), target, cfg, in, base).record;
    EXPECT_EQ(lg.copied_parameters, 2336U);
    EXPECT_EQ(lg.trainable_parameters, 21627U);
    EXPECT_EQ(format_percent(lg.transferred_ratio), "10.8%");

    expect_kind([&] { run_scheme(parse_scheme("transfer"), target, cfg, in, base); }, ErrorKind::ShapeMismatch);
    const auto pretrained = sdnet::make_initialized(base, 5);
    in.pretrained = &pretrained;
    EXPECT_EQ(run_scheme(parse_scheme("transfer"), target, cfg, in, base).record.transferred_ratio, 1.0);

    SchemeInputs none;
    expect_kind([&] { run_scheme(parse_scheme("transfer"), target, cfg, none, base); }, ErrorKind::MissingSource);
    expect_kind([&] { run_scheme(parse_scheme("bottom"), target, cfg, none, base); }, ErrorKind::MissingUnit);
}

TEST(Complexity, ReportRows)
{
    const auto rows = complexity_report();
    ASSERT_EQ(rows.size(), 5U);
    EXPECT_EQ(rows[0].parameters, 21627U);
    EXPECT_EQ(rows[0].flops, 9917440U);
    EXPECT_EQ(rows[2].parameters, 24027U);
    EXPECT_EQ(rows[2].flops, 14709760U);
    EXPECT_EQ(rows[3].parameters, 2336U);
    EXPECT_EQ(rows[3].flops, 4792320U);
    EXPECT_EQ(format_percent(rows[4].transferred_ratio), "10.8%");
    EXPECT_EQ(rows[1].transferred_ratio, 1.0);
    EXPECT_EQ(rows[0].layers, "10 Conv+BN, 1 FC"); // 8 middle convs plus input and output convs
}

TEST(Config, RoundTripAndHash)
{
    const RunConfig c = tiny_config();
    const auto back = config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_EQ(config_hash(back), config_hash(c));
    RunConfig d = c;
    d.lambda = 1.0;
    EXPECT_NE(config_hash(d), config_hash(c));
}

TEST(Config, RejectsUnknownKeysAndBadValues)
{
    auto j = to_json(RunConfig{});
    j["train"]["learning_rte"] = 1e-3;
    expect_kind([&] { config_from_json(j); }, ErrorKind::ConfigError);
    j = to_json(RunConfig{});
    j["schema_version"] = 2;
    expect_kind([&] { config_from_json(j); }, ErrorKind::ConfigError);
    j = to_json(RunConfig{});
    j["schemes"] = {"scratch", "sideways"};
    expect_kind([&] { config_from_json(j); }, ErrorKind::ConfigError);
    j = to_json(RunConfig{});
    j["train"]["batch_size"] = "big";
    expect_kind([&] { config_from_json(j); }, ErrorKind::ConfigError);
}

TEST(Sweep, MmseNeverWorseThanZfInAggregate)
{
    const RunConfig c = tiny_config();
    const auto task = make_task(c.master_seed, 0, c.channel, c.geometry);
    const std::vector<double> snrs{10.0, 15.0, 20.0};
    const auto sets = sweep_datasets(c, task, snrs, 300);
    const auto zf = baseline_curve(DetectorTag::ZF, sets);
    const auto mmse = baseline_curve(DetectorTag::MMSE, sets);
    std::size_t zf_err = 0, mmse_err = 0;
    for (std::size_t i = 0; i < snrs.size(); ++i) {
        zf_err += zf.points[i].ser.errors;
        mmse_err += mmse.points[i].ser.errors;
    }
    EXPECT_LE(mmse_err, zf_err);
    EXPECT_EQ(zf.monotone_violations(), 0);
    // same channels and symbols at every SNR
    EXPECT_EQ(sets[0].samples[5].h, sets[2].samples[5].h);
    EXPECT_EQ(sets[0].samples[5].x, sets[2].samples[5].x);
}

TEST(ZfNoise, EmpiricalMatchesClosedForm)
{
    RunConfig c;
    c.geometry = {2, 8, 4};
    for (const auto& row : zf_noise_study(c, 2, 20000))
        EXPECT_LT(row.total_rel_error(), 0.05);
}

TEST(Pipeline, TinyRunWritesArtifactsDeterministically)
{
    const RunConfig c = tiny_config();
    const auto dir = std::filesystem::temp_directory_path() / "lgmimo_pipeline_test";
    std::filesystem::remove_all(dir);
    const auto a = run_pipeline(c, dir / "a");
    const auto b = run_pipeline(c, dir / "b");
    for (const auto& p : {a.gradsig_path, a.summary_path, a.metrics_path, a.spectra_path, a.unit_path, a.collective_path})
        EXPECT_TRUE(std::filesystem::exists(p)) << p;
    EXPECT_EQ(io::read_text(a.gradsig_path), io::read_text(b.gradsig_path));
    EXPECT_EQ(io::read_text(a.summary_path), io::read_text(b.summary_path));
    ASSERT_EQ(a.records.size(), 3U);
    EXPECT_EQ(a.records[0].trainable_parameters, a.records[2].trainable_parameters);
    const auto summary = io::read_text(a.summary_path);
    EXPECT_NE(summary.find(kSummaryHeader), std::string::npos);
    EXPECT_NE(summary.find("config_hash=" + config_hash(c)), std::string::npos);
    std::filesystem::remove_all(dir);
}
