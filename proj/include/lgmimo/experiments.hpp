// SPDX-License-Identifier: Apache-2.0
//
// lgmimo: deep MIMO detection and learngene transfer workbench
// ------------------------------------------------------------------------
//
// Comparative studies: training schemes, the generalization matrix, PCC,
// SNR sweeps, the scalability run, the complexity table and the full
// collective -> extract -> individual pipeline with its output files.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "lgmimo/channel.hpp"
#include "lgmimo/config.hpp"
#include "lgmimo/container.hpp"
#include "lgmimo/detectors.hpp"
#include "lgmimo/error.hpp"
#include "lgmimo/learngene.hpp"
#include "lgmimo/neuralnet.hpp"
#include "lgmimo/sdnet.hpp"

namespace lgmimo::experiments {

using nn::Model;
using Log = std::function<void(const std::string&)>;

// ---------------------------------------------------------------- workers

/// Worker count: explicit value if positive, else LGMIMO_WORKERS, else the
/// hardware concurrency.
inline int resolve_workers(int requested)
{
    if (requested > 0)
        return requested;
    if (const char* env = std::getenv("LGMIMO_WORKERS")) {
        const int v = std::atoi(env);
        if (v > 0)
            return v;
    }
    return static_cast<int>(std::max(1U, std::thread::hardware_concurrency()));
}

/// Runs fn(0..n-1) on up to `workers` threads. Results must be written by
/// index; the first failing index (lowest) is rethrown.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn)
{
    const auto threads = static_cast<std::size_t>(std::max(1, workers));
    if (threads == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    for (auto& th : pool)
        th.join();
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

// ---------------------------------------------------------------- helpers

inline double median(std::vector<double> v)
{
    require(!v.empty(), ErrorKind::InvalidArgument, "median of an empty set");
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline DatasetOptions dataset_options(const Geometry& g)
{
    DatasetOptions o;
    o.geometry = g;
    return o;
}

inline TaskDataset make_dataset(const RunConfig& c, std::uint64_t task_id, const Geometry& g, std::size_t n, double snr_db)
{
    return generate_dataset(make_task(c.master_seed, task_id, c.channel, g), n, snr_db, dataset_options(g), c.master_seed);
}

/// Collective tasks take ids 0..K-1 and target tasks K..K+T-1.
struct TaskSet {
    std::vector<TaskDataset> collective;
    std::vector<TaskDataset> targets;
};

inline TaskSet make_tasks(const RunConfig& c, int workers)
{
    TaskSet set;
    const auto k = static_cast<std::size_t>(c.collective_tasks);
    std::vector<TaskDataset> all(k + static_cast<std::size_t>(c.target_tasks));
    parallel_for(all.size(), workers, [&](std::size_t i) {
        all[i] = make_dataset(c, i, c.geometry, c.samples_per_task, c.snr_db);
    });
    set.collective.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(k)));
    set.targets.assign(std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(k)), std::make_move_iterator(all.end()));
    return set;
}

inline sdnet::TrainConfig train_config(const RunConfig& c, int epochs, std::uint64_t seed, double lambda = 0.0)
{
    sdnet::TrainConfig t;
    t.epochs = epochs;
    t.batch_size = c.batch_size;
    t.learning_rate = c.learning_rate;
    t.lambda = lambda;
    t.seed = seed;
    return t;
}

/// Initialisation seed shared by every scheme for one (seed, task) pair, so
/// non-transferred layers start identical across schemes.
inline std::uint64_t init_seed(std::uint64_t seed, std::uint64_t task_id)
{
    return splitmix64(seed ^ splitmix64(stream_id("init", task_id)));
}

// ---------------------------------------------------------------- schemes

enum class SchemeKind { Scratch, Transfer, Learngene };

struct Scheme {
    SchemeKind kind = SchemeKind::Scratch;
    learngene::ExpansionStrategy strategy{learngene::Family::Embedding, learngene::Position::Bottom};

    [[nodiscard]] std::string name() const
    {
        switch (kind) {
        case SchemeKind::Scratch: return "scratch";
        case SchemeKind::Transfer: return "transfer";
        case SchemeKind::Learngene: return "learngene-" + learngene::to_string(strategy);
        }
        return "unknown";
    }
};

/// "scratch", "transfer", or an expansion strategy name (optionally prefixed
/// with "learngene-").
inline Scheme parse_scheme(std::string_view name)
{
    if (name == "scratch")
        return {SchemeKind::Scratch, {}};
    if (name == "transfer")
        return {SchemeKind::Transfer, {}};
    if (name.starts_with("learngene-"))
        name.remove_prefix(10);
    if (name == "learngene")
        name = "bottom";
    return {SchemeKind::Learngene, learngene::parse_strategy(name)};
}

struct SchemeInputs {
    const Model* pretrained = nullptr; // transfer: model trained on the source task
    const learngene::LearngeneUnit* unit = nullptr;
    const Model* collective = nullptr; // needed by inheriting-top/middle
};

struct SnrPoint {
    double snr_db = 0.0;
    sdnet::SerResult ser;
};

struct MetricsRecord {
    std::string scheme;
    std::uint64_t target_task = 0;
    std::uint64_t seed = 0;
    std::vector<sdnet::EpochRecord> epochs;
    double final_val_ser = 0.0;
    std::size_t val_symbols = 0;
    sdnet::SerResult test; // at the training SNR, test split
    std::vector<SnrPoint> sweep;
    double wall_ms = 0.0;
    std::uint64_t copied_parameters = 0;
    std::uint64_t trainable_parameters = 0;
    double transferred_ratio = 0.0;
    std::uint64_t flops = 0;
    std::string dataset_hash;
};

struct SchemeRun {
    MetricsRecord record;
    Model model;
};

/// Trains one scheme on the target task. `base` fixes the individual
/// architecture; all schemes must be given the same base for a comparison.
inline SchemeRun run_scheme(const Scheme& scheme, const TaskDataset& target, const sdnet::TrainConfig& cfg,
                            const SchemeInputs& in, Model base, const std::string& target_hash = {})
{
    const auto t0 = std::chrono::steady_clock::now();
    SchemeRun run;
    const std::uint64_t iseed = init_seed(cfg.seed, target.task_id);
    sdnet::TrainResult tr;
    switch (scheme.kind) {
    case SchemeKind::Scratch: {
        run.model = sdnet::make_initialized(std::move(base), iseed);
        tr = sdnet::train_on_task(run.model, target, cfg);
        break;
    }
    case SchemeKind::Transfer: {
        if (!in.pretrained)
            fail(ErrorKind::MissingSource, "transfer scheme needs a model pre-trained on a source task");
        require(nn::count_params(*in.pretrained).total == nn::count_params(base).total &&
                    in.pretrained->input_shape() == base.input_shape(),
                ErrorKind::ShapeMismatch, "transfer: pre-trained model does not match the individual architecture");
        run.model = *in.pretrained;
        run.model.info().seed = iseed;
        run.record.copied_parameters = nn::count_params(run.model).total;
        tr = sdnet::train_on_task(run.model, target, cfg);
        break;
    }
    case SchemeKind::Learngene: {
        if (!in.unit)
            fail(ErrorKind::MissingUnit, "learngene scheme needs an extracted unit");
        auto expanded = learngene::expand(std::move(base), *in.unit, scheme.strategy, iseed, in.collective);
        run.record.copied_parameters = expanded.copied_parameters;
        tr = learngene::adapt_individual(expanded, target, cfg);
        run.model = std::move(expanded.model);
        break;
    }
    }
    auto& r = run.record;
    r.scheme = scheme.name();
    r.target_task = target.task_id;
    r.seed = cfg.seed;
    r.epochs = std::move(tr.log);
    r.trainable_parameters = nn::count_params(run.model).total;
    r.flops = nn::count_flops(run.model).total;
    r.transferred_ratio = static_cast<double>(r.copied_parameters) / static_cast<double>(r.trainable_parameters);
    const auto val = sdnet::evaluate_ser(run.model, target.val());
    r.final_val_ser = val.ser;
    r.val_symbols = val.symbols;
    r.test = sdnet::evaluate_ser(run.model, target.test());
    r.dataset_hash = target_hash.empty() ? dataset_hash(target) : target_hash;
    r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return run;
}

// ---------------------------------------------------------------- generalization

/// 10 log10 |(SER_mn - SER_n) / SER_n| in dB. Throws DegenerateSER when the
/// matched SER is zero or the two rates coincide.
inline double generalization_error_db(double ser_mn, double ser_n)
{
    if (ser_n == 0.0)
        fail(ErrorKind::DegenerateSER, "matched SER is zero");
    if (ser_mn == ser_n)
        fail(ErrorKind::DegenerateSER, "mismatched SER equals matched SER");
    return 10.0 * std::log10(std::abs((ser_mn - ser_n) / ser_n));
}

struct GenMatrix {
    std::vector<std::uint64_t> task_ids;
    std::vector<std::vector<double>> ser;                     // [train m][test n]
    std::vector<std::vector<std::size_t>> symbols;            // evaluation symbols per entry
    std::vector<double> zf;                                   // ZF SER per test task
    std::vector<std::vector<std::optional<double>>> gen_error; // dB; empty on the diagonal and when degenerate
    std::size_t excluded = 0;                                 // off-diagonal entries without a defined gen error

    [[nodiscard]] double mean_matched() const
    {
        double s = 0.0;
        for (std::size_t i = 0; i < ser.size(); ++i)
            s += ser[i][i];
        return s / static_cast<double>(ser.size());
    }
    [[nodiscard]] double mean_mismatched() const
    {
        double s = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < ser.size(); ++i)
            for (std::size_t j = 0; j < ser.size(); ++j)
                if (i != j) {
                    s += ser[i][j];
                    ++n;
                }
        return s / static_cast<double>(n);
    }
};

inline void fill_gen_errors(GenMatrix& g)
{
    const std::size_t n = g.ser.size();
    g.gen_error.assign(n, std::vector<std::optional<double>>(n));
    g.excluded = 0;
    for (std::size_t m = 0; m < n; ++m)
        for (std::size_t k = 0; k < n; ++k) {
            if (m == k)
                continue;
            try {
                g.gen_error[m][k] = generalization_error_db(g.ser[m][k], g.ser[k][k]);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::DegenerateSER)
                    throw;
                ++g.excluded;
            }
        }
}

/// SER of each matched-trained model on every task's test split.
inline GenMatrix generalization_matrix(std::vector<Model>& models, std::span<const TaskDataset> tasks)
{
    require(tasks.size() >= 2, ErrorKind::InvalidArgument, "generalization_matrix: need at least two tasks");
    require(models.size() == tasks.size(), ErrorKind::LengthMismatch, "generalization_matrix: one model per task");
    GenMatrix g;
    const std::size_t n = tasks.size();
    std::vector<sdnet::PreparedSet> prepared;
    g.ser.assign(n, std::vector<double>(n));
    g.symbols.assign(n, std::vector<std::size_t>(n));
    for (std::size_t k = 0; k < n; ++k) {
        g.task_ids.push_back(tasks[k].task_id);
        g.zf.push_back(sdnet::zf_ser(tasks[k].test()).ser);
    }
    for (std::size_t m = 0; m < n; ++m)
        for (std::size_t k = 0; k < n; ++k) {
            const auto r = sdnet::evaluate_ser(models[m], tasks[k].test());
            g.ser[m][k] = r.ser;
            g.symbols[m][k] = r.symbols;
        }
    fill_gen_errors(g);
    return g;
}

/// Pearson correlation coefficient.
inline double pcc(std::span<const double> x, std::span<const double> y)
{
    require(x.size() == y.size(), ErrorKind::LengthMismatch, "pcc: lengths differ");
    require(x.size() >= 3, ErrorKind::InvalidArgument, "pcc: need at least three points");
    const auto n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0)
        fail(ErrorKind::ZeroVariance, "pcc: an input has zero variance");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct MatrixStudy {
    std::vector<std::uint64_t> seeds;
    std::vector<GenMatrix> per_seed;
    GenMatrix median; // entry-wise median over seeds, gen errors recomputed
    std::vector<std::vector<double>> distance;
    std::vector<double> pcc_x, pcc_y; // defined off-diagonal entries
    std::optional<double> pcc_value;
    std::vector<std::vector<sdnet::EpochRecord>> logs; // [seed * tasks + task]
};

/// Trains one scratch model per (task, seed), builds the per-seed matrices
/// and their median, and correlates dataset distance with gen error.
inline MatrixStudy run_generalization_study(const RunConfig& c, std::span<const TaskDataset> tasks, int workers,
                                            const Log& log = {})
{
    const std::size_t n = tasks.size();
    const std::size_t s = c.matrix_seeds.size();
    MatrixStudy st;
    st.seeds = c.matrix_seeds;
    std::vector<Model> models(n * s);
    st.logs.resize(n * s);
    parallel_for(n * s, workers, [&](std::size_t job) {
        const std::size_t si = job / n, ti = job % n;
        auto run = run_scheme({SchemeKind::Scratch, {}}, tasks[ti],
                              train_config(c, c.individual_epochs, c.matrix_seeds[si]), {},
                              sdnet::build_sdnet(learngene::kIndividualConvs, c.geometry.nt, c.geometry.nr), "-");
        st.logs[job] = run.record.epochs;
        models[job] = std::move(run.model);
        if (log)
            log("matrix: task " + std::to_string(tasks[ti].task_id) + " seed " + std::to_string(c.matrix_seeds[si]) +
                " val SER " + io::num(run.record.final_val_ser));
    });
    for (std::size_t si = 0; si < s; ++si) {
        std::vector<Model> ms(std::make_move_iterator(models.begin() + static_cast<std::ptrdiff_t>(si * n)),
                              std::make_move_iterator(models.begin() + static_cast<std::ptrdiff_t>((si + 1) * n)));
        st.per_seed.push_back(generalization_matrix(ms, tasks));
    }
    st.median = st.per_seed.front();
    for (std::size_t m = 0; m < n; ++m)
        for (std::size_t k = 0; k < n; ++k) {
            std::vector<double> v;
            for (const auto& g : st.per_seed)
                v.push_back(g.ser[m][k]);
            st.median.ser[m][k] = median(v);
        }
    fill_gen_errors(st.median);
    st.distance.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t m = 0; m < n; ++m)
        for (std::size_t k = 0; k < n; ++k)
            st.distance[m][k] = dataset_distance(tasks[m], tasks[k], c.distance_pairs, c.master_seed);
    for (std::size_t m = 0; m < n; ++m)
        for (std::size_t k = 0; k < n; ++k)
            if (m != k && st.median.gen_error[m][k]) {
                st.pcc_x.push_back(st.distance[m][k]);
                st.pcc_y.push_back(*st.median.gen_error[m][k]);
            }
    try {
        st.pcc_value = pcc(st.pcc_x, st.pcc_y);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::ZeroVariance && e.kind() != ErrorKind::InvalidArgument)
            throw;
    }
    return st;
}

// ---------------------------------------------------------------- SNR sweep

struct SnrCurve {
    std::string label;
    std::vector<SnrPoint> points;

    /// Number of SNR steps where the SER went up.
    [[nodiscard]] int monotone_violations() const
    {
        int v = 0;
        for (std::size_t i = 1; i < points.size(); ++i)
            if (points[i].ser.ser > points[i - 1].ser.ser)
                ++v;
        return v;
    }
};

/// Evaluation sets for one task at each SNR. The same sample streams are
/// used at every SNR, so channels and symbols repeat and only the noise
/// level changes.
inline std::vector<TaskDataset> sweep_datasets(const RunConfig& c, const ScattererConfig& task, std::span<const double> snrs,
                                               std::size_t n_samples)
{
    std::vector<TaskDataset> out;
    DatasetOptions o = dataset_options(task.geometry);
    o.split = {0.0, 0.0, 1.0};
    for (double snr : snrs)
        out.push_back(generate_dataset(task, n_samples, snr, o, splitmix64(c.master_seed ^ stream_id("sweep", task.task_id))));
    return out;
}

inline SnrCurve baseline_curve(DetectorTag tag, std::span<const TaskDataset> sets)
{
    SnrCurve curve{to_string(tag), {}};
    for (const auto& ds : sets) {
        std::vector<RealVector> pred, truth;
        for (const auto& s : ds.samples) {
            truth.push_back(realify(s.x));
            if (tag == DetectorTag::ZF)
                pred.push_back(s.x_zf);
            else
                pred.push_back(mmse_detect(complex_to_real_channel(s.h_ls), realify(s.y), ds.noise_var));
        }
        curve.points.push_back({ds.snr_db, sdnet::to_ser_result(count_symbol_errors(pred, truth))});
    }
    return curve;
}

inline SnrCurve model_curve(const std::string& label, Model& model, std::span<const TaskDataset> sets)
{
    SnrCurve curve{label, {}};
    for (const auto& ds : sets)
        curve.points.push_back({ds.snr_db, sdnet::evaluate_ser(model, ds.all())});
    return curve;
}

/// SER against SNR for each labelled model plus the ZF and MMSE baselines.
inline std::vector<SnrCurve> snr_sweep(std::vector<std::pair<std::string, Model*>> models, const RunConfig& c,
                                       const ScattererConfig& task, std::span<const double> snrs, std::size_t n_samples)
{
    const auto sets = sweep_datasets(c, task, snrs, n_samples);
    std::vector<SnrCurve> out;
    for (auto& [label, m] : models)
        out.push_back(model_curve(label, *m, sets));
    out.push_back(baseline_curve(DetectorTag::ZF, sets));
    out.push_back(baseline_curve(DetectorTag::MMSE, sets));
    return out;
}

// ---------------------------------------------------------------- scalability

inline constexpr std::uint64_t kScalabilityTaskId = 1000;
inline constexpr int kScalabilityNt = 4;

struct ScalabilityResult {
    std::vector<MetricsRecord> scratch;
    std::vector<MetricsRecord> learngene;
};

/// Learngene (bottom) against scratch on a fresh Nt = 4 task, both using the
/// width-upsampled individual model so the native 8-channel unit fits.
inline ScalabilityResult scalability_run(const learngene::LearngeneUnit& unit, const RunConfig& c, int workers,
                                         const Log& log = {})
{
    Geometry g = c.geometry;
    g.nt = kScalabilityNt;
    const auto base = sdnet::build_upsampled_sdnet(learngene::kIndividualConvs, g.nt, g.nr, c.geometry.nt);
    const auto task = make_dataset(c, kScalabilityTaskId, g, c.samples_per_task, c.snr_db);
    const auto hash = dataset_hash(task);
    ScalabilityResult out;
    const std::size_t s = c.seeds.size();
    std::vector<MetricsRecord> records(2 * s);
    parallel_for(2 * s, workers, [&](std::size_t job) {
        const bool lg = job >= s;
        const Scheme scheme = lg ? Scheme{SchemeKind::Learngene, {}} : Scheme{SchemeKind::Scratch, {}};
        SchemeInputs in;
        in.unit = &unit;
        auto run = run_scheme(scheme, task, train_config(c, c.individual_epochs, c.seeds[job % s], c.lambda), in, base, hash);
        records[job] = std::move(run.record);
        if (log)
            log("scalability: " + records[job].scheme + " seed " + std::to_string(records[job].seed) + " val SER " +
                io::num(records[job].final_val_ser));
    });
    out.scratch.assign(records.begin(), records.begin() + static_cast<std::ptrdiff_t>(s));
    out.learngene.assign(records.begin() + static_cast<std::ptrdiff_t>(s), records.end());
    return out;
}

// ---------------------------------------------------------------- ZF noise

struct ZfNoiseRow {
    int channel = 0;
    double covariance_rel_error = 0.0; // relative Frobenius error of the empirical covariance
    double empirical_total = 0.0;
    double analytic_total = 0.0;
    std::size_t trials = 0;

    [[nodiscard]] double total_rel_error() const { return std::abs(empirical_total - analytic_total) / analytic_total; }
};

/// Empirical ZF noise statistics on `channels` fixed draws from task 0 at the
/// configured SNR, against the closed forms.
inline std::vector<ZfNoiseRow> zf_noise_study(const RunConfig& c, int channels, std::size_t trials)
{
    const auto task = make_task(c.master_seed, 0, c.channel, c.geometry);
    const double noise_var = calibrate_noise_variance(task, c.snr_db, c.master_seed, DatasetOptions{}.calibration_draws);
    std::vector<ZfNoiseRow> rows;
    for (int i = 0; i < channels; ++i) {
        RngStream ch_rng(c.master_seed, "zf-noise-channel", static_cast<std::uint64_t>(i));
        const ComplexMatrix h = draw_channel(task, ch_rng);
        RngStream noise_rng(c.master_seed, "zf-noise", static_cast<std::uint64_t>(i));
        const auto st = zf_noise_stats(h, noise_var, trials, noise_rng);
        rows.push_back({i,
                        (st.empirical_covariance - st.analytic_covariance).norm() / st.analytic_covariance.norm(),
                        st.empirical_total_variance, st.analytic_total_variance, trials});
    }
    return rows;
}

// ---------------------------------------------------------------- complexity

struct ComplexityRow {
    std::string scheme;
    std::string layers;
    std::uint64_t parameters = 0;
    std::uint64_t flops = 0;
    double transferred_ratio = 0.0;
};

inline std::string format_percent(double ratio)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * ratio);
    return buf;
}

inline std::string describe_layers(const Model& m)
{
    int conv = 0, dense = 0;
    for (const auto& l : m.layers()) {
        conv += l.spec.kind == nn::LayerKind::Conv3x3;
        dense += l.spec.kind == nn::LayerKind::Dense;
    }
    return std::to_string(conv) + " Conv+BN, " + std::to_string(dense) + " FC";
}

/// Trainable parameters, FLOPs and transferred ratio for each scheme at the
/// given geometry, with a learngene unit of `unit_layers` middle convs.
inline std::vector<ComplexityRow> complexity_report(const Geometry& g = {}, int unit_layers = learngene::kDefaultMaxLayers)
{
    const auto individual = sdnet::build_sdnet(learngene::kIndividualConvs, g.nt, g.nr);
    const auto collective = sdnet::build_sdnet(learngene::kCollectiveConvs, g.nt, g.nr);
    const auto ind_params = nn::count_params(individual).total;
    const auto ind_flops = nn::count_flops(individual).total;
    const auto& mid = individual.layers()[*individual.significant_layer(1)];
    const auto unit_params = static_cast<std::uint64_t>(unit_layers) * nn::layer_params(mid.spec);
    const auto unit_flops = static_cast<std::uint64_t>(unit_layers) * nn::layer_flops(mid);
    const double ratio = static_cast<double>(unit_params) / static_cast<double>(ind_params);
    return {
        {"train-from-scratch", describe_layers(individual), ind_params, ind_flops, 0.0},
        {"transfer-learning", describe_layers(individual), ind_params, ind_flops, 1.0},
        {"learngene-collective", describe_layers(collective), nn::count_params(collective).total,
         nn::count_flops(collective).total, ratio},
        {"learngene-unit", std::to_string(unit_layers) + " Conv", unit_params, unit_flops, ratio},
        {"learngene-individual", describe_layers(individual), ind_params, ind_flops, ratio},
    };
}

// ---------------------------------------------------------------- outputs

struct Stamp {
    std::string config_hash;
    std::uint64_t master_seed = 0;

    [[nodiscard]] std::string comment(std::string_view what) const
    {
        return "# lgmimo " + std::string(what) + " config_hash=" + config_hash + " master_seed=" + std::to_string(master_seed) + "\n";
    }
};

inline std::string complexity_csv(const std::vector<ComplexityRow>& rows, const Stamp& stamp)
{
    std::string out = stamp.comment("complexity");
    out += "scheme,layers,trainable_parameters,flops,transferred_ratio\n";
    for (const auto& r : rows)
        out += r.scheme + "," + r.layers + "," + std::to_string(r.parameters) + "," + std::to_string(r.flops) + "," +
               format_percent(r.transferred_ratio) + "\n";
    return out;
}

inline const char* kSummaryHeader =
    "scheme,target_task,seed,snr_db,ser,errors,symbols,std_error,final_val_ser,transferred_ratio,copied_parameters,"
    "trainable_parameters,flops,dataset_hash\n";

inline std::string summary_row(const MetricsRecord& r, double snr, const sdnet::SerResult& s)
{
    return r.scheme + "," + std::to_string(r.target_task) + "," + std::to_string(r.seed) + "," + io::num(snr) + "," +
           io::num(s.ser) + "," + std::to_string(s.errors) + "," + std::to_string(s.symbols) + "," +
           io::num(s.standard_error()) + "," + io::num(r.final_val_ser) + "," + io::num(r.transferred_ratio) + "," +
           std::to_string(r.copied_parameters) + "," + std::to_string(r.trainable_parameters) + "," +
           std::to_string(r.flops) + "," + r.dataset_hash + "\n";
}

inline std::string baseline_row(const std::string& label, std::uint64_t task, double snr, const sdnet::SerResult& s,
                                const std::string& hash)
{
    return label + "," + std::to_string(task) + ",-," + io::num(snr) + "," + io::num(s.ser) + "," + std::to_string(s.errors) +
           "," + std::to_string(s.symbols) + "," + io::num(s.standard_error()) + ",,0,0,0,0," + hash + "\n";
}

inline io::json epoch_json(const MetricsRecord& r, const sdnet::EpochRecord& e, const Stamp& stamp)
{
    return {{"type", "epoch"},          {"config_hash", stamp.config_hash}, {"master_seed", stamp.master_seed},
            {"scheme", r.scheme},       {"target_task", r.target_task},     {"seed", r.seed},
            {"epoch", e.epoch},         {"train_loss", e.train_loss},       {"val_ser", e.val_ser},
            {"wall_ms", e.wall_ms}};
}

inline io::json final_json(const MetricsRecord& r, const Stamp& stamp)
{
    io::json sweep = io::json::array();
    for (const auto& p : r.sweep)
        sweep.push_back({{"snr_db", p.snr_db}, {"ser", p.ser.ser}, {"symbols", p.ser.symbols}, {"std_error", p.ser.standard_error()}});
    return {{"type", "final"},
            {"config_hash", stamp.config_hash},
            {"master_seed", stamp.master_seed},
            {"scheme", r.scheme},
            {"target_task", r.target_task},
            {"seed", r.seed},
            {"final_val_ser", r.final_val_ser},
            {"val_symbols", r.val_symbols},
            {"test_ser", r.test.ser},
            {"test_symbols", r.test.symbols},
            {"test_std_error", r.test.standard_error()},
            {"sweep", sweep},
            {"wall_ms", r.wall_ms},
            {"copied_parameters", r.copied_parameters},
            {"trainable_parameters", r.trainable_parameters},
            {"transferred_ratio", r.transferred_ratio},
            {"flops", r.flops},
            {"dataset_hash", r.dataset_hash}};
}

inline std::string metrics_jsonl(std::span<const MetricsRecord> records, const Stamp& stamp)
{
    std::string out;
    for (const auto& r : records) {
        for (const auto& e : r.epochs)
            out += epoch_json(r, e, stamp).dump() + "\n";
        out += final_json(r, stamp).dump() + "\n";
    }
    return out;
}

inline std::string spectra_csv(std::span<const TaskDataset> tasks, const Stamp& stamp)
{
    std::string out = stamp.comment("spectra");
    out += "task_id,index,eigenvalue\n";
    for (const auto& t : tasks) {
        const auto sp = mean_eigen_spectrum(t.all());
        for (std::size_t i = 0; i < sp.size(); ++i)
            out += std::to_string(t.task_id) + "," + std::to_string(i + 1) + "," + io::num(sp[i]) + "\n";
    }
    return out;
}

inline std::string matrix_csv(const MatrixStudy& st, const Stamp& stamp)
{
    std::string out = stamp.comment("generalization-matrix");
    out += "train_task,test_task,median_ser,zf_ser,distance,gen_error_db\n";
    const auto& g = st.median;
    for (std::size_t m = 0; m < g.ser.size(); ++m)
        for (std::size_t k = 0; k < g.ser.size(); ++k)
            out += std::to_string(g.task_ids[m]) + "," + std::to_string(g.task_ids[k]) + "," + io::num(g.ser[m][k]) + "," +
                   io::num(g.zf[k]) + "," + io::num(st.distance[m][k]) + "," +
                   (g.gen_error[m][k] ? io::num(*g.gen_error[m][k]) : std::string{}) + "\n";
    return out;
}

// ---------------------------------------------------------------- pipeline

struct PipelineResult {
    std::string config_hash;
    learngene::CollectiveResult collective;
    learngene::LearngeneUnit unit;
    std::vector<MetricsRecord> records;
    std::vector<SnrCurve> baselines; // per target: zf then mmse
    std::filesystem::path gradsig_path, summary_path, metrics_path, spectra_path, unit_path, collective_path;
};

/// Collective training, extraction and every configured scheme on every
/// target task for every seed, followed by the SNR sweep. Writes
/// collective.ckpt, unit.lg, gradsig.csv, metrics.jsonl, summary.csv and
/// spectra.csv into `out_dir`.
inline PipelineResult run_pipeline(const RunConfig& c, const std::filesystem::path& out_dir, const Log& log = {})
{
    validate(c);
    const int workers = resolve_workers(c.workers);
    const Stamp stamp{config_hash(c), c.master_seed};
    const auto say = [&](const std::string& s) {
        if (log)
            log(s);
    };
    std::filesystem::create_directories(out_dir);
    PipelineResult res;
    res.config_hash = stamp.config_hash;

    say("generating " + std::to_string(c.collective_tasks + c.target_tasks) + " tasks");
    const auto tasks = make_tasks(c, workers);

    say("collective training");
    learngene::CollectiveConfig cc;
    cc.n_conv = learngene::kCollectiveConvs;
    cc.train = train_config(c, c.collective_epochs, c.master_seed);
    cc.tau = c.tau;
    res.collective = learngene::train_collective(tasks.collective, cc, [&](std::size_t k, const sdnet::EpochRecord& r) {
        if (r.epoch == c.collective_epochs)
            say("collective task " + std::to_string(k) + " val SER " + io::num(r.val_ser));
    });
    res.collective.model.info().config_hash = stamp.config_hash;
    res.collective_path = out_dir / "collective.ckpt";
    nn::save_checkpoint(res.collective.model, res.collective_path, {{"master_seed", c.master_seed}});
    res.gradsig_path = out_dir / "gradsig.csv";
    io::write_text(res.gradsig_path,
                   learngene::gradsig_to_csv(res.collective.log, "lgmimo gradsig config_hash=" + stamp.config_hash +
                                                                     " master_seed=" + std::to_string(c.master_seed)));

    learngene::ExtractionPolicy policy{c.rho_sel, c.window, c.max_layers};
    res.unit = learngene::extract_learngene(res.collective.model, res.collective.log, policy);
    res.unit_path = out_dir / "unit.lg";
    learngene::save_unit(res.unit, res.unit_path, {{"config_hash", stamp.config_hash}, {"master_seed", c.master_seed}});
    std::string ids;
    for (int id : res.unit.source_ids())
        ids += (ids.empty() ? "" : ",") + std::to_string(id);
    say("learngene layers " + ids);

    std::vector<Scheme> schemes;
    for (const auto& s : c.schemes)
        schemes.push_back(parse_scheme(s));
    const auto base = sdnet::build_sdnet(learngene::kIndividualConvs, c.geometry.nt, c.geometry.nr);

    std::optional<Model> pretrained;
    if (std::any_of(schemes.begin(), schemes.end(), [](const Scheme& s) { return s.kind == SchemeKind::Transfer; })) {
        say("pre-training the transfer source on task " + std::to_string(c.transfer_source));
        auto run = run_scheme({SchemeKind::Scratch, {}}, tasks.collective[static_cast<std::size_t>(c.transfer_source)],
                              train_config(c, c.individual_epochs, c.master_seed), {}, base, "-");
        pretrained = std::move(run.model);
    }
    SchemeInputs in;
    in.unit = &res.unit;
    in.collective = &res.collective.model;
    in.pretrained = pretrained ? &*pretrained : nullptr;

    std::vector<std::string> hashes;
    for (const auto& t : tasks.targets)
        hashes.push_back(dataset_hash(t));

    const std::size_t n_t = tasks.targets.size(), n_s = c.seeds.size(), n_k = schemes.size();
    std::vector<SchemeRun> runs(n_t * n_s * n_k);
    std::mutex log_mutex;
    parallel_for(runs.size(), workers, [&](std::size_t job) {
        const std::size_t ti = job / (n_s * n_k), si = (job / n_k) % n_s, ki = job % n_k;
        const double lambda = schemes[ki].kind == SchemeKind::Learngene ? c.lambda : 0.0;
        runs[job] = run_scheme(schemes[ki], tasks.targets[ti], train_config(c, c.individual_epochs, c.seeds[si], lambda), in,
                               base, hashes[ti]);
        std::lock_guard lock(log_mutex);
        say(runs[job].record.scheme + " task " + std::to_string(tasks.targets[ti].task_id) + " seed " +
            std::to_string(c.seeds[si]) + " val SER " + io::num(runs[job].record.final_val_ser));
    });

    say("SNR sweep");
    for (std::size_t ti = 0; ti < n_t; ++ti) {
        const auto sets = sweep_datasets(c, tasks.targets[ti].config, c.snr_grid, c.sweep_samples);
        res.baselines.push_back(baseline_curve(DetectorTag::ZF, sets));
        res.baselines.push_back(baseline_curve(DetectorTag::MMSE, sets));
        parallel_for(n_s * n_k, workers, [&](std::size_t j) {
            auto& run = runs[ti * n_s * n_k + j];
            run.record.sweep = model_curve(run.record.scheme, run.model, sets).points;
        });
    }
    for (auto& r : runs)
        res.records.push_back(std::move(r.record));

    std::string summary = stamp.comment("summary") + kSummaryHeader;
    for (std::size_t ti = 0; ti < n_t; ++ti) {
        for (const auto& curve : {res.baselines[2 * ti], res.baselines[2 * ti + 1]})
            for (const auto& p : curve.points)
                summary += baseline_row(curve.label, tasks.targets[ti].task_id, p.snr_db, p.ser, hashes[ti]);
        for (std::size_t j = 0; j < n_s * n_k; ++j) {
            const auto& r = res.records[ti * n_s * n_k + j];
            for (const auto& p : r.sweep)
                summary += summary_row(r, p.snr_db, p.ser);
        }
    }
    res.summary_path = out_dir / "summary.csv";
    io::write_text(res.summary_path, summary);
    res.metrics_path = out_dir / "metrics.jsonl";
    io::write_text(res.metrics_path, metrics_jsonl(res.records, stamp));
    std::vector<TaskDataset> all(tasks.collective.begin(), tasks.collective.end());
    all.insert(all.end(), tasks.targets.begin(), tasks.targets.end());
    res.spectra_path = out_dir / "spectra.csv";
    io::write_text(res.spectra_path, spectra_csv(all, stamp));
    return res;
}

/// Final validation SER of the runs matching (scheme, target).
inline std::vector<double> final_val_sers(std::span<const MetricsRecord> records, const std::string& scheme, std::uint64_t target)
{
    std::vector<double> out;
    for (const auto& r : records)
        if (r.scheme == scheme && r.target_task == target)
            out.push_back(r.final_val_ser);
    return out;
}

} // namespace lgmimo::experiments
