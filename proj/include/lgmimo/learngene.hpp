// SPDX-License-Identifier: Apache-2.0
//
// lgmimo: deep MIMO detection and learngene transfer workbench
// ------------------------------------------------------------------------
//
// Learngene lifecycle: sequential collective training with gradient
// significance logging, extraction of a compact unit of convolution layers,
// and expansion of that unit into freshly initialised individual models.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lgmimo/channel.hpp"
#include "lgmimo/container.hpp"
#include "lgmimo/error.hpp"
#include "lgmimo/neuralnet.hpp"
#include "lgmimo/sdnet.hpp"

namespace lgmimo::learngene {

using nn::Model;

inline constexpr double kDefaultTau = 1e-4;
inline constexpr double kDefaultRhoSel = 0.05;
inline constexpr int kDefaultMaxLayers = 4;
inline constexpr double kDefaultLambda = 2e-15;
inline constexpr int kCollectiveConvs = 12;
inline constexpr int kIndividualConvs = 8;

// ---------------------------------------------------------------- significance

/// rho[l] for significant layers 1..N (index l-1): fraction of conv kernel and
/// bias entries whose recorded mean |gradient| exceeds tau.
inline std::vector<double> gradient_significance(const Model& model, const nn::GradRecord& record, double tau)
{
    require(tau > 0.0, ErrorKind::InvalidArgument, "gradient_significance: tau must be positive");
    require(record.mean_abs.size() == model.layers().size(), ErrorKind::ShapeMismatch,
            "gradient_significance: record does not match model");
    const int n = model.significant_count();
    std::vector<double> rho(static_cast<std::size_t>(n), 0.0);
    for (int id = 1; id <= n; ++id) {
        const auto li = *model.significant_layer(id);
        std::size_t above = 0;
        std::size_t total = 0;
        for (const auto& block : record.mean_abs[li]) {
            for (double g : block)
                above += g > tau ? 1U : 0U;
            total += block.size();
        }
        rho[static_cast<std::size_t>(id - 1)] = total == 0 ? 0.0 : static_cast<double>(above) / static_cast<double>(total);
    }
    return rho;
}

/// rho[l][k]: significant layer l (0-based) after task k (0-based).
struct GradSigLog {
    double tau = kDefaultTau;
    int layers = 0;
    std::vector<std::uint64_t> task_ids;
    std::vector<int> epochs; // per task
    std::vector<std::vector<double>> rho;

    [[nodiscard]] int tasks() const { return static_cast<int>(task_ids.size()); }

    void append(std::uint64_t task_id, int task_epochs, const std::vector<double>& column)
    {
        if (layers == 0 && rho.empty()) {
            layers = static_cast<int>(column.size());
            rho.assign(column.size(), {});
        }
        require(static_cast<int>(column.size()) == layers, ErrorKind::ShapeMismatch,
                "GradSigLog: column has " + std::to_string(column.size()) + " layers, log has " + std::to_string(layers));
        for (std::size_t l = 0; l < column.size(); ++l)
            rho[l].push_back(column[l]);
        task_ids.push_back(task_id);
        epochs.push_back(task_epochs);
    }
};

/// CSV with one row per (task, layer). Values printed with 17 significant
/// digits so the file round-trips exactly.
inline std::string gradsig_to_csv(const GradSigLog& log, std::string_view header_comment = {})
{
    std::string out;
    if (!header_comment.empty())
        out += "# " + std::string(header_comment) + "\n";
    out += "task_index,task_id,epochs,layer,tau,rho\n";
    for (int k = 0; k < log.tasks(); ++k)
        for (int l = 0; l < log.layers; ++l)
            out += std::to_string(k) + "," + std::to_string(log.task_ids[static_cast<std::size_t>(k)]) + "," +
                   std::to_string(log.epochs[static_cast<std::size_t>(k)]) + "," + std::to_string(l + 1) + "," +
                   io::num(log.tau) + "," + io::num(log.rho[static_cast<std::size_t>(l)][static_cast<std::size_t>(k)]) +
                   "\n";
    return out;
}

inline GradSigLog gradsig_from_csv(std::string_view text)
{
    GradSigLog log;
    std::vector<std::vector<std::string>> rows;
    std::size_t pos = 0;
    bool header = false;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos)
            end = text.size();
        const std::string line(text.substr(pos, end - pos));
        pos = end + 1;
        if (line.empty() || line[0] == '#')
            continue;
        if (!header) {
            if (line != "task_index,task_id,epochs,layer,tau,rho")
                fail(ErrorKind::FormatVersionMismatch, "gradsig csv: unexpected header '" + line + "'");
            header = true;
            continue;
        }
        std::vector<std::string> cells;
        std::size_t s = 0;
        while (true) {
            const auto c = line.find(',', s);
            cells.push_back(line.substr(s, c == std::string::npos ? std::string::npos : c - s));
            if (c == std::string::npos)
                break;
            s = c + 1;
        }
        if (cells.size() != 6)
            fail(ErrorKind::CorruptBlob, "gradsig csv: malformed row '" + line + "'");
        rows.push_back(std::move(cells));
    }
    if (rows.empty())
        fail(ErrorKind::EmptyLog, "gradsig csv has no rows");
    int max_layer = 0;
    for (const auto& r : rows)
        max_layer = std::max(max_layer, std::stoi(r[3]));
    std::vector<double> column;
    int current_task = -1;
    for (const auto& r : rows) {
        const int k = std::stoi(r[0]);
        const int l = std::stoi(r[3]);
        if (k != current_task) {
            if (current_task >= 0)
                fail(ErrorKind::CorruptBlob, "gradsig csv: task " + std::to_string(current_task) + " incomplete");
            current_task = k;
            column.assign(static_cast<std::size_t>(max_layer), 0.0);
        }
        if (k != log.tasks())
            fail(ErrorKind::CorruptBlob, "gradsig csv: tasks out of order");
        log.tau = std::stod(r[4]);
        column[static_cast<std::size_t>(l - 1)] = std::stod(r[5]);
        if (l == max_layer) {
            log.append(std::stoull(r[1]), std::stoi(r[2]), column);
            current_task = -1;
        }
    }
    if (current_task >= 0)
        fail(ErrorKind::CorruptBlob, "gradsig csv: last task incomplete");
    return log;
}

// ---------------------------------------------------------------- collective

struct CollectiveConfig {
    int n_conv = kCollectiveConvs;
    sdnet::TrainConfig train; // per-task settings; seed drives init and shuffling
    double tau = kDefaultTau;
};

struct TaskLog {
    std::uint64_t task_id = 0;
    std::vector<sdnet::EpochRecord> epochs;
};

struct CollectiveResult {
    Model model;
    GradSigLog log;
    std::vector<TaskLog> task_logs;
};

/// Trains one collective SDNet across tasks in order, carrying parameters
/// over and restarting Adam at each task. After each task the final-epoch
/// gradient record becomes one column of the significance log.
inline CollectiveResult train_collective(std::span<const TaskDataset> tasks, const CollectiveConfig& cfg,
                                         const std::function<void(std::size_t, const sdnet::EpochRecord&)>& on_epoch = {})
{
    require(!tasks.empty(), ErrorKind::InvalidArgument, "train_collective: no tasks");
    require(cfg.train.epochs >= 1, ErrorKind::InvalidArgument, "train_collective: need at least one epoch per task");
    const auto& g = tasks.front().geometry;
    for (const auto& t : tasks)
        require(t.geometry == g, ErrorKind::ShapeMismatch, "train_collective: tasks have different geometries");
    CollectiveResult out;
    out.model = sdnet::make_initialized(sdnet::build_sdnet(cfg.n_conv, g.nt, g.nr), cfg.train.seed);
    out.log.tau = cfg.tau;
    for (std::size_t k = 0; k < tasks.size(); ++k) {
        sdnet::EpochCallback cb;
        if (on_epoch)
            cb = [&](const sdnet::EpochRecord& r, const Model&) { on_epoch(k, r); };
        auto r = sdnet::train_on_task(out.model, tasks[k], cfg.train, nullptr, cb);
        out.log.append(tasks[k].task_id, cfg.train.epochs, gradient_significance(out.model, r.final_epoch_grads, cfg.tau));
        out.task_logs.push_back({tasks[k].task_id, std::move(r.log)});
    }
    return out;
}

// ---------------------------------------------------------------- extraction

struct ExtractionPolicy {
    double rho_sel = kDefaultRhoSel;
    int window = 0; // 0 selects max(3, K/2)
    int max_layers = kDefaultMaxLayers;
};

struct LearngeneUnit {
    struct Layer {
        int source_id = 0; // significant id in the collective model
        std::vector<double> kernel;
        std::vector<double> bias;
    };
    int cin = sdnet::kChannels;
    int cout = sdnet::kChannels;
    std::vector<Layer> layers; // ordered by source id
    std::string source_hash;
    int source_n_conv = 0;
    ExtractionPolicy policy;
    double tau = kDefaultTau;
    int window_used = 0;
    std::vector<std::vector<double>> rho_excerpt; // rho history of the selected layers
    std::vector<std::string> warnings;

    [[nodiscard]] std::vector<int> source_ids() const
    {
        std::vector<int> ids;
        for (const auto& l : layers)
            ids.push_back(l.source_id);
        return ids;
    }

    [[nodiscard]] std::uint64_t parameter_count() const
    {
        std::uint64_t n = 0;
        for (const auto& l : layers)
            n += l.kernel.size() + l.bias.size();
        return n;
    }
};

/// Least-squares slope of y against 0..n-1.
inline double ls_slope(std::span<const double> y)
{
    const auto n = static_cast<double>(y.size());
    if (y.size() < 2)
        return 0.0;
    const double xm = (n - 1.0) / 2.0;
    double ym = 0.0;
    for (double v : y)
        ym += v;
    ym /= n;
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double dx = static_cast<double>(i) - xm;
        num += dx * (y[i] - ym);
        den += dx * dx;
    }
    return num / den;
}

struct LayerSelection {
    std::vector<int> ids; // 1-based significant ids, ascending
    int window = 0;
    std::vector<double> slopes;
    std::vector<bool> eligible;
    bool fallback = false;
};

/// The selection rule on its own, without touching any model.
inline LayerSelection select_layers(const GradSigLog& log, const ExtractionPolicy& policy)
{
    if (log.tasks() == 0 || log.layers == 0)
        fail(ErrorKind::EmptyLog, "extract: gradient significance log is empty");
    require(policy.max_layers >= 1, ErrorKind::InvalidArgument, "extract: max_layers must be >= 1");
    const int k = log.tasks();
    LayerSelection sel;
    sel.window = policy.window > 0 ? policy.window : std::max(3, k / 2);
    const int w = std::min(sel.window, k);
    for (int l = 0; l < log.layers; ++l) {
        const auto& row = log.rho[static_cast<std::size_t>(l)];
        const std::span<const double> tail(row.data() + (k - w), static_cast<std::size_t>(w));
        const double slope = ls_slope(tail);
        sel.slopes.push_back(slope);
        sel.eligible.push_back(slope <= 0.0 && row.back() <= policy.rho_sel);
    }
    int first = log.layers; // start of the eligible suffix
    while (first > 0 && sel.eligible[static_cast<std::size_t>(first - 1)])
        --first;
    const int m = std::min(policy.max_layers, log.layers);
    if (first < log.layers) {
        for (int id = std::max(first + 1, log.layers - m + 1); id <= log.layers; ++id)
            sel.ids.push_back(id);
        return sel;
    }
    // No eligible suffix: the contiguous window of m layers with the smallest
    // mean final rho, ties going to the deeper window.
    sel.fallback = true;
    int best_start = log.layers - m + 1;
    double best = std::numeric_limits<double>::infinity();
    for (int start = log.layers - m + 1; start >= 1; --start) {
        double sum = 0.0;
        for (int id = start; id < start + m; ++id)
            sum += log.rho[static_cast<std::size_t>(id - 1)].back();
        if (sum < best) {
            best = sum;
            best_start = start;
        }
    }
    for (int id = best_start; id < best_start + m; ++id)
        sel.ids.push_back(id);
    return sel;
}

/// FNV-1a of the model's manifest and parameter blob.
inline std::string model_hash(const Model& model)
{
    const auto [manifest, blob] = nn::encode_model(model);
    return io::hex64(io::hash_bytes(manifest.dump() + blob));
}

inline LearngeneUnit extract_learngene(const Model& model, const GradSigLog& log, const ExtractionPolicy& policy = {})
{
    require(log.layers == model.significant_count(), ErrorKind::ShapeMismatch,
            "extract: log covers " + std::to_string(log.layers) + " layers, model has " +
                std::to_string(model.significant_count()));
    const auto sel = select_layers(log, policy);
    LearngeneUnit unit;
    unit.source_hash = model_hash(model);
    unit.source_n_conv = model.significant_count();
    unit.policy = policy;
    unit.tau = log.tau;
    unit.window_used = sel.window;
    if (sel.fallback)
        unit.warnings.push_back("no eligible layer suffix; took the lowest-significance window of " +
                                std::to_string(sel.ids.size()) + " layers");
    for (int id : sel.ids) {
        const auto& layer = model.layers()[*model.significant_layer(id)];
        require(layer.spec.in == unit.cin && layer.spec.out == unit.cout, ErrorKind::ShapeMismatch,
                "extract: significant layer is not an 8->8 convolution");
        unit.layers.push_back({id, layer.params[0].value, layer.params[1].value});
        unit.rho_excerpt.push_back(log.rho[static_cast<std::size_t>(id - 1)]);
    }
    return unit;
}

inline constexpr std::string_view kUnitFormat = "lgmimo-learngene";
inline constexpr int kUnitVersion = 1;

inline void save_unit(const LearngeneUnit& unit, const std::filesystem::path& path,
                      const io::json& extra = io::json::object())
{
    io::json layers = io::json::array();
    std::string blob;
    std::size_t offset = 0;
    for (const auto& l : unit.layers) {
        layers.push_back({{"source_id", l.source_id},
                          {"kernel", {{"offset", offset}, {"count", l.kernel.size()}}},
                          {"bias", {{"offset", offset + l.kernel.size()}, {"count", l.bias.size()}}}});
        io::append_le<double>(blob, l.kernel);
        io::append_le<double>(blob, l.bias);
        offset += l.kernel.size() + l.bias.size();
    }
    io::json manifest = {{"format", kUnitFormat},
                         {"format_version", kUnitVersion},
                         {"cin", unit.cin},
                         {"cout", unit.cout},
                         {"layers", layers},
                         {"parameters", unit.parameter_count()},
                         {"source_hash", unit.source_hash},
                         {"source_n_conv", unit.source_n_conv},
                         {"policy",
                          {{"tau", unit.tau},
                           {"rho_sel", unit.policy.rho_sel},
                           {"window", unit.window_used},
                           {"max_layers", unit.policy.max_layers}}},
                         {"rho_excerpt", unit.rho_excerpt},
                         {"warnings", unit.warnings},
                         {"provenance", extra}};
    io::write_container(path, manifest, blob, "float64-le");
}

inline LearngeneUnit load_unit(const std::filesystem::path& path)
{
    auto c = io::read_container(path, kUnitFormat, kUnitVersion);
    const auto values = io::decode_le<double>(c.blob);
    const auto& m = c.manifest;
    LearngeneUnit unit;
    unit.cin = m.at("cin").get<int>();
    unit.cout = m.at("cout").get<int>();
    unit.source_hash = m.at("source_hash").get<std::string>();
    unit.source_n_conv = m.at("source_n_conv").get<int>();
    unit.tau = m.at("policy").at("tau").get<double>();
    unit.policy.rho_sel = m.at("policy").at("rho_sel").get<double>();
    unit.window_used = m.at("policy").at("window").get<int>();
    unit.policy.window = unit.window_used;
    unit.policy.max_layers = m.at("policy").at("max_layers").get<int>();
    unit.rho_excerpt = m.at("rho_excerpt").get<std::vector<std::vector<double>>>();
    unit.warnings = m.at("warnings").get<std::vector<std::string>>();
    std::size_t expected = 0;
    auto take = [&](const io::json& rec, std::size_t want) {
        const auto off = rec.at("offset").get<std::size_t>();
        const auto count = rec.at("count").get<std::size_t>();
        if (off != expected || count != want || off + count > values.size())
            fail(ErrorKind::CorruptBlob, "learngene unit: inconsistent array offsets");
        expected += count;
        return std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(off),
                                   values.begin() + static_cast<std::ptrdiff_t>(off + count));
    };
    const auto kernel_size = static_cast<std::size_t>(9 * unit.cin * unit.cout);
    for (const auto& l : m.at("layers")) {
        LearngeneUnit::Layer layer;
        layer.source_id = l.at("source_id").get<int>();
        layer.kernel = take(l.at("kernel"), kernel_size);
        layer.bias = take(l.at("bias"), static_cast<std::size_t>(unit.cout));
        unit.layers.push_back(std::move(layer));
    }
    if (expected != values.size())
        fail(ErrorKind::CorruptBlob, "learngene unit: blob has trailing data");
    if (unit.layers.empty())
        fail(ErrorKind::CorruptBlob, "learngene unit has no layers");
    return unit;
}

// ---------------------------------------------------------------- expansion

enum class Family { Embedding, Inheriting };
enum class Position { Top, Middle, Bottom };

struct ExpansionStrategy {
    Family family = Family::Embedding;
    Position position = Position::Bottom;

    /// Bottom inheriting and bottom embedding place the same layers in the
    /// same slot; both map to (embedding, bottom).
    [[nodiscard]] ExpansionStrategy canonical() const
    {
        if (position == Position::Bottom)
            return {Family::Embedding, Position::Bottom};
        return *this;
    }

    friend bool operator==(const ExpansionStrategy& a, const ExpansionStrategy& b)
    {
        const auto ca = a.canonical();
        const auto cb = b.canonical();
        return ca.family == cb.family && ca.position == cb.position;
    }
};

inline std::vector<ExpansionStrategy> canonical_strategies()
{
    return {{Family::Embedding, Position::Top},
            {Family::Embedding, Position::Middle},
            {Family::Embedding, Position::Bottom},
            {Family::Inheriting, Position::Top},
            {Family::Inheriting, Position::Middle}};
}

inline std::string to_string(const ExpansionStrategy& s)
{
    const auto c = s.canonical();
    if (c.position == Position::Bottom)
        return "bottom";
    const std::string fam = c.family == Family::Embedding ? "embedding" : "inheriting";
    return fam + (c.position == Position::Top ? "-top" : "-middle");
}

inline ExpansionStrategy parse_strategy(std::string_view name)
{
    if (name == "bottom" || name == "embedding-bottom" || name == "inheriting-bottom")
        return {Family::Embedding, Position::Bottom};
    if (name == "embedding-top" || name == "top")
        return {Family::Embedding, Position::Top};
    if (name == "embedding-middle" || name == "middle")
        return {Family::Embedding, Position::Middle};
    if (name == "inheriting-top")
        return {Family::Inheriting, Position::Top};
    if (name == "inheriting-middle")
        return {Family::Inheriting, Position::Middle};
    fail(ErrorKind::InvalidArgument, "unknown expansion strategy '" + std::string(name) + "'");
}

inline bool is_strategy_name(std::string_view name)
{
    try {
        parse_strategy(name);
        return true;
    } catch (const Error&) {
        return false;
    }
}

/// First significant id of each 4-layer destination slot in the individual
/// model (top 1-4, middle 3-6, bottom 5-8 for N_conv = 8).
inline int slot_start(Position p, int individual_n_conv, int slot)
{
    switch (p) {
    case Position::Top: return 1;
    case Position::Middle: return (individual_n_conv - slot) / 2 + 1;
    case Position::Bottom: return individual_n_conv - slot + 1;
    }
    return 1;
}

/// Copy plan: (individual significant id, kernel, bias, source description).
struct CopiedLayer {
    int target_id = 0;
    int source_id = 0;
    const std::vector<double>* kernel = nullptr;
    const std::vector<double>* bias = nullptr;
};

struct ExpansionResult {
    Model model;
    std::vector<int> copied_ids; // individual significant ids holding copied layers
    std::vector<nn::AnchorBlock> anchors;
    std::uint64_t copied_parameters = 0;
};

/// Glorot-initialises `individual` from `seed`, then copies learngene layers
/// into it according to `strategy`. Embedding places the unit into the top,
/// middle or bottom slot; inheriting copies collective significant layers
/// (top 1-4, middle 5-8) into the bottom slot. A unit shorter than the slot is
/// aligned to the slot's deep end.
inline ExpansionResult expand(Model individual, const LearngeneUnit& unit, ExpansionStrategy strategy,
                              std::uint64_t seed, const Model* collective = nullptr)
{
    strategy = strategy.canonical();
    nn::glorot_init(individual, seed);
    individual.info().seed = seed;
    const int n_ind = individual.significant_count();
    const int slot = kDefaultMaxLayers;
    require(n_ind >= slot, ErrorKind::ShapeMismatch, "expand: individual model has fewer than 4 significant layers");

    std::vector<CopiedLayer> plan;
    if (strategy.family == Family::Embedding) {
        require(!unit.layers.empty() && static_cast<int>(unit.layers.size()) <= slot, ErrorKind::ShapeMismatch,
                "expand: unit must hold 1..4 layers");
        const int start = slot_start(strategy.position, n_ind, slot) + slot - static_cast<int>(unit.layers.size());
        for (std::size_t i = 0; i < unit.layers.size(); ++i)
            plan.push_back({start + static_cast<int>(i), unit.layers[i].source_id, &unit.layers[i].kernel,
                            &unit.layers[i].bias});
    } else {
        if (!collective)
            fail(ErrorKind::StrategyUnavailable,
                 "inheriting strategy '" + to_string(strategy) + "' needs the collective model, which was not retained");
        const int seg_start = strategy.position == Position::Top ? 1 : slot + 1;
        if (collective->significant_count() < seg_start + slot - 1)
            fail(ErrorKind::StrategyUnavailable, "collective model has no segment for '" + to_string(strategy) + "'");
        const int dst = slot_start(Position::Bottom, n_ind, slot);
        for (int i = 0; i < slot; ++i) {
            const auto& src = collective->layers()[*collective->significant_layer(seg_start + i)];
            plan.push_back({dst + i, seg_start + i, &src.params[0].value, &src.params[1].value});
        }
    }

    ExpansionResult out;
    for (const auto& c : plan) {
        const auto li = *individual.significant_layer(c.target_id);
        auto& layer = individual.layers()[li];
        require(layer.params[0].value.size() == c.kernel->size() && layer.params[1].value.size() == c.bias->size(),
                ErrorKind::ShapeMismatch, "expand: copied layer shape does not match slot " + std::to_string(c.target_id));
        layer.params[0].value = *c.kernel;
        layer.params[1].value = *c.bias;
        out.copied_ids.push_back(c.target_id);
        out.anchors.push_back({li, {*c.kernel, *c.bias}});
        out.copied_parameters += c.kernel->size() + c.bias->size();
    }
    out.model = std::move(individual);
    return out;
}

/// Trains an expanded model on the target task with the anchored loss on the
/// copied layers.
inline sdnet::TrainResult adapt_individual(ExpansionResult& expanded, const TaskDataset& target,
                                           const sdnet::TrainConfig& cfg, const sdnet::EpochCallback& on_epoch = {})
{
    return sdnet::train_on_task(expanded.model, target, cfg, &expanded.anchors, on_epoch);
}

} // namespace lgmimo::learngene
