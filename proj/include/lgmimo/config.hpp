// SPDX-License-Identifier: Apache-2.0
//
// lgmimo: deep MIMO detection and learngene transfer workbench
// ------------------------------------------------------------------------
//
// Run configuration: one JSON document with a versioned schema. Unknown keys
// are rejected at every level so that typos cannot silently fall back to
// defaults.

#pragma once

#include <cstdint>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "lgmimo/channel.hpp"
#include "lgmimo/container.hpp"
#include "lgmimo/error.hpp"
#include "lgmimo/learngene.hpp"

namespace lgmimo {

inline constexpr int kConfigSchemaVersion = 1;

struct RunConfig {
    std::uint64_t master_seed = 1;
    Geometry geometry;
    ChannelParams channel;
    double snr_db = 25.0;
    std::vector<double> snr_grid{20.0, 22.5, 25.0, 27.5, 30.0};
    std::size_t samples_per_task = 2000;
    std::size_t sweep_samples = 1000; // per SNR point

    int collective_tasks = 8;
    int target_tasks = 2;
    int transfer_source = 0; // index into the collective tasks

    int collective_epochs = 30;
    int individual_epochs = 120;
    int batch_size = 500;
    double learning_rate = 1e-3;

    double tau = learngene::kDefaultTau;
    double rho_sel = learngene::kDefaultRhoSel;
    int window = 0; // 0 selects max(3, K/2)
    int max_layers = learngene::kDefaultMaxLayers;
    double lambda = learngene::kDefaultLambda;

    std::vector<std::string> schemes{"scratch",         "transfer",          "embedding-top",
                                     "embedding-middle", "bottom",           "inheriting-top",
                                     "inheriting-middle"};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

    // generalization matrix over the first `matrix_tasks` collective tasks
    int matrix_tasks = 4;
    std::vector<std::uint64_t> matrix_seeds{1, 2, 3};
    std::size_t distance_pairs = 200;

    int workers = 0; // 0 reads LGMIMO_WORKERS, then the hardware concurrency
};

namespace config_detail {

inline void check_keys(const io::json& j, const std::set<std::string>& allowed, const std::string& where)
{
    if (!j.is_object())
        fail(ErrorKind::ConfigError, where + " must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key))
            fail(ErrorKind::ConfigError, "unknown key '" + key + "' in " + where);
}

template <typename T>
void read(const io::json& j, const char* key, T& target, const std::string& where)
{
    if (!j.contains(key))
        return;
    try {
        target = j.at(key).get<T>();
    } catch (const io::json::exception&) {
        fail(ErrorKind::ConfigError, "key '" + std::string(key) + "' in " + where + " has the wrong type");
    }
}

inline double deg(double rad) { return rad * 180.0 / std::numbers::pi; }
inline double rad(double deg) { return deg * std::numbers::pi / 180.0; }

} // namespace config_detail

inline io::json to_json(const RunConfig& c)
{
    using config_detail::deg;
    return {{"schema_version", kConfigSchemaVersion},
            {"master_seed", c.master_seed},
            {"geometry", {{"nt", c.geometry.nt}, {"nr", c.geometry.nr}, {"np", c.geometry.np}}},
            {"channel",
             {{"clusters", c.channel.clusters},
              {"rays_per_cluster", c.channel.rays_per_cluster},
              {"angular_spread_deg", deg(c.channel.angular_spread_rad)},
              {"jitter_deg", deg(c.channel.jitter_rad)},
              {"rician_k", c.channel.rician_k}}},
            {"snr_db", c.snr_db},
            {"snr_grid", c.snr_grid},
            {"samples_per_task", c.samples_per_task},
            {"sweep_samples", c.sweep_samples},
            {"tasks", {{"collective", c.collective_tasks}, {"target", c.target_tasks}, {"transfer_source", c.transfer_source}}},
            {"train",
             {{"collective_epochs", c.collective_epochs},
              {"individual_epochs", c.individual_epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate}}},
            {"learngene",
             {{"tau", c.tau}, {"rho_sel", c.rho_sel}, {"window", c.window}, {"max_layers", c.max_layers}, {"lambda", c.lambda}}},
            {"schemes", c.schemes},
            {"seeds", c.seeds},
            {"matrix", {{"tasks", c.matrix_tasks}, {"seeds", c.matrix_seeds}, {"distance_pairs", c.distance_pairs}}},
            {"workers", c.workers}};
}

inline void validate(const RunConfig& c)
{
    const auto check = [](bool ok, const std::string& what) {
        if (!ok)
            fail(ErrorKind::ConfigError, what);
    };
    check(c.geometry.nt >= 1 && c.geometry.nr >= c.geometry.nt && c.geometry.np >= c.geometry.nt,
          "geometry needs 1 <= nt <= nr and np >= nt");
    check(c.channel.clusters >= 1 && c.channel.rays_per_cluster >= 1, "channel needs at least one cluster and ray");
    check(c.channel.angular_spread_rad >= 0 && c.channel.jitter_rad >= 0 && c.channel.rician_k >= 0,
          "channel spreads and rician_k must be non-negative");
    check(c.samples_per_task >= 10, "samples_per_task must be >= 10");
    check(c.sweep_samples >= 10, "sweep_samples must be >= 10");
    check(c.collective_tasks >= 1 && c.target_tasks >= 1, "need at least one collective and one target task");
    check(c.transfer_source >= 0 && c.transfer_source < c.collective_tasks, "transfer_source out of range");
    check(c.collective_epochs >= 1 && c.individual_epochs >= 0, "epochs out of range");
    check(c.batch_size >= 1 && c.learning_rate > 0, "batch_size and learning_rate must be positive");
    check(c.tau > 0 && c.rho_sel >= 0 && c.rho_sel <= 1 && c.window >= 0 && c.max_layers >= 1 && c.lambda >= 0,
          "learngene settings out of range");
    check(!c.seeds.empty() && !c.matrix_seeds.empty(), "seed lists must not be empty");
    check(c.matrix_tasks >= 2 && c.matrix_tasks <= c.collective_tasks, "matrix.tasks must be in [2, collective]");
    check(c.distance_pairs >= 1 && c.distance_pairs <= c.samples_per_task, "matrix.distance_pairs out of range");
    check(c.workers >= 0, "workers must be >= 0");
    for (const auto& s : c.schemes)
        check(s == "scratch" || s == "transfer" || learngene::is_strategy_name(s), "unknown scheme '" + s + "'");
}

/// Parses a config document. Missing keys keep their defaults.
inline RunConfig config_from_json(const io::json& j)
{
    using namespace config_detail;
    check_keys(j, {"schema_version", "master_seed", "geometry", "channel", "snr_db", "snr_grid", "samples_per_task",
                   "sweep_samples", "tasks", "train", "learngene", "schemes", "seeds", "matrix", "workers", "comment"},
               "config");
    if (!j.contains("schema_version") || !j["schema_version"].is_number_integer() ||
        j["schema_version"].get<int>() != kConfigSchemaVersion)
        fail(ErrorKind::ConfigError, "config schema_version must be " + std::to_string(kConfigSchemaVersion));
    RunConfig c;
    read(j, "master_seed", c.master_seed, "config");
    if (j.contains("geometry")) {
        const auto& g = j["geometry"];
        check_keys(g, {"nt", "nr", "np"}, "geometry");
        read(g, "nt", c.geometry.nt, "geometry");
        read(g, "nr", c.geometry.nr, "geometry");
        read(g, "np", c.geometry.np, "geometry");
    }
    if (j.contains("channel")) {
        const auto& ch = j["channel"];
        check_keys(ch, {"clusters", "rays_per_cluster", "angular_spread_deg", "jitter_deg", "rician_k"}, "channel");
        read(ch, "clusters", c.channel.clusters, "channel");
        read(ch, "rays_per_cluster", c.channel.rays_per_cluster, "channel");
        double spread = deg(c.channel.angular_spread_rad), jitter = deg(c.channel.jitter_rad);
        read(ch, "angular_spread_deg", spread, "channel");
        read(ch, "jitter_deg", jitter, "channel");
        c.channel.angular_spread_rad = config_detail::rad(spread);
        c.channel.jitter_rad = config_detail::rad(jitter);
        read(ch, "rician_k", c.channel.rician_k, "channel");
    }
    read(j, "snr_db", c.snr_db, "config");
    read(j, "snr_grid", c.snr_grid, "config");
    read(j, "samples_per_task", c.samples_per_task, "config");
    read(j, "sweep_samples", c.sweep_samples, "config");
    if (j.contains("tasks")) {
        const auto& t = j["tasks"];
        check_keys(t, {"collective", "target", "transfer_source"}, "tasks");
        read(t, "collective", c.collective_tasks, "tasks");
        read(t, "target", c.target_tasks, "tasks");
        read(t, "transfer_source", c.transfer_source, "tasks");
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        check_keys(t, {"collective_epochs", "individual_epochs", "batch_size", "learning_rate"}, "train");
        read(t, "collective_epochs", c.collective_epochs, "train");
        read(t, "individual_epochs", c.individual_epochs, "train");
        read(t, "batch_size", c.batch_size, "train");
        read(t, "learning_rate", c.learning_rate, "train");
    }
    if (j.contains("learngene")) {
        const auto& l = j["learngene"];
        check_keys(l, {"tau", "rho_sel", "window", "max_layers", "lambda"}, "learngene");
        read(l, "tau", c.tau, "learngene");
        read(l, "rho_sel", c.rho_sel, "learngene");
        read(l, "window", c.window, "learngene");
        read(l, "max_layers", c.max_layers, "learngene");
        read(l, "lambda", c.lambda, "learngene");
    }
    read(j, "schemes", c.schemes, "config");
    read(j, "seeds", c.seeds, "config");
    if (j.contains("matrix")) {
        const auto& m = j["matrix"];
        check_keys(m, {"tasks", "seeds", "distance_pairs"}, "matrix");
        read(m, "tasks", c.matrix_tasks, "matrix");
        read(m, "seeds", c.matrix_seeds, "matrix");
        read(m, "distance_pairs", c.distance_pairs, "matrix");
    }
    read(j, "workers", c.workers, "config");
    validate(c);
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path)
{
    io::json j;
    try {
        j = io::json::parse(io::read_text(path));
    } catch (const io::json::parse_error& e) {
        fail(ErrorKind::ConfigError, "config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

/// Hash of the canonical JSON form (keys sorted, fixed number formatting).
inline std::string config_hash(const RunConfig& c) { return io::hex64(io::hash_bytes(to_json(c).dump())); }

} // namespace lgmimo
