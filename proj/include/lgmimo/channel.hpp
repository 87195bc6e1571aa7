// SPDX-License-Identifier: Apache-2.0
//
// lgmimo: deep MIMO detection and learngene transfer workbench
// ------------------------------------------------------------------------
//
// Clustered geometric channel model, pilot transmission, LS channel
// estimation and per-task dataset generation.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "lgmimo/container.hpp"
#include "lgmimo/detectors.hpp"
#include "lgmimo/error.hpp"
#include "lgmimo/numerics.hpp"
#include "lgmimo/rng.hpp"

namespace lgmimo {

struct Geometry {
    int nt = 8;  // transmit streams
    int nr = 32; // receive antennas
    int np = 16; // pilot length

    friend bool operator==(const Geometry&, const Geometry&) = default;
};

struct ChannelParams {
    int clusters = 6;
    // Sub-rays per cluster. A single ray per cluster caps rank(H) at the
    // cluster count, which is below Nt for the default geometry.
    int rays_per_cluster = 20;
    double angular_spread_rad = 5.0 * std::numbers::pi / 180.0; // ray offsets within a cluster, fixed per task
    double jitter_rad = 1.0 * std::numbers::pi / 180.0;         // per-realization angle perturbation
    double rician_k = 3.0; // power ratio of the task-fixed ray gain to the per-realization fading
};

struct Ray {
    double departure = 0.0; // rad
    double arrival = 0.0;   // rad
    cdouble mean_gain;      // task-fixed part of the complex ray gain
};

struct Cluster {
    double departure = 0.0; // rad, [-pi, pi)
    double arrival = 0.0;   // rad, [-pi, pi)
    double power = 0.0;     // fraction of total power
    std::vector<Ray> rays;
};

struct ScattererConfig {
    std::uint64_t task_id = 0;
    std::vector<Cluster> clusters;
    double jitter_rad = 0.0;
    double rician_k = 0.0;
    // Calibrated so that E ||H||_F^2 = Nt * Nr for this task.
    double normalization = 1.0;
    Geometry geometry;
};

/// Unit-norm half-wavelength ULA response.
inline ComplexVector steering_vector(int n, double angle)
{
    ComplexVector a(n);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    const double phase = std::numbers::pi * std::sin(angle);
    for (int i = 0; i < n; ++i)
        a(i) = std::polar(scale, phase * i);
    return a;
}

/// One channel realization: sum over rays of g * a_r(theta + d) a_t(phi + d')^H
/// with g = sqrt(p_l / R) (sqrt(K/(K+1)) m + sqrt(1/(K+1)) CN(0, 1)) and
/// Gaussian angle jitter d, d', scaled by the config's normalization.
inline ComplexMatrix draw_channel(const ScattererConfig& cfg, RngStream& rng)
{
    const int nt = cfg.geometry.nt;
    const int nr = cfg.geometry.nr;
    const double los = std::sqrt(cfg.rician_k / (cfg.rician_k + 1.0));
    const double nlos_var = 1.0 / (cfg.rician_k + 1.0);
    ComplexMatrix h = ComplexMatrix::Zero(nr, nt);
    for (const auto& c : cfg.clusters) {
        const double amp = std::sqrt(c.power / static_cast<double>(c.rays.size()));
        for (const auto& r : c.rays) {
            const cdouble g = amp * (los * r.mean_gain + rng.complex_gaussian(nlos_var));
            const double jitter_rx = cfg.jitter_rad * rng.gaussian();
            const double jitter_tx = cfg.jitter_rad * rng.gaussian();
            const ComplexVector ar = steering_vector(nr, r.arrival + jitter_rx);
            const ComplexVector at = steering_vector(nt, r.departure + jitter_tx);
            h.noalias() += g * ar * at.adjoint();
        }
    }
    h *= cfg.normalization;
    return h;
}

/// Deterministic per-task scatterer layout. Cluster powers are normalised
/// exponential draws, cluster angles uniform on [-pi, pi), ray offsets
/// Gaussian with the angular spread, mean ray gains CN(0, 1).
inline ScattererConfig make_task(std::uint64_t master_seed, std::uint64_t task_id,
                                 const ChannelParams& params, const Geometry& geometry)
{
    require(params.clusters >= 1, ErrorKind::InvalidArgument, "make_task: need at least one cluster");
    require(params.rays_per_cluster >= 1, ErrorKind::InvalidArgument, "make_task: need at least one ray");
    require(params.angular_spread_rad >= 0.0 && params.jitter_rad >= 0.0, ErrorKind::InvalidArgument,
            "make_task: negative angular spread");
    require(params.rician_k >= 0.0, ErrorKind::InvalidArgument, "make_task: negative Rician factor");
    RngStream rng(master_seed, "task", task_id);

    ScattererConfig cfg;
    cfg.task_id = task_id;
    cfg.geometry = geometry;
    cfg.jitter_rad = params.jitter_rad;
    cfg.rician_k = params.rician_k;
    cfg.clusters.resize(static_cast<std::size_t>(params.clusters));
    double total = 0.0;
    for (auto& c : cfg.clusters) {
        c.departure = rng.uniform(-std::numbers::pi, std::numbers::pi);
        c.arrival = rng.uniform(-std::numbers::pi, std::numbers::pi);
        c.power = params.clusters == 1 ? 1.0 : rng.exponential();
        total += c.power;
        c.rays.resize(static_cast<std::size_t>(params.rays_per_cluster));
        for (auto& r : c.rays) {
            r.departure = c.departure + params.angular_spread_rad * rng.gaussian();
            r.arrival = c.arrival + params.angular_spread_rad * rng.gaussian();
            r.mean_gain = rng.complex_gaussian(1.0);
        }
    }
    for (auto& c : cfg.clusters)
        c.power /= total;
    cfg.normalization = 1.0;
    // The task-fixed gains add coherently, so the power is calibrated
    // empirically rather than in closed form.
    RngStream cal(master_seed, "normalization", task_id);
    double energy = 0.0;
    constexpr int draws = 400;
    for (int i = 0; i < draws; ++i)
        energy += draw_channel(cfg, cal).squaredNorm();
    cfg.normalization = std::sqrt(static_cast<double>(geometry.nt) * geometry.nr * draws / energy);
    return cfg;
}

/// Orthogonal pilots: first Nt rows of the Np x Np DFT matrix with unit-modulus
/// entries, so Xp Xp^H = Np I.
inline ComplexMatrix pilot_matrix(int nt, int np)
{
    require(np >= nt, ErrorKind::InvalidArgument, "pilot_matrix: Np must be >= Nt");
    ComplexMatrix xp(nt, np);
    for (int k = 0; k < nt; ++k)
        for (int n = 0; n < np; ++n)
            xp(k, n) = std::polar(1.0, -2.0 * std::numbers::pi * k * n / np);
    return xp;
}

/// LS estimate Yp Xp^H (Xp Xp^H)^{-1} (right pseudo-inverse of the pilots).
inline ComplexMatrix ls_estimate(const ComplexMatrix& yp, const ComplexMatrix& xp)
{
    require(yp.cols() == xp.cols(), ErrorKind::ShapeMismatch, "ls_estimate: pilot lengths differ");
    const Eigen::MatrixXcd gram = xp * xp.adjoint();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(gram, Eigen::EigenvaluesOnly);
    const auto& ev = eig.eigenvalues();
    if (!(ev(ev.size() - 1) > 0.0) || ev(0) <= kRankTolerance * ev(ev.size() - 1))
        fail(ErrorKind::RankDeficient, "ls_estimate: pilot Gram matrix is singular");
    // (Yp Xp^H) G^{-1} = (G^{-1} Xp Yp^H)^H with G Hermitian.
    const Eigen::MatrixXcd rhs = xp * yp.adjoint();
    const Eigen::MatrixXcd sol = gram.llt().solve(rhs);
    return sol.adjoint();
}

struct Sample {
    ComplexVector x;     // transmitted QPSK symbols (Nt)
    ComplexVector y;     // received vector (Nr)
    ComplexVector noise; // data noise draw (Nr); empty when loaded from disk
    ComplexMatrix h;     // true channel (Nr x Nt)
    ComplexMatrix yp;    // received pilots (Nr x Np); empty when loaded from disk
    ComplexMatrix h_ls;  // LS estimate (Nr x Nt)
    RealVector x_zf;     // ZF output on the real lift (2Nt)
};

struct SplitFractions {
    double train = 0.81;
    double val = 0.09;
    double test = 0.10;
};

struct DatasetOptions {
    Geometry geometry;
    SplitFractions split;
    int calibration_draws = 1000;
};

/// Per-task dataset. Samples are stored train -> val -> test.
struct TaskDataset {
    std::uint64_t task_id = 0;
    ScattererConfig config;
    Geometry geometry;
    double snr_db = 0.0;
    double noise_var = 0.0;
    std::uint64_t seed = 0;
    std::vector<Sample> samples;
    std::size_t n_train = 0;
    std::size_t n_val = 0;
    std::size_t n_test = 0;
    std::size_t redraws = 0;

    [[nodiscard]] std::span<const Sample> all() const { return samples; }
    [[nodiscard]] std::span<const Sample> train() const { return all().subspan(0, n_train); }
    [[nodiscard]] std::span<const Sample> val() const { return all().subspan(n_train, n_val); }
    [[nodiscard]] std::span<const Sample> test() const { return all().subspan(n_train + n_val, n_test); }
};

inline bool noise_disabled(double snr_db) { return std::isinf(snr_db) && snr_db > 0.0; }

/// Noise variance for a target receive SNR: 10 log10(E_rx / sigma^2) = snr_db
/// with E_rx the mean of ||H x||^2 / Nr over a calibration draw.
inline double calibrate_noise_variance(const ScattererConfig& cfg, double snr_db, std::uint64_t seed,
                                       int draws)
{
    if (noise_disabled(snr_db))
        return 0.0;
    RngStream rng(seed, "calibration", cfg.task_id);
    const int nt = cfg.geometry.nt;
    double energy = 0.0;
    ComplexVector x(nt);
    for (int d = 0; d < draws; ++d) {
        const ComplexMatrix h = draw_channel(cfg, rng);
        for (int i = 0; i < nt; ++i)
            x(i) = random_qpsk(rng);
        energy += (h * x).squaredNorm() / cfg.geometry.nr;
    }
    energy /= draws;
    return energy / std::pow(10.0, snr_db / 10.0);
}

inline std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitFractions& f)
{
    const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * f.train));
    const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * f.val));
    require(n_train + n_val <= n, ErrorKind::InvalidArgument, "split fractions exceed 1");
    return {n_train, n_val, n - n_train - n_val};
}

/// Draws one sample with its own RNG stream. Returns false when the LS
/// estimate is unusable for ZF (rank deficient).
inline bool draw_sample(const ScattererConfig& cfg, double noise_var, const ComplexMatrix& xp,
                        RngStream& rng, Sample& out)
{
    const int nt = cfg.geometry.nt;
    const int nr = cfg.geometry.nr;
    const int np = static_cast<int>(xp.cols());
    out.x.resize(nt);
    for (int i = 0; i < nt; ++i)
        out.x(i) = random_qpsk(rng);
    out.h = draw_channel(cfg, rng);
    out.noise.resize(nr);
    for (int i = 0; i < nr; ++i)
        out.noise(i) = noise_var > 0.0 ? rng.complex_gaussian(noise_var) : cdouble{};
    out.y = out.h * out.x + out.noise;
    ComplexMatrix pilot_noise(nr, np);
    for (int i = 0; i < nr; ++i)
        for (int j = 0; j < np; ++j)
            pilot_noise(i, j) = noise_var > 0.0 ? rng.complex_gaussian(noise_var) : cdouble{};
    out.yp = out.h * xp + pilot_noise;
    out.h_ls = ls_estimate(out.yp, xp);
    try {
        out.x_zf = zf_detect(complex_to_real_channel(out.h_ls), realify(out.y));
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::RankDeficient)
            return false;
        throw;
    }
    return true;
}

/// Generates a task dataset. Sample i uses stream ("sample", task, attempt<<32 | i),
/// so rank-deficient draws are replaced deterministically.
inline TaskDataset generate_dataset(const ScattererConfig& cfg, std::size_t n_samples, double snr_db,
                                    const DatasetOptions& opts, std::uint64_t master_seed)
{
    require(n_samples >= 10, ErrorKind::InvalidArgument, "generate_dataset: need at least 10 samples");
    require(opts.geometry.np >= opts.geometry.nt, ErrorKind::InvalidArgument, "generate_dataset: Np < Nt");
    require(cfg.geometry == opts.geometry, ErrorKind::IncompatibleGeometry,
            "generate_dataset: scatterer config built for a different geometry");

    TaskDataset ds;
    ds.task_id = cfg.task_id;
    ds.config = cfg;
    ds.geometry = opts.geometry;
    ds.snr_db = snr_db;
    ds.seed = master_seed;
    ds.noise_var = calibrate_noise_variance(cfg, snr_db, master_seed, opts.calibration_draws);
    const auto sizes = split_sizes(n_samples, opts.split);
    ds.n_train = sizes[0];
    ds.n_val = sizes[1];
    ds.n_test = sizes[2];

    const ComplexMatrix xp = pilot_matrix(opts.geometry.nt, opts.geometry.np);
    ds.samples.resize(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
        for (std::uint64_t attempt = 0;; ++attempt) {
            RngStream rng(master_seed, "sample", cfg.task_id, (attempt << 32) | i);
            if (draw_sample(cfg, ds.noise_var, xp, rng, ds.samples[i]))
                break;
            ++ds.redraws;
            require(attempt < 1000, ErrorKind::RankDeficient, "generate_dataset: channel persistently singular");
        }
    }
    return ds;
}

/// Euclidean distance between two channels with complex entries read as two reals.
inline double channel_distance(const ComplexMatrix& a, const ComplexMatrix& b)
{
    require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::ShapeMismatch,
            "channel_distance: shapes differ");
    return (a - b).norm();
}

/// Mean channel distance over explicit (index in A, index in B) pairs.
inline double dataset_distance(const TaskDataset& a, const TaskDataset& b,
                               std::span<const std::pair<std::size_t, std::size_t>> pairs)
{
    require(!pairs.empty(), ErrorKind::InvalidArgument, "dataset_distance: no pairs");
    double sum = 0.0;
    for (const auto& [ia, ib] : pairs) {
        require(ia < a.samples.size() && ib < b.samples.size(), ErrorKind::InvalidArgument,
                "dataset_distance: pair index out of range");
        sum += channel_distance(a.samples[ia].h, b.samples[ib].h);
    }
    return sum / static_cast<double>(pairs.size());
}

/// Mean channel distance over k random pairs drawn with `seed`.
inline double dataset_distance(const TaskDataset& a, const TaskDataset& b, std::size_t k, std::uint64_t seed)
{
    require(k >= 1 && k <= std::min(a.samples.size(), b.samples.size()), ErrorKind::InvalidArgument,
            "dataset_distance: k out of range");
    RngStream rng(seed, "dataset-distance", (a.task_id << 32) ^ b.task_id);
    std::vector<std::pair<std::size_t, std::size_t>> pairs(k);
    for (auto& p : pairs) {
        p.first = static_cast<std::size_t>(rng.below(a.samples.size()));
        p.second = static_cast<std::size_t>(rng.below(b.samples.size()));
    }
    return dataset_distance(a, b, pairs);
}

/// Mean descending eigenvalue curve of H^H H over a dataset.
inline std::vector<double> mean_eigen_spectrum(std::span<const Sample> samples)
{
    std::vector<double> mean;
    for (const auto& s : samples) {
        const auto ev = eigen_spectrum(s.h);
        if (mean.empty())
            mean.assign(ev.size(), 0.0);
        for (std::size_t i = 0; i < ev.size(); ++i)
            mean[i] += ev[i];
    }
    for (auto& v : mean)
        v /= static_cast<double>(samples.size());
    return mean;
}

// Dataset files -----------------------------------------------------------

inline constexpr std::string_view kDatasetFormat = "lgmimo-dataset";
inline constexpr int kDatasetVersion = 1;

inline io::json config_to_json(const ScattererConfig& cfg)
{
    io::json clusters = io::json::array();
    for (const auto& c : cfg.clusters) {
        io::json rays = io::json::array();
        for (const auto& r : c.rays)
            rays.push_back({r.departure, r.arrival, r.mean_gain.real(), r.mean_gain.imag()});
        clusters.push_back({{"departure", c.departure}, {"arrival", c.arrival}, {"power", c.power}, {"rays", rays}});
    }
    return {{"task_id", cfg.task_id},
            {"jitter_rad", cfg.jitter_rad},
            {"rician_k", cfg.rician_k},
            {"normalization", cfg.normalization},
            {"clusters", clusters}};
}

inline ScattererConfig config_from_json(const io::json& j, const Geometry& geometry)
{
    ScattererConfig cfg;
    cfg.task_id = j.at("task_id").get<std::uint64_t>();
    cfg.jitter_rad = j.at("jitter_rad").get<double>();
    cfg.rician_k = j.at("rician_k").get<double>();
    cfg.normalization = j.at("normalization").get<double>();
    cfg.geometry = geometry;
    for (const auto& cj : j.at("clusters")) {
        Cluster c;
        c.departure = cj.at("departure").get<double>();
        c.arrival = cj.at("arrival").get<double>();
        c.power = cj.at("power").get<double>();
        for (const auto& rj : cj.at("rays"))
            c.rays.push_back({rj.at(0).get<double>(), rj.at(1).get<double>(), {rj.at(2).get<double>(), rj.at(3).get<double>()}});
        cfg.clusters.push_back(std::move(c));
    }
    return cfg;
}

inline io::json geometry_to_json(const Geometry& g) { return {{"nt", g.nt}, {"nr", g.nr}, {"np", g.np}}; }

inline Geometry geometry_from_json(const io::json& j)
{
    return {j.at("nt").get<int>(), j.at("nr").get<int>(), j.at("np").get<int>()};
}

/// Per sample: x, y, H, H_LS as (real, imag) pairs in column-major element
/// order, then x_ZF. Float32, train then val then test.
inline std::string encode_samples(const TaskDataset& ds)
{
    std::string blob;
    std::vector<double> row;
    const auto push_complex = [&](const cdouble* data, Eigen::Index n) {
        for (Eigen::Index i = 0; i < n; ++i) {
            row.push_back(data[i].real());
            row.push_back(data[i].imag());
        }
    };
    for (const auto& s : ds.samples) {
        row.clear();
        push_complex(s.x.data(), s.x.size());
        push_complex(s.y.data(), s.y.size());
        push_complex(s.h.data(), s.h.size());
        push_complex(s.h_ls.data(), s.h_ls.size());
        row.insert(row.end(), s.x_zf.data(), s.x_zf.data() + s.x_zf.size());
        io::append_le<float>(blob, row);
    }
    return blob;
}

inline std::size_t floats_per_sample(const Geometry& g)
{
    return static_cast<std::size_t>(2 * g.nt + 2 * g.nr + 4 * g.nr * g.nt + 2 * g.nt);
}

/// FNV-1a hash of the stored sample bytes; equal hashes mean equal data.
inline std::string dataset_hash(const TaskDataset& ds) { return io::hex64(io::hash_bytes(encode_samples(ds))); }

inline void save_dataset(const TaskDataset& ds, const std::filesystem::path& path, const io::json& extra = io::json::object())
{
    io::json m = {{"format", kDatasetFormat},
                  {"format_version", kDatasetVersion},
                  {"task_id", ds.task_id},
                  {"config", config_to_json(ds.config)},
                  {"geometry", geometry_to_json(ds.geometry)},
                  {"snr_db", ds.snr_db},
                  {"noise_var", ds.noise_var},
                  {"seed", ds.seed},
                  {"redraws", ds.redraws},
                  {"counts", {{"train", ds.n_train}, {"val", ds.n_val}, {"test", ds.n_test}}}};
    for (const auto& [k, v] : extra.items())
        m[k] = v;
    io::write_container(path, m, encode_samples(ds), "float32");
}

inline TaskDataset load_dataset(const std::filesystem::path& path)
{
    const auto c = io::read_container(path, kDatasetFormat, kDatasetVersion);
    const auto& m = c.manifest;
    TaskDataset ds;
    try {
        ds.task_id = m.at("task_id").get<std::uint64_t>();
        ds.geometry = geometry_from_json(m.at("geometry"));
        ds.snr_db = m.at("snr_db").get<double>();
        ds.noise_var = m.at("noise_var").get<double>();
        ds.seed = m.at("seed").get<std::uint64_t>();
        ds.redraws = m.at("redraws").get<std::size_t>();
        ds.n_train = m.at("counts").at("train").get<std::size_t>();
        ds.n_val = m.at("counts").at("val").get<std::size_t>();
        ds.n_test = m.at("counts").at("test").get<std::size_t>();
        ds.config = config_from_json(m.at("config"), ds.geometry);
    } catch (const io::json::exception& e) {
        fail(ErrorKind::FormatVersionMismatch, "dataset manifest '" + path.string() + "': " + e.what());
    }
    const Geometry& g = ds.geometry;
    require(g.nt >= 1 && g.nr >= 1, ErrorKind::FormatVersionMismatch, "dataset manifest has an invalid geometry");
    const std::size_t n = ds.n_train + ds.n_val + ds.n_test;
    const std::size_t per = floats_per_sample(g);
    if (c.blob.size() != n * per * sizeof(float))
        fail(ErrorKind::CorruptBlob, "dataset blob length does not match the declared sample counts");
    const auto values = io::decode_le<float>(c.blob);
    ds.samples.resize(n);
    const double* p = values.data();
    const auto read_complex = [&p](cdouble* data, Eigen::Index count) {
        for (Eigen::Index i = 0; i < count; ++i, p += 2)
            data[i] = {p[0], p[1]};
    };
    for (auto& s : ds.samples) {
        s.x.resize(g.nt);
        s.y.resize(g.nr);
        s.h.resize(g.nr, g.nt);
        s.h_ls.resize(g.nr, g.nt);
        s.x_zf.resize(2 * g.nt);
        read_complex(s.x.data(), s.x.size());
        read_complex(s.y.data(), s.y.size());
        read_complex(s.h.data(), s.h.size());
        read_complex(s.h_ls.data(), s.h_ls.size());
        for (Eigen::Index i = 0; i < s.x_zf.size(); ++i)
            s.x_zf(i) = *p++;
    }
    return ds;
}

} // namespace lgmimo
