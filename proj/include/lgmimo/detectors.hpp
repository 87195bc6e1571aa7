// SPDX-License-Identifier: Apache-2.0
//
// lgmimo: deep MIMO detection and learngene transfer workbench
// ------------------------------------------------------------------------

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "lgmimo/error.hpp"
#include "lgmimo/numerics.hpp"
#include "lgmimo/rng.hpp"

namespace lgmimo {

/// Amplitude of each QPSK quadrature component.
inline const double kQpskAmplitude = 1.0 / std::numbers::sqrt2;

/// QPSK points in lexicographic order (real part first, negative before positive).
inline std::array<cdouble, 4> qpsk_points()
{
    const double a = kQpskAmplitude;
    return {cdouble{-a, -a}, cdouble{-a, a}, cdouble{a, -a}, cdouble{a, a}};
}

inline cdouble random_qpsk(RngStream& rng)
{
    const double re = (rng.next() >> 63) ? kQpskAmplitude : -kQpskAmplitude;
    const double im = (rng.next() >> 63) ? kQpskAmplitude : -kQpskAmplitude;
    return {re, im};
}

enum class DetectorTag { ZF, MMSE, ML, SDNet };

inline std::string to_string(DetectorTag tag)
{
    switch (tag) {
    case DetectorTag::ZF: return "zf";
    case DetectorTag::MMSE: return "mmse";
    case DetectorTag::ML: return "ml";
    case DetectorTag::SDNet: return "sdnet";
    }
    return "unknown";
}

struct DetectionResult {
    RealVector soft;    // real lift, length 2Nt
    ComplexVector hard; // QPSK decisions, length Nt
    DetectorTag tag = DetectorTag::ZF;
};

/// Zero-forcing: pinv(H) * y on the real lift.
inline RealVector zf_detect(const RealMatrix& h, const RealVector& y)
{
    require(h.rows() == y.size(), ErrorKind::ShapeMismatch, "zf_detect: y length != rows(H)");
    return pseudo_inverse(h) * y;
}

/// Linear MMSE on the real lift; `noise_var` is the per-complex-entry noise
/// variance, which is also the correct regulariser for unit-energy symbols.
inline RealVector mmse_detect(const RealMatrix& h, const RealVector& y, double noise_var)
{
    require(h.rows() == y.size(), ErrorKind::ShapeMismatch, "mmse_detect: y length != rows(H)");
    require(noise_var >= 0.0, ErrorKind::InvalidArgument, "mmse_detect: negative noise variance");
    if (noise_var == 0.0)
        return zf_detect(h, y);
    Eigen::MatrixXd gram = h.transpose() * h;
    gram.diagonal().array() += noise_var;
    const Eigen::VectorXd rhs = h.transpose() * y;
    return gram.llt().solve(rhs);
}

/// Exhaustive maximum-likelihood search over all 4^Nt QPSK vectors. The first
/// minimiser in lexicographic order (stream 0 most significant) wins ties.
inline RealVector ml_detect(const RealMatrix& h, const RealVector& y)
{
    require(h.rows() == y.size(), ErrorKind::ShapeMismatch, "ml_detect: y length != rows(H)");
    require(h.cols() % 2 == 0, ErrorKind::ShapeMismatch, "ml_detect: H must be a real lift");
    const Eigen::Index nt = h.cols() / 2;
    if (nt > 5)
        fail(ErrorKind::SearchSpaceTooLarge, "ml_detect supports Nt <= 5, got " + std::to_string(nt));

    const auto points = qpsk_points();
    const std::uint64_t total = std::uint64_t{1} << (2 * nt);
    RealVector candidate(2 * nt);
    RealVector best(2 * nt);
    double best_metric = std::numeric_limits<double>::infinity();
    for (std::uint64_t code = 0; code < total; ++code) {
        for (Eigen::Index s = 0; s < nt; ++s) {
            const auto digit = (code >> (2 * (nt - 1 - s))) & 3U;
            candidate(s) = points[digit].real();
            candidate(nt + s) = points[digit].imag();
        }
        const double metric = (y - h * candidate).squaredNorm();
        if (metric < best_metric) {
            best_metric = metric;
            best = candidate;
        }
    }
    return best;
}

/// Per-dimension sign decision onto {+-1/sqrt2}; zero maps to +.
inline RealVector hard_decision(const RealVector& soft)
{
    RealVector out(soft.size());
    for (Eigen::Index i = 0; i < soft.size(); ++i)
        out(i) = soft(i) >= 0.0 ? kQpskAmplitude : -kQpskAmplitude;
    return out;
}

inline ComplexVector to_symbols(const RealVector& lifted) { return complexify(hard_decision(lifted)); }

struct SymbolErrorCount {
    std::size_t errors = 0;
    std::size_t symbols = 0;

    [[nodiscard]] double rate() const { return symbols == 0 ? 0.0 : static_cast<double>(errors) / static_cast<double>(symbols); }
};

/// Counts complex-symbol errors between real-lifted decision vectors: a symbol
/// is wrong when either of its quadratures differs in sign from the truth.
inline SymbolErrorCount count_symbol_errors(std::span<const RealVector> predictions,
                                            std::span<const RealVector> truths)
{
    require(predictions.size() == truths.size(), ErrorKind::LengthMismatch,
            "ser: prediction and truth counts differ");
    SymbolErrorCount count;
    for (std::size_t n = 0; n < predictions.size(); ++n) {
        const auto& p = predictions[n];
        const auto& t = truths[n];
        require(p.size() == t.size() && p.size() % 2 == 0, ErrorKind::LengthMismatch,
                "ser: vector lengths differ");
        const Eigen::Index nt = p.size() / 2;
        for (Eigen::Index s = 0; s < nt; ++s) {
            const bool re_ok = (p(s) >= 0.0) == (t(s) >= 0.0);
            const bool im_ok = (p(nt + s) >= 0.0) == (t(nt + s) >= 0.0);
            if (!(re_ok && im_ok))
                ++count.errors;
        }
        count.symbols += static_cast<std::size_t>(nt);
    }
    return count;
}

inline double ser(std::span<const RealVector> predictions, std::span<const RealVector> truths)
{
    return count_symbol_errors(predictions, truths).rate();
}

/// Monte Carlo standard error sqrt(p(1-p)/N) of an error rate.
inline double ser_standard_error(double p, std::size_t n)
{
    if (n == 0)
        return 0.0;
    return std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

struct ZfNoiseStats {
    ComplexMatrix empirical_covariance;
    ComplexMatrix analytic_covariance;
    double empirical_total_variance = 0.0;
    double analytic_total_variance = 0.0;
    std::size_t trials = 0;
};

/// Monte Carlo study of the ZF error term n_zf = (H^H H)^{-1} H^H n for a fixed
/// channel with perfect CSI, carried out in the complex domain.
inline ZfNoiseStats zf_noise_stats(const ComplexMatrix& h, double noise_var, std::size_t n_trials,
                                   RngStream& rng)
{
    require(noise_var >= 0.0, ErrorKind::InvalidArgument, "zf_noise_stats: negative noise variance");
    const Eigen::Index nt = h.cols();
    const Eigen::Index nr = h.rows();
    const Eigen::MatrixXcd gram = h.adjoint() * h;
    const auto spectrum = eigen_spectrum(h);
    if (spectrum.empty() || !(spectrum.front() > 0.0) ||
        spectrum.back() <= kRankTolerance * kRankTolerance * spectrum.front())
        fail(ErrorKind::RankDeficient, "zf_noise_stats: H^H H is singular");
    const Eigen::MatrixXcd gram_inv = gram.inverse();
    const Eigen::MatrixXcd pinv = gram_inv * h.adjoint();

    ZfNoiseStats stats;
    stats.trials = n_trials;
    stats.analytic_covariance = noise_var * gram_inv;
    double inv_sum = 0.0;
    for (double lambda : spectrum)
        inv_sum += 1.0 / lambda;
    stats.analytic_total_variance = noise_var * inv_sum;

    // x_zf - x = pinv * (H x + n) - x = pinv * n, so the symbols drop out and
    // the noiseless case is exactly zero.
    Eigen::MatrixXcd acc = Eigen::MatrixXcd::Zero(nt, nt);
    Eigen::VectorXcd n(nr);
    for (std::size_t t = 0; t < n_trials; ++t) {
        for (Eigen::Index i = 0; i < nr; ++i)
            n(i) = rng.complex_gaussian(noise_var);
        const Eigen::VectorXcd n_zf = pinv * n;
        acc.noalias() += n_zf * n_zf.adjoint();
    }
    if (n_trials > 0)
        acc /= static_cast<double>(n_trials);
    stats.empirical_covariance = acc;
    stats.empirical_total_variance = acc.trace().real();
    return stats;
}

} // namespace lgmimo
