// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "lgmimo/detectors.hpp"

using namespace lgmimo;

namespace {

ComplexMatrix random_complex(int rows, int cols, RngStream& rng)
{
    ComplexMatrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            m(i, j) = rng.complex_gaussian(1.0);
    return m;
}

ComplexVector random_symbols(int n, RngStream& rng)
{
    ComplexVector x(n);
    for (int i = 0; i < n; ++i)
        x(i) = random_qpsk(rng);
    return x;
}

double rel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (a - b).norm() / b.norm(); }

} // namespace

TEST(RealLift, MatrixVectorProductCommutesWithLift)
{
    RngStream rng(1, "lift");
    for (int trial = 0; trial < 20; ++trial) {
        const auto h = random_complex(6, 3, rng);
        const auto x = random_symbols(3, rng);
        EXPECT_LT((complex_to_real_channel(h) * realify(x) - realify(h * x)).norm(), 1e-12);
        EXPECT_LT((complexify(realify(x)) - x).norm(), 1e-15);
    }
}

TEST(RealLift, SpectrumIsDuplicated)
{
    RngStream rng(2, "lift");
    const auto h = random_complex(8, 4, rng);
    const auto complex_ev = eigen_spectrum(h);
    const RealMatrix hr = complex_to_real_channel(h);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hr.transpose() * hr);
    std::vector<double> real_ev(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
    std::sort(real_ev.rbegin(), real_ev.rend());
    for (std::size_t i = 0; i < complex_ev.size(); ++i) {
        EXPECT_NEAR(real_ev[2 * i], complex_ev[i], 1e-10 * complex_ev[0]);
        EXPECT_NEAR(real_ev[2 * i + 1], complex_ev[i], 1e-10 * complex_ev[0]);
    }
}

TEST(PseudoInverse, MatchesNormalEquationsAndRejectsRankDeficiency)
{
    RngStream rng(3, "pinv");
    for (int trial = 0; trial < 20; ++trial) {
        const RealMatrix a = complex_to_real_channel(random_complex(10, 4, rng));
        const RealMatrix oracle = (a.transpose() * a).inverse() * a.transpose();
        EXPECT_LT((pseudo_inverse(a) - oracle).norm() / oracle.norm(), 1e-12);
    }
    RealMatrix deficient = RealMatrix::Random(6, 3);
    deficient.col(2) = deficient.col(0) * 2.0;
    EXPECT_THROW(pseudo_inverse(deficient), Error);
}

TEST(Detectors, ZfAndMmseMatchDenseSolves)
{
    RngStream rng(4, "linear");
    for (int trial = 0; trial < 200; ++trial) {
        const ComplexMatrix h = random_complex(8, 4, rng);
        const ComplexVector x = random_symbols(4, rng);
        ComplexVector y = h * x;
        for (int i = 0; i < 8; ++i)
            y(i) += rng.complex_gaussian(0.05);
        // complex-domain oracles, compared on the lift
        const ComplexVector zf = (h.adjoint() * h).lu().solve(h.adjoint() * y);
        const double s2 = 0.05;
        const ComplexVector mmse =
            (h.adjoint() * h + s2 * ComplexMatrix::Identity(4, 4)).lu().solve(h.adjoint() * y);
        const RealMatrix hr = complex_to_real_channel(h);
        EXPECT_LT(rel(zf_detect(hr, realify(y)), realify(zf)), 1e-9);
        EXPECT_LT(rel(mmse_detect(hr, realify(y), s2), realify(mmse)), 1e-9);
    }
}

TEST(Detectors, NoiselessZfRecoversSymbolsAndMmseReducesToZf)
{
    RngStream rng(5, "noiseless");
    const ComplexMatrix h = random_complex(8, 4, rng);
    const ComplexVector x = random_symbols(4, rng);
    const RealMatrix hr = complex_to_real_channel(h);
    EXPECT_LT((zf_detect(hr, realify(h * x)) - realify(x)).norm(), 1e-12);
    EXPECT_EQ(mmse_detect(hr, realify(h * x), 0.0), zf_detect(hr, realify(h * x)));
}

TEST(Detectors, MlMatchesIndependentEnumeration)
{
    RngStream rng(6, "ml");
    const auto points = qpsk_points();
    for (int trial = 0; trial < 300; ++trial) {
        const ComplexMatrix h = random_complex(4, 2, rng);
        ComplexVector y = h * random_symbols(2, rng);
        for (int i = 0; i < 4; ++i)
            y(i) += rng.complex_gaussian(0.5);
        // complex-domain brute force over the 16 candidates
        double best = std::numeric_limits<double>::infinity();
        ComplexVector arg(2);
        for (const auto& a : points)
            for (const auto& b : points) {
                ComplexVector c(2);
                c << a, b;
                const double d = (y - h * c).squaredNorm();
                if (d < best) {
                    best = d;
                    arg = c;
                }
            }
        const RealVector ml = ml_detect(complex_to_real_channel(h), realify(y));
        EXPECT_EQ(complexify(ml), arg);
    }
}

TEST(Detectors, MlRejectsLargeSearch)
{
    try {
        ml_detect(RealMatrix::Random(16, 12), RealVector::Random(16));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::SearchSpaceTooLarge);
    }
}

TEST(Ser, CountsComplexSymbols)
{
    RealVector truth(4), pred(4);
    truth << 1, 1, 1, 1;
    pred << 1, -1, -1, 1; // symbol 0 wrong (imag), symbol 1 wrong (real)
    std::vector<RealVector> p{pred}, t{truth};
    EXPECT_DOUBLE_EQ(ser(p, t), 1.0);
    pred << 1, 1, 1, -1;
    p = {pred};
    EXPECT_DOUBLE_EQ(ser(p, t), 0.5);
    p.push_back(pred);
    EXPECT_THROW(ser(p, t), Error);
    EXPECT_NEAR(ser_standard_error(0.1, 10000), 0.003, 1e-12);
}

TEST(ZfNoise, NoiselessIsZeroAndSmallRunIsClose)
{
    RngStream rng(7, "zfn");
    const ComplexMatrix h = random_complex(16, 4, rng);
    auto s0 = zf_noise_stats(h, 0.0, 100, rng);
    EXPECT_EQ(s0.empirical_total_variance, 0.0);
    auto s = zf_noise_stats(h, 0.1, 20000, rng);
    EXPECT_LT((s.empirical_covariance - s.analytic_covariance).norm() / s.analytic_covariance.norm(), 0.05);
    // total variance equals trace of the analytic covariance
    EXPECT_NEAR(s.analytic_total_variance, s.analytic_covariance.trace().real(), 1e-12);
}
