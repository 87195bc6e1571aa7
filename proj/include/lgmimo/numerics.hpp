// SPDX-License-Identifier: Apache-2.0
//
// lgmimo: deep MIMO detection and learngene transfer workbench
// ------------------------------------------------------------------------

#pragma once

#include <algorithm>
#include <complex>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "lgmimo/error.hpp"

namespace lgmimo {

using cdouble = std::complex<double>;

using RealMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ComplexMatrix = Eigen::Matrix<cdouble, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RealVector = Eigen::VectorXd;
using ComplexVector = Eigen::VectorXcd;

/// Relative rank tolerance: sigma_min <= kRankTolerance * sigma_max is singular.
inline constexpr double kRankTolerance = 1e-10;

/// Real lift of a complex vector: [Re(x); Im(x)].
inline RealVector realify(const ComplexVector& x)
{
    const Eigen::Index n = x.size();
    RealVector out(2 * n);
    out.head(n) = x.real();
    out.tail(n) = x.imag();
    return out;
}

/// Inverse of `realify`.
inline ComplexVector complexify(const RealVector& v)
{
    const Eigen::Index n = v.size() / 2;
    ComplexVector out(n);
    for (Eigen::Index i = 0; i < n; ++i)
        out(i) = {v(i), v(n + i)};
    return out;
}

/// Real-valued equivalent channel [[Re, -Im], [Im, Re]].
inline RealMatrix complex_to_real_channel(const ComplexMatrix& h)
{
    const Eigen::Index r = h.rows();
    const Eigen::Index c = h.cols();
    RealMatrix out(2 * r, 2 * c);
    out.topLeftCorner(r, c) = h.real();
    out.topRightCorner(r, c) = -h.imag();
    out.bottomLeftCorner(r, c) = h.imag();
    out.bottomRightCorner(r, c) = h.real();
    return out;
}

/// Moore-Penrose pseudo-inverse of a tall, full-column-rank matrix via SVD.
/// Throws RankDeficient when sigma_min <= kRankTolerance * sigma_max.
inline RealMatrix pseudo_inverse(const RealMatrix& m)
{
    require(m.rows() >= m.cols() && m.cols() > 0, ErrorKind::ShapeMismatch,
            "pseudo_inverse expects a tall matrix");
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    const double smax = s(0);
    const double smin = s(s.size() - 1);
    if (!(smax > 0.0) || smin <= kRankTolerance * smax)
        fail(ErrorKind::RankDeficient, "smallest singular value below rank tolerance");
    const Eigen::VectorXd inv = s.cwiseInverse();
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

/// Eigenvalues of H^H H in descending order, clamped at zero.
inline std::vector<double> eigen_spectrum(const ComplexMatrix& h)
{
    const Eigen::MatrixXcd gram = h.adjoint() * h;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(gram, Eigen::EigenvaluesOnly);
    const auto& ev = solver.eigenvalues();
    std::vector<double> out(static_cast<std::size_t>(ev.size()));
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        out[static_cast<std::size_t>(i)] = std::max(0.0, ev(i));
    std::sort(out.begin(), out.end(), std::greater<>());
    return out;
}

} // namespace lgmimo
