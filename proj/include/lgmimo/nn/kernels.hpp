// SPDX-License-Identifier: Apache-2.0
//
// lgmimo: deep MIMO detection and learngene transfer workbench
// ------------------------------------------------------------------------
//
// Raw compute kernels. Layouts follow the common HWIO convention:
//   conv kernel  [kh][kw][cin][cout], 3x3, stride 1, zero "same" padding
//   dense kernel [in][out]
// Activations are HWC per sample.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace lgmimo::nn::kernels {

/// Copies an HxWxC map into the interior of a zeroed (H+2)x(W+2)xC buffer.
inline void pad_same(std::span<const double> in, int h, int w, int c, std::vector<double>& padded)
{
    const int pw = w + 2;
    padded.assign(static_cast<std::size_t>(h + 2) * pw * c, 0.0);
    for (int r = 0; r < h; ++r) {
        const double* src = in.data() + static_cast<std::size_t>(r) * w * c;
        double* dst = padded.data() + (static_cast<std::size_t>(r + 1) * pw + 1) * c;
        std::copy(src, src + static_cast<std::size_t>(w) * c, dst);
    }
}

namespace detail {

// Four output columns per step with COUT-wide accumulators; Eigen fixed-size
// arrays map these onto SIMD registers.
template <int CIN, int COUT>
void conv3x3_fixed(const double* __restrict padded, int h, int w, const double* __restrict kernel, const double* bias,
                   double* __restrict out)
{
    using V = Eigen::Array<double, COUT, 1>;
    constexpr int T = 3 * CIN; // one kernel row: kw x cin taps
    const int pw = w + 2;
    const V b = bias ? V(Eigen::Map<const V>(bias)) : V(V::Zero());
    for (int r = 0; r < h; ++r) {
        int col = 0;
        for (; col + 4 <= w; col += 4) {
            V a0 = b, a1 = b, a2 = b, a3 = b;
            for (int kh = 0; kh < 3; ++kh) {
                const double* ip = padded + (static_cast<std::size_t>(r + kh) * pw + col) * CIN;
                const double* kp = kernel + static_cast<std::size_t>(kh) * T * COUT;
                for (int t = 0; t < T; ++t) {
                    const V kv = Eigen::Map<const V>(kp + static_cast<std::size_t>(t) * COUT);
                    a0 += ip[t] * kv;
                    a1 += ip[t + CIN] * kv;
                    a2 += ip[t + 2 * CIN] * kv;
                    a3 += ip[t + 3 * CIN] * kv;
                }
            }
            double* op = out + (static_cast<std::size_t>(r) * w + col) * COUT;
            Eigen::Map<V>{op} = a0;
            Eigen::Map<V>(op + COUT) = a1;
            Eigen::Map<V>(op + 2 * COUT) = a2;
            Eigen::Map<V>(op + 3 * COUT) = a3;
        }
        for (; col < w; ++col) {
            V a = b;
            for (int kh = 0; kh < 3; ++kh) {
                const double* ip = padded + (static_cast<std::size_t>(r + kh) * pw + col) * CIN;
                const double* kp = kernel + static_cast<std::size_t>(kh) * T * COUT;
                for (int t = 0; t < T; ++t)
                    a += ip[t] * Eigen::Map<const V>(kp + static_cast<std::size_t>(t) * COUT);
            }
            Eigen::Map<V>(out + (static_cast<std::size_t>(r) * w + col) * COUT) = a;
        }
    }
}

inline void conv3x3_generic(const double* padded, int h, int w, int cin, int cout, const double* kernel,
                            const double* bias, double* out)
{
    const int pw = w + 2;
    for (int r = 0; r < h; ++r) {
        for (int col = 0; col < w; ++col) {
            double* op = out + (static_cast<std::size_t>(r) * w + col) * cout;
            for (int co = 0; co < cout; ++co)
                op[co] = bias ? bias[co] : 0.0;
            for (int kh = 0; kh < 3; ++kh) {
                for (int kw = 0; kw < 3; ++kw) {
                    const double* ip = padded + (static_cast<std::size_t>(r + kh) * pw + (col + kw)) * cin;
                    const double* kp = kernel + static_cast<std::size_t>(kh * 3 + kw) * cin * cout;
                    for (int ci = 0; ci < cin; ++ci) {
                        const double v = ip[ci];
                        for (int co = 0; co < cout; ++co)
                            op[co] += v * kp[ci * cout + co];
                    }
                }
            }
        }
    }
}

// One pass over the positions per kernel row, holding that row's 3*CIN
// accumulators in registers.
template <int CIN, int COUT>
void conv3x3_weight_grad_fixed(const double* __restrict padded, int h, int w, const double* __restrict grad_out,
                               double* grad_kernel, double* grad_bias)
{
    using V = Eigen::Array<double, COUT, 1>;
    constexpr int T = 3 * CIN;
    const int pw = w + 2;
    V gb = V::Zero();
    for (int kh = 0; kh < 3; ++kh) {
        std::array<V, T> acc;
        for (auto& a : acc)
            a.setZero();
        for (int r = 0; r < h; ++r) {
            const double* row = padded + static_cast<std::size_t>(r + kh) * pw * CIN;
            for (int col = 0; col < w; ++col) {
                const V g = Eigen::Map<const V>(grad_out + (static_cast<std::size_t>(r) * w + col) * COUT);
                const double* ip = row + static_cast<std::size_t>(col) * CIN;
                if (kh == 0)
                    gb += g;
                for (int t = 0; t < T; ++t)
                    acc[t] += ip[t] * g;
            }
        }
        for (int t = 0; t < T; ++t)
            Eigen::Map<V>(grad_kernel + (static_cast<std::size_t>(kh) * T + t) * COUT) += acc[t];
    }
    Eigen::Map<V>(grad_bias) += gb;
}

inline void conv3x3_weight_grad_generic(const double* padded, int h, int w, int cin, int cout,
                                        const double* grad_out, double* grad_kernel, double* grad_bias)
{
    const int pw = w + 2;
    for (int r = 0; r < h; ++r) {
        for (int col = 0; col < w; ++col) {
            const double* g = grad_out + (static_cast<std::size_t>(r) * w + col) * cout;
            for (int co = 0; co < cout; ++co)
                grad_bias[co] += g[co];
            for (int kh = 0; kh < 3; ++kh) {
                for (int kw = 0; kw < 3; ++kw) {
                    const double* ip = padded + (static_cast<std::size_t>(r + kh) * pw + (col + kw)) * cin;
                    double* kp = grad_kernel + static_cast<std::size_t>(kh * 3 + kw) * cin * cout;
                    for (int ci = 0; ci < cin; ++ci) {
                        const double v = ip[ci];
                        for (int co = 0; co < cout; ++co)
                            kp[ci * cout + co] += v * g[co];
                    }
                }
            }
        }
    }
}

} // namespace detail

/// out = conv3x3(in) + bias for one sample. `padded` is the output of pad_same.
inline void conv3x3_forward(const double* padded, int h, int w, int cin, int cout, const double* kernel,
                            const double* bias, double* out)
{
    if (cin == 8 && cout == 8)
        detail::conv3x3_fixed<8, 8>(padded, h, w, kernel, bias, out);
    else if (cin == 1 && cout == 8)
        detail::conv3x3_fixed<1, 8>(padded, h, w, kernel, bias, out);
    else if (cin == 8 && cout == 1)
        detail::conv3x3_fixed<8, 1>(padded, h, w, kernel, bias, out);
    else
        detail::conv3x3_generic(padded, h, w, cin, cout, kernel, bias, out);
}

/// Accumulates kernel and bias gradients for one sample.
inline void conv3x3_weight_grad(const double* padded, int h, int w, int cin, int cout, const double* grad_out,
                                double* grad_kernel, double* grad_bias)
{
    if (cin == 8 && cout == 8)
        detail::conv3x3_weight_grad_fixed<8, 8>(padded, h, w, grad_out, grad_kernel, grad_bias);
    else if (cin == 1 && cout == 8)
        detail::conv3x3_weight_grad_fixed<1, 8>(padded, h, w, grad_out, grad_kernel, grad_bias);
    else if (cin == 8 && cout == 1)
        detail::conv3x3_weight_grad_fixed<8, 1>(padded, h, w, grad_out, grad_kernel, grad_bias);
    else
        detail::conv3x3_weight_grad_generic(padded, h, w, cin, cout, grad_out, grad_kernel, grad_bias);
}

/// Kernel for the input gradient: spatially flipped with in/out channels
/// swapped, so that grad_in = conv3x3(pad(grad_out), flipped).
inline std::vector<double> flip_kernel(std::span<const double> kernel, int cin, int cout)
{
    std::vector<double> flipped(kernel.size());
    for (int kh = 0; kh < 3; ++kh)
        for (int kw = 0; kw < 3; ++kw)
            for (int ci = 0; ci < cin; ++ci)
                for (int co = 0; co < cout; ++co)
                    flipped[(static_cast<std::size_t>((2 - kh) * 3 + (2 - kw)) * cout + co) * cin + ci] =
                        kernel[(static_cast<std::size_t>(kh * 3 + kw) * cin + ci) * cout + co];
    return flipped;
}

/// Elementwise tanh as 1 - 2 / (exp(2x) + 1) on fixed 8-wide packets; the
/// tail is padded into a full packet so every element takes the same code
/// path whatever the buffer alignment.
inline void tanh_inplace(std::span<double> values)
{
    using P = Eigen::Array<double, 8, 1>;
    auto eval = [](const P& a) -> P { return 1.0 - 2.0 / ((2.0 * a).exp() + 1.0); };
    std::size_t i = 0;
    for (; i + 8 <= values.size(); i += 8) {
        Eigen::Map<P> m(values.data() + i);
        m = eval(m);
    }
    if (i < values.size()) {
        P tail = P::Zero();
        const std::size_t rest = values.size() - i;
        std::copy_n(values.data() + i, rest, tail.data());
        tail = eval(tail);
        std::copy_n(tail.data(), rest, values.data() + i);
    }
}

/// y = x W + b for one sample, W stored [in][out].
inline void dense_forward(const double* x, int in, int out, const double* kernel, const double* bias, double* y)
{
    for (int o = 0; o < out; ++o)
        y[o] = bias[o];
    for (int i = 0; i < in; ++i) {
        const double v = x[i];
        const double* row = kernel + static_cast<std::size_t>(i) * out;
        for (int o = 0; o < out; ++o)
            y[o] += v * row[o];
    }
}

inline void dense_backward(const double* x, int in, int out, const double* kernel, const double* grad_y,
                           double* grad_kernel, double* grad_bias, double* grad_x)
{
    for (int o = 0; o < out; ++o)
        grad_bias[o] += grad_y[o];
    for (int i = 0; i < in; ++i) {
        const double v = x[i];
        double* grow = grad_kernel + static_cast<std::size_t>(i) * out;
        const double* row = kernel + static_cast<std::size_t>(i) * out;
        double acc = 0.0;
        for (int o = 0; o < out; ++o) {
            grow[o] += v * grad_y[o];
            acc += row[o] * grad_y[o];
        }
        if (grad_x)
            grad_x[i] = acc;
    }
}

} // namespace lgmimo::nn::kernels
