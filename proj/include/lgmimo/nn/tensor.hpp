// SPDX-License-Identifier: Apache-2.0
//
// lgmimo: deep MIMO detection and learngene transfer workbench
// ------------------------------------------------------------------------

#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lgmimo/error.hpp"

namespace lgmimo::nn {

/// Height x width x channels, row-major with channels innermost.
struct Shape {
    int h = 1;
    int w = 1;
    int c = 1;

    [[nodiscard]] std::size_t size() const noexcept
    {
        return static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(c);
    }

    friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s)
{
    return std::to_string(s.h) + "x" + std::to_string(s.w) + "x" + std::to_string(s.c);
}

/// A batch of equally shaped activations stored contiguously.
struct Batch {
    int n = 0;
    Shape shape;
    std::vector<double> data;

    Batch() = default;
    Batch(int count, Shape s) : n(count), shape(s), data(static_cast<std::size_t>(count) * s.size(), 0.0) {}

    /// Re-labels the batch, reusing the existing allocation where possible.
    /// Contents are unspecified afterwards.
    void reshape(int count, Shape s)
    {
        n = count;
        shape = s;
        data.resize(static_cast<std::size_t>(count) * s.size());
    }

    [[nodiscard]] std::size_t sample_size() const noexcept { return shape.size(); }
    [[nodiscard]] std::span<double> sample(int i)
    {
        return {data.data() + static_cast<std::size_t>(i) * sample_size(), sample_size()};
    }
    [[nodiscard]] std::span<const double> sample(int i) const
    {
        return {data.data() + static_cast<std::size_t>(i) * sample_size(), sample_size()};
    }
};

/// Single input or activation map.
struct Tensor3 {
    Shape shape;
    std::vector<double> values;

    Tensor3() = default;
    explicit Tensor3(Shape s) : shape(s), values(s.size(), 0.0) {}

    double& at(int row, int col, int ch) { return values[(static_cast<std::size_t>(row) * shape.w + col) * shape.c + ch]; }
    [[nodiscard]] double at(int row, int col, int ch) const
    {
        return values[(static_cast<std::size_t>(row) * shape.w + col) * shape.c + ch];
    }
};

inline Batch stack(std::span<const Tensor3> items)
{
    require(!items.empty(), ErrorKind::ShapeMismatch, "stack: empty batch");
    Batch b(static_cast<int>(items.size()), items.front().shape);
    for (std::size_t i = 0; i < items.size(); ++i) {
        require(items[i].shape == b.shape, ErrorKind::ShapeMismatch, "stack: inconsistent shapes");
        std::copy(items[i].values.begin(), items[i].values.end(), b.sample(static_cast<int>(i)).begin());
    }
    return b;
}

} // namespace lgmimo::nn
