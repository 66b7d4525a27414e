#pragma once

#include <array>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace railmatch::nn {

// Dense NCHW tensor.  Rank is always 4; vectors (N x F) are stored as
// N x F x 1 x 1 so every kernel sees the same layout.
template <typename T>
struct Tensor {
    std::array<std::size_t, 4> shape{0, 0, 0, 0};
    std::vector<T> data;

    Tensor() = default;
    Tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w)
        : shape{n, c, h, w}, data(n * c * h * w, T(0)) {}

    std::size_t size() const { return data.size(); }
    std::size_t n() const { return shape[0]; }
    std::size_t c() const { return shape[1]; }
    std::size_t h() const { return shape[2]; }
    std::size_t w() const { return shape[3]; }

    T& at(std::size_t in, std::size_t ic, std::size_t iy, std::size_t ix) {
        return data[((in * shape[1] + ic) * shape[2] + iy) * shape[3] + ix];
    }
    const T& at(std::size_t in, std::size_t ic, std::size_t iy, std::size_t ix) const {
        return data[((in * shape[1] + ic) * shape[2] + iy) * shape[3] + ix];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

template <typename T>
Tensor<T> zeros_like(const Tensor<T>& t) {
    return Tensor<T>(t.shape[0], t.shape[1], t.shape[2], t.shape[3]);
}

}  // namespace railmatch::nn
