#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>

#include "railmatch/nn/tensor.hpp"

// Low-level compute kernels.  Every parallel kernel distributes independent
// output elements across threads and keeps the per-element accumulation order
// identical to the serial reference, so serial and OpenMP paths produce
// bitwise-equal results.

namespace railmatch::nn {

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride,
                                std::size_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

template <typename T>
T conv_accum(const Tensor<T>& x, const Tensor<T>& w, std::size_t in, std::size_t co,
             std::size_t oy, std::size_t ox, std::size_t stride, std::size_t pad) {
    const std::size_t ci_n = x.c();
    const std::size_t k = w.h();
    T acc = T(0);
    for (std::size_t ci = 0; ci < ci_n; ++ci) {
        for (std::size_t ky = 0; ky < k; ++ky) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(x.h())) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                          static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(x.w())) continue;
                acc += x.at(in, ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                       w.at(co, ci, ky, kx);
            }
        }
    }
    return acc;
}

}  // namespace detail

// weight layout: [out_channels, in_channels, k, k]; bias: [1, out_channels, 1, 1]
template <typename T>
void conv2d_forward_serial(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                           std::size_t stride, std::size_t pad, Tensor<T>& y) {
    const std::size_t oh = conv_out_dim(x.h(), w.h(), stride, pad);
    const std::size_t ow = conv_out_dim(x.w(), w.w(), stride, pad);
    y = Tensor<T>(x.n(), w.n(), oh, ow);
    for (std::size_t in = 0; in < x.n(); ++in)
        for (std::size_t co = 0; co < w.n(); ++co)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox)
                    y.at(in, co, oy, ox) =
                        detail::conv_accum(x, w, in, co, oy, ox, stride, pad) + b.data[co];
}

namespace detail {

// Unfolds one sample into a K x P matrix (K = cin*k*k patch size, P = oh*ow
// output pixels); out-of-bounds taps become zeros.
template <typename T>
void im2col(const Tensor<T>& x, std::size_t in, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t oh, std::size_t ow, std::vector<T>& col) {
    const std::size_t P = oh * ow;
    col.assign(x.c() * k * k * P, T(0));
    for (std::size_t ci = 0; ci < x.c(); ++ci)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                T* row = col.data() + ((ci * k + ky) * k + kx) * P;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                              static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(x.h())) continue;
                    const T* src = &x.at(in, ci, static_cast<std::size_t>(iy), 0);
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                  static_cast<std::ptrdiff_t>(pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(x.w())) continue;
                        row[oy * ow + ox] = src[ix];
                    }
                }
            }
}

// Reverse of im2col: accumulates the K x P matrix back into a sample plane.
template <typename T>
void col2im(const std::vector<T>& col, std::size_t in, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t oh, std::size_t ow, Tensor<T>& x) {
    const std::size_t P = oh * ow;
    for (std::size_t ci = 0; ci < x.c(); ++ci)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                const T* row = col.data() + ((ci * k + ky) * k + kx) * P;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                              static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(x.h())) continue;
                    T* dst = &x.at(in, ci, static_cast<std::size_t>(iy), 0);
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                  static_cast<std::ptrdiff_t>(pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(x.w())) continue;
                        dst[ix] += row[oy * ow + ox];
                    }
                }
            }
}

} // namespace detail

// im2col + accumulate-by-rank-1-updates matrix product. Accumulation order
// over the patch dimension is fixed, so results are identical run to run and
// independent of the thread count (each output row belongs to one thread).
template <typename T>
void conv2d_forward_omp(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                        std::size_t stride, std::size_t pad, Tensor<T>& y) {
    const std::size_t k = w.h();
    const std::size_t oh = conv_out_dim(x.h(), k, stride, pad);
    const std::size_t ow = conv_out_dim(x.w(), w.w(), stride, pad);
    const std::size_t P = oh * ow;
    const std::size_t K = x.c() * k * k;
    y = Tensor<T>(x.n(), w.n(), oh, ow);
    std::vector<T> col;
    for (std::size_t in = 0; in < x.n(); ++in) {
        detail::im2col(x, in, k, stride, pad, oh, ow, col);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t co = 0; co < static_cast<std::ptrdiff_t>(w.n()); ++co) {
            T* out = &y.at(in, static_cast<std::size_t>(co), 0, 0);
            for (std::size_t p = 0; p < P; ++p) out[p] = b.data[static_cast<std::size_t>(co)];
            const T* wr = &w.data[static_cast<std::size_t>(co) * K];
            for (std::size_t kk = 0; kk < K; ++kk) {
                const T wv = wr[kk];
                const T* cr = col.data() + kk * P;
                for (std::size_t p = 0; p < P; ++p) out[p] += wv * cr[p];
            }
        }
    }
}

// Gradients w.r.t. input, weights, bias, via the same im2col factorization.
// Samples are processed in order and accumulation orders are fixed, so the
// results are deterministic and thread-count independent.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                     std::size_t stride, std::size_t pad, Tensor<T>& dx, Tensor<T>& dw,
                     Tensor<T>& db) {
    const std::size_t k = w.h();
    const std::size_t oh = dy.h();
    const std::size_t ow = dy.w();
    const std::size_t P = oh * ow;
    const std::size_t K = x.c() * k * k;
    const std::size_t C = w.n();
    dx = zeros_like(x);
    dw = zeros_like(w);
    db = Tensor<T>(1, C, 1, 1);

    std::vector<T> col, dcol(K * P);
    for (std::size_t in = 0; in < x.n(); ++in) {
        detail::im2col(x, in, k, stride, pad, oh, ow, col);
        // dW[co] += dy[co] . col^T, one output row per thread
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t co = 0; co < static_cast<std::ptrdiff_t>(C); ++co) {
            const T* g = &dy.at(in, static_cast<std::size_t>(co), 0, 0);
            T* wr = &dw.data[static_cast<std::size_t>(co) * K];
            for (std::size_t kk = 0; kk < K; ++kk) {
                const T* cr = col.data() + kk * P;
                T acc = T(0);
                for (std::size_t p = 0; p < P; ++p) acc += g[p] * cr[p];
                wr[kk] += acc;
            }
            T acc = T(0);
            for (std::size_t p = 0; p < P; ++p) acc += g[p];
            db.data[static_cast<std::size_t>(co)] += acc;
        }
        // dcol = W^T . dy, one patch row per thread
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t kk = 0; kk < static_cast<std::ptrdiff_t>(K); ++kk) {
            T* dr = dcol.data() + static_cast<std::size_t>(kk) * P;
            for (std::size_t p = 0; p < P; ++p) dr[p] = T(0);
            for (std::size_t co = 0; co < C; ++co) {
                const T wv = w.data[co * K + static_cast<std::size_t>(kk)];
                const T* g = &dy.at(in, co, 0, 0);
                for (std::size_t p = 0; p < P; ++p) dr[p] += wv * g[p];
            }
        }
        detail::col2im(dcol, in, k, stride, pad, oh, ow, dx);
    }
}

// Fully connected: x is [N, F, 1, 1], w is [out, F, 1, 1], b is [1, out, 1, 1].
template <typename T>
void linear_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Tensor<T>& y) {
    const std::size_t f = x.c();
    if (w.c() != f) throw std::runtime_error("linear_forward: feature size mismatch");
    y = Tensor<T>(x.n(), w.n(), 1, 1);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(x.n() * w.n()); ++r) {
        const std::size_t in = static_cast<std::size_t>(r) / w.n();
        const std::size_t o = static_cast<std::size_t>(r) % w.n();
        T acc = b.data[o];
        for (std::size_t i = 0; i < f; ++i) acc += x.data[in * f + i] * w.data[o * f + i];
        y.data[in * w.n() + o] = acc;
    }
}

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>& dx,
                     Tensor<T>& dw, Tensor<T>& db) {
    const std::size_t f = x.c();
    const std::size_t out = w.n();
    dx = zeros_like(x);
    dw = zeros_like(w);
    db = Tensor<T>(1, out, 1, 1);
    for (std::size_t in = 0; in < x.n(); ++in)
        for (std::size_t i = 0; i < f; ++i) {
            T acc = T(0);
            for (std::size_t o = 0; o < out; ++o)
                acc += dy.data[in * out + o] * w.data[o * f + i];
            dx.data[in * f + i] = acc;
        }
    for (std::size_t o = 0; o < out; ++o) {
        for (std::size_t i = 0; i < f; ++i) {
            T acc = T(0);
            for (std::size_t in = 0; in < x.n(); ++in)
                acc += dy.data[in * out + o] * x.data[in * f + i];
            dw.data[o * f + i] = acc;
        }
        T acc = T(0);
        for (std::size_t in = 0; in < x.n(); ++in) acc += dy.data[in * out + o];
        db.data[o] = acc;
    }
}

template <typename T>
void relu_forward(const Tensor<T>& x, Tensor<T>& y) {
    y = x;
    for (auto& v : y.data) v = v > T(0) ? v : T(0);
}

template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx) {
    dx = dy;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x.data[i] <= T(0)) dx.data[i] = T(0);
}

// Global average pool over the spatial plane: [N,C,H,W] -> [N,C,1,1].
template <typename T>
void gap_forward(const Tensor<T>& x, Tensor<T>& y) {
    y = Tensor<T>(x.n(), x.c(), 1, 1);
    const T inv = T(1) / static_cast<T>(x.h() * x.w());
    for (std::size_t in = 0; in < x.n(); ++in)
        for (std::size_t c = 0; c < x.c(); ++c) {
            T acc = T(0);
            for (std::size_t iy = 0; iy < x.h(); ++iy)
                for (std::size_t ix = 0; ix < x.w(); ++ix) acc += x.at(in, c, iy, ix);
            y.data[in * x.c() + c] = acc * inv;
        }
}

template <typename T>
void gap_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx) {
    dx = zeros_like(x);
    const T inv = T(1) / static_cast<T>(x.h() * x.w());
    for (std::size_t in = 0; in < x.n(); ++in)
        for (std::size_t c = 0; c < x.c(); ++c) {
            const T g = dy.data[in * x.c() + c] * inv;
            for (std::size_t iy = 0; iy < x.h(); ++iy)
                for (std::size_t ix = 0; ix < x.w(); ++ix) dx.at(in, c, iy, ix) = g;
        }
}

// Batch normalization over (N, H, W) per channel.
template <typename T>
struct BatchNormCache {
    Tensor<T> x_hat;
    std::vector<T> mean, inv_std;
};

template <typename T>
void batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       T eps, bool training, std::vector<T>& running_mean,
                       std::vector<T>& running_var, T momentum, Tensor<T>& y,
                       BatchNormCache<T>* cache) {
    const std::size_t C = x.c();
    const std::size_t plane = x.n() * x.h() * x.w();
    y = zeros_like(x);
    std::vector<T> mean(C, T(0)), var(C, T(0));
    if (training) {
        for (std::size_t c = 0; c < C; ++c) {
            T acc = T(0);
            for (std::size_t in = 0; in < x.n(); ++in)
                for (std::size_t iy = 0; iy < x.h(); ++iy)
                    for (std::size_t ix = 0; ix < x.w(); ++ix) acc += x.at(in, c, iy, ix);
            mean[c] = acc / static_cast<T>(plane);
            T vacc = T(0);
            for (std::size_t in = 0; in < x.n(); ++in)
                for (std::size_t iy = 0; iy < x.h(); ++iy)
                    for (std::size_t ix = 0; ix < x.w(); ++ix) {
                        const T d = x.at(in, c, iy, ix) - mean[c];
                        vacc += d * d;
                    }
            var[c] = vacc / static_cast<T>(plane);
            running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * mean[c];
            running_var[c] = (T(1) - momentum) * running_var[c] + momentum * var[c];
        }
    } else {
        mean = running_mean;
        var = running_var;
    }
    std::vector<T> inv_std(C);
    for (std::size_t c = 0; c < C; ++c) inv_std[c] = T(1) / std::sqrt(var[c] + eps);
    if (cache) {
        cache->x_hat = zeros_like(x);
        cache->mean = mean;
        cache->inv_std = inv_std;
    }
    for (std::size_t in = 0; in < x.n(); ++in)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t iy = 0; iy < x.h(); ++iy)
                for (std::size_t ix = 0; ix < x.w(); ++ix) {
                    const T xh = (x.at(in, c, iy, ix) - mean[c]) * inv_std[c];
                    if (cache) cache->x_hat.at(in, c, iy, ix) = xh;
                    y.at(in, c, iy, ix) = gamma.data[c] * xh + beta.data[c];
                }
}

template <typename T>
void batchnorm_backward(const Tensor<T>& dy, const Tensor<T>& gamma,
                        const BatchNormCache<T>& cache, Tensor<T>& dx, Tensor<T>& dgamma,
                        Tensor<T>& dbeta) {
    const std::size_t C = dy.c();
    const T m = static_cast<T>(dy.n() * dy.h() * dy.w());
    dx = zeros_like(dy);
    dgamma = Tensor<T>(1, C, 1, 1);
    dbeta = Tensor<T>(1, C, 1, 1);
    for (std::size_t c = 0; c < C; ++c) {
        T sum_dy = T(0), sum_dy_xh = T(0);
        for (std::size_t in = 0; in < dy.n(); ++in)
            for (std::size_t iy = 0; iy < dy.h(); ++iy)
                for (std::size_t ix = 0; ix < dy.w(); ++ix) {
                    sum_dy += dy.at(in, c, iy, ix);
                    sum_dy_xh += dy.at(in, c, iy, ix) * cache.x_hat.at(in, c, iy, ix);
                }
        dgamma.data[c] = sum_dy_xh;
        dbeta.data[c] = sum_dy;
        const T g = gamma.data[c];
        for (std::size_t in = 0; in < dy.n(); ++in)
            for (std::size_t iy = 0; iy < dy.h(); ++iy)
                for (std::size_t ix = 0; ix < dy.w(); ++ix) {
                    const T xh = cache.x_hat.at(in, c, iy, ix);
                    dx.at(in, c, iy, ix) = g * cache.inv_std[c] / m *
                                           (m * dy.at(in, c, iy, ix) - sum_dy - xh * sum_dy_xh);
                }
    }
}

// Mean squared error over all elements; gradient scaled to match.
template <typename T>
T mse_loss(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* grad) {
    if (!pred.same_shape(target)) throw std::runtime_error("mse_loss: shape mismatch");
    const T inv = T(1) / static_cast<T>(pred.size());
    T loss = T(0);
    if (grad) *grad = zeros_like(pred);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const T d = pred.data[i] - target.data[i];
        loss += d * d * inv;
        if (grad) grad->data[i] = T(2) * d * inv;
    }
    return loss;
}

}  // namespace railmatch::nn
