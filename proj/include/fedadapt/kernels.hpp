// SPDX-License-Identifier: Apache-2.0
#pragma once

// Scalar-type-templated forward kernels. The training engine instantiates them
// with float; the gradient-check harness instantiates them with double so the
// finite-difference reference is not drowned by f32 rounding.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "fedadapt/tensor.hpp"

namespace fedadapt::kernels {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

struct ConvDims {
    int batch, in_ch, in_h, in_w;
    int out_ch, ksize, stride, padding;
    int out_h, out_w;
};

inline ConvDims conv_dims(const std::vector<int>& x_shape, const std::vector<int>& k_shape,
                          int stride, int padding) {
    if (x_shape.size() != 4 || k_shape.size() != 4) {
        throw std::invalid_argument("conv2d: expected 4-d input and kernel, got " +
                                    shape_to_string(x_shape) + " and " + shape_to_string(k_shape));
    }
    ConvDims d{};
    d.batch = x_shape[0];
    d.in_ch = x_shape[1];
    d.in_h = x_shape[2];
    d.in_w = x_shape[3];
    d.out_ch = k_shape[0];
    d.ksize = k_shape[2];
    d.stride = stride;
    d.padding = padding;
    if (k_shape[2] != k_shape[3]) {
        throw std::invalid_argument("conv2d: kernel must be square, got " +
                                    shape_to_string(k_shape));
    }
    if (d.ksize != 1 && d.ksize != 3) {
        throw std::invalid_argument("conv2d: kernel size must be 1 or 3, got " +
                                    std::to_string(d.ksize));
    }
    if (stride != 1 && stride != 2) {
        throw std::invalid_argument("conv2d: stride must be 1 or 2, got " +
                                    std::to_string(stride));
    }
    if (padding < 0) {
        throw std::invalid_argument("conv2d: padding must be non-negative");
    }
    if (k_shape[1] != d.in_ch) {
        throw std::invalid_argument("conv2d: input channels " + std::to_string(d.in_ch) +
                                    " do not match kernel channels " + std::to_string(k_shape[1]) +
                                    " (input " + shape_to_string(x_shape) + ", kernel " +
                                    shape_to_string(k_shape) + ")");
    }
    const int eff_h = d.in_h + 2 * padding - d.ksize;
    const int eff_w = d.in_w + 2 * padding - d.ksize;
    if (eff_h < 0 || eff_w < 0 || eff_h % stride != 0 || eff_w % stride != 0) {
        throw std::invalid_argument("conv2d: output extent (" + std::to_string(d.in_h) + "+2*" +
                                    std::to_string(padding) + "-" + std::to_string(d.ksize) +
                                    ")/" + std::to_string(stride) + "+1 is not a positive integer");
    }
    d.out_h = eff_h / stride + 1;
    d.out_w = eff_w / stride + 1;
    return d;
}

// Writes the patch matrix for one sample: rows index (c, ky, kx), columns
// index output positions, zero outside the padded input.
template <typename T>
void im2col(const T* x, const ConvDims& d, T* cols) {
    const int span = d.out_h * d.out_w;
    for (int c = 0; c < d.in_ch; ++c) {
        const T* xc = x + static_cast<int64_t>(c) * d.in_h * d.in_w;
        for (int ky = 0; ky < d.ksize; ++ky) {
            for (int kx = 0; kx < d.ksize; ++kx) {
                T* row = cols + static_cast<int64_t>((c * d.ksize + ky) * d.ksize + kx) * span;
                for (int oy = 0; oy < d.out_h; ++oy) {
                    const int iy = oy * d.stride - d.padding + ky;
                    if (iy < 0 || iy >= d.in_h) {
                        for (int ox = 0; ox < d.out_w; ++ox) row[oy * d.out_w + ox] = T(0);
                        continue;
                    }
                    const T* xrow = xc + static_cast<int64_t>(iy) * d.in_w;
                    for (int ox = 0; ox < d.out_w; ++ox) {
                        const int ix = ox * d.stride - d.padding + kx;
                        row[oy * d.out_w + ox] =
                            (ix < 0 || ix >= d.in_w) ? T(0) : xrow[ix];
                    }
                }
            }
        }
    }
}

// Scatter-add of a patch-matrix gradient back into the input gradient.
template <typename T>
void col2im_add(const T* cols, const ConvDims& d, T* dx) {
    const int span = d.out_h * d.out_w;
    for (int c = 0; c < d.in_ch; ++c) {
        T* dxc = dx + static_cast<int64_t>(c) * d.in_h * d.in_w;
        for (int ky = 0; ky < d.ksize; ++ky) {
            for (int kx = 0; kx < d.ksize; ++kx) {
                const T* row = cols + static_cast<int64_t>((c * d.ksize + ky) * d.ksize + kx) * span;
                for (int oy = 0; oy < d.out_h; ++oy) {
                    const int iy = oy * d.stride - d.padding + ky;
                    if (iy < 0 || iy >= d.in_h) continue;
                    T* dxrow = dxc + static_cast<int64_t>(iy) * d.in_w;
                    for (int ox = 0; ox < d.out_w; ++ox) {
                        const int ix = ox * d.stride - d.padding + kx;
                        if (ix >= 0 && ix < d.in_w) dxrow[ix] += row[oy * d.out_w + ox];
                    }
                }
            }
        }
    }
}

// Cross-correlation, no bias. y shape [N, F, out_h, out_w].
template <typename T>
void conv2d_forward(const T* x, const T* k, const ConvDims& d, T* y) {
    const int ckk = d.in_ch * d.ksize * d.ksize;
    const int span = d.out_h * d.out_w;
    std::vector<T> cols(static_cast<size_t>(ckk) * span);
    CMapRM<T> kmat(k, d.out_ch, ckk);
    for (int n = 0; n < d.batch; ++n) {
        im2col(x + static_cast<int64_t>(n) * d.in_ch * d.in_h * d.in_w, d, cols.data());
        CMapRM<T> cmat(cols.data(), ckk, span);
        MapRM<T> ymat(y + static_cast<int64_t>(n) * d.out_ch * span, d.out_ch, span);
        ymat.noalias() = kmat * cmat;
    }
}

// Per-channel biased batch statistics over (N, H, W).
template <typename T>
void batch_stats(const T* x, int batch, int channels, int spatial, T* mean, T* var) {
    const int64_t m = static_cast<int64_t>(batch) * spatial;
    for (int c = 0; c < channels; ++c) {
        double sum = 0.0;
        for (int n = 0; n < batch; ++n) {
            const T* p = x + (static_cast<int64_t>(n) * channels + c) * spatial;
            for (int i = 0; i < spatial; ++i) sum += static_cast<double>(p[i]);
        }
        const double mu = sum / static_cast<double>(m);
        double sq = 0.0;
        for (int n = 0; n < batch; ++n) {
            const T* p = x + (static_cast<int64_t>(n) * channels + c) * spatial;
            for (int i = 0; i < spatial; ++i) {
                const double dlt = static_cast<double>(p[i]) - mu;
                sq += dlt * dlt;
            }
        }
        mean[c] = static_cast<T>(mu);
        var[c] = static_cast<T>(sq / static_cast<double>(m));
    }
}

// y = gamma * (x - mean) / sqrt(var + eps) + beta, with the given statistics.
template <typename T>
void batch_norm_apply(const T* x, int batch, int channels, int spatial, const T* gamma,
                      const T* beta, const T* mean, const T* var, T eps, T* y,
                      T* xhat = nullptr) {
    for (int c = 0; c < channels; ++c) {
        const T inv = T(1) / std::sqrt(var[c] + eps);
        const T g = gamma[c], b = beta[c], mu = mean[c];
        for (int n = 0; n < batch; ++n) {
            const int64_t off = (static_cast<int64_t>(n) * channels + c) * spatial;
            const T* xp = x + off;
            T* yp = y + off;
            if (xhat) {
                T* hp = xhat + off;
                for (int i = 0; i < spatial; ++i) {
                    const T h = (xp[i] - mu) * inv;
                    hp[i] = h;
                    yp[i] = g * h + b;
                }
            } else {
                for (int i = 0; i < spatial; ++i) {
                    yp[i] = g * (xp[i] - mu) * inv + b;
                }
            }
        }
    }
}

// y = x * w^T + bias, x [N, D], w [K, D], bias [K].
template <typename T>
void linear_forward(const T* x, const T* w, const T* bias, int n, int d, int k, T* y) {
    CMapRM<T> xm(x, n, d);
    CMapRM<T> wm(w, k, d);
    MapRM<T> ym(y, n, k);
    ym.noalias() = xm * wm.transpose();
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < k; ++c) ym(r, c) += bias[c];
    }
}

// The else branch multiplies so NaN propagates instead of being masked.
template <typename T>
void relu_forward(const T* x, int64_t n, T* y) {
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0) * x[i];
}

// [N, C, H, W] -> [N, C], mean over the spatial extent.
template <typename T>
void global_avg_pool_forward(const T* x, int batch, int channels, int spatial, T* y) {
    for (int n = 0; n < batch; ++n) {
        for (int c = 0; c < channels; ++c) {
            const T* p = x + (static_cast<int64_t>(n) * channels + c) * spatial;
            double sum = 0.0;
            for (int i = 0; i < spatial; ++i) sum += static_cast<double>(p[i]);
            y[static_cast<int64_t>(n) * channels + c] =
                static_cast<T>(sum / static_cast<double>(spatial));
        }
    }
}

// Mean over the batch of -log softmax(logits)[label], max-stabilized.
// Optionally writes the softmax probabilities (needed by the backward rule).
template <typename T>
T softmax_cross_entropy_forward(const T* logits, int n, int k, const int* labels, T* probs) {
    double total = 0.0;
    for (int r = 0; r < n; ++r) {
        const T* row = logits + static_cast<int64_t>(r) * k;
        T mx = row[0];
        for (int c = 1; c < k; ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (int c = 0; c < k; ++c) z += std::exp(static_cast<double>(row[c] - mx));
        const double logz = std::log(z);
        total += logz - static_cast<double>(row[labels[r]] - mx);
        if (probs) {
            for (int c = 0; c < k; ++c) {
                probs[static_cast<int64_t>(r) * k + c] =
                    static_cast<T>(std::exp(static_cast<double>(row[c] - mx)) / z);
            }
        }
    }
    return static_cast<T>(total / static_cast<double>(n));
}

}  // namespace fedadapt::kernels
