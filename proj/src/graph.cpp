// SPDX-License-Identifier: Apache-2.0
#include "fedadapt/graph.hpp"

#include <cmath>
#include <stdexcept>

#include "fedadapt/kernels.hpp"

namespace fedadapt {

using kernels::CMapRM;
using kernels::MapRM;

TensorPtr Graph::make_output(std::vector<int> shape, bool track) {
    auto out = Tensor::create(std::move(shape));
    out->tracked = grad_enabled_ && track;
    return out;
}

void Graph::record(std::function<void()> rule) {
    if (grad_enabled_) {
        tape_.push_back(std::move(rule));
    }
}

void Graph::backward(const TensorPtr& loss) {
    if (loss->numel() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got " + loss->shape_str());
    }
    loss->ensure_grad();
    loss->grad[0] = 1.0f;
    replayed_ = 0;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
        (*it)();
        ++replayed_;
    }
}

TensorPtr Graph::conv2d(const TensorPtr& input, const TensorPtr& kernel, int stride,
                        int padding) {
    const auto d = kernels::conv_dims(input->shape, kernel->shape, stride, padding);
    auto out = make_output({d.batch, d.out_ch, d.out_h, d.out_w},
                           input->wants_grad() || kernel->wants_grad());
    kernels::conv2d_forward(input->data.data(), kernel->data.data(), d, out->data.data());
    if (!out->tracked) return out;

    record([input, kernel, out, d]() {
        if (out->grad.empty()) return;
        const int ckk = d.in_ch * d.ksize * d.ksize;
        const int span = d.out_h * d.out_w;
        const bool need_dx = input->wants_grad();
        const bool need_dk = kernel->wants_grad();
        if (need_dx) input->ensure_grad();
        if (need_dk) kernel->ensure_grad();
        std::vector<float> cols(static_cast<size_t>(ckk) * span);
        std::vector<float> dcols(need_dx ? cols.size() : 0);
        CMapRM<float> kmat(kernel->data.data(), d.out_ch, ckk);
        for (int n = 0; n < d.batch; ++n) {
            const int64_t xoff = static_cast<int64_t>(n) * d.in_ch * d.in_h * d.in_w;
            CMapRM<float> dy(out->grad.data() + static_cast<int64_t>(n) * d.out_ch * span,
                             d.out_ch, span);
            if (need_dk) {
                kernels::im2col(input->data.data() + xoff, d, cols.data());
                CMapRM<float> cmat(cols.data(), ckk, span);
                MapRM<float> dk(kernel->grad.data(), d.out_ch, ckk);
                dk.noalias() += dy * cmat.transpose();
            }
            if (need_dx) {
                MapRM<float> dc(dcols.data(), ckk, span);
                dc.noalias() = kmat.transpose() * dy;
                kernels::col2im_add(dcols.data(), d, input->grad.data() + xoff);
            }
        }
    });
    return out;
}

TensorPtr Graph::batch_norm(const TensorPtr& input, const TensorPtr& gamma,
                            const TensorPtr& beta, const TensorPtr& running_mean,
                            const TensorPtr& running_var, bool training, float momentum_bn,
                            float eps) {
    if (input->rank() != 4) {
        throw std::invalid_argument("batch_norm: expected 4-d input, got " + input->shape_str());
    }
    const int batch = input->dim(0), channels = input->dim(1);
    const int spatial = input->dim(2) * input->dim(3);
    if (gamma->numel() != channels || beta->numel() != channels ||
        running_mean->numel() != channels || running_var->numel() != channels) {
        throw std::invalid_argument("batch_norm: parameter length does not match " +
                                    std::to_string(channels) + " channels");
    }
    if (training && static_cast<int64_t>(batch) * spatial < 2) {
        throw std::invalid_argument("batch_norm: training mode needs >= 2 elements per channel");
    }

    auto out = make_output(input->shape,
                           input->wants_grad() || gamma->wants_grad() || beta->wants_grad());
    auto xhat = std::make_shared<std::vector<float>>();
    auto inv_std = std::make_shared<std::vector<float>>(static_cast<size_t>(channels));
    if (out->tracked) xhat->resize(input->data.size());

    std::vector<float> mean(static_cast<size_t>(channels)), var(static_cast<size_t>(channels));
    if (training) {
        kernels::batch_stats(input->data.data(), batch, channels, spatial, mean.data(),
                             var.data());
        for (int c = 0; c < channels; ++c) {
            running_mean->data[c] =
                (1.0f - momentum_bn) * running_mean->data[c] + momentum_bn * mean[c];
            running_var->data[c] =
                (1.0f - momentum_bn) * running_var->data[c] + momentum_bn * var[c];
            if (!(running_var->data[c] > 0.0f)) bn_stats_flagged_ = true;
        }
    } else {
        for (int c = 0; c < channels; ++c) {
            mean[c] = running_mean->data[c];
            var[c] = running_var->data[c];
            if (!(var[c] > 0.0f)) bn_stats_flagged_ = true;
        }
    }
    for (int c = 0; c < channels; ++c) {
        (*inv_std)[c] = 1.0f / std::sqrt(var[c] + eps);
    }
    kernels::batch_norm_apply(input->data.data(), batch, channels, spatial, gamma->data.data(),
                              beta->data.data(), mean.data(), var.data(), eps, out->data.data(),
                              out->tracked ? xhat->data() : nullptr);
    if (!out->tracked) return out;

    record([input, gamma, beta, out, xhat, inv_std, training, batch, channels, spatial]() {
        if (out->grad.empty()) return;
        const bool need_dx = input->wants_grad();
        const bool need_dg = gamma->wants_grad();
        const bool need_db = beta->wants_grad();
        if (need_dx) input->ensure_grad();
        if (need_dg) gamma->ensure_grad();
        if (need_db) beta->ensure_grad();
        const double m = static_cast<double>(batch) * spatial;
        for (int c = 0; c < channels; ++c) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int n = 0; n < batch; ++n) {
                const int64_t off = (static_cast<int64_t>(n) * channels + c) * spatial;
                const float* dy = out->grad.data() + off;
                const float* h = xhat->data() + off;
                for (int i = 0; i < spatial; ++i) {
                    sum_dy += dy[i];
                    sum_dy_xhat += static_cast<double>(dy[i]) * h[i];
                }
            }
            if (need_dg) gamma->grad[c] += static_cast<float>(sum_dy_xhat);
            if (need_db) beta->grad[c] += static_cast<float>(sum_dy);
            if (!need_dx) continue;
            const float g_inv = gamma->data[c] * (*inv_std)[c];
            if (training) {
                const float mean_dy = static_cast<float>(sum_dy / m);
                const float mean_dy_xhat = static_cast<float>(sum_dy_xhat / m);
                for (int n = 0; n < batch; ++n) {
                    const int64_t off = (static_cast<int64_t>(n) * channels + c) * spatial;
                    const float* dy = out->grad.data() + off;
                    const float* h = xhat->data() + off;
                    float* dx = input->grad.data() + off;
                    for (int i = 0; i < spatial; ++i) {
                        dx[i] += g_inv * (dy[i] - mean_dy - h[i] * mean_dy_xhat);
                    }
                }
            } else {
                for (int n = 0; n < batch; ++n) {
                    const int64_t off = (static_cast<int64_t>(n) * channels + c) * spatial;
                    const float* dy = out->grad.data() + off;
                    float* dx = input->grad.data() + off;
                    for (int i = 0; i < spatial; ++i) {
                        dx[i] += g_inv * dy[i];
                    }
                }
            }
        }
    });
    return out;
}

TensorPtr Graph::relu(const TensorPtr& input) {
    auto out = make_output(input->shape, input->wants_grad());
    kernels::relu_forward(input->data.data(), input->numel(), out->data.data());
    if (!out->tracked) return out;

    record([input, out]() {
        if (out->grad.empty() || !input->wants_grad()) return;
        input->ensure_grad();
        const int64_t n = input->numel();
        for (int64_t i = 0; i < n; ++i) {
            if (input->data[i] > 0.0f) input->grad[i] += out->grad[i];
        }
    });
    return out;
}

TensorPtr Graph::add(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) {
        throw std::invalid_argument("add: shape mismatch " + a->shape_str() + " vs " +
                                    b->shape_str());
    }
    auto out = make_output(a->shape, a->wants_grad() || b->wants_grad());
    const int64_t n = a->numel();
    for (int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] + b->data[i];
    if (!out->tracked) return out;

    record([a, b, out]() {
        if (out->grad.empty()) return;
        const int64_t n = out->numel();
        if (a->wants_grad()) {
            a->ensure_grad();
            for (int64_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
        }
        if (b->wants_grad()) {
            b->ensure_grad();
            for (int64_t i = 0; i < n; ++i) b->grad[i] += out->grad[i];
        }
    });
    return out;
}

TensorPtr Graph::linear(const TensorPtr& input, const TensorPtr& weight, const TensorPtr& bias) {
    if (input->rank() != 2 || weight->rank() != 2 || bias->rank() != 1) {
        throw std::invalid_argument("linear: expected input [N,D], weight [K,D], bias [K]");
    }
    const int n = input->dim(0), d = input->dim(1), k = weight->dim(0);
    if (weight->dim(1) != d || bias->dim(0) != k) {
        throw std::invalid_argument("linear: shape mismatch, input " + input->shape_str() +
                                    ", weight " + weight->shape_str() + ", bias " +
                                    bias->shape_str());
    }
    auto out = make_output({n, k},
                           input->wants_grad() || weight->wants_grad() || bias->wants_grad());
    kernels::linear_forward(input->data.data(), weight->data.data(), bias->data.data(), n, d, k,
                            out->data.data());
    if (!out->tracked) return out;

    record([input, weight, bias, out, n, d, k]() {
        if (out->grad.empty()) return;
        CMapRM<float> dy(out->grad.data(), n, k);
        if (input->wants_grad()) {
            input->ensure_grad();
            MapRM<float> dx(input->grad.data(), n, d);
            CMapRM<float> w(weight->data.data(), k, d);
            dx.noalias() += dy * w;
        }
        if (weight->wants_grad()) {
            weight->ensure_grad();
            MapRM<float> dw(weight->grad.data(), k, d);
            CMapRM<float> x(input->data.data(), n, d);
            dw.noalias() += dy.transpose() * x;
        }
        if (bias->wants_grad()) {
            bias->ensure_grad();
            for (int c = 0; c < k; ++c) {
                double s = 0.0;
                for (int r = 0; r < n; ++r) s += dy(r, c);
                bias->grad[c] += static_cast<float>(s);
            }
        }
    });
    return out;
}

TensorPtr Graph::global_avg_pool(const TensorPtr& input) {
    if (input->rank() != 4) {
        throw std::invalid_argument("global_avg_pool: expected 4-d input, got " +
                                    input->shape_str());
    }
    const int batch = input->dim(0), channels = input->dim(1);
    const int spatial = input->dim(2) * input->dim(3);
    auto out = make_output({batch, channels}, input->wants_grad());
    kernels::global_avg_pool_forward(input->data.data(), batch, channels, spatial,
                                     out->data.data());
    if (!out->tracked) return out;

    record([input, out, batch, channels, spatial]() {
        if (out->grad.empty() || !input->wants_grad()) return;
        input->ensure_grad();
        const float scale = 1.0f / static_cast<float>(spatial);
        for (int n = 0; n < batch; ++n) {
            for (int c = 0; c < channels; ++c) {
                const float g = out->grad[static_cast<int64_t>(n) * channels + c] * scale;
                float* dx = input->grad.data() + (static_cast<int64_t>(n) * channels + c) * spatial;
                for (int i = 0; i < spatial; ++i) dx[i] += g;
            }
        }
    });
    return out;
}

TensorPtr Graph::softmax_cross_entropy(const TensorPtr& logits, const std::vector<int>& labels) {
    if (logits->rank() != 2) {
        throw std::invalid_argument("softmax_cross_entropy: expected logits [N,K], got " +
                                    logits->shape_str());
    }
    const int n = logits->dim(0), k = logits->dim(1);
    if (static_cast<int>(labels.size()) != n) {
        throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(n) + " rows");
    }
    for (int lbl : labels) {
        if (lbl < 0 || lbl >= k) {
            throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(lbl) +
                                        " out of range [0," + std::to_string(k) + ")");
        }
    }
    auto out = make_output({1}, logits->wants_grad());
    auto probs = std::make_shared<std::vector<float>>();
    if (out->tracked) probs->resize(logits->data.size());
    out->data[0] = kernels::softmax_cross_entropy_forward(
        logits->data.data(), n, k, labels.data(), out->tracked ? probs->data() : nullptr);
    if (!out->tracked) return out;

    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    record([logits, out, probs, labels_copy, n, k]() {
        if (out->grad.empty() || !logits->wants_grad()) return;
        logits->ensure_grad();
        const float scale = out->grad[0] / static_cast<float>(n);
        for (int r = 0; r < n; ++r) {
            const int64_t off = static_cast<int64_t>(r) * k;
            const int y = (*labels_copy)[r];
            for (int c = 0; c < k; ++c) {
                const float p = (*probs)[off + c];
                logits->grad[off + c] += scale * (c == y ? p - 1.0f : p);
            }
        }
    });
    return out;
}

TensorPtr Graph::weighted_sum(const TensorPtr& input, const std::vector<float>& weights) {
    if (static_cast<int64_t>(weights.size()) != input->numel()) {
        throw std::invalid_argument("weighted_sum: weight count does not match " +
                                    input->shape_str());
    }
    auto out = make_output({1}, input->wants_grad());
    double s = 0.0;
    for (int64_t i = 0; i < input->numel(); ++i) {
        s += static_cast<double>(weights[i]) * input->data[i];
    }
    out->data[0] = static_cast<float>(s);
    if (!out->tracked) return out;

    auto w = std::make_shared<std::vector<float>>(weights);
    record([input, out, w]() {
        if (out->grad.empty() || !input->wants_grad()) return;
        input->ensure_grad();
        const float g = out->grad[0];
        for (int64_t i = 0; i < input->numel(); ++i) input->grad[i] += g * (*w)[i];
    });
    return out;
}

}  // namespace fedadapt
