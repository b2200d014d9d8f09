// SPDX-License-Identifier: Apache-2.0
#include "fedadapt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "fedadapt/graph.hpp"
#include "fedadapt/kernels.hpp"
#include "fedadapt/rng.hpp"

namespace fedadapt {

namespace {

constexpr double kStep = 1e-3;

std::vector<double> widen(const std::vector<float>& v) {
    return std::vector<double>(v.begin(), v.end());
}

TensorPtr random_tensor(std::vector<int> shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
    auto t = Tensor::create(std::move(shape), true);
    for (auto& v : t->data) v = rng.uniform_float(lo, hi);
    return t;
}

std::vector<float> random_projection(int64_t n, Rng& rng) {
    std::vector<float> w(static_cast<size_t>(n));
    for (auto& v : w) {
        const float mag = rng.uniform_float(0.5f, 1.0f);
        v = (rng.uniform() < 0.5) ? -mag : mag;
    }
    return w;
}

// Compares analytic grads of `checked` tensors against central differences of
// `loss_fn` (a double-precision forward closed over double copies of every
// input; `slots` aliases the perturbed tensor's double buffer).
double fd_compare(const std::vector<TensorPtr>& checked,
                  const std::vector<std::vector<double>*>& slots,
                  const std::function<double()>& loss_fn) {
    double worst = 0.0;
    for (size_t t = 0; t < checked.size(); ++t) {
        const auto& analytic = checked[t]->grad;
        auto& buf = *slots[t];
        std::vector<double> fd(buf.size());
        for (size_t i = 0; i < buf.size(); ++i) {
            const double saved = buf[i];
            buf[i] = saved + kStep;
            const double up = loss_fn();
            buf[i] = saved - kStep;
            const double down = loss_fn();
            buf[i] = saved;
            fd[i] = (up - down) / (2.0 * kStep);
        }
        double a_inf = 0.0, f_inf = 0.0;
        for (size_t i = 0; i < buf.size(); ++i) {
            a_inf = std::max(a_inf, std::abs(static_cast<double>(analytic[i])));
            f_inf = std::max(f_inf, std::abs(fd[i]));
        }
        const double denom = std::max(a_inf, f_inf) + 1e-12;
        for (size_t i = 0; i < buf.size(); ++i) {
            worst = std::max(worst, std::abs(static_cast<double>(analytic[i]) - fd[i]) / denom);
        }
    }
    return worst;
}

}  // namespace

double gradcheck_conv2d(uint64_t seed) {
    Rng rng(seed);
    const int ksize = rng.uniform() < 0.4 ? 1 : 3;
    const int stride = rng.uniform() < 0.5 ? 1 : 2;
    const int padding = (ksize == 3 && rng.uniform() < 0.5) ? 1 : 0;
    const int c = 1 + rng.uniform_int(3);
    const int f = 1 + rng.uniform_int(4);
    const int h = ksize - 2 * padding + stride * (2 + rng.uniform_int(3));
    const int w = ksize - 2 * padding + stride * (2 + rng.uniform_int(3));
    const int n = 1 + rng.uniform_int(2);

    auto x = random_tensor({n, c, h, w}, rng);
    auto k = random_tensor({f, c, ksize, ksize}, rng);

    Graph g;
    auto y = g.conv2d(x, k, stride, padding);
    const auto weights = random_projection(y->numel(), rng);
    auto loss = g.weighted_sum(y, weights);
    g.backward(loss);

    const auto dims = kernels::conv_dims(x->shape, k->shape, stride, padding);
    auto xd = widen(x->data);
    auto kd = widen(k->data);
    auto loss_fn = [&]() {
        std::vector<double> yd(static_cast<size_t>(y->numel()));
        kernels::conv2d_forward(xd.data(), kd.data(), dims, yd.data());
        double s = 0.0;
        for (size_t i = 0; i < yd.size(); ++i) s += static_cast<double>(weights[i]) * yd[i];
        return s;
    };
    return fd_compare({x, k}, {&xd, &kd}, loss_fn);
}

double gradcheck_batch_norm(uint64_t seed, bool training) {
    Rng rng(seed);
    const int n = 2 + rng.uniform_int(2);
    const int c = 1 + rng.uniform_int(3);
    const int h = 2 + rng.uniform_int(3);
    const int w = 2 + rng.uniform_int(3);
    const float eps = 1e-5f;

    auto x = random_tensor({n, c, h, w}, rng);
    auto gamma = random_tensor({c}, rng, 0.5f, 1.5f);
    auto beta = random_tensor({c}, rng, -0.5f, 0.5f);
    auto rmean = random_tensor({c}, rng, -0.3f, 0.3f);
    auto rvar = random_tensor({c}, rng, 0.5f, 1.5f);
    rmean->requires_grad = false;
    rvar->requires_grad = false;
    auto rmean_saved = rmean->clone();
    auto rvar_saved = rvar->clone();

    Graph g;
    auto y = g.batch_norm(x, gamma, beta, rmean, rvar, training, 0.1f, eps);
    const auto weights = random_projection(y->numel(), rng);
    auto loss = g.weighted_sum(y, weights);
    g.backward(loss);

    auto xd = widen(x->data);
    auto gd = widen(gamma->data);
    auto bd = widen(beta->data);
    const auto rmd = widen(rmean_saved->data);
    const auto rvd = widen(rvar_saved->data);
    const int spatial = h * w;
    auto loss_fn = [&]() {
        std::vector<double> yd(xd.size());
        if (training) {
            std::vector<double> mean(c), var(c);
            kernels::batch_stats(xd.data(), n, c, spatial, mean.data(), var.data());
            kernels::batch_norm_apply(xd.data(), n, c, spatial, gd.data(), bd.data(),
                                      mean.data(), var.data(), static_cast<double>(eps),
                                      yd.data());
        } else {
            kernels::batch_norm_apply(xd.data(), n, c, spatial, gd.data(), bd.data(), rmd.data(),
                                      rvd.data(), static_cast<double>(eps), yd.data());
        }
        double s = 0.0;
        for (size_t i = 0; i < yd.size(); ++i) s += static_cast<double>(weights[i]) * yd[i];
        return s;
    };
    return fd_compare({x, gamma, beta}, {&xd, &gd, &bd}, loss_fn);
}

double gradcheck_relu(uint64_t seed) {
    Rng rng(seed);
    const int n = 8 + rng.uniform_int(32);
    // Keep every element away from the kink so the finite difference is valid.
    auto x = Tensor::create({n}, true);
    for (auto& v : x->data) {
        const float mag = rng.uniform_float(0.05f, 1.5f);
        v = (rng.uniform() < 0.5) ? -mag : mag;
    }

    Graph g;
    auto y = g.relu(x);
    const auto weights = random_projection(y->numel(), rng);
    auto loss = g.weighted_sum(y, weights);
    g.backward(loss);

    auto xd = widen(x->data);
    auto loss_fn = [&]() {
        double s = 0.0;
        for (size_t i = 0; i < xd.size(); ++i) {
            s += static_cast<double>(weights[i]) * (xd[i] > 0.0 ? xd[i] : 0.0);
        }
        return s;
    };
    return fd_compare({x}, {&xd}, loss_fn);
}

double gradcheck_linear(uint64_t seed) {
    Rng rng(seed);
    const int n = 1 + rng.uniform_int(4);
    const int d = 2 + rng.uniform_int(6);
    const int k = 2 + rng.uniform_int(5);

    auto x = random_tensor({n, d}, rng);
    auto w = random_tensor({k, d}, rng);
    auto b = random_tensor({k}, rng);

    Graph g;
    auto y = g.linear(x, w, b);
    const auto weights = random_projection(y->numel(), rng);
    auto loss = g.weighted_sum(y, weights);
    g.backward(loss);

    auto xd = widen(x->data);
    auto wd = widen(w->data);
    auto bd = widen(b->data);
    auto loss_fn = [&]() {
        std::vector<double> yd(static_cast<size_t>(n) * k);
        kernels::linear_forward(xd.data(), wd.data(), bd.data(), n, d, k, yd.data());
        double s = 0.0;
        for (size_t i = 0; i < yd.size(); ++i) s += static_cast<double>(weights[i]) * yd[i];
        return s;
    };
    return fd_compare({x, w, b}, {&xd, &wd, &bd}, loss_fn);
}

double gradcheck_softmax_cross_entropy(uint64_t seed) {
    Rng rng(seed);
    const int n = 1 + rng.uniform_int(3);
    const int k = 2 + rng.uniform_int(6);
    std::vector<int> labels(static_cast<size_t>(n));
    for (auto& l : labels) l = rng.uniform_int(k);

    auto logits = random_tensor({n, k}, rng, -1.5f, 1.5f);
    // Bias toward the labelled class to keep loss and gradients well scaled.
    for (int r = 0; r < n; ++r) {
        logits->data[static_cast<size_t>(r) * k + labels[r]] += 1.5f;
    }

    Graph g;
    auto loss = g.softmax_cross_entropy(logits, labels);
    g.backward(loss);

    auto ld = widen(logits->data);
    auto loss_fn = [&]() {
        return kernels::softmax_cross_entropy_forward<double>(ld.data(), n, k, labels.data(),
                                                              nullptr);
    };
    return fd_compare({logits}, {&ld}, loss_fn);
}

double gradcheck_add(uint64_t seed) {
    Rng rng(seed);
    const int n = 4 + rng.uniform_int(16);
    auto a = random_tensor({n}, rng);
    auto b = random_tensor({n}, rng);

    Graph g;
    auto y = g.add(a, b);
    const auto weights = random_projection(y->numel(), rng);
    auto loss = g.weighted_sum(y, weights);
    g.backward(loss);

    auto ad = widen(a->data);
    auto bd = widen(b->data);
    auto loss_fn = [&]() {
        double s = 0.0;
        for (size_t i = 0; i < ad.size(); ++i) {
            s += static_cast<double>(weights[i]) * (ad[i] + bd[i]);
        }
        return s;
    };
    return fd_compare({a, b}, {&ad, &bd}, loss_fn);
}

double gradcheck_global_avg_pool(uint64_t seed) {
    Rng rng(seed);
    const int n = 1 + rng.uniform_int(3);
    const int c = 1 + rng.uniform_int(4);
    const int h = 2 + rng.uniform_int(4);
    const int w = 2 + rng.uniform_int(4);
    auto x = random_tensor({n, c, h, w}, rng);

    Graph g;
    auto y = g.global_avg_pool(x);
    const auto weights = random_projection(y->numel(), rng);
    auto loss = g.weighted_sum(y, weights);
    g.backward(loss);

    auto xd = widen(x->data);
    auto loss_fn = [&]() {
        std::vector<double> yd(static_cast<size_t>(n) * c);
        kernels::global_avg_pool_forward(xd.data(), n, c, h * w, yd.data());
        double s = 0.0;
        for (size_t i = 0; i < yd.size(); ++i) s += static_cast<double>(weights[i]) * yd[i];
        return s;
    };
    return fd_compare({x}, {&xd}, loss_fn);
}

std::vector<GradCheckResult> run_gradient_suite(int instances_per_op, uint64_t seed) {
    struct OpSpec {
        const char* name;
        double tolerance;
        std::function<double(uint64_t)> check;
    };
    const std::vector<OpSpec> ops = {
        {"conv2d", 1e-4, [](uint64_t s) { return gradcheck_conv2d(s); }},
        {"batch_norm(train)", 1e-3, [](uint64_t s) { return gradcheck_batch_norm(s, true); }},
        {"batch_norm(eval)", 1e-3, [](uint64_t s) { return gradcheck_batch_norm(s, false); }},
        {"relu", 1e-4, [](uint64_t s) { return gradcheck_relu(s); }},
        {"linear", 1e-4, [](uint64_t s) { return gradcheck_linear(s); }},
        {"softmax_cross_entropy", 1e-4,
         [](uint64_t s) { return gradcheck_softmax_cross_entropy(s); }},
        {"add", 1e-4, [](uint64_t s) { return gradcheck_add(s); }},
        {"global_avg_pool", 1e-4, [](uint64_t s) { return gradcheck_global_avg_pool(s); }},
    };
    std::vector<GradCheckResult> results;
    for (size_t op = 0; op < ops.size(); ++op) {
        GradCheckResult r;
        r.op = ops[op].name;
        r.tolerance = ops[op].tolerance;
        r.instances = instances_per_op;
        for (int i = 0; i < instances_per_op; ++i) {
            r.max_rel_error =
                std::max(r.max_rel_error, ops[op].check(mix_seed(seed, op, static_cast<uint64_t>(i))));
        }
        r.pass = r.max_rel_error < r.tolerance;
        results.push_back(std::move(r));
    }
    return results;
}

}  // namespace fedadapt
