// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "fedadapt/tensor.hpp"

namespace fedadapt {

// Reverse-mode tape. Operations execute eagerly and append their backward
// rule; because rules are recorded in execution order, replaying the tape in
// reverse is a valid topological order that visits each rule exactly once.
// A Graph instance is confined to one thread.
class Graph {
public:
    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    TensorPtr conv2d(const TensorPtr& input, const TensorPtr& kernel, int stride = 1,
                     int padding = 0);
    TensorPtr batch_norm(const TensorPtr& input, const TensorPtr& gamma, const TensorPtr& beta,
                         const TensorPtr& running_mean, const TensorPtr& running_var,
                         bool training, float momentum_bn = 0.1f, float eps = 1e-5f);
    TensorPtr relu(const TensorPtr& input);
    TensorPtr add(const TensorPtr& a, const TensorPtr& b);
    TensorPtr linear(const TensorPtr& input, const TensorPtr& weight, const TensorPtr& bias);
    TensorPtr global_avg_pool(const TensorPtr& input);
    TensorPtr softmax_cross_entropy(const TensorPtr& logits, const std::vector<int>& labels);
    // Scalar projection sum(weights[i] * x[i]); used by gradient checks.
    TensorPtr weighted_sum(const TensorPtr& input, const std::vector<float>& weights);

    // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Gradients
    // accumulate into the grad buffers of every tensor that wants one.
    void backward(const TensorPtr& loss);

    size_t size() const { return tape_.size(); }
    size_t replayed() const { return replayed_; }
    // Set when a batch-norm update or lookup saw a non-positive running
    // variance; the value is propagated, never clamped.
    bool bn_stats_flagged() const { return bn_stats_flagged_; }

private:
    TensorPtr make_output(std::vector<int> shape, bool track);
    void record(std::function<void()> rule);

    std::vector<std::function<void()>> tape_;
    size_t replayed_ = 0;
    bool grad_enabled_ = true;
    bool bn_stats_flagged_ = false;
};

}  // namespace fedadapt
