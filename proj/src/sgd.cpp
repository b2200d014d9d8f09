// SPDX-License-Identifier: Apache-2.0
#include "fedadapt/sgd.hpp"

#include <stdexcept>

namespace fedadapt {

void SgdState::step(ParamSet& params, const SgdConfig& cfg) {
    for (auto& [name, e] : params.entries()) {
        if (!e.trainable || !e.tensor->requires_grad) continue;
        Tensor& t = *e.tensor;
        if (!t.has_grad()) continue;
        if (t.grad.size() != t.data.size()) {
            throw std::invalid_argument("sgd_step: gradient size " +
                                        std::to_string(t.grad.size()) + " does not match '" +
                                        name + "' " + t.shape_str());
        }
        auto& v = velocity_[name];
        if (v.size() != t.data.size()) v.assign(t.data.size(), 0.0f);
        const float wd = e.decay ? cfg.weight_decay : 0.0f;
        for (size_t i = 0; i < t.data.size(); ++i) {
            const float g = t.grad[i] + wd * t.data[i];
            v[i] = cfg.momentum * v[i] + g;
            t.data[i] -= cfg.lr * v[i];
        }
    }
}

}  // namespace fedadapt
