// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "fedadapt/param_set.hpp"

namespace fedadapt {

struct SgdConfig {
    float lr = 0.1f;
    float momentum = 0.9f;
    float weight_decay = 5e-4f;
};

// SGD with momentum: v <- momentum*v + (grad + weight_decay*w); w <- w - lr*v.
// Weight decay is skipped for entries with decay == false (batch-norm
// parameters). Only trainable DOMAIN-or-unfrozen entries with a gradient are
// touched; BASE tensors are never updated.
class SgdState {
public:
    void step(ParamSet& params, const SgdConfig& cfg);

private:
    std::map<std::string, std::vector<float>> velocity_;
};

}  // namespace fedadapt
