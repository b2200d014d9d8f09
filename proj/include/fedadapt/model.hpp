// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedadapt/dataset.hpp"
#include "fedadapt/graph.hpp"
#include "fedadapt/param_set.hpp"

namespace fedadapt {

// Desk-scale residual network: a 3x3 stem, `stage_widths.size()` stages of
// basic blocks (two 3x3 convs each, stride 2 entering every stage after the
// first), global average pooling and a linear head. With adapters enabled,
// every block conv gains a parallel 1x1 adapter whose output is summed with
// the conv output before batch norm. Spatial sizes shrink exactly, so
// input_size must satisfy size % 4 == 1 when there are three stages
// (e.g. 9, 13, 17).
struct ModelConfig {
    std::vector<int> stage_widths{16, 32, 64};
    int blocks_per_stage = 2;
    int num_classes = 10;
    int input_channels = 1;
    int input_size = 13;
    bool adapters_enabled = true;
};

struct ParamCounts {
    int64_t base = 0;
    int64_t domain = 0;  // transmitted view: adapters + all BN buffers + head
};

struct DomainViews {
    // `formula` excludes the running-statistics buffers, matching the
    // closed-form per-block count 2*(I^2 + 2I); `transmitted` counts every
    // DOMAIN element that actually travels.
    int64_t formula = 0;
    int64_t transmitted = 0;
};

// Analytic per-block ratio (2 c^2 I^2 + 2 (I^2 + 2I)) / (2 (I^2 + 2I)).
double block_param_ratio(int kernel_size, int channels);

class Model {
public:
    Model() = default;

    // Random base (He init) plus init_domain(seed).
    static Model build(const ModelConfig& cfg, uint64_t seed);

    Model clone() const;
    // New model sharing this model's conv weights (copied), with the given
    // adapter mode and head size. With adapters enabled the convs are frozen
    // BASE; without, everything is trainable DOMAIN. Call init_domain next.
    Model derive(bool adapters_enabled, int num_classes) const;

    // Adapters to zero, BN to (1, 0, 0, 1), head uniform in [-b, b] with
    // b = sqrt(1 / fan_in). Identical seed, identical values.
    void init_domain(uint64_t seed);

    // Training mode updates BN running statistics. Records the first layer
    // whose output went non-finite (see last_nonfinite_layer).
    TensorPtr forward(Graph& g, const TensorPtr& images, bool training);

    int last_nonfinite_layer() const { return last_nonfinite_layer_; }

    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    const ModelConfig& config() const { return cfg_; }

    ParamCounts count_params() const;
    DomainViews domain_views() const;
    // Serialized full-exchange bytes over serialized domain-only bytes.
    double payload_ratio() const;

    // Adds each 1x1 adapter into the centre tap of its base kernel and
    // returns the adapter-free model (eval-oriented; BN and head copied).
    Model fold_adapters() const;

private:
    struct BlockSpec {
        std::string prefix;
        int in_ch = 0;
        int out_ch = 0;
        int stride = 1;
        bool downsample = false;
    };

    void build_structure();
    void alloc_params(Rng* base_rng);
    TensorPtr block_forward(Graph& g, const BlockSpec& b, const TensorPtr& x, bool training);
    TensorPtr bn_forward(Graph& g, const std::string& prefix, const TensorPtr& x, bool training);

    ModelConfig cfg_;
    std::vector<BlockSpec> blocks_;
    ParamSet params_;
    int last_nonfinite_layer_ = -1;
};

struct PretrainConfig {
    int epochs = 2;
    int batch_size = 64;
    float lr = 0.05f;
    float momentum = 0.9f;
    float weight_decay = 5e-4f;
    uint64_t seed = 0;
};

// Trains a plain (adapter-free, fully trainable) model on the pretraining
// dataset; the result serves as the frozen shared backbone via derive().
Model pretrain_base(const ModelConfig& cfg, const Dataset& data, const PretrainConfig& pc);

// Checkpoint-level fold: adds every "X.adapterN.weight" into the centre tap
// of "X.convN.weight" and drops the adapter entries. Works on any full
// parameter set that follows the model naming convention.
ParamSet fold_adapter_checkpoint(const ParamSet& params);

}  // namespace fedadapt
