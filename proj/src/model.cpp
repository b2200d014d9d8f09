// SPDX-License-Identifier: Apache-2.0
#include "fedadapt/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fedadapt/checkpoint.hpp"
#include "fedadapt/kernels.hpp"
#include "fedadapt/sgd.hpp"

namespace fedadapt {

double block_param_ratio(int kernel_size, int channels) {
    const double c = kernel_size, i = channels;
    const double base = 2.0 * c * c * i * i;
    const double domain = 2.0 * (i * i + 2.0 * i);
    return (base + domain) / domain;
}

namespace {

void validate_config(const ModelConfig& cfg) {
    if (cfg.stage_widths.empty()) {
        throw std::invalid_argument("model: stage_widths must not be empty");
    }
    int prev = 0;
    for (int w : cfg.stage_widths) {
        if (w <= 0) throw std::invalid_argument("model: stage widths must be positive");
        if (w < prev) {
            throw std::invalid_argument("model: stage widths must be non-decreasing");
        }
        prev = w;
    }
    if (cfg.blocks_per_stage < 1) {
        throw std::invalid_argument("model: blocks_per_stage must be >= 1");
    }
    if (cfg.num_classes < 2) {
        throw std::invalid_argument("model: need at least 2 classes");
    }
    if (cfg.input_channels < 1 || cfg.input_size < 3) {
        throw std::invalid_argument("model: implausible input geometry");
    }
    // Stride-2 transitions demand (size - 1) divisible by 2 at every stage.
    int size = cfg.input_size;
    for (size_t s = 1; s < cfg.stage_widths.size(); ++s) {
        if ((size - 1) % 2 != 0) {
            throw std::invalid_argument(
                "model: input_size " + std::to_string(cfg.input_size) +
                " does not shrink to integer extents across stride-2 stages; "
                "sizes of the form 4k+1 (9, 13, 17, ...) work with three stages");
        }
        size = (size - 1) / 2 + 1;
    }
    if (size < 1) {
        throw std::invalid_argument("model: input_size too small for the stage count");
    }
}

void he_init(Tensor& t, int fan_in, Rng& rng) {
    const float sd = std::sqrt(2.0f / static_cast<float>(fan_in));
    for (auto& v : t.data) v = static_cast<float>(rng.normal()) * sd;
}

// Center tap of a k x k kernel.
inline int64_t center_offset(int ksize) { return static_cast<int64_t>(ksize / 2) * (ksize + 1); }

}  // namespace

void Model::build_structure() {
    blocks_.clear();
    int in_ch = cfg_.stage_widths[0];
    for (size_t s = 0; s < cfg_.stage_widths.size(); ++s) {
        const int out_ch = cfg_.stage_widths[s];
        for (int b = 0; b < cfg_.blocks_per_stage; ++b) {
            BlockSpec blk;
            blk.prefix = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
            blk.in_ch = in_ch;
            blk.out_ch = out_ch;
            blk.stride = (s > 0 && b == 0) ? 2 : 1;
            blk.downsample = blk.stride != 1 || blk.in_ch != blk.out_ch;
            blocks_.push_back(std::move(blk));
            in_ch = out_ch;
        }
    }
}

void Model::alloc_params(Rng* base_rng) {
    params_ = ParamSet();
    const bool adapters = cfg_.adapters_enabled;
    // With adapters the convs form the frozen BASE partition; in finetune
    // mode everything is trainable DOMAIN.
    const Partition conv_part = adapters ? Partition::Base : Partition::Domain;
    const bool conv_train = !adapters;

    auto add_conv = [&](const std::string& name, int out_ch, int in_ch, int ksize) {
        auto t = Tensor::create({out_ch, in_ch, ksize, ksize}, conv_train);
        if (base_rng) he_init(*t, in_ch * ksize * ksize, *base_rng);
        params_.add(name, std::move(t), conv_part, conv_train, true);
    };
    auto add_bn = [&](const std::string& prefix, int ch) {
        params_.add(prefix + ".gamma", Tensor::full({ch}, 1.0f), Partition::Domain, true, false);
        params_.add(prefix + ".beta", Tensor::full({ch}, 0.0f), Partition::Domain, true, false);
        params_.add(prefix + ".running_mean", Tensor::full({ch}, 0.0f), Partition::Domain,
                    false, false);
        params_.add(prefix + ".running_var", Tensor::full({ch}, 1.0f), Partition::Domain,
                    false, false);
        params_.tensor(prefix + ".gamma")->requires_grad = true;
        params_.tensor(prefix + ".beta")->requires_grad = true;
    };

    add_conv("stem.conv.weight", cfg_.stage_widths[0], cfg_.input_channels, 3);
    add_bn("stem.bn", cfg_.stage_widths[0]);
    for (const auto& b : blocks_) {
        add_conv(b.prefix + ".conv1.weight", b.out_ch, b.in_ch, 3);
        add_conv(b.prefix + ".conv2.weight", b.out_ch, b.out_ch, 3);
        if (cfg_.adapters_enabled) {
            params_.add(b.prefix + ".adapter1.weight",
                        Tensor::create({b.out_ch, b.in_ch, 1, 1}, true), Partition::Domain,
                        true, true);
            params_.add(b.prefix + ".adapter2.weight",
                        Tensor::create({b.out_ch, b.out_ch, 1, 1}, true), Partition::Domain,
                        true, true);
        }
        add_bn(b.prefix + ".bn1", b.out_ch);
        add_bn(b.prefix + ".bn2", b.out_ch);
        if (b.downsample) {
            add_conv(b.prefix + ".downsample.weight", b.out_ch, b.in_ch, 1);
        }
    }
    const int feat = cfg_.stage_widths.back();
    params_.add("head.weight", Tensor::create({cfg_.num_classes, feat}, true),
                Partition::Domain, true, true);
    params_.add("head.bias", Tensor::create({cfg_.num_classes}, true), Partition::Domain, true,
                true);
}

Model Model::build(const ModelConfig& cfg, uint64_t seed) {
    validate_config(cfg);
    Model m;
    m.cfg_ = cfg;
    m.build_structure();
    Rng rng(mix_seed(seed, 0xba5e));
    m.alloc_params(&rng);
    m.init_domain(seed);
    return m;
}

Model Model::clone() const {
    Model m;
    m.cfg_ = cfg_;
    m.blocks_ = blocks_;
    m.params_ = params_.clone();
    return m;
}

Model Model::derive(bool adapters_enabled, int num_classes) const {
    ModelConfig cfg = cfg_;
    cfg.adapters_enabled = adapters_enabled;
    cfg.num_classes = num_classes;
    validate_config(cfg);
    Model m;
    m.cfg_ = cfg;
    m.build_structure();
    m.alloc_params(nullptr);
    for (auto& [name, e] : m.params_.entries()) {
        if (name.find(".conv") != std::string::npos ||
            name.find(".downsample.") != std::string::npos) {
            e.tensor->data = params_.tensor(name)->data;
        }
    }
    m.init_domain(0);
    return m;
}

void Model::init_domain(uint64_t seed) {
    Rng rng(mix_seed(seed, 0xd0a1));
    const int feat = cfg_.stage_widths.back();
    const float bound = std::sqrt(1.0f / static_cast<float>(feat));
    for (auto& [name, e] : params_.entries()) {
        if (e.partition != Partition::Domain) continue;
        if (name.find(".adapter") != std::string::npos) {
            std::fill(e.tensor->data.begin(), e.tensor->data.end(), 0.0f);
        } else if (name.size() > 6 && name.compare(name.size() - 6, 6, ".gamma") == 0) {
            std::fill(e.tensor->data.begin(), e.tensor->data.end(), 1.0f);
        } else if (name.size() > 5 && name.compare(name.size() - 5, 5, ".beta") == 0) {
            std::fill(e.tensor->data.begin(), e.tensor->data.end(), 0.0f);
        } else if (name.size() > 13 && name.compare(name.size() - 13, 13, ".running_mean") == 0) {
            std::fill(e.tensor->data.begin(), e.tensor->data.end(), 0.0f);
        } else if (name.size() > 12 && name.compare(name.size() - 12, 12, ".running_var") == 0) {
            std::fill(e.tensor->data.begin(), e.tensor->data.end(), 1.0f);
        } else if (name == "head.weight" || name == "head.bias") {
            for (auto& v : e.tensor->data) v = rng.uniform_float(-bound, bound);
        }
        // Finetune-mode convs are DOMAIN but keep their (pre)trained values.
    }
}

TensorPtr Model::bn_forward(Graph& g, const std::string& prefix, const TensorPtr& x,
                            bool training) {
    return g.batch_norm(x, params_.tensor(prefix + ".gamma"), params_.tensor(prefix + ".beta"),
                        params_.tensor(prefix + ".running_mean"),
                        params_.tensor(prefix + ".running_var"), training);
}

TensorPtr Model::block_forward(Graph& g, const BlockSpec& b, const TensorPtr& x, bool training) {
    auto h = g.conv2d(x, params_.tensor(b.prefix + ".conv1.weight"), b.stride, 1);
    if (cfg_.adapters_enabled) {
        // Adapter output matches the conv output; the sum feeds batch norm.
        auto a = g.conv2d(x, params_.tensor(b.prefix + ".adapter1.weight"), b.stride, 0);
        h = g.add(h, a);
    }
    h = g.relu(bn_forward(g, b.prefix + ".bn1", h, training));

    auto h2 = g.conv2d(h, params_.tensor(b.prefix + ".conv2.weight"), 1, 1);
    if (cfg_.adapters_enabled) {
        auto a2 = g.conv2d(h, params_.tensor(b.prefix + ".adapter2.weight"), 1, 0);
        h2 = g.add(h2, a2);
    }
    h2 = bn_forward(g, b.prefix + ".bn2", h2, training);

    auto skip = b.downsample
                    ? g.conv2d(x, params_.tensor(b.prefix + ".downsample.weight"), b.stride, 0)
                    : x;
    return g.relu(g.add(h2, skip));
}

TensorPtr Model::forward(Graph& g, const TensorPtr& images, bool training) {
    last_nonfinite_layer_ = -1;
    int layer = 0;
    auto note = [&](const TensorPtr& t) {
        if (last_nonfinite_layer_ < 0 && !t->all_finite()) last_nonfinite_layer_ = layer;
        ++layer;
    };

    auto h = g.relu(bn_forward(g, "stem.bn", g.conv2d(images, params_.tensor("stem.conv.weight"), 1, 1),
                               training));
    note(h);
    for (const auto& b : blocks_) {
        h = block_forward(g, b, h, training);
        note(h);
    }
    auto pooled = g.global_avg_pool(h);
    auto logits = g.linear(pooled, params_.tensor("head.weight"), params_.tensor("head.bias"));
    note(logits);
    return logits;
}

ParamCounts Model::count_params() const {
    return ParamCounts{params_.count(Partition::Base), params_.count(Partition::Domain)};
}

DomainViews Model::domain_views() const {
    DomainViews v;
    for (const auto& [name, e] : params_.entries()) {
        if (e.partition != Partition::Domain) continue;
        v.transmitted += e.tensor->numel();
        const bool running = name.find(".running_") != std::string::npos;
        if (!running) v.formula += e.tensor->numel();
    }
    return v;
}

double Model::payload_ratio() const {
    if (!cfg_.adapters_enabled) {
        throw std::logic_error("payload_ratio: model has no adapter partition");
    }
    const auto full = serialize_params(params_, PartitionFilter::All);
    const auto domain = serialize_params(params_, PartitionFilter::DomainOnly);
    return static_cast<double>(full.size()) / static_cast<double>(domain.size());
}

Model Model::fold_adapters() const {
    if (!cfg_.adapters_enabled) {
        throw std::logic_error("fold_adapters: adapters are not enabled");
    }
    ModelConfig cfg = cfg_;
    cfg.adapters_enabled = false;
    Model m;
    m.cfg_ = cfg;
    m.build_structure();
    m.alloc_params(nullptr);
    for (auto& [name, e] : m.params_.entries()) {
        e.tensor->data = params_.tensor(name)->data;
        // The folded network is inference-oriented: convs stay frozen.
        if (name.find(".conv") != std::string::npos ||
            name.find(".downsample.") != std::string::npos) {
            e.partition = Partition::Base;
            e.trainable = false;
            e.tensor->requires_grad = false;
        }
    }
    for (const auto& b : blocks_) {
        for (int which = 1; which <= 2; ++which) {
            const auto conv = m.params_.tensor(b.prefix + ".conv" + std::to_string(which) +
                                               ".weight");
            const auto adapter =
                params_.tensor(b.prefix + ".adapter" + std::to_string(which) + ".weight");
            const int out_ch = conv->dim(0), in_ch = conv->dim(1), ksize = conv->dim(2);
            if (adapter->dim(0) != out_ch || adapter->dim(1) != in_ch) {
                throw std::invalid_argument("fold_adapters: adapter " + adapter->shape_str() +
                                            " does not match conv " + conv->shape_str());
            }
            const int64_t taps = static_cast<int64_t>(ksize) * ksize;
            for (int64_t oc = 0; oc < out_ch; ++oc) {
                for (int64_t ic = 0; ic < in_ch; ++ic) {
                    conv->data[(oc * in_ch + ic) * taps + center_offset(ksize)] +=
                        adapter->data[oc * in_ch + ic];
                }
            }
        }
    }
    return m;
}

ParamSet fold_adapter_checkpoint(const ParamSet& params) {
    ParamSet out;
    bool any = false;
    for (const auto& [name, e] : params.entries()) {
        const auto at = name.find(".adapter");
        if (at == std::string::npos) {
            out.add(name, e.tensor->clone(), e.partition, e.trainable, e.decay);
            continue;
        }
        any = true;
    }
    if (!any) {
        throw std::invalid_argument("fold: checkpoint contains no adapter tensors");
    }
    for (const auto& [name, e] : params.entries()) {
        const auto at = name.find(".adapter");
        if (at == std::string::npos) continue;
        std::string conv_name = name;
        conv_name.replace(at, 8, ".conv");
        if (!out.contains(conv_name)) {
            throw std::invalid_argument("fold: '" + name + "' has no matching '" + conv_name +
                                        "'");
        }
        const auto conv = out.tensor(conv_name);
        const auto& adapter = e.tensor;
        const int out_ch = conv->dim(0), in_ch = conv->dim(1), ksize = conv->dim(2);
        if (adapter->dim(0) != out_ch || adapter->dim(1) != in_ch) {
            throw std::invalid_argument("fold: adapter " + adapter->shape_str() +
                                        " does not match conv " + conv->shape_str());
        }
        const int64_t taps = static_cast<int64_t>(ksize) * ksize;
        for (int64_t oc = 0; oc < out_ch; ++oc) {
            for (int64_t ic = 0; ic < in_ch; ++ic) {
                conv->data[(oc * in_ch + ic) * taps + center_offset(ksize)] +=
                    adapter->data[oc * in_ch + ic];
            }
        }
    }
    return out;
}

Model pretrain_base(const ModelConfig& cfg, const Dataset& data, const PretrainConfig& pc) {
    ModelConfig plain = cfg;
    plain.adapters_enabled = false;
    plain.num_classes = data.num_classes;
    Model m = Model::build(plain, mix_seed(pc.seed, 0x12e7));

    SgdState opt;
    const SgdConfig sgd{pc.lr, pc.momentum, pc.weight_decay};
    Rng shuffle_rng(mix_seed(pc.seed, 0x54f1e));
    std::vector<int> order(static_cast<size_t>(data.size()));
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < pc.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (size_t at = 0; at < order.size(); at += static_cast<size_t>(pc.batch_size)) {
            const size_t take = std::min(static_cast<size_t>(pc.batch_size), order.size() - at);
            auto images = gather_batch(data, order, at, take);
            auto labels = gather_labels(data, order, at, take);
            Graph g;
            auto loss = g.softmax_cross_entropy(m.forward(g, images, true), labels);
            m.params().zero_grads();
            g.backward(loss);
            opt.step(m.params(), sgd);
        }
    }
    return m;
}

}  // namespace fedadapt
