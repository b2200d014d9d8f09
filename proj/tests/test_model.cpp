// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fedadapt/checkpoint.hpp"
#include "fedadapt/graph.hpp"
#include "fedadapt/model.hpp"
#include "fedadapt/orchestrator.hpp"
#include "oracles.hpp"

using namespace fedadapt;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.stage_widths = {4, 8};
    cfg.blocks_per_stage = 1;
    cfg.num_classes = 3;
    cfg.input_channels = 1;
    cfg.input_size = 9;
    return cfg;
}

// Fills every DOMAIN tensor with random values (adapters included) so fold
// equivalence is exercised away from the zero-adapter special case.
void randomize_domain(Model& m, uint64_t seed) {
    Rng rng(seed);
    for (auto& [name, e] : m.params().entries()) {
        if (e.partition != Partition::Domain) continue;
        if (name.find(".running_var") != std::string::npos) {
            for (auto& v : e.tensor->data) v = rng.uniform_float(0.5f, 1.5f);
        } else if (name.find(".running_mean") != std::string::npos) {
            for (auto& v : e.tensor->data) v = rng.uniform_float(-0.3f, 0.3f);
        } else if (name.find(".gamma") != std::string::npos) {
            for (auto& v : e.tensor->data) v = rng.uniform_float(0.7f, 1.3f);
        } else {
            for (auto& v : e.tensor->data) v = rng.uniform_float(-0.4f, 0.4f);
        }
    }
}

}  // namespace

TEST_CASE("zero adapters reproduce the base-only forward bit for bit") {
    auto cfg = tiny_config();
    Model adapted = Model::build(cfg, 5);
    Model plain = adapted.derive(false, cfg.num_classes);
    plain.init_domain(7);
    adapted.init_domain(7);  // adapters zero, same BN/head draw
    for (int i = 0; i < 10; ++i) {
        Rng rng(mix_seed(50, static_cast<uint64_t>(i)));
        auto x = oracles::random_tensor({2, 1, 9, 9}, rng, 0.0f, 1.0f);
        Graph ga(false), gp(false);
        auto ya = adapted.forward(ga, x, false);
        auto yp = plain.forward(gp, x, false);
        CHECK(oracles::bitwise_equal(ya->data, yp->data));
    }
}

TEST_CASE("zero input with neutral BN and zero head bias gives zero logits") {
    auto cfg = tiny_config();
    Model m = Model::build(cfg, 5);
    m.init_domain(3);
    std::fill(m.params().tensor("head.bias")->data.begin(),
              m.params().tensor("head.bias")->data.end(), 0.0f);
    auto x = Tensor::create({2, 1, 9, 9});
    Graph g(false);
    auto y = m.forward(g, x, false);
    for (float v : y->data) CHECK(v == 0.0f);
}

TEST_CASE("eval forward is deterministic") {
    Model m = Model::build(tiny_config(), 21);
    randomize_domain(m, 22);
    Rng rng(23);
    auto x = oracles::random_tensor({3, 1, 9, 9}, rng, 0.0f, 1.0f);
    Graph g1(false), g2(false);
    auto y1 = m.forward(g1, x, false);
    auto y2 = m.forward(g2, x, false);
    CHECK(oracles::bitwise_equal(y1->data, y2->data));
}

TEST_CASE("adapted block output equals BN of the two convolutions summed") {
    // Route A: model forward. Route B: separate convs, manual sum, manual BN.
    auto cfg = tiny_config();
    cfg.stage_widths = {4};
    cfg.blocks_per_stage = 1;
    Model m = Model::build(cfg, 31);
    randomize_domain(m, 32);
    Rng rng(33);
    auto x = oracles::random_tensor({2, 1, 9, 9}, rng, 0.0f, 1.0f);

    Graph g(false);
    auto stem = g.relu(g.batch_norm(g.conv2d(x, m.params().tensor("stem.conv.weight"), 1, 1),
                                    m.params().tensor("stem.bn.gamma"),
                                    m.params().tensor("stem.bn.beta"),
                                    m.params().tensor("stem.bn.running_mean"),
                                    m.params().tensor("stem.bn.running_var"), false));
    auto wsum = g.add(g.conv2d(stem, m.params().tensor("stage1.block0.conv1.weight"), 1, 1),
                      g.conv2d(stem, m.params().tensor("stage1.block0.adapter1.weight"), 1, 0));
    auto bn = g.batch_norm(wsum, m.params().tensor("stage1.block0.bn1.gamma"),
                           m.params().tensor("stage1.block0.bn1.beta"),
                           m.params().tensor("stage1.block0.bn1.running_mean"),
                           m.params().tensor("stage1.block0.bn1.running_var"), false);

    // Manual: per-channel affine-normalized sum of the two conv outputs.
    int oh = 0, ow = 0;
    auto conv = oracles::conv2d_naive(stem->data, 2, 4, 9, 9,
                                      m.params().tensor("stage1.block0.conv1.weight")->data, 4, 3,
                                      1, 1, &oh, &ow);
    auto adapt = oracles::conv2d_naive(stem->data, 2, 4, 9, 9,
                                       m.params().tensor("stage1.block0.adapter1.weight")->data,
                                       4, 1, 1, 0, &oh, &ow);
    const auto gamma = m.params().tensor("stage1.block0.bn1.gamma")->data;
    const auto beta = m.params().tensor("stage1.block0.bn1.beta")->data;
    const auto rm = m.params().tensor("stage1.block0.bn1.running_mean")->data;
    const auto rv = m.params().tensor("stage1.block0.bn1.running_var")->data;
    std::vector<float> manual(conv.size());
    const int spatial = 81;
    for (size_t i = 0; i < conv.size(); ++i) {
        const int ch = static_cast<int>((i / spatial) % 4);
        const float sum = conv[i] + adapt[i];
        manual[i] = gamma[ch] * (sum - rm[ch]) / std::sqrt(rv[ch] + 1e-5f) + beta[ch];
    }
    CHECK(oracles::max_abs_diff(bn->data, manual) < 1e-6f);
}

TEST_CASE("count_params matches the closed-form block formulas") {
    // One uniform block, c = 3, I = 4, no stem/head contribution counted.
    ModelConfig cfg = tiny_config();
    cfg.stage_widths = {4};
    cfg.blocks_per_stage = 1;
    Model m = Model::build(cfg, 1);
    const auto& p = m.params();
    int64_t block_base = p.tensor("stage1.block0.conv1.weight")->numel() +
                         p.tensor("stage1.block0.conv2.weight")->numel();
    CHECK(block_base == 288);  // 2 * 9 * 16
    int64_t block_formula = p.tensor("stage1.block0.adapter1.weight")->numel() +
                            p.tensor("stage1.block0.adapter2.weight")->numel() +
                            p.tensor("stage1.block0.bn1.gamma")->numel() +
                            p.tensor("stage1.block0.bn1.beta")->numel() +
                            p.tensor("stage1.block0.bn2.gamma")->numel() +
                            p.tensor("stage1.block0.bn2.beta")->numel();
    CHECK(block_formula == 48);  // 2 * (16 + 2*4)
}

TEST_CASE("count_params matches a brute-force tensor walk on the default model") {
    Model m = Model::build(ModelConfig{}, 3);
    int64_t base = 0, domain = 0, running = 0;
    for (const auto& [name, e] : m.params().entries()) {
        if (e.partition == Partition::Base) base += e.tensor->numel();
        else domain += e.tensor->numel();
        if (name.find(".running_") != std::string::npos) running += e.tensor->numel();
    }
    const auto counts = m.count_params();
    CHECK(counts.base == base);
    CHECK(counts.domain == domain);
    const auto views = m.domain_views();
    CHECK(views.transmitted == domain);
    CHECK(views.formula == domain - running);
    // Partition completeness: every tensor is exactly one of BASE/DOMAIN.
    CHECK(base + domain ==
          [&] {
              int64_t t = 0;
              for (const auto& [n, e] : m.params().entries()) t += e.tensor->numel();
              return t;
          }());
}

TEST_CASE("analytic block ratio and the reported payload sizes") {
    CHECK(block_param_ratio(3, 64) ==
          doctest::Approx((2.0 * 9 * 64 * 64 + 2.0 * (64 * 64 + 128)) / (2.0 * (64 * 64 + 128)))
              .epsilon(1e-12));
    // Reported full-network payload comparison: 22.2 MB over 2.58 MB.
    CHECK(22.2 / 2.58 == doctest::Approx(8.6047).epsilon(1e-3));
    Model m = Model::build(ModelConfig{}, 3);
    const double ratio = m.payload_ratio();
    CHECK(ratio > 6.0);
    CHECK(ratio < 10.0);
}

TEST_CASE("fold places the adapter value at the kernel centre") {
    auto cfg = tiny_config();
    cfg.stage_widths = {4};
    cfg.blocks_per_stage = 1;
    Model m = Model::build(cfg, 4);
    auto conv = m.params().tensor("stage1.block0.conv1.weight");
    std::fill(conv->data.begin(), conv->data.end(), 0.0f);
    auto adapter = m.params().tensor("stage1.block0.adapter1.weight");
    adapter->data[0] = 2.0f;  // out 0, in 0

    Model folded = m.fold_adapters();
    const auto& fk = folded.params().tensor("stage1.block0.conv1.weight")->data;
    for (size_t i = 0; i < fk.size(); ++i) {
        CHECK(fk[i] == (i == 4 ? 2.0f : 0.0f));  // centre tap of filter (0,0)
    }
}

TEST_CASE("fold with zero adapters is a bitwise no-op on the kernels") {
    Model m = Model::build(tiny_config(), 6);
    m.init_domain(8);  // adapters zero
    Model folded = m.fold_adapters();
    for (const auto& [name, e] : folded.params().entries()) {
        if (name.find(".conv") == std::string::npos) continue;
        CHECK(oracles::bitwise_equal(e.tensor->data, m.params().tensor(name)->data));
    }
    CHECK_FALSE(folded.config().adapters_enabled);
    CHECK_THROWS(folded.fold_adapters());
}

TEST_CASE("folded forward matches the adapted forward in eval mode") {
    for (int trial = 0; trial < 20; ++trial) {
        Model m = Model::build(tiny_config(), mix_seed(60, static_cast<uint64_t>(trial)));
        randomize_domain(m, mix_seed(61, static_cast<uint64_t>(trial)));
        Model folded = m.fold_adapters();
        Rng rng(mix_seed(62, static_cast<uint64_t>(trial)));
        auto x = oracles::random_tensor({2, 1, 9, 9}, rng, 0.0f, 1.0f);
        Graph ga(false), gf(false);
        auto ya = m.forward(ga, x, false);
        auto yf = folded.forward(gf, x, false);
        CHECK(oracles::max_abs_diff(ya->data, yf->data) < 1e-5f);
    }
}

TEST_CASE("fold preserves the base model's parameter count") {
    Model m = Model::build(ModelConfig{}, 9);
    Model folded = m.fold_adapters();
    Model plain = m.derive(false, m.config().num_classes);
    int64_t folded_total = 0, plain_total = 0;
    for (const auto& [n, e] : folded.params().entries()) folded_total += e.tensor->numel();
    for (const auto& [n, e] : plain.params().entries()) plain_total += e.tensor->numel();
    CHECK(folded_total == plain_total);
}

TEST_CASE("init_domain is seed-deterministic and bounded") {
    Model a = Model::build(tiny_config(), 11);
    Model b = Model::build(tiny_config(), 11);
    a.init_domain(7);
    b.init_domain(7);
    for (const auto& [name, e] : a.params().entries()) {
        CHECK(oracles::bitwise_equal(e.tensor->data, b.params().tensor(name)->data));
    }
    const float bound = std::sqrt(1.0f / 8.0f);
    for (float v : a.params().tensor("head.weight")->data) {
        CHECK(std::abs(v) <= bound);
    }
    for (float v : a.params().tensor("stage1.block0.adapter1.weight")->data) CHECK(v == 0.0f);
    CHECK(a.params().tensor("stem.bn.gamma")->data[0] == 1.0f);
    CHECK(a.params().tensor("stem.bn.running_var")->data[0] == 1.0f);

    Model c = Model::build(tiny_config(), 11);
    c.init_domain(8);
    CHECK_FALSE(oracles::bitwise_equal(a.params().tensor("head.weight")->data,
                                       c.params().tensor("head.weight")->data));
}

TEST_CASE("pretraining with zero epochs keeps the random initialization") {
    auto data = make_synthetic(3, 20, 9, 123);
    ModelConfig cfg = tiny_config();
    PretrainConfig pc;
    pc.epochs = 0;
    pc.seed = 5;
    Model m = pretrain_base(cfg, data, pc);
    ModelConfig plain_cfg = cfg;
    plain_cfg.adapters_enabled = false;
    plain_cfg.num_classes = 3;
    Model fresh = Model::build(plain_cfg, mix_seed(5, 0x12e7));
    for (const auto& [name, e] : m.params().entries()) {
        CHECK(oracles::bitwise_equal(e.tensor->data, fresh.params().tensor(name)->data));
    }
}

TEST_CASE("brief pretraining beats chance on the pretraining task") {
    auto data = make_synthetic(4, 60, 9, 321, 0.05f);
    auto [train, test] = split_train_test(data, 0.25, 9);
    ModelConfig cfg = tiny_config();
    cfg.num_classes = 4;
    PretrainConfig pc;
    pc.epochs = 4;
    pc.batch_size = 32;
    pc.lr = 0.05f;
    pc.seed = 40;
    Model m = pretrain_base(cfg, train, pc);
    const double acc = evaluate(m, test);
    CHECK(acc > 1.5 * 0.25);
}

TEST_CASE("nonfinite activations are reported with a layer index") {
    Model m = Model::build(tiny_config(), 44);
    randomize_domain(m, 45);
    // Poison the second block's running variance.
    auto rv = m.params().tensor("stage2.block0.bn1.running_var");
    rv->data[0] = -1.0f;
    Rng rng(46);
    auto x = oracles::random_tensor({1, 1, 9, 9}, rng, 0.0f, 1.0f);
    Graph g(false);
    m.forward(g, x, false);
    CHECK(m.last_nonfinite_layer() == 2);  // stem is 0, stage1 block is 1
    CHECK(g.bn_stats_flagged());
}
