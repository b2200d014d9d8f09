// SPDX-License-Identifier: Apache-2.0
#include "fedadapt/fedalgs.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "fedadapt/graph.hpp"
#include "fedadapt/sgd.hpp"

namespace fedadapt {

namespace {

bool is_bn_stat(const std::string& name) {
    return name.find(".running_") != std::string::npos;
}

bool is_bn_affine(const std::string& name) {
    auto ends_with = [&name](const char* s, size_t n) {
        return name.size() >= n && name.compare(name.size() - n, n, s) == 0;
    };
    return ends_with(".gamma", 6) || ends_with(".beta", 5);
}

bool excluded_from_aggregation(const std::string& name, BnLocalMode mode) {
    switch (mode) {
        case BnLocalMode::Off: return false;
        case BnLocalMode::Stats: return is_bn_stat(name);
        case BnLocalMode::StatsAndAffine: return is_bn_stat(name) || is_bn_affine(name);
    }
    return false;
}

std::vector<const RoundUpdate*> sorted_by_client(const std::vector<RoundUpdate>& updates) {
    if (updates.empty()) {
        throw std::invalid_argument("aggregate: no updates");
    }
    std::vector<const RoundUpdate*> sorted;
    sorted.reserve(updates.size());
    for (const auto& u : updates) sorted.push_back(&u);
    std::sort(sorted.begin(), sorted.end(),
              [](const RoundUpdate* a, const RoundUpdate* b) { return a->client_id < b->client_id; });
    for (size_t i = 1; i < sorted.size(); ++i) {
        if (!sorted[0]->domain_params.same_names(sorted[i]->domain_params)) {
            throw std::invalid_argument("aggregate: update name sets differ between clients " +
                                        std::to_string(sorted[0]->client_id) + " and " +
                                        std::to_string(sorted[i]->client_id));
        }
    }
    return sorted;
}

}  // namespace

void add_proximal_grad(ParamSet& params, const ParamSet& global_domain, float mu) {
    if (mu == 0.0f) return;
    for (auto& [name, e] : params.entries()) {
        if (e.partition != Partition::Domain || !e.trainable || !e.tensor->has_grad()) continue;
        const auto& anchor = global_domain.at(name).tensor;
        for (size_t i = 0; i < e.tensor->data.size(); ++i) {
            e.tensor->grad[i] += mu * (e.tensor->data[i] - anchor->data[i]);
        }
    }
}

RoundUpdate local_train(Model& model, const ParamSet& global_domain, const Dataset& data,
                        const ClientDataset& client, const LocalTrainConfig& cfg,
                        uint64_t stream_seed) {
    if (client.indices.empty()) {
        throw std::invalid_argument("local_train: client " + std::to_string(client.client_id) +
                                    " has no samples");
    }
    model.params().install(global_domain);

    RoundUpdate update;
    update.client_id = client.client_id;
    update.n_samples = static_cast<int64_t>(client.indices.size());

    SgdState opt;
    const SgdConfig sgd{cfg.lr, cfg.momentum, cfg.weight_decay};
    const bool prox = cfg.algorithm == FedAlgorithm::FedProx && cfg.prox_mu != 0.0f;

    Rng rng(mix_seed(stream_seed, static_cast<uint64_t>(client.client_id), 0x10ca1));
    std::vector<int> order = client.indices;
    double loss_sum = 0.0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
            const size_t take =
                std::min(static_cast<size_t>(cfg.batch_size), order.size() - at);
            auto images = gather_batch(data, order, at, take, client.noise_var, &rng);
            auto labels = gather_labels(data, order, at, take);
            Graph g;
            auto loss = g.softmax_cross_entropy(model.forward(g, images, true), labels);
            if (!std::isfinite(loss->data[0])) update.invalid = true;
            loss_sum += loss->data[0];
            model.params().zero_grads();
            g.backward(loss);
            if (prox) add_proximal_grad(model.params(), global_domain, cfg.prox_mu);
            opt.step(model.params(), sgd);
            if (g.bn_stats_flagged()) update.invalid = true;
            ++update.tau;
        }
    }
    update.train_loss = loss_sum / std::max(update.tau, 1);
    update.domain_params = model.params().domain_snapshot();
    if (!update.domain_params.all_finite()) update.invalid = true;
    return update;
}

ParamSet aggregate_fedavg(const std::vector<RoundUpdate>& updates, const AggregateOptions& opts,
                          const ParamSet* global_before) {
    const auto sorted = sorted_by_client(updates);
    double total = 0.0;
    for (const auto* u : sorted) total += static_cast<double>(u->n_samples);

    ParamSet out = sorted[0]->domain_params.clone();
    for (auto& [name, e] : out.entries()) {
        auto& acc = e.tensor->data;
        if (excluded_from_aggregation(name, opts.bn_local)) {
            // Client-local tensors: the server retains its previous values.
            if (global_before) acc = global_before->at(name).tensor->data;
            continue;
        }
        std::vector<double> sum(acc.size(), 0.0);
        for (const auto* u : sorted) {
            const double w = static_cast<double>(u->n_samples) / total;
            const auto& src = u->domain_params.at(name).tensor->data;
            for (size_t i = 0; i < src.size(); ++i) {
                sum[i] += w * static_cast<double>(src[i]);
            }
        }
        for (size_t i = 0; i < acc.size(); ++i) acc[i] = static_cast<float>(sum[i]);
    }
    return out;
}

ParamSet aggregate_fednova(const ParamSet& global_before,
                           const std::vector<RoundUpdate>& updates,
                           const AggregateOptions& opts) {
    const auto sorted = sorted_by_client(updates);
    double total = 0.0, tau_eff = 0.0;
    for (const auto* u : sorted) {
        if (u->tau < 1) {
            throw std::invalid_argument("aggregate_fednova: client " +
                                        std::to_string(u->client_id) + " reports tau = " +
                                        std::to_string(u->tau));
        }
        total += static_cast<double>(u->n_samples);
    }
    for (const auto* u : sorted) {
        tau_eff += static_cast<double>(u->n_samples) / total * static_cast<double>(u->tau);
    }

    ParamSet out = sorted[0]->domain_params.clone();
    for (auto& [name, e] : out.entries()) {
        auto& acc = e.tensor->data;
        if (excluded_from_aggregation(name, opts.bn_local)) {
            acc = global_before.at(name).tensor->data;
            continue;
        }
        const auto& anchor = global_before.at(name).tensor->data;
        // Running statistics are moving averages, not SGD iterates; dividing
        // their change by tau has no meaning, so they default to FedAvg.
        const bool nova = !is_bn_stat(name) || opts.fednova_naive_bn;
        std::vector<double> sum(acc.size(), 0.0);
        for (const auto* u : sorted) {
            const double p = static_cast<double>(u->n_samples) / total;
            const auto& src = u->domain_params.at(name).tensor->data;
            if (nova) {
                const double inv_tau = 1.0 / static_cast<double>(u->tau);
                for (size_t i = 0; i < src.size(); ++i) {
                    sum[i] += p * (static_cast<double>(anchor[i]) - src[i]) * inv_tau;
                }
            } else {
                for (size_t i = 0; i < src.size(); ++i) {
                    sum[i] += p * static_cast<double>(src[i]);
                }
            }
        }
        if (nova) {
            for (size_t i = 0; i < acc.size(); ++i) {
                acc[i] = static_cast<float>(static_cast<double>(anchor[i]) - tau_eff * sum[i]);
            }
        } else {
            for (size_t i = 0; i < acc.size(); ++i) acc[i] = static_cast<float>(sum[i]);
        }
    }
    return out;
}

std::vector<int> sample_clients(int num_clients, const SamplerConfig& cfg, int round_idx) {
    std::vector<int> ids;
    if (cfg.mode == SamplerConfig::Mode::All) {
        ids.resize(static_cast<size_t>(num_clients));
        std::iota(ids.begin(), ids.end(), 0);
        return ids;
    }
    if (cfg.fraction * num_clients < 1.0) {
        throw std::invalid_argument("sample_clients: fraction too small, f*N < 1");
    }
    const int draws = static_cast<int>(std::ceil(cfg.fraction * num_clients));
    Rng rng(mix_seed(cfg.seed, static_cast<uint64_t>(round_idx), 0x5a3d));
    std::set<int> unique;
    for (int i = 0; i < draws; ++i) unique.insert(rng.uniform_int(num_clients));
    return std::vector<int>(unique.begin(), unique.end());
}

std::string to_string(FedAlgorithm a) {
    switch (a) {
        case FedAlgorithm::FedAvg: return "fedavg";
        case FedAlgorithm::FedProx: return "fedprox";
        case FedAlgorithm::FedNova: return "fednova";
    }
    return "?";
}

}  // namespace fedadapt
