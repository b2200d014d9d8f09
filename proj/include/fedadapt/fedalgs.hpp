// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedadapt/model.hpp"
#include "fedadapt/partition.hpp"

namespace fedadapt {

enum class FedAlgorithm { FedAvg, FedProx, FedNova };

struct LocalTrainConfig {
    int epochs = 1;  // E
    int batch_size = 64;
    float lr = 0.1f;
    float momentum = 0.9f;
    float weight_decay = 5e-4f;
    float prox_mu = 0.01f;  // used only by FedProx
    FedAlgorithm algorithm = FedAlgorithm::FedAvg;
};

// One client's contribution to a round.
struct RoundUpdate {
    int client_id = -1;
    ParamSet domain_params;
    int64_t n_samples = 0;
    int tau = 0;  // local optimizer steps taken
    bool invalid = false;
    double train_loss = 0.0;  // mean over steps
};

// FedBN-style carve-outs: which batch-norm tensors stay client-local and are
// excluded from aggregation.
enum class BnLocalMode { Off, Stats, StatsAndAffine };

struct AggregateOptions {
    BnLocalMode bn_local = BnLocalMode::Off;
    // Applies the step-normalized rule to BN running statistics as well,
    // instead of plain weighted averaging (reproduces the instability).
    bool fednova_naive_bn = false;
};

struct SamplerConfig {
    enum class Mode { All, SampleWithReplacement };
    Mode mode = Mode::All;
    double fraction = 0.2;  // f
    uint64_t seed = 0;
};

// Adds mu * (w - w_global) into the gradient of every trainable DOMAIN
// parameter (the proximal pull toward the round's starting point).
void add_proximal_grad(ParamSet& params, const ParamSet& global_domain, float mu);

// Runs E epochs of seeded minibatch SGD from the given global DOMAIN state.
// The model must already carry the shared base. BN statistics update in
// training mode and travel with the snapshot. A NaN/Inf loss or snapshot
// flags the update invalid rather than dropping it.
RoundUpdate local_train(Model& model, const ParamSet& global_domain, const Dataset& data,
                        const ClientDataset& client, const LocalTrainConfig& cfg,
                        uint64_t stream_seed);

// Sample-count-weighted average of the DOMAIN tensors. Updates are reduced in
// client-id order regardless of input order.
ParamSet aggregate_fedavg(const std::vector<RoundUpdate>& updates,
                          const AggregateOptions& opts = {},
                          const ParamSet* global_before = nullptr);

// Normalized averaging: d_i = (w_global - w_i) / tau_i and
// w' = w_global - tau_eff * sum_i p_i d_i with p_i = n_i / sum n and
// tau_eff = sum_i p_i tau_i. BN running statistics are averaged the FedAvg
// way unless opts.fednova_naive_bn is set.
ParamSet aggregate_fednova(const ParamSet& global_before,
                           const std::vector<RoundUpdate>& updates,
                           const AggregateOptions& opts = {});

// ALL mode returns every id; otherwise draws ceil(f*N) ids uniformly with
// replacement and deduplicates (a client trains once per round).
// Deterministic per (seed, round_idx).
std::vector<int> sample_clients(int num_clients, const SamplerConfig& cfg, int round_idx);

std::string to_string(FedAlgorithm a);

}  // namespace fedadapt
