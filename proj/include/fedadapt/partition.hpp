// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedadapt/dataset.hpp"

namespace fedadapt {

enum class PartitionStrategy { QuantityLabel, DirichletLabel, FeatureNoise, Homogeneous };

struct PartitionSpec {
    PartitionStrategy strategy = PartitionStrategy::Homogeneous;
    int clients = 10;           // N
    int labels_per_client = 2;  // M, quantity strategy only
    double beta = 0.5;          // Dirichlet concentration
    double sigma = 0.1;         // noise level
    uint64_t seed = 0;
    // When set, feature noise is baked into the client's data once instead of
    // being redrawn every epoch.
    bool bake_noise = false;
};

struct ClientDataset {
    int client_id = 0;
    std::vector<int> indices;  // into the parent dataset
    double noise_var = 0.0;    // > 0 only for the feature-noise strategy
};

// Each client owns exactly M distinct labels; samples of a class are split
// near-equally among its owners (remainder to the lowest client ids).
// Requires N*M >= K so every class has at least one owner.
std::vector<ClientDataset> partition_quantity_label(const Dataset& data, int clients,
                                                    int labels_per_client, uint64_t seed);

// Per class k, draws p_k ~ Dir_N(beta) via normalized Gamma draws and hands
// client j a floor(p_{k,j} * count_k)-sized slice; leftover samples go
// round-robin over client ids. Redraws with seed+1 (up to 100 attempts) if a
// client would end up empty.
std::vector<ClientDataset> partition_dirichlet_label(const Dataset& data, int clients,
                                                     double beta, uint64_t seed);

// Homogeneous split; client i in 1..N is tagged with noise variance
// sigma * i / N, applied at batch-assembly time.
std::vector<ClientDataset> partition_feature_noise(const Dataset& data, int clients,
                                                   double sigma, uint64_t seed);

// Seeded shuffle, equal split, remainder to the lowest client ids.
std::vector<ClientDataset> partition_homogeneous(const Dataset& data, int clients,
                                                 uint64_t seed);

std::vector<ClientDataset> make_partition(const Dataset& data, const PartitionSpec& spec);

// Per-client class sample counts: result[client][class].
std::vector<std::vector<int>> partition_histogram(const Dataset& data,
                                                  const std::vector<ClientDataset>& parts);

std::string to_string(PartitionStrategy s);

}  // namespace fedadapt
