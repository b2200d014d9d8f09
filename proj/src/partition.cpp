// SPDX-License-Identifier: Apache-2.0
#include "fedadapt/partition.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace fedadapt {

namespace {

std::vector<std::vector<int>> indices_by_class(const Dataset& data) {
    std::vector<std::vector<int>> by_class(static_cast<size_t>(data.num_classes));
    for (size_t i = 0; i < data.labels.size(); ++i) {
        by_class[static_cast<size_t>(data.labels[i])].push_back(static_cast<int>(i));
    }
    return by_class;
}

void check_clients(int clients) {
    if (clients < 1) {
        throw std::invalid_argument("partition: client count must be positive");
    }
}

}  // namespace

std::vector<ClientDataset> partition_quantity_label(const Dataset& data, int clients,
                                                    int labels_per_client, uint64_t seed) {
    check_clients(clients);
    const int k = data.num_classes;
    const int m = labels_per_client;
    if (m < 1 || m > k) {
        throw std::invalid_argument("partition: labels_per_client must be in [1," +
                                    std::to_string(k) + "], got " + std::to_string(m));
    }
    if (static_cast<int64_t>(clients) * m < k) {
        throw std::invalid_argument("partition: N*M = " + std::to_string(clients * m) +
                                    " < " + std::to_string(k) +
                                    " classes, some class would have no owner");
    }

    Rng rng(mix_seed(seed, 0x9a11));
    std::vector<int> deck(static_cast<size_t>(k));
    std::iota(deck.begin(), deck.end(), 0);
    rng.shuffle(deck);

    // Client j takes slots [j*M, (j+1)*M) of the cycled deck: M consecutive
    // positions of a K-cycle are distinct, and N*M >= K covers every class.
    std::vector<std::vector<int>> owners(static_cast<size_t>(k));
    for (int j = 0; j < clients; ++j) {
        for (int t = 0; t < m; ++t) {
            owners[static_cast<size_t>(deck[(j * m + t) % k])].push_back(j);
        }
    }

    std::vector<ClientDataset> out(static_cast<size_t>(clients));
    for (int j = 0; j < clients; ++j) out[static_cast<size_t>(j)].client_id = j;

    auto by_class = indices_by_class(data);
    for (int cls = 0; cls < k; ++cls) {
        auto& samples = by_class[static_cast<size_t>(cls)];
        rng.shuffle(samples);
        auto& own = owners[static_cast<size_t>(cls)];
        std::sort(own.begin(), own.end());
        const size_t share = samples.size() / own.size();
        const size_t extra = samples.size() % own.size();
        size_t pos = 0;
        for (size_t o = 0; o < own.size(); ++o) {
            const size_t take = share + (o < extra ? 1 : 0);
            auto& dst = out[static_cast<size_t>(own[o])].indices;
            dst.insert(dst.end(), samples.begin() + pos, samples.begin() + pos + take);
            pos += take;
        }
    }
    for (auto& c : out) std::sort(c.indices.begin(), c.indices.end());
    return out;
}

std::vector<ClientDataset> partition_dirichlet_label(const Dataset& data, int clients,
                                                     double beta, uint64_t seed) {
    check_clients(clients);
    if (!(beta > 0.0)) {
        throw std::invalid_argument("partition: beta must be positive");
    }
    for (int attempt = 0; attempt < 100; ++attempt) {
        Rng rng(mix_seed(seed + static_cast<uint64_t>(attempt), 0xd112));
        std::vector<ClientDataset> out(static_cast<size_t>(clients));
        for (int j = 0; j < clients; ++j) out[static_cast<size_t>(j)].client_id = j;

        auto by_class = indices_by_class(data);
        for (auto& samples : by_class) {
            rng.shuffle(samples);
            std::vector<double> p(static_cast<size_t>(clients));
            double total = 0.0;
            for (auto& v : p) {
                v = rng.gamma(beta);
                total += v;
            }
            std::vector<size_t> take(static_cast<size_t>(clients));
            size_t assigned = 0;
            for (int j = 0; j < clients; ++j) {
                take[static_cast<size_t>(j)] = static_cast<size_t>(
                    p[static_cast<size_t>(j)] / total * static_cast<double>(samples.size()));
                assigned += take[static_cast<size_t>(j)];
            }
            size_t leftover = samples.size() - assigned;
            for (int j = 0; leftover > 0; j = (j + 1) % clients, --leftover) {
                ++take[static_cast<size_t>(j)];
            }
            size_t pos = 0;
            for (int j = 0; j < clients; ++j) {
                auto& dst = out[static_cast<size_t>(j)].indices;
                dst.insert(dst.end(), samples.begin() + pos,
                           samples.begin() + pos + take[static_cast<size_t>(j)]);
                pos += take[static_cast<size_t>(j)];
            }
        }

        const bool any_empty = std::any_of(out.begin(), out.end(),
                                           [](const ClientDataset& c) { return c.indices.empty(); });
        if (!any_empty) {
            for (auto& c : out) std::sort(c.indices.begin(), c.indices.end());
            return out;
        }
    }
    throw std::runtime_error(
        "partition: Dirichlet split left a client empty in 100 consecutive draws; "
        "dataset too small for " + std::to_string(clients) + " clients");
}

std::vector<ClientDataset> partition_feature_noise(const Dataset& data, int clients,
                                                   double sigma, uint64_t seed) {
    if (sigma < 0.0) {
        throw std::invalid_argument("partition: sigma must be non-negative");
    }
    auto out = partition_homogeneous(data, clients, seed);
    // Client index i runs 1..N so every client gets nonzero noise.
    for (auto& c : out) {
        c.noise_var = sigma * static_cast<double>(c.client_id + 1) / clients;
    }
    return out;
}

std::vector<ClientDataset> partition_homogeneous(const Dataset& data, int clients,
                                                 uint64_t seed) {
    check_clients(clients);
    Rng rng(mix_seed(seed, 0x401109));
    std::vector<int> order(static_cast<size_t>(data.size()));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    std::vector<ClientDataset> out(static_cast<size_t>(clients));
    const size_t share = order.size() / static_cast<size_t>(clients);
    const size_t extra = order.size() % static_cast<size_t>(clients);
    size_t pos = 0;
    for (int j = 0; j < clients; ++j) {
        auto& c = out[static_cast<size_t>(j)];
        c.client_id = j;
        const size_t take = share + (static_cast<size_t>(j) < extra ? 1 : 0);
        c.indices.assign(order.begin() + pos, order.begin() + pos + take);
        pos += take;
    }
    return out;
}

std::vector<ClientDataset> make_partition(const Dataset& data, const PartitionSpec& spec) {
    switch (spec.strategy) {
        case PartitionStrategy::QuantityLabel:
            return partition_quantity_label(data, spec.clients, spec.labels_per_client,
                                            spec.seed);
        case PartitionStrategy::DirichletLabel:
            return partition_dirichlet_label(data, spec.clients, spec.beta, spec.seed);
        case PartitionStrategy::FeatureNoise:
            return partition_feature_noise(data, spec.clients, spec.sigma, spec.seed);
        case PartitionStrategy::Homogeneous:
            return partition_homogeneous(data, spec.clients, spec.seed);
    }
    throw std::invalid_argument("partition: unknown strategy");
}

std::vector<std::vector<int>> partition_histogram(const Dataset& data,
                                                  const std::vector<ClientDataset>& parts) {
    std::vector<std::vector<int>> hist(parts.size(),
                                       std::vector<int>(static_cast<size_t>(data.num_classes), 0));
    for (size_t j = 0; j < parts.size(); ++j) {
        for (int idx : parts[j].indices) {
            ++hist[j][static_cast<size_t>(data.labels[static_cast<size_t>(idx)])];
        }
    }
    return hist;
}

std::string to_string(PartitionStrategy s) {
    switch (s) {
        case PartitionStrategy::QuantityLabel: return "quantity_label";
        case PartitionStrategy::DirichletLabel: return "dirichlet_label";
        case PartitionStrategy::FeatureNoise: return "feature_noise";
        case PartitionStrategy::Homogeneous: return "homogeneous";
    }
    return "?";
}

}  // namespace fedadapt
