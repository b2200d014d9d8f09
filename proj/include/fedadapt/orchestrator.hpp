// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "fedadapt/fedalgs.hpp"
#include "fedadapt/model.hpp"
#include "fedadapt/partition.hpp"

namespace fedadapt {

enum class FedSetting { CrossSilo, CrossDevice };
enum class InvalidPolicy { Reject, Keep };

struct LrSchedule {
    float initial = 0.1f;
    std::vector<std::pair<int, float>> drops;  // (round, new lr), rounds strictly increasing
    float at(int round) const;
    void validate() const;
};

struct FederatedConfig {
    FedAlgorithm algorithm = FedAlgorithm::FedAvg;
    FedSetting setting = FedSetting::CrossSilo;
    double fraction = 0.2;   // cross-device participation fraction
    int local_epochs = 0;    // 0: setting default (1 cross-silo, 5 cross-device)
    int batch_size = 64;
    LrSchedule lr;
    float momentum = 0.9f;
    float weight_decay = 5e-4f;
    float prox_mu = 0.01f;
    BnLocalMode bn_local = BnLocalMode::Off;
    bool fednova_naive_bn = false;
    InvalidPolicy invalid_policy = InvalidPolicy::Reject;
};

struct DataConfig {
    enum class Source { Synthetic, Idx };
    Source source = Source::Synthetic;
    // synthetic task
    int num_classes = 4;
    int samples_per_class = 500;
    int image_size = 13;
    float noise = 0.08f;
    uint64_t data_seed = 42;
    double test_fraction = 0.2;
    // idx task
    std::string idx_images, idx_labels, idx_test_images, idx_test_labels;
    double pretrain_holdout = 0.25;  // idx only: train fraction diverted to pretraining
    // pretraining task (synthetic source)
    int pretrain_classes = 8;
    int pretrain_samples_per_class = 200;
    uint64_t pretrain_seed = 7;
    // pretraining schedule
    int pretrain_epochs = 2;
    float pretrain_lr = 0.05f;
};

struct RunConfig {
    int rounds = 50;
    std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
    std::string output_dir = "runs/out";
    int threads = 0;  // 0 = auto; FEDADAPT_THREADS caps it
};

struct ExperimentConfig {
    ModelConfig model;
    DataConfig data;
    PartitionSpec partition;  // seed is overridden per experiment seed
    FederatedConfig federated;
    RunConfig run;

    int effective_epochs() const;
    void validate() const;  // throws std::invalid_argument on bad combinations
};

struct RoundMetrics {
    int round = 0;
    double test_accuracy = 0.0;
    double train_loss = 0.0;
    int64_t payload_up_bytes = 0;
    int64_t payload_down_bytes = 0;
    std::vector<int> participants;
    bool invalid = false;
    int64_t wall_ms = 0;
};

struct SeedResult {
    uint64_t seed = 0;
    std::vector<RoundMetrics> rounds;
    double final_accuracy = 0.0;
    std::string csv_path;
};

struct ExperimentSummary {
    std::vector<SeedResult> per_seed;
    double mean_final = 0.0;
    double std_final = 0.0;  // sample std (n - 1); 0 by convention for one seed
    bool single_seed = false;
};

struct PreparedData {
    Dataset train;
    Dataset test;
    Dataset pretrain;
};

// Top-1 accuracy in eval mode; argmax ties break toward the lowest class.
double evaluate(Model& model, const Dataset& test, int batch_size = 256);

PreparedData prepare_data(const DataConfig& cfg);
// Pretrains the shared backbone on the pretraining split (epochs may be 0).
Model prepare_base_model(const ExperimentConfig& cfg, const Dataset& pretrain_data);

// One experiment seed: fixed partition, a global model derived from the
// shared base, and the round loop.
class FederatedRun {
public:
    FederatedRun(const ExperimentConfig& cfg, uint64_t seed, const Model& base_model,
                 const Dataset& train, const Dataset& test);

    RoundMetrics run_round(int round_idx);

    Model& global_model() { return global_; }
    const std::vector<ClientDataset>& clients() const { return clients_; }
    const ExperimentConfig& config() const { return cfg_; }

private:
    ExperimentConfig cfg_;
    uint64_t seed_;
    const Dataset& train_;
    const Dataset& test_;
    std::vector<ClientDataset> clients_;
    Model global_;
    int64_t base_bytes_ = 0;  // serialized base checkpoint size, charged at round 0
    int threads_ = 1;
};

// Full protocol: pretrain once, then per seed rebuild partitions,
// reinitialize the DOMAIN partition, run all rounds, and write one CSV per
// seed plus a summary file. Deterministic per (config, seed).
ExperimentSummary run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr);

// CSV schema: round,accuracy,train_loss,payload_up,payload_down,invalid,wall_ms,participants
std::string metrics_csv_line(const RoundMetrics& m);
void write_seed_csv(const std::string& path, const std::vector<RoundMetrics>& rounds);

int resolve_thread_count(int configured);

}  // namespace fedadapt
