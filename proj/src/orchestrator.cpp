// SPDX-License-Identifier: Apache-2.0
#include "fedadapt/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "fedadapt/checkpoint.hpp"
#include "fedadapt/graph.hpp"

namespace fedadapt {

namespace {

int64_t base_checkpoint_bytes(const ParamSet& params) {
    ParamSet base_only;
    for (const auto& [name, e] : params.entries()) {
        if (e.partition == Partition::Base) {
            base_only.add(name, e.tensor, e.partition, e.trainable, e.decay);
        }
    }
    return static_cast<int64_t>(serialize_params(base_only, PartitionFilter::All).size());
}

bool aggregate_is_valid(const ParamSet& domain) {
    for (const auto& [name, e] : domain.entries()) {
        if (!e.tensor->all_finite()) return false;
        if (name.find(".running_var") != std::string::npos) {
            for (float v : e.tensor->data) {
                if (!(v > 0.0f)) return false;
            }
        }
    }
    return true;
}

// Runs fn(i) for i in [0, jobs) on up to `threads` workers; each job writes
// only its own slot, so completion order cannot affect results.
void parallel_for(int jobs, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || jobs <= 1) {
        for (int i = 0; i < jobs; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    const int workers = std::min(threads, jobs);
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= jobs) return;
                fn(i);
            }
        });
    }
    for (auto& t : pool) t.join();
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

float LrSchedule::at(int round) const {
    float lr = initial;
    for (const auto& [r, v] : drops) {
        if (round >= r) lr = v;
    }
    return lr;
}

void LrSchedule::validate() const {
    if (!(initial > 0.0f)) throw std::invalid_argument("lr schedule: initial lr must be positive");
    int prev = -1;
    for (const auto& [r, v] : drops) {
        if (r <= prev) {
            throw std::invalid_argument("lr schedule: drop rounds must be strictly increasing");
        }
        if (!(v > 0.0f)) throw std::invalid_argument("lr schedule: lr values must be positive");
        prev = r;
    }
}

int ExperimentConfig::effective_epochs() const {
    if (federated.local_epochs > 0) return federated.local_epochs;
    return federated.setting == FedSetting::CrossSilo ? 1 : 5;
}

void ExperimentConfig::validate() const {
    federated.lr.validate();
    if (run.rounds < 1) throw std::invalid_argument("config: rounds must be >= 1");
    if (run.seeds.empty()) throw std::invalid_argument("config: at least one seed required");
    if (federated.batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (partition.clients < 2) throw std::invalid_argument("config: need at least 2 clients");
    if (federated.setting == FedSetting::CrossDevice) {
        if (!(federated.fraction > 0.0 && federated.fraction <= 1.0)) {
            throw std::invalid_argument("config: fraction must lie in (0, 1]");
        }
        if (federated.fraction * partition.clients < 1.0) {
            throw std::invalid_argument("config: fraction * clients < 1, no client would train");
        }
    }
    if (partition.strategy == PartitionStrategy::DirichletLabel && !(partition.beta > 0.0)) {
        throw std::invalid_argument("config: beta must be positive");
    }
    if (partition.strategy == PartitionStrategy::FeatureNoise && partition.sigma < 0.0) {
        throw std::invalid_argument("config: sigma must be non-negative");
    }
    if (data.source == DataConfig::Source::Synthetic && data.num_classes < 2) {
        throw std::invalid_argument("config: synthetic data needs >= 2 classes");
    }
    if (data.source == DataConfig::Source::Idx && data.idx_images.empty()) {
        throw std::invalid_argument("config: idx source needs image/label paths");
    }
    if (!(data.test_fraction > 0.0 && data.test_fraction < 1.0)) {
        throw std::invalid_argument("config: test_fraction must lie in (0, 1)");
    }
    // Build a throwaway model to surface geometry problems early.
    ModelConfig probe = model;
    Model::build(probe, 0);
}

double evaluate(Model& model, const Dataset& test, int batch_size) {
    if (test.size() == 0) {
        throw std::invalid_argument("evaluate: empty test set");
    }
    std::vector<int> order(static_cast<size_t>(test.size()));
    std::iota(order.begin(), order.end(), 0);
    int64_t correct = 0;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch_size)) {
        const size_t take = std::min(static_cast<size_t>(batch_size), order.size() - at);
        auto images = gather_batch(test, order, at, take);
        Graph g(false);
        auto logits = model.forward(g, images, false);
        const int k = logits->dim(1);
        for (size_t i = 0; i < take; ++i) {
            const float* row = logits->data.data() + static_cast<int64_t>(i) * k;
            int best = 0;
            for (int c = 1; c < k; ++c) {
                if (row[c] > row[best]) best = c;  // ties keep the lowest class
            }
            if (best == test.labels[order[at + i]]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

PreparedData prepare_data(const DataConfig& cfg) {
    PreparedData out;
    if (cfg.source == DataConfig::Source::Synthetic) {
        Dataset full = make_synthetic(cfg.num_classes, cfg.samples_per_class, cfg.image_size,
                                      cfg.data_seed, cfg.noise);
        auto [train, test] = split_train_test(full, cfg.test_fraction, cfg.data_seed);
        out.train = std::move(train);
        out.test = std::move(test);
        out.pretrain = make_synthetic(cfg.pretrain_classes, cfg.pretrain_samples_per_class,
                                      cfg.image_size, cfg.pretrain_seed, cfg.noise);
        return out;
    }
    Dataset train = load_idx(cfg.idx_images, cfg.idx_labels);
    // Stride-2 stages need extents of the form 4k+1; crop to the largest fit.
    int crop = std::min(train.height(), train.width());
    while (crop % 4 != 1) --crop;
    train = center_crop(train, crop);
    if (!cfg.idx_test_images.empty()) {
        out.test = center_crop(load_idx(cfg.idx_test_images, cfg.idx_test_labels), crop);
    } else {
        auto [tr, te] = split_train_test(train, cfg.test_fraction, cfg.data_seed);
        train = std::move(tr);
        out.test = std::move(te);
    }
    // Divert a held-out slice of the training data to pretraining.
    auto [remaining, held_out] = split_train_test(train, cfg.pretrain_holdout, cfg.data_seed + 1);
    out.train = std::move(remaining);
    out.pretrain = std::move(held_out);
    return out;
}

Model prepare_base_model(const ExperimentConfig& cfg, const Dataset& pretrain_data) {
    PretrainConfig pc;
    pc.epochs = cfg.data.pretrain_epochs;
    pc.batch_size = cfg.federated.batch_size;
    pc.lr = cfg.data.pretrain_lr;
    pc.momentum = cfg.federated.momentum;
    pc.weight_decay = cfg.federated.weight_decay;
    pc.seed = cfg.data.pretrain_seed;
    return pretrain_base(cfg.model, pretrain_data, pc);
}

int resolve_thread_count(int configured) {
    int threads = configured > 0 ? configured
                                 : static_cast<int>(std::thread::hardware_concurrency());
    if (threads < 1) threads = 1;
    if (const char* env = std::getenv("FEDADAPT_THREADS")) {
        const int cap = std::atoi(env);
        if (cap > 0) threads = std::min(threads, cap);
    }
    return threads;
}

FederatedRun::FederatedRun(const ExperimentConfig& cfg, uint64_t seed, const Model& base_model,
                           const Dataset& train, const Dataset& test)
    : cfg_(cfg), seed_(seed), train_(train), test_(test) {
    PartitionSpec spec = cfg_.partition;
    spec.seed = mix_seed(seed, 0x9a57);
    clients_ = make_partition(train_, spec);
    global_ = base_model.derive(cfg_.model.adapters_enabled, train_.num_classes);
    global_.init_domain(mix_seed(seed, 0xd03a1));
    base_bytes_ = base_checkpoint_bytes(global_.params());
    threads_ = resolve_thread_count(cfg_.run.threads);
}

RoundMetrics FederatedRun::run_round(int round_idx) {
    const auto started = std::chrono::steady_clock::now();
    RoundMetrics m;
    m.round = round_idx;

    SamplerConfig sampler;
    sampler.mode = cfg_.federated.setting == FedSetting::CrossSilo
                       ? SamplerConfig::Mode::All
                       : SamplerConfig::Mode::SampleWithReplacement;
    sampler.fraction = cfg_.federated.fraction;
    sampler.seed = mix_seed(seed_, 0x5ca1e);
    m.participants = sample_clients(static_cast<int>(clients_.size()), sampler, round_idx);

    LocalTrainConfig local;
    local.epochs = cfg_.effective_epochs();
    local.batch_size = cfg_.federated.batch_size;
    local.lr = cfg_.federated.lr.at(round_idx);
    local.momentum = cfg_.federated.momentum;
    local.weight_decay = cfg_.federated.weight_decay;
    local.prox_mu = cfg_.federated.prox_mu;
    local.algorithm = cfg_.federated.algorithm;

    const ParamSet global_domain = global_.params().domain_snapshot();
    const int64_t domain_bytes =
        static_cast<int64_t>(serialize_params(global_domain, PartitionFilter::DomainOnly).size());
    m.payload_down_bytes =
        static_cast<int64_t>(m.participants.size()) * domain_bytes +
        (round_idx == 0 ? base_bytes_ : 0);

    const uint64_t stream_seed = mix_seed(seed_, static_cast<uint64_t>(round_idx), 0x70cb);
    std::vector<RoundUpdate> updates(m.participants.size());
    parallel_for(static_cast<int>(m.participants.size()), threads_, [&](int i) {
        Model replica = global_.clone();
        updates[static_cast<size_t>(i)] =
            local_train(replica, global_domain, train_,
                        clients_[static_cast<size_t>(m.participants[static_cast<size_t>(i)])],
                        local, stream_seed);
    });

    double loss_sum = 0.0;
    bool any_invalid = false;
    for (const auto& u : updates) {
        loss_sum += u.train_loss;
        any_invalid = any_invalid || u.invalid;
        m.payload_up_bytes += static_cast<int64_t>(
            serialize_params(u.domain_params, PartitionFilter::DomainOnly).size());
    }
    m.train_loss = loss_sum / static_cast<double>(updates.size());

    AggregateOptions opts;
    opts.bn_local = cfg_.federated.bn_local;
    opts.fednova_naive_bn = cfg_.federated.fednova_naive_bn;
    ParamSet aggregated = cfg_.federated.algorithm == FedAlgorithm::FedNova
                              ? aggregate_fednova(global_domain, updates, opts)
                              : aggregate_fedavg(updates, opts, &global_domain);

    m.invalid = any_invalid || !aggregate_is_valid(aggregated);
    if (!m.invalid || cfg_.federated.invalid_policy == InvalidPolicy::Keep) {
        global_.params().install(aggregated);
    }
    // With REJECT the previous global DOMAIN stays in place.

    m.test_accuracy = evaluate(global_, test_);
    m.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                    std::chrono::steady_clock::now() - started)
                    .count();
    return m;
}

std::string metrics_csv_line(const RoundMetrics& m) {
    std::string participants;
    for (size_t i = 0; i < m.participants.size(); ++i) {
        if (i) participants += ';';
        participants += std::to_string(m.participants[i]);
    }
    return std::to_string(m.round) + "," + format_double(m.test_accuracy) + "," +
           format_double(m.train_loss) + "," + std::to_string(m.payload_up_bytes) + "," +
           std::to_string(m.payload_down_bytes) + "," + (m.invalid ? "1" : "0") + "," +
           std::to_string(m.wall_ms) + "," + participants;
}

void write_seed_csv(const std::string& path, const std::vector<RoundMetrics>& rounds) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw std::runtime_error(tmp + ": cannot open for writing");
        out << "round,accuracy,train_loss,payload_up,payload_down,invalid,wall_ms,participants\n";
        for (const auto& m : rounds) out << metrics_csv_line(m) << "\n";
        if (!out) throw std::runtime_error(tmp + ": write failed");
    }
    std::filesystem::rename(tmp, path);
}

ExperimentSummary run_experiment(const ExperimentConfig& cfg, std::ostream* log) {
    cfg.validate();
    std::filesystem::create_directories(cfg.run.output_dir);

    PreparedData data = prepare_data(cfg.data);
    // IDX sources dictate the real geometry only after loading.
    ExperimentConfig eff = cfg;
    eff.model.input_size = data.train.height();
    eff.model.input_channels = data.train.channels();
    Model base = prepare_base_model(eff, data.pretrain);

    ExperimentSummary summary;
    for (uint64_t seed : eff.run.seeds) {
        FederatedRun run(eff, seed, base, data.train, data.test);
        SeedResult result;
        result.seed = seed;
        for (int r = 0; r < eff.run.rounds; ++r) {
            result.rounds.push_back(run.run_round(r));
            if (log) {
                const auto& m = result.rounds.back();
                *log << "seed " << seed << " round " << m.round << " acc "
                     << format_double(m.test_accuracy) << " loss "
                     << format_double(m.train_loss) << (m.invalid ? " [invalid]" : "") << "\n";
            }
        }
        result.final_accuracy = result.rounds.back().test_accuracy;
        result.csv_path =
            (std::filesystem::path(cfg.run.output_dir) / ("seed_" + std::to_string(seed) + ".csv"))
                .string();
        write_seed_csv(result.csv_path, result.rounds);
        summary.per_seed.push_back(std::move(result));
    }

    const size_t n = summary.per_seed.size();
    double mean = 0.0;
    for (const auto& s : summary.per_seed) mean += s.final_accuracy;
    mean /= static_cast<double>(n);
    double var = 0.0;
    if (n > 1) {
        for (const auto& s : summary.per_seed) {
            var += (s.final_accuracy - mean) * (s.final_accuracy - mean);
        }
        var /= static_cast<double>(n - 1);
    }
    summary.mean_final = mean;
    summary.std_final = std::sqrt(var);
    summary.single_seed = n == 1;

    const std::string summary_path =
        (std::filesystem::path(cfg.run.output_dir) / "summary.csv").string();
    const std::string tmp = summary_path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw std::runtime_error(tmp + ": cannot open for writing");
        out << "seed,final_accuracy\n";
        for (const auto& s : summary.per_seed) {
            out << s.seed << "," << format_double(s.final_accuracy) << "\n";
        }
        out << "mean," << format_double(summary.mean_final) << "\n";
        out << "std," << format_double(summary.std_final) << "\n";
        if (summary.single_seed) out << "note,single-seed\n";
    }
    std::filesystem::rename(tmp, summary_path);
    return summary;
}

}  // namespace fedadapt
