// SPDX-License-Identifier: Apache-2.0
//
// fedadapt command line: federated training runs, partition and payload
// reports, checkpoint folding and the gradient-check suite.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "fedadapt/checkpoint.hpp"
#include "fedadapt/config.hpp"
#include "fedadapt/gradcheck.hpp"
#include "fedadapt/orchestrator.hpp"

namespace {

using namespace fedadapt;

constexpr int kExitRuntime = 1;
constexpr int kExitBadConfig = 2;

ExperimentConfig load_or_die(const std::string& path, bool log_defaults) {
    std::vector<std::string> defaults;
    ExperimentConfig cfg = load_config(path, &defaults);
    if (log_defaults) {
        for (const auto& d : defaults) std::cerr << "config: " << d << "\n";
    }
    return cfg;
}

int cmd_run(const std::string& config_path, bool quiet) {
    ExperimentConfig cfg;
    try {
        cfg = load_or_die(config_path, !quiet);
        cfg.validate();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadConfig;
    }
    try {
        ExperimentSummary summary = run_experiment(cfg, quiet ? nullptr : &std::cerr);
        std::printf("final accuracy per seed:\n");
        for (const auto& s : summary.per_seed) {
            std::printf("  seed %llu: %.4f  (%s)\n",
                        static_cast<unsigned long long>(s.seed), s.final_accuracy,
                        s.csv_path.c_str());
        }
        std::printf("mean %.4f  std %.4f%s\n", summary.mean_final, summary.std_final,
                    summary.single_seed ? "  (single seed)" : "");
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

int cmd_partition_report(const std::string& config_path) {
    ExperimentConfig cfg;
    try {
        cfg = load_or_die(config_path, false);
        cfg.validate();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadConfig;
    }
    try {
        PreparedData data = prepare_data(cfg.data);
        for (uint64_t seed : cfg.run.seeds) {
            PartitionSpec spec = cfg.partition;
            spec.seed = mix_seed(seed, 0x9a57);
            auto parts = make_partition(data.train, spec);
            auto hist = partition_histogram(data.train, parts);
            std::printf("seed %llu, %s, %d clients, %d classes\n",
                        static_cast<unsigned long long>(seed),
                        to_string(cfg.partition.strategy).c_str(),
                        static_cast<int>(parts.size()), data.train.num_classes);
            std::printf("%-8s", "client");
            for (int k = 0; k < data.train.num_classes; ++k) std::printf("%7d", k);
            std::printf("%8s\n", "total");
            for (size_t j = 0; j < hist.size(); ++j) {
                std::printf("%-8zu", j);
                int total = 0;
                for (int v : hist[j]) {
                    std::printf("%7d", v);
                    total += v;
                }
                if (parts[j].noise_var > 0.0) {
                    std::printf("%8d  (noise var %.4f)\n", total, parts[j].noise_var);
                } else {
                    std::printf("%8d\n", total);
                }
            }
            std::printf("\n");
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

int cmd_payload_report(const std::string& config_path) {
    ExperimentConfig cfg;
    try {
        cfg = load_or_die(config_path, false);
        cfg.validate();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadConfig;
    }
    try {
        ModelConfig mc = cfg.model;
        mc.adapters_enabled = true;
        Model m = Model::build(mc, 0);
        const auto counts = m.count_params();
        const auto views = m.domain_views();
        const auto full = serialize_params(m.params(), PartitionFilter::All);
        const auto domain = serialize_params(m.params(), PartitionFilter::DomainOnly);
        std::printf("base parameters:        %lld\n", static_cast<long long>(counts.base));
        std::printf("domain (transmitted):   %lld\n", static_cast<long long>(views.transmitted));
        std::printf("domain (formula view):  %lld  (excludes running statistics)\n",
                    static_cast<long long>(views.formula));
        std::printf("full checkpoint:        %zu bytes\n", full.size());
        std::printf("domain-only checkpoint: %zu bytes\n", domain.size());
        std::printf("payload ratio:          %.3f\n", m.payload_ratio());
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

int cmd_fold(const std::string& in_path, const std::string& out_path) {
    try {
        ParamSet params = load_checkpoint(in_path);
        ParamSet folded = fold_adapter_checkpoint(params);
        const int64_t bytes = save_checkpoint(folded, PartitionFilter::All, out_path);
        std::printf("folded %zu tensors into %s (%lld bytes)\n", folded.size(),
                    out_path.c_str(), static_cast<long long>(bytes));
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

int cmd_gradcheck(int instances, uint64_t seed) {
    try {
        bool ok = true;
        for (const auto& r : run_gradient_suite(instances, seed)) {
            std::printf("%-22s max rel error %.3e  (tol %.0e, %d instances)  %s\n",
                        r.op.c_str(), r.max_rel_error, r.tolerance, r.instances,
                        r.pass ? "ok" : "FAIL");
            ok = ok && r.pass;
        }
        return ok ? 0 : kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fedadapt: federated training of adapter-parameterized convnets"};
    app.require_subcommand(1);

    std::string config_path;
    bool quiet = false;
    auto* run = app.add_subcommand("run", "run a federated experiment from a config file");
    run->add_option("config", config_path, "experiment config")->required();
    run->add_flag("-q,--quiet", quiet, "suppress per-round progress and default logging");

    std::string part_config;
    auto* part = app.add_subcommand("partition-report",
                                    "print per-client class histograms for each seed");
    part->add_option("config", part_config, "experiment config")->required();

    std::string payload_config;
    auto* payload = app.add_subcommand("payload-report",
                                       "print parameter counts, both counting views and "
                                       "serialized checkpoint sizes");
    payload->add_option("config", payload_config, "experiment config")->required();

    std::string fold_in, fold_out;
    auto* fold = app.add_subcommand("fold", "fold adapters into base kernels in a checkpoint");
    fold->add_option("input", fold_in, "checkpoint with adapters")->required();
    fold->add_option("output", fold_out, "folded checkpoint")->required();

    int gc_instances = 50;
    uint64_t gc_seed = 2024;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gc->add_option("--instances", gc_instances, "random instances per op");
    gc->add_option("--seed", gc_seed, "suite seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitBadConfig;
    }

    if (run->parsed()) return cmd_run(config_path, quiet);
    if (part->parsed()) return cmd_partition_report(part_config);
    if (payload->parsed()) return cmd_payload_report(payload_config);
    if (fold->parsed()) return cmd_fold(fold_in, fold_out);
    if (gc->parsed()) return cmd_gradcheck(gc_instances, gc_seed);
    return kExitBadConfig;
}
