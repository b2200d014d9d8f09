// SPDX-License-Identifier: Apache-2.0
#include "fedadapt/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace fedadapt {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct Ctx {
    std::string origin;
    int line = 0;

    [[noreturn]] void fail(const std::string& msg) const {
        throw ConfigError(origin + ":" + std::to_string(line) + ": " + msg);
    }
};

int parse_int(const Ctx& c, const std::string& v) {
    try {
        size_t used = 0;
        const int r = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        c.fail("expected integer, got '" + v + "'");
    }
}

uint64_t parse_u64(const Ctx& c, const std::string& v) {
    try {
        // stoull accepts a leading '-' and wraps; reject it explicitly.
        if (v.empty() || v[0] == '-') throw std::invalid_argument("");
        size_t used = 0;
        const unsigned long long r = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return static_cast<uint64_t>(r);
    } catch (...) {
        c.fail("expected non-negative integer, got '" + v + "'");
    }
}

double parse_double(const Ctx& c, const std::string& v) {
    try {
        size_t used = 0;
        const double r = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        c.fail("expected number, got '" + v + "'");
    }
}

bool parse_bool(const Ctx& c, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    c.fail("expected boolean (true/false), got '" + v + "'");
}

std::vector<std::string> split(const std::string& v, char sep) {
    std::vector<std::string> parts;
    std::istringstream in(v);
    std::string item;
    while (std::getline(in, item, sep)) parts.push_back(trim(item));
    return parts;
}

std::vector<int> parse_int_list(const Ctx& c, const std::string& v) {
    std::vector<int> out;
    for (const auto& p : split(v, ',')) out.push_back(parse_int(c, p));
    if (out.empty()) c.fail("expected a comma-separated integer list");
    return out;
}

std::vector<uint64_t> parse_u64_list(const Ctx& c, const std::string& v) {
    std::vector<uint64_t> out;
    for (const auto& p : split(v, ',')) out.push_back(parse_u64(c, p));
    if (out.empty()) c.fail("expected a comma-separated seed list");
    return out;
}

std::vector<std::pair<int, float>> parse_lr_drops(const Ctx& c, const std::string& v) {
    std::vector<std::pair<int, float>> out;
    if (trim(v) == "none" || trim(v).empty()) return out;
    for (const auto& p : split(v, ',')) {
        const auto colon = p.find(':');
        if (colon == std::string::npos) {
            c.fail("expected round:lr pairs like '30:0.01', got '" + p + "'");
        }
        out.emplace_back(parse_int(c, trim(p.substr(0, colon))),
                         static_cast<float>(parse_double(c, trim(p.substr(colon + 1)))));
    }
    return out;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin,
                                   std::vector<std::string>* defaults_log) {
    ExperimentConfig cfg;
    Ctx ctx{origin, 0};

    using Setter = std::function<void(const Ctx&, const std::string&)>;
    std::map<std::string, std::map<std::string, Setter>> schema;

    auto& model = schema["model"];
    model["stage_widths"] = [&](const Ctx& c, const std::string& v) {
        cfg.model.stage_widths = parse_int_list(c, v);
    };
    model["blocks_per_stage"] = [&](const Ctx& c, const std::string& v) {
        cfg.model.blocks_per_stage = parse_int(c, v);
    };
    model["input_channels"] = [&](const Ctx& c, const std::string& v) {
        cfg.model.input_channels = parse_int(c, v);
    };
    model["adapters"] = [&](const Ctx& c, const std::string& v) {
        cfg.model.adapters_enabled = parse_bool(c, v);
    };

    auto& data = schema["data"];
    data["source"] = [&](const Ctx& c, const std::string& v) {
        if (v == "synthetic") cfg.data.source = DataConfig::Source::Synthetic;
        else if (v == "idx") cfg.data.source = DataConfig::Source::Idx;
        else c.fail("source must be 'synthetic' or 'idx', got '" + v + "'");
    };
    data["classes"] = [&](const Ctx& c, const std::string& v) {
        cfg.data.num_classes = parse_int(c, v);
    };
    data["samples_per_class"] = [&](const Ctx& c, const std::string& v) {
        cfg.data.samples_per_class = parse_int(c, v);
    };
    data["image_size"] = [&](const Ctx& c, const std::string& v) {
        cfg.data.image_size = parse_int(c, v);
    };
    data["noise"] = [&](const Ctx& c, const std::string& v) {
        cfg.data.noise = static_cast<float>(parse_double(c, v));
    };
    data["data_seed"] = [&](const Ctx& c, const std::string& v) {
        cfg.data.data_seed = parse_u64(c, v);
    };
    data["test_fraction"] = [&](const Ctx& c, const std::string& v) {
        cfg.data.test_fraction = parse_double(c, v);
    };
    data["idx_images"] = [&](const Ctx&, const std::string& v) { cfg.data.idx_images = v; };
    data["idx_labels"] = [&](const Ctx&, const std::string& v) { cfg.data.idx_labels = v; };
    data["idx_test_images"] = [&](const Ctx&, const std::string& v) {
        cfg.data.idx_test_images = v;
    };
    data["idx_test_labels"] = [&](const Ctx&, const std::string& v) {
        cfg.data.idx_test_labels = v;
    };
    data["pretrain_holdout"] = [&](const Ctx& c, const std::string& v) {
        cfg.data.pretrain_holdout = parse_double(c, v);
    };
    data["pretrain_classes"] = [&](const Ctx& c, const std::string& v) {
        cfg.data.pretrain_classes = parse_int(c, v);
    };
    data["pretrain_samples_per_class"] = [&](const Ctx& c, const std::string& v) {
        cfg.data.pretrain_samples_per_class = parse_int(c, v);
    };
    data["pretrain_seed"] = [&](const Ctx& c, const std::string& v) {
        cfg.data.pretrain_seed = parse_u64(c, v);
    };
    data["pretrain_epochs"] = [&](const Ctx& c, const std::string& v) {
        cfg.data.pretrain_epochs = parse_int(c, v);
    };
    data["pretrain_lr"] = [&](const Ctx& c, const std::string& v) {
        cfg.data.pretrain_lr = static_cast<float>(parse_double(c, v));
    };

    auto& part = schema["partition"];
    part["strategy"] = [&](const Ctx& c, const std::string& v) {
        if (v == "quantity_label") cfg.partition.strategy = PartitionStrategy::QuantityLabel;
        else if (v == "dirichlet_label") cfg.partition.strategy = PartitionStrategy::DirichletLabel;
        else if (v == "feature_noise") cfg.partition.strategy = PartitionStrategy::FeatureNoise;
        else if (v == "homogeneous") cfg.partition.strategy = PartitionStrategy::Homogeneous;
        else c.fail("unknown partition strategy '" + v + "'");
    };
    part["clients"] = [&](const Ctx& c, const std::string& v) {
        cfg.partition.clients = parse_int(c, v);
    };
    part["labels_per_client"] = [&](const Ctx& c, const std::string& v) {
        cfg.partition.labels_per_client = parse_int(c, v);
    };
    part["beta"] = [&](const Ctx& c, const std::string& v) {
        cfg.partition.beta = parse_double(c, v);
    };
    part["sigma"] = [&](const Ctx& c, const std::string& v) {
        cfg.partition.sigma = parse_double(c, v);
    };
    part["bake_noise"] = [&](const Ctx& c, const std::string& v) {
        cfg.partition.bake_noise = parse_bool(c, v);
    };

    auto& fed = schema["federated"];
    fed["algorithm"] = [&](const Ctx& c, const std::string& v) {
        if (v == "fedavg") cfg.federated.algorithm = FedAlgorithm::FedAvg;
        else if (v == "fedprox") cfg.federated.algorithm = FedAlgorithm::FedProx;
        else if (v == "fednova") cfg.federated.algorithm = FedAlgorithm::FedNova;
        else c.fail("algorithm must be fedavg, fedprox or fednova, got '" + v + "'");
    };
    fed["setting"] = [&](const Ctx& c, const std::string& v) {
        if (v == "cross_silo") cfg.federated.setting = FedSetting::CrossSilo;
        else if (v == "cross_device") cfg.federated.setting = FedSetting::CrossDevice;
        else c.fail("setting must be cross_silo or cross_device, got '" + v + "'");
    };
    fed["fraction"] = [&](const Ctx& c, const std::string& v) {
        cfg.federated.fraction = parse_double(c, v);
    };
    fed["local_epochs"] = [&](const Ctx& c, const std::string& v) {
        cfg.federated.local_epochs = parse_int(c, v);
    };
    fed["batch_size"] = [&](const Ctx& c, const std::string& v) {
        cfg.federated.batch_size = parse_int(c, v);
    };
    fed["lr"] = [&](const Ctx& c, const std::string& v) {
        cfg.federated.lr.initial = static_cast<float>(parse_double(c, v));
    };
    fed["lr_drops"] = [&](const Ctx& c, const std::string& v) {
        cfg.federated.lr.drops = parse_lr_drops(c, v);
    };
    fed["momentum"] = [&](const Ctx& c, const std::string& v) {
        cfg.federated.momentum = static_cast<float>(parse_double(c, v));
    };
    fed["weight_decay"] = [&](const Ctx& c, const std::string& v) {
        cfg.federated.weight_decay = static_cast<float>(parse_double(c, v));
    };
    fed["prox_mu"] = [&](const Ctx& c, const std::string& v) {
        cfg.federated.prox_mu = static_cast<float>(parse_double(c, v));
    };
    fed["bn_local"] = [&](const Ctx& c, const std::string& v) {
        if (v == "off") cfg.federated.bn_local = BnLocalMode::Off;
        else if (v == "stats") cfg.federated.bn_local = BnLocalMode::Stats;
        else if (v == "stats_affine") cfg.federated.bn_local = BnLocalMode::StatsAndAffine;
        else c.fail("bn_local must be off, stats or stats_affine, got '" + v + "'");
    };
    fed["fednova_naive_bn"] = [&](const Ctx& c, const std::string& v) {
        cfg.federated.fednova_naive_bn = parse_bool(c, v);
    };
    fed["invalid_policy"] = [&](const Ctx& c, const std::string& v) {
        if (v == "reject") cfg.federated.invalid_policy = InvalidPolicy::Reject;
        else if (v == "keep") cfg.federated.invalid_policy = InvalidPolicy::Keep;
        else c.fail("invalid_policy must be reject or keep, got '" + v + "'");
    };

    auto& run = schema["run"];
    run["rounds"] = [&](const Ctx& c, const std::string& v) {
        cfg.run.rounds = parse_int(c, v);
    };
    run["seeds"] = [&](const Ctx& c, const std::string& v) {
        cfg.run.seeds = parse_u64_list(c, v);
    };
    run["output_dir"] = [&](const Ctx&, const std::string& v) { cfg.run.output_dir = v; };
    run["threads"] = [&](const Ctx& c, const std::string& v) {
        cfg.run.threads = parse_int(c, v);
    };

    std::set<std::string> seen;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    while (std::getline(in, raw)) {
        ++ctx.line;
        const auto comment = raw.find_first_of("#;");
        std::string line = trim(comment == std::string::npos ? raw : raw.substr(0, comment));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') ctx.fail("unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!schema.count(section)) ctx.fail("unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) ctx.fail("expected 'key = value', got '" + line + "'");
        if (section.empty()) ctx.fail("key outside of any section");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        auto& keys = schema[section];
        auto it = keys.find(key);
        if (it == keys.end()) ctx.fail("unknown key '" + key + "' in section [" + section + "]");
        const std::string full = section + "." + key;
        if (!seen.insert(full).second) ctx.fail("duplicate key '" + full + "'");
        it->second(ctx, value);
    }

    // Synthetic runs size the model directly from the data section.
    if (cfg.data.source == DataConfig::Source::Synthetic) {
        cfg.model.num_classes = cfg.data.num_classes;
        cfg.model.input_size = cfg.data.image_size;
    }

    if (defaults_log) {
        for (const auto& [sec, keys] : schema) {
            for (const auto& [key, setter] : keys) {
                if (!seen.count(sec + "." + key)) {
                    defaults_log->push_back(sec + "." + key + " (default)");
                }
            }
        }
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path, std::vector<std::string>* defaults_log) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open config file");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path, defaults_log);
}

}  // namespace fedadapt
