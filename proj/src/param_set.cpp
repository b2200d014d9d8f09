// SPDX-License-Identifier: Apache-2.0
#include "fedadapt/param_set.hpp"

#include <cstring>
#include <stdexcept>

namespace fedadapt {

void ParamSet::add(const std::string& name, TensorPtr tensor, Partition partition,
                   bool trainable, bool decay) {
    if (entries_.count(name)) {
        throw std::invalid_argument("param set: duplicate name '" + name + "'");
    }
    entries_[name] = ParamEntry{std::move(tensor), partition, trainable, decay};
}

const ParamEntry& ParamSet::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw std::invalid_argument("param set: unknown name '" + name + "'");
    }
    return it->second;
}

ParamSet ParamSet::clone() const {
    ParamSet out;
    for (const auto& [name, e] : entries_) {
        out.entries_[name] = ParamEntry{e.tensor->clone(), e.partition, e.trainable, e.decay};
    }
    return out;
}

ParamSet ParamSet::domain_snapshot() const {
    ParamSet out;
    for (const auto& [name, e] : entries_) {
        if (e.partition == Partition::Domain) {
            out.entries_[name] = ParamEntry{e.tensor->clone(), e.partition, e.trainable, e.decay};
        }
    }
    return out;
}

void ParamSet::install(const ParamSet& src) {
    for (const auto& [name, e] : src.entries_) {
        auto it = entries_.find(name);
        if (it == entries_.end()) {
            throw std::invalid_argument("param set: install of unknown name '" + name + "'");
        }
        if (it->second.tensor->shape != e.tensor->shape) {
            throw std::invalid_argument("param set: shape mismatch installing '" + name + "': " +
                                        it->second.tensor->shape_str() + " vs " +
                                        e.tensor->shape_str());
        }
        it->second.tensor->data = e.tensor->data;
    }
}

void ParamSet::zero_grads() {
    for (auto& [name, e] : entries_) {
        e.tensor->zero_grad();
    }
}

int64_t ParamSet::count(Partition partition) const {
    int64_t n = 0;
    for (const auto& [name, e] : entries_) {
        if (e.partition == partition) n += e.tensor->numel();
    }
    return n;
}

bool ParamSet::same_names(const ParamSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    auto a = entries_.begin();
    auto b = other.entries_.begin();
    for (; a != entries_.end(); ++a, ++b) {
        if (a->first != b->first) return false;
    }
    return true;
}

bool ParamSet::all_finite() const {
    for (const auto& [name, e] : entries_) {
        if (!e.tensor->all_finite()) return false;
    }
    return true;
}

uint64_t ParamSet::checksum(Partition partition) const {
    uint64_t h = 1469598103934665603ULL;
    for (const auto& [name, e] : entries_) {
        if (e.partition != partition) continue;
        for (float v : e.tensor->data) {
            uint32_t bits;
            std::memcpy(&bits, &v, sizeof(bits));
            for (int s = 0; s < 32; s += 8) {
                h ^= (bits >> s) & 0xffu;
                h *= 1099511628211ULL;
            }
        }
    }
    return h;
}

void infer_param_flags(const std::string& name, bool* trainable, bool* decay) {
    auto ends_with = [&name](const char* suffix) {
        const size_t n = std::strlen(suffix);
        return name.size() >= n && name.compare(name.size() - n, n, suffix) == 0;
    };
    *trainable = !(ends_with(".running_mean") || ends_with(".running_var"));
    *decay = !(ends_with(".gamma") || ends_with(".beta") || !*trainable);
}

}  // namespace fedadapt
