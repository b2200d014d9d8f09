// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedadapt/tensor.hpp"

namespace fedadapt {

// BASE tensors are the frozen, shared backbone; DOMAIN tensors are trainable
// and travel in every communication round.
enum class Partition { Base, Domain };

struct ParamEntry {
    TensorPtr tensor;
    Partition partition = Partition::Domain;
    bool trainable = true;  // false for running statistics
    bool decay = true;      // false for batch-norm parameters
};

// Named tensor collection, ordered by name so every walk is deterministic.
class ParamSet {
public:
    void add(const std::string& name, TensorPtr tensor, Partition partition,
             bool trainable = true, bool decay = true);

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    const ParamEntry& at(const std::string& name) const;
    TensorPtr tensor(const std::string& name) const { return at(name).tensor; }

    const std::map<std::string, ParamEntry>& entries() const { return entries_; }
    std::map<std::string, ParamEntry>& entries() { return entries_; }
    size_t size() const { return entries_.size(); }

    ParamSet clone() const;
    // Deep copy of the DOMAIN partition only.
    ParamSet domain_snapshot() const;
    // Copies values from `src` into same-named tensors; every name in `src`
    // must exist here with a matching shape.
    void install(const ParamSet& src);

    void zero_grads();
    int64_t count(Partition partition) const;
    bool same_names(const ParamSet& other) const;
    bool all_finite() const;
    // FNV-1a over the raw bytes of the selected partition, for freeze checks.
    uint64_t checksum(Partition partition) const;

private:
    std::map<std::string, ParamEntry> entries_;
};

// Reconstructs trainable/decay flags from the naming convention; used when a
// checkpoint (which stores only name and partition) is loaded.
void infer_param_flags(const std::string& name, bool* trainable, bool* decay);

}  // namespace fedadapt
