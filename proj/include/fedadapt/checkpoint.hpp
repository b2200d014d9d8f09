// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedadapt/param_set.hpp"

namespace fedadapt {

enum class PartitionFilter { All, DomainOnly };

// Checkpoint layout (all integers little-endian regardless of host):
//   magic "FDAPT1"
//   u32 entry count
//   per entry: u16 name length, name bytes, u8 partition tag (0 base /
//     1 domain), u8 dtype (0 = f32), u8 rank, u32 extents[rank],
//     u64 offset into the payload region
//   payload: f32 arrays back-to-back in manifest order
std::vector<uint8_t> serialize_params(const ParamSet& params, PartitionFilter filter);
ParamSet deserialize_params(const std::vector<uint8_t>& bytes, const std::string& context);

// Returns the exact byte count written; payload accounting uses it.
int64_t save_checkpoint(const ParamSet& params, PartitionFilter filter,
                        const std::string& path);
ParamSet load_checkpoint(const std::string& path);

}  // namespace fedadapt
