// SPDX-License-Identifier: Apache-2.0
#include "fedadapt/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fedadapt {

namespace {

constexpr char kMagic[6] = {'F', 'D', 'A', 'P', 'T', '1'};

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<uint8_t>(v >> s));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int s = 0; s < 64; s += 8) out.push_back(static_cast<uint8_t>(v >> s));
}

class Reader {
public:
    Reader(const std::vector<uint8_t>& bytes, std::string context)
        : bytes_(bytes), context_(std::move(context)) {}

    size_t pos() const { return pos_; }

    void need(size_t n, const char* what) const {
        if (pos_ + n > bytes_.size()) {
            throw std::runtime_error(context_ + ": truncated reading " + what + " at offset " +
                                     std::to_string(pos_));
        }
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return bytes_[pos_++];
    }
    uint16_t u16(const char* what) {
        need(2, what);
        uint16_t v = static_cast<uint16_t>(bytes_[pos_]) |
                     static_cast<uint16_t>(bytes_[pos_ + 1]) << 8;
        pos_ += 2;
        return v;
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::string str(size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

private:
    const std::vector<uint8_t>& bytes_;
    std::string context_;
    size_t pos_ = 0;
};

}  // namespace

std::vector<uint8_t> serialize_params(const ParamSet& params, PartitionFilter filter) {
    std::vector<const std::pair<const std::string, ParamEntry>*> selected;
    for (const auto& kv : params.entries()) {
        if (filter == PartitionFilter::All || kv.second.partition == Partition::Domain) {
            selected.push_back(&kv);
        }
    }

    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + sizeof(kMagic));
    put_u32(out, static_cast<uint32_t>(selected.size()));

    uint64_t offset = 0;
    for (const auto* kv : selected) {
        const auto& [name, e] = *kv;
        if (name.size() > 0xffff) {
            throw std::invalid_argument("checkpoint: name too long: " + name);
        }
        put_u16(out, static_cast<uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(e.partition == Partition::Base ? 0 : 1);
        out.push_back(0);  // dtype f32
        out.push_back(static_cast<uint8_t>(e.tensor->rank()));
        for (int d : e.tensor->shape) put_u32(out, static_cast<uint32_t>(d));
        put_u64(out, offset);
        offset += static_cast<uint64_t>(e.tensor->numel()) * 4;
    }
    out.reserve(out.size() + offset);
    for (const auto* kv : selected) {
        for (float v : kv->second.tensor->data) {
            uint32_t bits;
            std::memcpy(&bits, &v, 4);
            put_u32(out, bits);
        }
    }
    return out;
}

ParamSet deserialize_params(const std::vector<uint8_t>& bytes, const std::string& context) {
    Reader r(bytes, context);
    if (r.str(sizeof(kMagic), "magic") != std::string(kMagic, sizeof(kMagic))) {
        throw std::runtime_error(context + ": bad magic, not a FDAPT1 checkpoint");
    }
    const uint32_t count = r.u32("entry count");

    struct Entry {
        std::string name;
        Partition partition;
        std::vector<int> shape;
        uint64_t offset;
        uint64_t bytes;
    };
    std::vector<Entry> manifest;
    manifest.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        Entry e;
        const uint16_t name_len = r.u16("name length");
        e.name = r.str(name_len, "name");
        const uint8_t tag = r.u8("partition tag");
        if (tag > 1) {
            throw std::runtime_error(context + ": unknown partition tag " +
                                     std::to_string(tag) + " for '" + e.name + "'");
        }
        e.partition = tag == 0 ? Partition::Base : Partition::Domain;
        const uint8_t dtype = r.u8("dtype");
        if (dtype != 0) {
            throw std::runtime_error(context + ": unknown dtype " + std::to_string(dtype) +
                                     " for '" + e.name + "' at offset " +
                                     std::to_string(r.pos() - 1));
        }
        const uint8_t rank = r.u8("rank");
        if (rank == 0 || rank > 8) {
            throw std::runtime_error(context + ": implausible rank " + std::to_string(rank) +
                                     " for '" + e.name + "'");
        }
        uint64_t numel = 1;
        for (uint8_t d = 0; d < rank; ++d) {
            const uint32_t extent = r.u32("extent");
            if (extent == 0 || extent > (1u << 28)) {
                throw std::runtime_error(context + ": implausible extent " +
                                         std::to_string(extent) + " for '" + e.name + "'");
            }
            e.shape.push_back(static_cast<int>(extent));
            numel *= extent;
        }
        e.offset = r.u64("payload offset");
        e.bytes = numel * 4;
        manifest.push_back(std::move(e));
    }

    const size_t payload_start = r.pos();
    const uint64_t payload_size = bytes.size() - payload_start;
    uint64_t declared = 0;
    for (const auto& e : manifest) declared += e.bytes;
    if (declared != payload_size) {
        throw std::runtime_error(context + ": payload is " + std::to_string(payload_size) +
                                 " bytes but the manifest declares " + std::to_string(declared));
    }
    std::vector<const Entry*> by_offset;
    for (const auto& e : manifest) by_offset.push_back(&e);
    std::sort(by_offset.begin(), by_offset.end(),
              [](const Entry* a, const Entry* b) { return a->offset < b->offset; });
    uint64_t cursor = 0;
    for (const Entry* e : by_offset) {
        if (e->offset < cursor || e->offset + e->bytes > payload_size) {
            throw std::runtime_error(context + ": overlapping or out-of-range payload region for '" +
                                     e->name + "' at offset " + std::to_string(e->offset));
        }
        cursor = e->offset + e->bytes;
    }

    ParamSet out;
    for (const auto& e : manifest) {
        auto t = Tensor::create(e.shape);
        const uint8_t* src = bytes.data() + payload_start + e.offset;
        for (size_t i = 0; i < t->data.size(); ++i) {
            uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) {
                bits |= static_cast<uint32_t>(src[i * 4 + b]) << (8 * b);
            }
            std::memcpy(&t->data[i], &bits, 4);
        }
        bool trainable, decay;
        infer_param_flags(e.name, &trainable, &decay);
        const bool frozen = e.partition == Partition::Base;
        t->requires_grad = trainable && !frozen;
        out.add(e.name, std::move(t), e.partition, trainable && !frozen, decay);
    }
    return out;
}

int64_t save_checkpoint(const ParamSet& params, PartitionFilter filter,
                        const std::string& path) {
    const auto bytes = serialize_params(params, filter);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error(path + ": write failed");
    return static_cast<int64_t>(bytes.size());
}

ParamSet load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error(path + ": cannot open");
    const auto size = in.tellg();
    in.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    if (!in.read(reinterpret_cast<char*>(bytes.data()), size)) {
        throw std::runtime_error(path + ": read failed");
    }
    return deserialize_params(bytes, path);
}

}  // namespace fedadapt
