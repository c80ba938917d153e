#pragma once

// Checkpoint container: architecture manifest + component-partitioned
// generator tensors + discriminator + cached w_mean + lineage, serialized as
// a JSON header followed by a raw little-endian float32 payload with a CRC32
// trailer. Optional training state (optimizer moments, step counters) makes
// resume-from-snapshot bit-exact.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stylealign/arch.hpp"
#include "stylealign/tensor.hpp"

namespace stylealign {

constexpr uint32_t kCheckpointVersion = 1;

struct LineageEntry {
    std::string domain_id;
    uint64_t seed = 0;
    int64_t epochs = 0;
    std::string kind;  // "scratch", "finetune", "resolution"
};

struct LineageRecord {
    std::vector<LineageEntry> chain;
    std::vector<std::string> annotations;  // e.g. component-reset provenance

    bool valid() const { return !chain.empty() && chain.front().kind == "scratch"; }

    // True when this record's chain is a proper prefix of `other`'s.
    bool parent_of(const LineageRecord& other) const {
        if (chain.size() >= other.chain.size()) return false;
        for (size_t i = 0; i < chain.size(); ++i) {
            const auto& a = chain[i];
            const auto& b = other.chain[i];
            if (a.domain_id != b.domain_id || a.seed != b.seed || a.epochs != b.epochs ||
                a.kind != b.kind)
                return false;
        }
        return true;
    }
    bool child_of(const LineageRecord& other) const { return other.parent_of(*this); }
};

struct TrainState {
    NamedTensors<float> tensors;  // optimizer moments, "g." / "d." prefixed
    int64_t step_g = 0;
    int64_t step_d = 0;
};

struct Checkpoint {
    ArchManifest manifest;
    PartitionedWeights<float> generator;
    NamedTensors<float> discriminator;
    Tensor<float> w_mean;  // [Dw], estimated at save time
    LineageRecord lineage;
    int64_t epoch = 0;
    std::optional<TrainState> train_state;

    Checkpoint clone() const {
        Checkpoint c;
        c.manifest = manifest;
        c.generator = generator.clone();
        c.discriminator = discriminator.clone();
        c.w_mean = w_mean.clone();
        c.lineage = lineage;
        c.epoch = epoch;
        if (train_state) {
            TrainState ts;
            ts.tensors = train_state->tensors.clone();
            ts.step_g = train_state->step_g;
            ts.step_d = train_state->step_d;
            c.train_state = std::move(ts);
        }
        return c;
    }
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Generic container for auxiliary nets (embedder, encoders): JSON metadata +
// named float32 tensors, same checksum discipline as checkpoints.
void save_named_tensors(const std::string& path, const NamedTensors<float>& tensors,
                        const std::string& meta_json);
std::pair<NamedTensors<float>, std::string> load_named_tensors(const std::string& path);

// JSON round-trip for the manifest (manifest.cpp).
std::string manifest_to_json(const ArchManifest& m);
ArchManifest manifest_from_json(const std::string& json);

} // namespace stylealign
