#pragma once

// Adversarial training: non-saturating loss with lazy R1 regularization,
// deterministic single-order gradient accumulation, epoch snapshots that
// resume bit-exactly, and lineage-tracked fine-tuning / resolution transfer.

#include <functional>
#include <optional>
#include <string>

#include "stylealign/checkpoint.hpp"
#include "stylealign/config.hpp"
#include "stylealign/discriminator.hpp"
#include "stylealign/domains.hpp"
#include "stylealign/generator.hpp"

namespace stylealign {

struct TrainConfig {
    int64_t epochs = 8;
    int64_t batch = 32;
    double lr = 2e-3;
    double r1_gamma = 1.0;
    int64_t r1_interval = 16;
    int64_t snapshot_interval = 0;  // in epochs; 0 disables snapshots
    std::string snapshot_dir;
    uint64_t seed = 1;
    int64_t max_steps_per_epoch = 0;  // 0 = full epoch; tests cap this
    bool verbose = false;

    static TrainConfig from_config(Config& cfg);
};

// Random-init checkpoint for a domain (epoch 0 scratch lineage).
Checkpoint init_checkpoint(const ArchManifest& m, uint64_t seed, const std::string& domain_id);

Checkpoint train_from_scratch(const FactorDataset& ds, const TrainConfig& cfg);

// Full fine-tuning of every component; extends the lineage chain. Zero
// epochs returns the parent weights with the lineage entry appended.
Checkpoint fine_tune(const Checkpoint& parent, const FactorDataset& ds, const TrainConfig& cfg);

// Continues an interrupted run from a snapshot (requires train_state);
// bit-exact with the uninterrupted run for the same seed.
Checkpoint resume_training(const Checkpoint& snapshot, const FactorDataset& ds,
                           const TrainConfig& cfg);

// Drops levels above new_res and reuses the parent's remaining tensors; the
// discriminator restarts from random init at the new resolution.
Checkpoint resolution_transfer_init(const Checkpoint& parent, int new_res, uint64_t seed);
Checkpoint resolution_transfer(const Checkpoint& parent, int new_res, const FactorDataset& ds,
                               const TrainConfig& cfg);

// ---------------------------------------------------------------- bridges

Generator<Real> make_generator(const Checkpoint& ckpt);
Discriminator<Real> make_discriminator(const Checkpoint& ckpt);

// Decode z codes through a checkpoint (truncation applied in W).
ImageBatch generate_batch(const Checkpoint& ckpt, const Tensor<Real>& z, double psi);

// Decode a W+ stack through a checkpoint's synthesis path.
ImageBatch generate_wplus(const Checkpoint& ckpt, const LatentWPlus& wp);

} // namespace stylealign
