#include "stylealign/train.hpp"

#include <cstdio>
#include <filesystem>

#include "stylealign/ops.hpp"

namespace stylealign {

namespace fs = std::filesystem;

TrainConfig TrainConfig::from_config(Config& cfg) {
    TrainConfig tc;
    tc.epochs = cfg.get_int("epochs", tc.epochs);
    tc.batch = cfg.get_int("batch", tc.batch);
    tc.lr = cfg.get_double("lr", tc.lr);
    tc.r1_gamma = cfg.get_double("r1_gamma", tc.r1_gamma);
    tc.r1_interval = cfg.get_int("r1_interval", tc.r1_interval);
    tc.snapshot_interval = cfg.get_int("snapshot_interval", tc.snapshot_interval);
    tc.seed = cfg.get_u64("seed", tc.seed);
    tc.max_steps_per_epoch = cfg.get_int("max_steps_per_epoch", tc.max_steps_per_epoch);
    tc.verbose = cfg.get_bool("verbose", tc.verbose);
    return tc;
}

namespace {

Checkpoint snapshot_state(Generator<Real>& g, Discriminator<Real>& d, const LineageRecord& lin,
                          int64_t epoch, Adam<Real>* opt_g, Adam<Real>* opt_d) {
    Checkpoint ckpt;
    ckpt.manifest = g.manifest();
    ckpt.generator = g.weights_snapshot();
    ckpt.discriminator = d.snapshot();
    ckpt.w_mean = g.estimate_w_mean();
    ckpt.lineage = lin;
    ckpt.epoch = epoch;
    if (opt_g && opt_d) {
        TrainState ts;
        for (auto& [name, t] : opt_g->named_state()) ts.tensors.put("g." + name, t.clone());
        for (auto& [name, t] : opt_d->named_state()) ts.tensors.put("d." + name, t.clone());
        ts.step_g = opt_g->step_count();
        ts.step_d = opt_d->step_count();
        ckpt.train_state = std::move(ts);
    }
    return ckpt;
}

// The core loop. Runs epochs [start_epoch, cfg.epochs) over ds with streams
// keyed by (seed, epoch, step), so a resumed run replays identically.
Checkpoint run_training(Generator<Real>& g, Discriminator<Real>& d, LineageRecord lineage,
                        int64_t start_epoch, const FactorDataset& ds, const TrainConfig& cfg,
                        const TrainState* restore) {
    Adam<Real> opt_g(cfg.lr, 0.0, 0.99);
    Adam<Real> opt_d(cfg.lr, 0.0, 0.99);
    opt_g.attach(g.params());
    opt_d.attach(d.params());
    if (restore) {
        std::unordered_map<std::string, Tensor<Real>> gstate, dstate;
        for (const auto& name : restore->tensors.order) {
            const auto& t = restore->tensors.tensors.at(name);
            if (name.rfind("g.", 0) == 0) gstate[name.substr(2)] = t.cast<Real>();
            else if (name.rfind("d.", 0) == 0) dstate[name.substr(2)] = t.cast<Real>();
        }
        opt_g.load_state(gstate, restore->step_g);
        opt_d.load_state(dstate, restore->step_d);
    }

    const int64_t n = ds.size();
    if (n < cfg.batch) throw std::invalid_argument("training: dataset smaller than one batch");
    ImageBatch data = stack_images(ds.images);
    const int64_t res = ds.resolution;
    int64_t steps_per_epoch = n / cfg.batch;
    if (cfg.max_steps_per_epoch > 0)
        steps_per_epoch = std::min(steps_per_epoch, cfg.max_steps_per_epoch);

    const int L = g.manifest().num_style_layers();
    int64_t global_step = start_epoch * steps_per_epoch;

    for (int64_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = Rng::keyed(cfg.seed, {rng_tag::shuffle, static_cast<uint64_t>(epoch)});
        auto perm = shuffle_rng.permutation(n);
        double epoch_loss_d = 0, epoch_loss_g = 0;

        for (int64_t step = 0; step < steps_per_epoch; ++step, ++global_step) {
            // Assemble the real batch in permutation order.
            ImageBatch real({cfg.batch, 3, res, res});
            const int64_t per = 3 * res * res;
            for (int64_t b = 0; b < cfg.batch; ++b) {
                const int64_t src = perm[(step * cfg.batch + b) % n];
                std::copy(data.data() + src * per, data.data() + (src + 1) * per,
                          real.data() + b * per);
            }

            // ------------------------------------------------ critic update
            Tensor<Real> zd({cfg.batch, g.manifest().dz});
            Rng::keyed(cfg.seed, {rng_tag::sample_z, static_cast<uint64_t>(epoch),
                                  static_cast<uint64_t>(step), 0})
                .fill_normal(zd);
            ImageBatch fake;
            {
                NoGradGuard ng(false);
                std::vector<Var<Real>> wp(static_cast<size_t>(L), g.map_z(make_const(zd)));
                fake = g.synthesize(g.affine_styles(wp))->value;
            }
            auto x_real = make_leaf(real, true);
            auto logits_real = d.forward(x_real);
            auto logits_fake = d.forward(make_const(fake));
            auto loss_d = add(mean_all(softplus(scale(logits_real, -1.0))),
                              mean_all(softplus(logits_fake)));
            if (cfg.r1_gamma > 0 && global_step % cfg.r1_interval == 0) {
                auto grads_x = backward(sum_all(logits_real), true);
                auto gx = grad_var(grads_x, x_real);
                const double coef =
                    0.5 * cfg.r1_gamma * static_cast<double>(cfg.r1_interval) /
                    static_cast<double>(cfg.batch);
                loss_d = add(loss_d, scale(sum_all(square(gx)), coef));
            }
            if (!all_finite(loss_d->value))
                throw std::runtime_error("training diverged: non-finite critic loss at epoch " +
                                         std::to_string(epoch) + " step " + std::to_string(step));
            opt_d.step(backward(loss_d));
            epoch_loss_d += loss_d->value[0];

            // --------------------------------------------- generator update
            Tensor<Real> zg({cfg.batch, g.manifest().dz});
            Rng::keyed(cfg.seed, {rng_tag::sample_z, static_cast<uint64_t>(epoch),
                                  static_cast<uint64_t>(step), 1})
                .fill_normal(zg);
            std::vector<Var<Real>> wp(static_cast<size_t>(L), g.map_z(make_const(zg)));
            auto gen = g.synthesize(g.affine_styles(wp));
            auto loss_g = mean_all(softplus(scale(d.forward(gen), -1.0)));
            if (!all_finite(loss_g->value))
                throw std::runtime_error("training diverged: non-finite generator loss at epoch " +
                                         std::to_string(epoch) + " step " + std::to_string(step));
            opt_g.step(backward(loss_g));
            epoch_loss_g += loss_g->value[0];
        }

        if (cfg.verbose)
            std::fprintf(stderr, "[train] epoch %lld  loss_d %.4f  loss_g %.4f\n",
                         static_cast<long long>(epoch),
                         epoch_loss_d / static_cast<double>(steps_per_epoch),
                         epoch_loss_g / static_cast<double>(steps_per_epoch));

        if (cfg.snapshot_interval > 0 && (epoch + 1) % cfg.snapshot_interval == 0 &&
            !cfg.snapshot_dir.empty()) {
            fs::create_directories(cfg.snapshot_dir);
            LineageRecord snap_lineage = lineage;
            snap_lineage.chain.back().epochs = epoch + 1;
            char name[64];
            std::snprintf(name, sizeof(name), "epoch_%04lld.ckpt",
                          static_cast<long long>(epoch + 1));
            auto snap = snapshot_state(g, d, snap_lineage, epoch + 1, &opt_g, &opt_d);
            save_checkpoint(snap, (fs::path(cfg.snapshot_dir) / name).string());
        }
    }

    lineage.chain.back().epochs = cfg.epochs;
    return snapshot_state(g, d, lineage, cfg.epochs, &opt_g, &opt_d);
}

} // namespace

Checkpoint init_checkpoint(const ArchManifest& m, uint64_t seed, const std::string& domain_id) {
    Generator<Real> g(m, seed);
    Discriminator<Real> d(m, seed);
    LineageRecord lin;
    lin.chain.push_back({domain_id, seed, 0, "scratch"});
    return snapshot_state(g, d, lin, 0, nullptr, nullptr);
}

Checkpoint train_from_scratch(const FactorDataset& ds, const TrainConfig& cfg) {
    ArchManifest m;
    if (ds.resolution != m.max_res()) m = m.truncated_to(ds.resolution);
    Generator<Real> g(m, cfg.seed);
    Discriminator<Real> d(g.manifest(), cfg.seed);
    LineageRecord lin;
    lin.chain.push_back({ds.domain_id, cfg.seed, cfg.epochs, "scratch"});
    return run_training(g, d, lin, 0, ds, cfg, nullptr);
}

Checkpoint fine_tune(const Checkpoint& parent, const FactorDataset& ds, const TrainConfig& cfg) {
    if (parent.manifest.max_res() != ds.resolution)
        throw std::invalid_argument("fine_tune: manifest resolution mismatch");
    Generator<Real> g(parent.manifest, parent.generator);
    Discriminator<Real> d(parent.manifest, parent.discriminator);
    LineageRecord lin = parent.lineage;
    lin.chain.push_back({ds.domain_id, cfg.seed, cfg.epochs, "finetune"});
    if (cfg.epochs == 0) {
        Checkpoint out = parent.clone();
        out.lineage = lin;
        out.epoch = 0;
        return out;
    }
    return run_training(g, d, lin, 0, ds, cfg, nullptr);
}

Checkpoint resume_training(const Checkpoint& snapshot, const FactorDataset& ds,
                           const TrainConfig& cfg) {
    if (!snapshot.train_state)
        throw std::invalid_argument("resume_training: snapshot has no training state");
    Generator<Real> g(snapshot.manifest, snapshot.generator);
    Discriminator<Real> d(snapshot.manifest, snapshot.discriminator);
    return run_training(g, d, snapshot.lineage, snapshot.epoch, ds, cfg,
                        &*snapshot.train_state);
}

Checkpoint resolution_transfer_init(const Checkpoint& parent, int new_res, uint64_t seed) {
    ArchManifest m = parent.manifest.truncated_to(new_res);
    Generator<Real> g(m, seed);
    // Reuse every parent tensor that still exists in the truncated manifest.
    PartitionedWeights<float> sub;
    for (const auto& p : g.params()) {
        if (!parent.generator.has(p.name))
            throw std::runtime_error("resolution transfer: parent missing tensor " + p.name);
        const auto tag = parent.generator.tags.at(p.name);
        sub.put(p.name, parent.generator.tensors.at(p.name).clone(), tag.component, tag.level);
    }
    g.load(sub);
    Discriminator<Real> d(m, seed);
    LineageRecord lin = parent.lineage;
    lin.chain.push_back({parent.lineage.chain.back().domain_id, seed, 0, "resolution"});
    return snapshot_state(g, d, lin, 0, nullptr, nullptr);
}

Checkpoint resolution_transfer(const Checkpoint& parent, int new_res, const FactorDataset& ds,
                               const TrainConfig& cfg) {
    Checkpoint init = resolution_transfer_init(parent, new_res, cfg.seed);
    if (ds.resolution != new_res)
        throw std::invalid_argument("resolution_transfer: dataset resolution mismatch");
    Generator<Real> g(init.manifest, init.generator);
    Discriminator<Real> d(init.manifest, init.discriminator);
    LineageRecord lin = init.lineage;
    lin.chain.back().epochs = cfg.epochs;
    return run_training(g, d, lin, 0, ds, cfg, nullptr);
}

Generator<Real> make_generator(const Checkpoint& ckpt) {
    return Generator<Real>(ckpt.manifest, ckpt.generator);
}

Discriminator<Real> make_discriminator(const Checkpoint& ckpt) {
    return Discriminator<Real>(ckpt.manifest, ckpt.discriminator);
}

ImageBatch generate_batch(const Checkpoint& ckpt, const Tensor<Real>& z, double psi) {
    Generator<Real> g = make_generator(ckpt);
    return g.generate(LatentZ{z.clone()}, psi, ckpt.w_mean);
}

ImageBatch generate_wplus(const Checkpoint& ckpt, const LatentWPlus& wp) {
    Generator<Real> g = make_generator(ckpt);
    return g.synthesize_wplus(wp);
}

} // namespace stylealign
