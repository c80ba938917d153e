#pragma once

// Evaluation stack: a fixed-seed random-feature perceptual distance, a small
// supervised embedder for FID/KID features, a domain classifier head, and
// ground-truth factor probes.

#include <memory>
#include <string>
#include <vector>

#include "stylealign/config.hpp"
#include "stylealign/domains.hpp"
#include "stylealign/image.hpp"
#include "stylealign/nn.hpp"

namespace stylealign {

// Three-scale random convolutional pyramid with per-channel RMS-normalized
// features. Weights come from a fixed constant seed, never from run seeds,
// so distances are comparable across every experiment.
class PerceptualProxy {
public:
    static const PerceptualProxy& instance();

    // Sum over the batch of per-sample feature distances (differentiable).
    Var<Real> distance_sum(const Var<Real>& a, const Var<Real>& b) const;

    // Per-sample distances for a batch pair.
    std::vector<double> batch_distance(const ImageBatch& a, const ImageBatch& b) const;

    double distance(const Image& a, const Image& b) const;

private:
    PerceptualProxy();
    std::vector<Var<Real>> conv_;  // fixed, non-trainable
    std::vector<Var<Real>> normalized_features(const Var<Real>& x) const;
};

// Mean pairwise perceptual distance between two image sets (subsampled),
// used as a cheap domain-level dissimilarity gauge in tests.
double mean_perceptual(const ImageBatch& a, const ImageBatch& b);

// Supervised embedder over the synthetic meta-dataset; trunk features feed
// FID/KID, heads provide the domain classifier and factor probes.
class Embedder {
public:
    static Embedder train(const std::vector<const FactorDataset*>& domains, const Config& cfg,
                          uint64_t seed);

    int feature_dim() const { return 64; }
    int resolution() const { return res_; }
    const std::vector<std::string>& domain_names() const { return domain_names_; }

    // Trunk features, double precision for the distribution metrics. [B, 64]
    Tensor<double> features(const ImageBatch& batch) const;

    std::string domain_classify(const Image& img) const;
    std::vector<int> domain_classify_batch(const ImageBatch& batch) const;
    int domain_index(const std::string& name) const;

    FactorVector factor_probe(const Image& img) const;
    std::vector<FactorVector> factor_probe_batch(const ImageBatch& batch) const;

    void save(const std::string& path) const;
    static Embedder load(const std::string& path);

private:
    Embedder() = default;
    void build(Rng& rng);
    struct Heads;
    Heads forward(const Var<Real>& img) const;
    ImageBatch prepare(const ImageBatch& batch) const;

    int res_ = 32;
    std::vector<std::string> domain_names_;
    ParamList<Real> params_;
    // layer handles live in params_; indices below locate them
    std::vector<Conv<Real>> convs_;
    Linear<Real> trunk_fc_;
    Linear<Real> head_domain_, head_rot_, head_hue_, head_scale_, head_texture_, head_family_;
};

// Frechet distance between Gaussian fits of two feature sets.
double fid_from_features(const Tensor<double>& fa, const Tensor<double>& fb,
                         double shrinkage = 1e-6);
// Unbiased polynomial-kernel MMD^2, block-averaged.
double kid_from_features(const Tensor<double>& fa, const Tensor<double>& fb, int64_t block = 500);

double fid(const ImageBatch& a, const ImageBatch& b, const Embedder& emb);
double kid(const ImageBatch& a, const ImageBatch& b, const Embedder& emb);

// Nearest-neighbor resize, used to feed low-resolution outputs to the
// fixed-resolution embedder.
ImageBatch resize_nearest(const ImageBatch& batch, int res);

} // namespace stylealign
