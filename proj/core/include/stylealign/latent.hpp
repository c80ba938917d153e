#pragma once

// The four latent representations. Batches are row-major ([B, D] or a
// per-layer list of [B, D]); a single code is a batch of one.

#include <vector>

#include "stylealign/arch.hpp"
#include "stylealign/rng.hpp"
#include "stylealign/tensor.hpp"

namespace stylealign {

// Input noise codes, standard-normal. [B, Dz]
struct LatentZ {
    Tensor<Real> values;
    int64_t count() const { return values.dim(0); }
    int64_t dim() const { return values.dim(1); }
};

// Mapped intermediate codes. [B, Dw]
struct LatentW {
    Tensor<Real> values;
    int64_t count() const { return values.dim(0); }
    int64_t dim() const { return values.dim(1); }
};

// One W code per style layer. L x [B, Dw]
struct LatentWPlus {
    std::vector<Tensor<Real>> per_layer;
    int64_t layers() const { return static_cast<int64_t>(per_layer.size()); }
    int64_t count() const { return per_layer.empty() ? 0 : per_layer[0].dim(0); }
};

// Per-channel style scalars produced by the affine layers. L x [B, C_l]
struct StyleActivations {
    std::vector<Tensor<Real>> per_layer;
    int64_t layers() const { return static_cast<int64_t>(per_layer.size()); }
    int64_t count() const { return per_layer.empty() ? 0 : per_layer[0].dim(0); }
};

// i.i.d. standard-normal z batch; identical (count, seed) gives identical rows.
inline LatentZ sample_z(const ArchManifest& m, int64_t count, uint64_t seed) {
    if (count < 1) throw std::invalid_argument("sample_z: count must be >= 1");
    Tensor<Real> t({count, m.dz});
    Rng rng = Rng::keyed(seed, {rng_tag::sample_z});
    rng.fill_normal(t);
    return {std::move(t)};
}

// w_mean + psi * (w - w_mean), row-wise. psi = 1 and psi = 0 are exact
// identities (plain copies), not round trips through the formula.
inline LatentW truncate_w(const LatentW& w, double psi, const Tensor<Real>& w_mean) {
    if (w_mean.numel() != w.values.dim(1))
        throw std::invalid_argument("truncate_w: w_mean dimension mismatch");
    const int64_t B = w.values.dim(0), D = w.values.dim(1);
    if (psi == 1.0) return {w.values.clone()};
    Tensor<Real> out(w.values.shape());
    const Real* src = w.values.data();
    const Real* m = w_mean.data();
    Real* dst = out.data();
    if (psi == 0.0) {
        for (int64_t b = 0; b < B; ++b)
            for (int64_t d = 0; d < D; ++d) dst[b * D + d] = m[d];
        return {std::move(out)};
    }
    for (int64_t b = 0; b < B; ++b)
        for (int64_t d = 0; d < D; ++d)
            dst[b * D + d] = static_cast<Real>(m[d] + psi * (src[b * D + d] - m[d]));
    return {std::move(out)};
}

// W c W+: the same code at every style layer.
inline LatentWPlus broadcast_w(const LatentW& w, int64_t layers) {
    LatentWPlus out;
    out.per_layer.reserve(static_cast<size_t>(layers));
    for (int64_t l = 0; l < layers; ++l) out.per_layer.push_back(w.values.clone());
    return out;
}

// Early layers (resolution below the boundary) from `source`, the rest from
// `reference`. A boundary above the top resolution keeps everything from the
// source; a boundary at the base resolution takes everything from the
// reference.
inline LatentWPlus style_mix(const ArchManifest& m, const LatentWPlus& source,
                             const LatentWPlus& reference, int boundary_res) {
    const auto layers = m.style_layers();
    if (source.layers() != static_cast<int64_t>(layers.size()) ||
        reference.layers() != static_cast<int64_t>(layers.size()))
        throw std::invalid_argument("style_mix: layer count mismatch");
    if (boundary_res < m.level_res.front() || boundary_res > 2 * m.max_res())
        throw std::invalid_argument("style_mix: boundary out of range [" +
                                    std::to_string(m.level_res.front()) + ", " +
                                    std::to_string(2 * m.max_res()) + "]");
    LatentWPlus out;
    out.per_layer.reserve(layers.size());
    for (const auto& sl : layers) {
        const bool from_source = sl.level < boundary_res;
        out.per_layer.push_back((from_source ? source : reference)
                                    .per_layer[static_cast<size_t>(sl.index)]
                                    .clone());
    }
    return out;
}

// Row b of a batch as a batch of one.
template <typename T>
Tensor<T> take_row(const Tensor<T>& batch, int64_t b) {
    const int64_t D = batch.dim(1);
    Tensor<T> out({1, D});
    for (int64_t d = 0; d < D; ++d) out[d] = batch[b * D + d];
    return out;
}

inline LatentWPlus take_sample(const LatentWPlus& wp, int64_t b) {
    LatentWPlus out;
    for (const auto& l : wp.per_layer) out.per_layer.push_back(take_row(l, b));
    return out;
}

} // namespace stylealign
