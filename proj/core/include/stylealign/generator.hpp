#pragma once

// The miniature style-based generator: mapping network (z -> w), per-layer
// affine transforms (w -> style scalars), and a synthesis stack of
// style-modulated convolutions with tRGB skip connections.
//
// Per-layer stochastic noise buffers are derived from a fixed constant seed
// keyed only by the architecture, so every model of the same shape shares the
// same frozen noise and images from the same latent code stay comparable
// across parent and children.

#include <cmath>
#include <string>
#include <vector>

#include "stylealign/arch.hpp"
#include "stylealign/latent.hpp"
#include "stylealign/nn.hpp"
#include "stylealign/ops.hpp"

namespace stylealign {

template <typename T>
Tensor<T> noise_buffer(int level, int conv_index) {
    Tensor<T> n({level, level});
    Rng rng = Rng::keyed(0x6e0b5eedULL, {rng_tag::noise_buffers, static_cast<uint64_t>(level),
                                         static_cast<uint64_t>(conv_index)});
    rng.fill_normal(n);
    return n;
}

template <typename T>
class Generator {
public:
    struct ModConv {
        Var<T> weight;          // [O, C, k, k]
        Var<T> bias;            // [O]
        Var<T> noise_strength;  // [1]; unused for tRGB
        Linear<T> affine;       // w -> style, bias init 1
        int pad = 1;
        bool demodulate = true;
    };

    Generator(const ArchManifest& m, uint64_t init_seed) : m_(m) {
        Rng rng = Rng::keyed(init_seed, {rng_tag::init_weights});
        build(rng);
    }

    Generator(const ArchManifest& m, const PartitionedWeights<float>& w) : m_(m) {
        Rng rng = Rng::keyed(0, {rng_tag::init_weights});
        build(rng);
        load(w);
    }

    const ArchManifest& manifest() const { return m_; }
    const ParamList<T>& params() const { return params_; }

    ParamList<T> params_of(Component c) const {
        ParamList<T> out;
        for (const auto& p : params_)
            if (tag_of(p.name).component == c) out.push_back(p);
        return out;
    }

    // ------------------------------------------------------------- mapping

    // Depends only on mapping-component tensors.
    Var<T> map_z(const Var<T>& z) const {
        Var<T> x = z;
        for (const auto& fc : mapping_) x = leaky_relu(fc(x), m_.lrelu_slope);
        return x;
    }

    Tensor<Real> map_z_values(const Tensor<Real>& z) const {
        NoGradGuard ng(false);
        auto v = map_z(make_const(z.template cast<T>()));
        return v->value.template cast<Real>();
    }

    // Monte-Carlo estimate of E[w]; fixed internal stream so the estimate is
    // reproducible for a given set of mapping weights.
    Tensor<Real> estimate_w_mean(int64_t samples = 10000) const {
        NoGradGuard ng(false);
        Tensor<T> z({samples, m_.dz});
        Rng rng = Rng::keyed(0x77aa11ULL, {rng_tag::w_mean});
        rng.fill_normal(z);
        auto w = map_z(make_const(z));
        Tensor<Real> mean({m_.dw});
        const T* p = w->value.data();
        for (int64_t d = 0; d < m_.dw; ++d) {
            double acc = 0;
            for (int64_t b = 0; b < samples; ++b) acc += p[b * m_.dw + d];
            mean[d] = static_cast<Real>(acc / static_cast<double>(samples));
        }
        return mean;
    }

    // ------------------------------------------------------------- affine

    // styles[l] depends only on wplus[l] and layer-l affine tensors.
    std::vector<Var<T>> affine_styles(const std::vector<Var<T>>& wplus) const {
        if (wplus.size() != layers_.size())
            throw std::invalid_argument("affine_styles: expected " +
                                        std::to_string(layers_.size()) + " layer codes, got " +
                                        std::to_string(wplus.size()));
        std::vector<Var<T>> styles;
        styles.reserve(layers_.size());
        for (size_t l = 0; l < layers_.size(); ++l)
            styles.push_back(layers_[l].affine(wplus[l]));
        return styles;
    }

    StyleActivations affine_styles_values(const LatentWPlus& wp) const {
        NoGradGuard ng(false);
        std::vector<Var<T>> in;
        for (const auto& t : wp.per_layer) in.push_back(make_const(t.template cast<T>()));
        auto s = affine_styles(in);
        StyleActivations out;
        for (const auto& v : s) out.per_layer.push_back(v->value.template cast<Real>());
        return out;
    }

    // ---------------------------------------------------------- synthesis

    // Depends only on feat_conv and trgb tensors (plus the frozen noise).
    Var<T> synthesize(const std::vector<Var<T>>& styles) const {
        check_styles(styles);
        const int64_t B = styles[0]->value.dim(0);
        Var<T> x = broadcast_const(B);
        Var<T> rgb;
        size_t li = 0;
        const auto table = m_.style_layers();
        for (int lev = 0; lev < m_.num_levels(); ++lev) {
            if (lev > 0) x = upsample2(x);
            x = feat_forward(layers_[li], styles[li], x, noise_[li]);
            ++li;
            x = feat_forward(layers_[li], styles[li], x, noise_[li]);
            ++li;
            Var<T> t = trgb_forward(layers_[li], styles[li], x);
            ++li;
            rgb = (lev == 0) ? t : add(upsample2(rgb), t);
        }
        return tanh_op(rgb);
    }

    Tensor<Real> synthesize_values(const StyleActivations& s) const {
        NoGradGuard ng(false);
        std::vector<Var<T>> in;
        for (const auto& t : s.per_layer) in.push_back(make_const(t.template cast<T>()));
        return synthesize(in)->value.template cast<Real>();
    }

    // ------------------------------------------------------------ composite

    // map -> truncate -> broadcast -> affine -> synthesize, psi applied in W.
    Var<T> forward_z(const Var<T>& z, double psi, const Tensor<Real>& w_mean) const {
        Var<T> w = map_z(z);
        if (psi != 1.0) {
            auto wm = make_const(Tensor<T>(w_mean.template cast<T>())
                                     .reshaped({1, m_.dw}));
            auto wmb = broadcast_rows(wm, w->value.dim(0));
            w = add(scale(sub(w, wmb), psi), wmb);
        }
        std::vector<Var<T>> wp(layers_.size(), w);
        return synthesize(affine_styles(wp));
    }

    Tensor<Real> generate(const LatentZ& z, double psi, const Tensor<Real>& w_mean) const {
        NoGradGuard ng(false);
        return forward_z(make_const(z.values.template cast<T>()), psi, w_mean)
            ->value.template cast<Real>();
    }

    Tensor<Real> synthesize_wplus(const LatentWPlus& wp) const {
        NoGradGuard ng(false);
        std::vector<Var<T>> in;
        for (const auto& t : wp.per_layer) in.push_back(make_const(t.template cast<T>()));
        return synthesize(affine_styles(in))->value.template cast<Real>();
    }

    // Var-level W+ decode, for inversion losses.
    Var<T> synthesize_wplus_vars(const std::vector<Var<T>>& wp) const {
        return synthesize(affine_styles(wp));
    }

    // ------------------------------------------------------------- weights

    PartitionedWeights<float> weights_snapshot() const {
        PartitionedWeights<float> out;
        for (const auto& p : params_) {
            auto tag = tag_of(p.name);
            out.put(p.name, p.var->value.template cast<float>(), tag.component, tag.level);
        }
        return out;
    }

    void load(const PartitionedWeights<float>& w) {
        for (auto& p : params_) {
            const auto& src = w.get(p.name);
            if (src.shape() != p.var->value.shape())
                throw std::invalid_argument("weight shape mismatch for " + p.name + ": " +
                                            shape_str(src.shape()) + " vs " +
                                            shape_str(p.var->value.shape()));
            p.var->value = src.template cast<T>();
        }
    }

    TensorTag tag_of(const std::string& name) const {
        auto it = tag_index_.find(name);
        if (it == tag_index_.end()) throw std::runtime_error("unknown generator tensor " + name);
        return it->second;
    }

    const std::vector<StyleLayer>& style_table() const { return table_; }

private:
    void build(Rng& rng) {
        table_ = m_.style_layers();
        // Mapping network: fully-connected stack with leaky-rectifier units.
        for (int i = 0; i < m_.mapping_layers; ++i) {
            auto fc = Linear<T>::create(params_, "mapping.fc" + std::to_string(i),
                                        i == 0 ? m_.dz : m_.dw, m_.dw, rng);
            mapping_.push_back(fc);
            tag("mapping.fc" + std::to_string(i) + ".weight", Component::mapping, 0);
            tag("mapping.fc" + std::to_string(i) + ".bias", Component::mapping, 0);
        }
        // Learned constant input at the base resolution.
        Tensor<T> c({m_.level_width[0], m_.level_res[0], m_.level_res[0]});
        rng.fill_normal(c);
        const_input_ = new_param(params_, "synth.const", std::move(c));
        tag("synth.const", Component::feat_conv, m_.level_res[0]);

        for (const auto& sl : table_) {
            const std::string base = "r" + std::to_string(sl.level) + "." + kind_name(sl.kind);
            ModConv mc;
            const bool is_trgb = sl.kind == LayerKind::trgb;
            const int64_t k = is_trgb ? 1 : 3;
            mc.pad = is_trgb ? 0 : 1;
            mc.demodulate = !is_trgb;
            mc.weight = new_param(params_, "synth." + base + ".weight",
                                  he_init<T>(rng, {sl.out_width, sl.in_width, k, k},
                                             sl.in_width * k * k, is_trgb ? 1.0 : std::sqrt(2.0)));
            mc.bias = new_param(params_, "synth." + base + ".bias",
                                Tensor<T>::zeros({sl.out_width}));
            const Component wc = is_trgb ? Component::trgb : Component::feat_conv;
            tag("synth." + base + ".weight", wc, sl.level);
            tag("synth." + base + ".bias", wc, sl.level);
            if (!is_trgb) {
                mc.noise_strength =
                    new_param(params_, "synth." + base + ".noise_strength", Tensor<T>::zeros({1}));
                tag("synth." + base + ".noise_strength", Component::feat_conv, sl.level);
            }
            mc.affine = Linear<T>::create(params_, "affine." + base, m_.dw, sl.in_width, rng,
                                          1.0, 1.0);
            tag("affine." + base + ".weight", Component::affine, sl.level);
            tag("affine." + base + ".bias", Component::affine, sl.level);
            layers_.push_back(mc);
            noise_.push_back(is_trgb ? Tensor<T>()
                                     : noise_buffer<T>(sl.level, static_cast<int>(sl.kind)));
        }
    }

    static const char* kind_name(LayerKind k) {
        switch (k) {
            case LayerKind::conv0: return "conv0";
            case LayerKind::conv1: return "conv1";
            case LayerKind::trgb: return "trgb";
        }
        return "?";
    }

    void tag(const std::string& name, Component c, int level) { tag_index_[name] = {c, level}; }

    void check_styles(const std::vector<Var<T>>& styles) const {
        if (styles.size() != layers_.size())
            throw std::invalid_argument("synthesize: expected " + std::to_string(layers_.size()) +
                                        " style vectors, got " + std::to_string(styles.size()));
        for (size_t l = 0; l < styles.size(); ++l) {
            const auto& s = styles[l]->value.shape();
            if (s.size() != 2 || s[1] != table_[l].in_width)
                throw std::invalid_argument("synthesize: style layer " + std::to_string(l) +
                                            " expects width " + std::to_string(table_[l].in_width) +
                                            ", got " + shape_str(s));
        }
    }

    Var<T> broadcast_const(int64_t B) const {
        const auto& s = const_input_->value.shape();
        auto flat = reshape(const_input_, {s[0] * s[1] * s[2]});
        auto rep = broadcast_axis0(flat, B);
        return reshape(rep, {B, s[0], s[1], s[2]});
    }

    Var<T> broadcast_rows(const Var<T>& row, int64_t B) const {
        auto flat = reshape(row, {row->value.dim(1)});
        return broadcast_axis0(flat, B);
    }

    // Modulate -> convolve -> demodulate -> noise -> bias -> activation.
    Var<T> feat_forward(const ModConv& mc, const Var<T>& style, const Var<T>& x,
                        const Tensor<T>& noise) const {
        Var<T> h = mul_channelwise(x, style);
        h = conv2d(h, mc.weight, 1, mc.pad);
        h = mul_channelwise(h, demod_factors(mc, style));
        h = add_scaled_hw(h, noise, mc.noise_strength);
        h = add_bias_channel(h, mc.bias);
        return leaky_relu(h, m_.lrelu_slope);
    }

    Var<T> trgb_forward(const ModConv& mc, const Var<T>& style, const Var<T>& x) const {
        Var<T> h = mul_channelwise(x, style);
        h = conv2d(h, mc.weight, 1, mc.pad);
        return add_bias_channel(h, mc.bias);
    }

    // d[b,o] = 1 / sqrt(sum_{c,k} (w[o,c,k] * s[b,c])^2 + eps)
    Var<T> demod_factors(const ModConv& mc, const Var<T>& style) const {
        const auto& ws = mc.weight->value.shape();
        const int64_t O = ws[0], C = ws[1], KK = ws[2] * ws[3];
        auto wsq = reshape(square(mc.weight), {O * C, KK});
        auto ones = make_const(Tensor<T>::full({KK, 1}, T(1)));
        auto k = reshape(matmul(wsq, ones), {O, C});
        auto dd = matmul_tt(square(style), k, false, true);  // [B, O]
        return rsqrt_eps(dd, 1e-8);
    }

    ArchManifest m_;
    ParamList<T> params_;
    std::vector<Linear<T>> mapping_;
    Var<T> const_input_;
    std::vector<ModConv> layers_;
    std::vector<Tensor<T>> noise_;
    std::vector<StyleLayer> table_;
    std::unordered_map<std::string, TensorTag> tag_index_;
};

} // namespace stylealign
