#pragma once

// Convolutional critic for adversarial training. Stride-1 convolutions with
// average-pool downsampling keep the whole forward pass inside the op set
// whose gradients are themselves differentiable (required by the R1 term).

#include <cmath>
#include <string>
#include <vector>

#include "stylealign/arch.hpp"
#include "stylealign/nn.hpp"
#include "stylealign/ops.hpp"

namespace stylealign {

inline int disc_width(int res) { return std::min(64, 384 / res); }

template <typename T>
class Discriminator {
public:
    Discriminator(const ArchManifest& m, uint64_t init_seed) : m_(m) {
        Rng rng = Rng::keyed(init_seed, {rng_tag::init_weights, 0xd15cULL});
        build(rng);
    }

    Discriminator(const ArchManifest& m, const NamedTensors<float>& w) : m_(m) {
        Rng rng = Rng::keyed(0, {rng_tag::init_weights, 0xd15cULL});
        build(rng);
        load(w);
    }

    const ParamList<T>& params() const { return params_; }

    // [B, 3, R, R] -> [B, 1] logits
    Var<T> forward(const Var<T>& img) const {
        Var<T> x = leaky_relu(fromrgb_(img), m_.lrelu_slope);
        for (size_t i = 0; i < blocks_.size(); ++i) {
            x = leaky_relu(blocks_[i](x), m_.lrelu_slope);
            if (i + 1 < blocks_.size()) x = avgpool2(x);
        }
        const auto& s = x->value.shape();
        auto flat = reshape(x, {s[0], s[1] * s[2] * s[3]});
        auto h = leaky_relu(fc0_(flat), m_.lrelu_slope);
        return fc1_(h);
    }

    NamedTensors<float> snapshot() const {
        NamedTensors<float> out;
        for (const auto& p : params_) out.put(p.name, p.var->value.template cast<float>());
        return out;
    }

    void load(const NamedTensors<float>& w) {
        for (auto& p : params_) {
            const auto& src = w.get(p.name);
            if (src.shape() != p.var->value.shape())
                throw std::invalid_argument("discriminator shape mismatch for " + p.name);
            p.var->value = src.template cast<T>();
        }
    }

private:
    void build(Rng& rng) {
        const int top = m_.max_res();
        fromrgb_ = Conv<T>::create(params_, "disc.fromrgb", m_.img_channels, disc_width(top), 1,
                                   rng, 1, 0);
        int res = top;
        int cin = disc_width(top);
        while (res >= 4) {
            const int cout = res == 4 ? disc_width(4) : disc_width(res / 2);
            blocks_.push_back(Conv<T>::create(params_, "disc.b" + std::to_string(res) + ".conv",
                                              cin, cout, 3, rng, 1, 1));
            cin = cout;
            res /= 2;
        }
        fc0_ = Linear<T>::create(params_, "disc.fc0", cin * 16, 64, rng);
        fc1_ = Linear<T>::create(params_, "disc.fc1", 64, 1, rng, 1.0);
    }

    ArchManifest m_;
    ParamList<T> params_;
    Conv<T> fromrgb_;
    std::vector<Conv<T>> blocks_;
    Linear<T> fc0_;
    Linear<T> fc1_;
};

} // namespace stylealign
