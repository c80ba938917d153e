#pragma once

// Thin layer/optimizer helpers over the op vocabulary. Parameters are leaf
// Vars whose tensors the optimizer mutates in place between steps.

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "stylealign/ops.hpp"
#include "stylealign/rng.hpp"

namespace stylealign {

template <typename T>
struct Param {
    std::string name;
    Var<T> var;
};

template <typename T>
using ParamList = std::vector<Param<T>>;

template <typename T>
Var<T> new_param(ParamList<T>& params, const std::string& name, Tensor<T> init) {
    auto v = make_leaf(std::move(init), true);
    params.push_back({name, v});
    return v;
}

// He-style fan-in init for leaky-rectifier nets.
template <typename T>
Tensor<T> he_init(Rng& rng, Shape shape, int64_t fan_in, double gain = std::sqrt(2.0)) {
    Tensor<T> t(std::move(shape));
    rng.fill_normal(t, gain / std::sqrt(static_cast<double>(fan_in)));
    return t;
}

template <typename T>
struct Linear {
    Var<T> weight;  // [out, in]
    Var<T> bias;    // [out]

    static Linear create(ParamList<T>& params, const std::string& name, int64_t in, int64_t out,
                         Rng& rng, double gain = std::sqrt(2.0), double bias_init = 0.0) {
        Linear l;
        l.weight = new_param(params, name + ".weight", he_init<T>(rng, {out, in}, in, gain));
        l.bias = new_param(params, name + ".bias", Tensor<T>::full({out}, static_cast<T>(bias_init)));
        return l;
    }

    Var<T> operator()(const Var<T>& x) const {
        return add_bias_row(matmul_tt(x, weight, false, true), bias);
    }
};

template <typename T>
struct Conv {
    Var<T> weight;  // [out, in, k, k]
    Var<T> bias;    // [out]
    int stride = 1;
    int pad = 1;

    static Conv create(ParamList<T>& params, const std::string& name, int64_t in, int64_t out,
                       int64_t k, Rng& rng, int stride = 1, int pad = 1,
                       double gain = std::sqrt(2.0)) {
        Conv c;
        c.weight = new_param(params, name + ".weight", he_init<T>(rng, {out, in, k, k}, in * k * k, gain));
        c.bias = new_param(params, name + ".bias", Tensor<T>::zeros({out}));
        c.stride = stride;
        c.pad = pad;
        return c;
    }

    Var<T> operator()(const Var<T>& x) const {
        return add_bias_channel(conv2d(x, weight, stride, pad), bias);
    }
};

// Adam with optional bias correction off (beta1 = 0 works fine either way).
template <typename T>
class Adam {
public:
    Adam(double lr = 2e-3, double beta1 = 0.0, double beta2 = 0.99, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void attach(const ParamList<T>& params) {
        for (const auto& p : params) {
            if (!state_.count(p.var.get()))
                state_[p.var.get()] = {Tensor<T>::zeros(p.var->value.shape()),
                                       Tensor<T>::zeros(p.var->value.shape())};
        }
        params_ = params;
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    int64_t step_count() const { return t_; }

    void step(const GradMap<T>& grads) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (auto& p : params_) {
            auto it = grads.find(p.var.get());
            if (it == grads.end()) continue;
            const Tensor<T>& g = it->second->value;
            auto& st = state_[p.var.get()];
            T* m = st.m.data();
            T* v = st.v.data();
            T* w = p.var->value.data();
            const T* gd = g.data();
            const int64_t n = g.numel();
            for (int64_t i = 0; i < n; ++i) {
                m[i] = static_cast<T>(beta1_ * m[i] + (1.0 - beta1_) * gd[i]);
                v[i] = static_cast<T>(beta2_ * v[i] + (1.0 - beta2_) * gd[i] * gd[i]);
                const double mh = m[i] / bc1;
                const double vh = v[i] / bc2;
                w[i] = static_cast<T>(w[i] - lr_ * mh / (std::sqrt(vh) + eps_));
            }
        }
    }

    // Optimizer state as named tensors, for bit-exact training resume.
    std::vector<std::pair<std::string, Tensor<T>>> named_state() const {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        for (const auto& p : params_) {
            const auto& st = state_.at(p.var.get());
            out.emplace_back(p.name + ".adam_m", st.m);
            out.emplace_back(p.name + ".adam_v", st.v);
        }
        return out;
    }

    void load_state(const std::unordered_map<std::string, Tensor<T>>& named, int64_t step) {
        for (auto& p : params_) {
            auto& st = state_[p.var.get()];
            auto mi = named.find(p.name + ".adam_m");
            auto vi = named.find(p.name + ".adam_v");
            if (mi == named.end() || vi == named.end())
                throw std::runtime_error("missing optimizer state for " + p.name);
            st.m = mi->second.clone();
            st.v = vi->second.clone();
        }
        t_ = step;
    }

private:
    struct State {
        Tensor<T> m, v;
    };
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    ParamList<T> params_;
    std::unordered_map<const Node<T>*, State> state_;
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
    const T* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i)
        if (!std::isfinite(static_cast<double>(p[i]))) return false;
    return true;
}

} // namespace stylealign
