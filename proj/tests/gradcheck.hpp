#pragma once

// Central-difference gradient checks in double precision, used to validate
// every op's VJP and (via grad-of-grad) the double-backward chain.

#include <cmath>
#include <functional>
#include <vector>

#include "stylealign/ops.hpp"

namespace gradcheck {

using stylealign::Tensor;
using stylealign::Var;

// f maps leaf vars -> scalar var. Returns max relative error between the
// analytic gradient and central differences over all leaf coordinates.
inline double max_rel_err(const std::vector<Var<double>>& leaves,
                          const std::function<Var<double>(const std::vector<Var<double>>&)>& f,
                          double h = 1e-5) {
    auto loss = f(leaves);
    auto grads = stylealign::backward(loss);
    double worst = 0.0;
    for (const auto& leaf : leaves) {
        Tensor<double> g = stylealign::has_grad(grads, leaf)
                               ? stylealign::grad_of(grads, leaf)
                               : Tensor<double>::zeros(leaf->value.shape());
        for (int64_t i = 0; i < leaf->value.numel(); ++i) {
            const double x0 = leaf->value[i];
            leaf->value[i] = x0 + h;
            const double fp = f(leaves)->value[0];
            leaf->value[i] = x0 - h;
            const double fm = f(leaves)->value[0];
            leaf->value[i] = x0;
            const double fd = (fp - fm) / (2.0 * h);
            const double denom = std::max({std::abs(fd), std::abs(g[i]), 1e-6});
            worst = std::max(worst, std::abs(fd - g[i]) / denom);
        }
    }
    return worst;
}

} // namespace gradcheck
