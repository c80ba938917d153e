#pragma once

// Define-by-run reverse-mode autodiff over Tensor<T>. VJP callbacks are
// written in terms of the same op vocabulary, so running a backward pass with
// create_graph=true yields a differentiable gradient graph (needed for the R1
// penalty, which backpropagates through a gradient). With recording disabled
// the same VJP code produces plain values and the graph does not grow.

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "stylealign/tensor.hpp"

namespace stylealign {

template <typename T>
struct Node;
template <typename T>
using Var = std::shared_ptr<Node<T>>;

// Returns one gradient per parent (null for non-differentiable slots).
template <typename T>
using VjpFn = std::function<std::vector<Var<T>>(const Var<T>& self, const Var<T>& gout)>;

template <typename T>
struct Node : std::enable_shared_from_this<Node<T>> {
    Tensor<T> value;
    bool requires_grad = false;
    std::vector<Var<T>> parents;
    VjpFn<T> vjp;  // empty for leaves and constants
    const char* op = "leaf";
};

class GradMode {
public:
    static bool enabled() { return flag(); }
    struct Guard {
        explicit Guard(bool on) : prev(flag()) { flag() = on; }
        ~Guard() { flag() = prev; }
        bool prev;
    };

private:
    static bool& flag() {
        thread_local bool f = true;
        return f;
    }
};

using NoGradGuard = GradMode::Guard;

template <typename T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->op = requires_grad ? "param" : "const";
    return n;
}

template <typename T>
Var<T> make_const(Tensor<T> value) {
    return make_leaf(std::move(value), false);
}

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, VjpFn<T> vjp, const char* op) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->op = op;
    bool rg = false;
    for (const auto& p : parents)
        if (p && p->requires_grad) rg = true;
    if (rg && GradMode::enabled()) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->vjp = std::move(vjp);
    }
    return n;
}

// Value-only view of x; gradients do not flow through it.
template <typename T>
Var<T> detach(const Var<T>& x) {
    return make_const(x->value);
}

// Defined in ops.hpp; the backward accumulator needs it.
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
using GradMap = std::unordered_map<const Node<T>*, Var<T>>;

namespace detail {

template <typename T>
std::vector<Node<T>*> topo_order(const Var<T>& root) {
    std::vector<Node<T>*> order;
    std::unordered_map<const Node<T>*, int> state;  // 0 new, 1 open, 2 done
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    state[root.get()] = 1;
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node<T>* p = n->parents[i].get();
            ++i;
            if (p && p->requires_grad && state[p] == 0) {
                state[p] = 1;
                stack.emplace_back(p, 0);
            }
        } else {
            state[n] = 2;
            order.push_back(n);
            stack.pop_back();
        }
    }
    return order;  // parents before children; reverse-iterate for backprop
}

} // namespace detail

// Backpropagates from `root` seeded with `seed`. Gradients accumulate in a
// fixed (topological) order, so repeated runs are bitwise identical.
template <typename T>
GradMap<T> backward(const Var<T>& root, const Tensor<T>& seed, bool create_graph = false) {
    if (!root->requires_grad)
        throw std::invalid_argument("backward: root does not require grad");
    auto order = detail::topo_order<T>(root);
    GradMap<T> grads;
    grads[root.get()] = make_const(seed);

    GradMode::Guard guard(create_graph);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (!n->vjp) continue;
        auto git = grads.find(n);
        if (git == grads.end()) continue;
        auto pgrads = n->vjp(n->shared_from_this(), git->second);
        if (pgrads.size() != n->parents.size())
            throw std::logic_error(std::string("vjp arity mismatch in op ") + n->op);
        for (size_t k = 0; k < pgrads.size(); ++k) {
            const auto& p = n->parents[k];
            auto& g = pgrads[k];
            if (!p || !g || !p->requires_grad) continue;
            auto pit = grads.find(p.get());
            if (pit == grads.end()) {
                grads.emplace(p.get(), g);
            } else {
                pit->second = add(pit->second, g);
            }
        }
    }
    return grads;
}

template <typename T>
GradMap<T> backward(const Var<T>& root, bool create_graph = false) {
    if (root->value.numel() != 1)
        throw std::invalid_argument("backward: root must be scalar");
    return backward(root, Tensor<T>::full(root->value.shape(), T(1)), create_graph);
}

template <typename T>
const Tensor<T>& grad_of(const GradMap<T>& grads, const Var<T>& v) {
    auto it = grads.find(v.get());
    if (it == grads.end()) throw std::runtime_error("no gradient recorded for node");
    return it->second->value;
}

template <typename T>
Var<T> grad_var(const GradMap<T>& grads, const Var<T>& v) {
    auto it = grads.find(v.get());
    if (it == grads.end()) throw std::runtime_error("no gradient recorded for node");
    return it->second;
}

template <typename T>
bool has_grad(const GradMap<T>& grads, const Var<T>& v) {
    return grads.find(v.get()) != grads.end();
}

} // namespace stylealign
