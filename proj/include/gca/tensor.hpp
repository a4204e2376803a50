#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gca/common.hpp"

namespace gca {

// Reverse-mode autodiff over dense row-major tensors of rank 1..4.
// Ops build a tape of Nodes; backward() walks it in reverse topological
// order. Gradients accumulate additively into leaf nodes (parameters and
// inputs); non-leaf gradients are cleared at the start of every backward()
// so a retained graph can be differentiated repeatedly.

template <typename T>
struct Node {
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first needed
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;  // propagates this->grad to parents

    i64 numel() const { return numel_of(shape); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }
    bool is_leaf() const { return !static_cast<bool>(backward); }
};

namespace detail {
inline thread_local int nograd_depth = 0;
}

// Disables tape recording in a scope (inference / oracle evaluation).
struct NoGradGuard {
    NoGradGuard() { ++detail::nograd_depth; }
    ~NoGradGuard() { --detail::nograd_depth; }
    NoGradGuard(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::nograd_depth == 0; }

template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, T fill = T(0), bool requires_grad = false)
        : node_(std::make_shared<Node<T>>()) {
        check(!shape.empty() && shape.size() <= 4, "tensor rank must be 1..4");
        for (int e : shape) check(e > 0, "tensor extents must be positive");
        node_->shape = std::move(shape);
        node_->data.assign(static_cast<size_t>(node_->numel()), fill);
        node_->requires_grad = requires_grad;
    }

    static Tensor from_data(std::vector<int> shape, std::vector<T> values,
                            bool requires_grad = false) {
        Tensor t(std::move(shape));
        check(static_cast<i64>(values.size()) == t.numel(),
              "data length must equal product of extents");
        t.node_->data = std::move(values);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(T v) { return from_data({1}, {v}); }

    // Uninitialized storage for op outputs.
    static Tensor raw(std::vector<int> shape) {
        Tensor t;
        t.node_ = std::make_shared<Node<T>>();
        t.node_->shape = std::move(shape);
        t.node_->data.resize(static_cast<size_t>(numel_of(t.node_->shape)));
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    i64 numel() const { return node_->numel(); }

    std::vector<T>& data() { return node_->data; }
    const std::vector<T>& data() const { return node_->data; }
    T* ptr() { return node_->data.data(); }
    const T* ptr() const { return node_->data.data(); }

    T value() const {
        check(numel() == 1, "value() requires a scalar tensor");
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    std::vector<T>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<T>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->zero_grad(); }

    std::shared_ptr<Node<T>> node() const { return node_; }

    // 4-D accessor (row-major N,C,H,W); for tests and small code paths.
    T& at(int n, int c, int h, int w) {
        const auto& s = node_->shape;
        return node_->data[static_cast<size_t>(((i64(n) * s[1] + c) * s[2] + h) * s[3] + w)];
    }
    T at(int n, int c, int h, int w) const {
        return const_cast<Tensor*>(this)->at(n, c, h, w);
    }
    T& at(int n, int c) {
        return node_->data[static_cast<size_t>(i64(n) * node_->shape[1] + c)];
    }

private:
    std::shared_ptr<Node<T>> node_;
};

namespace detail {

// Attach tape metadata to an op output. `backward` receives the output node
// with its gradient populated and must accumulate into parents' grads.
template <typename T>
void record(Tensor<T>& out, std::vector<std::shared_ptr<Node<T>>> parents,
            std::function<void(Node<T>&)> backward) {
    if (!grad_enabled()) return;
    bool any = false;
    for (const auto& p : parents)
        if (p->requires_grad) any = true;
    if (!any) return;
    auto n = out.node();
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(backward);
}

template <typename T>
void topo_visit(Node<T>* node, std::unordered_set<Node<T>*>& seen,
                std::vector<Node<T>*>& order) {
    // Iterative DFS; graphs can be thousands of nodes deep.
    struct Frame {
        Node<T>* n;
        size_t next;
    };
    std::vector<Frame> stack{{node, 0}};
    seen.insert(node);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node<T>* p = f.n->parents[f.next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }
}

}  // namespace detail

// Accumulates d(loss)/d(leaf) into every reachable leaf with requires_grad.
// Repeated calls accumulate; zero the leaves' grads explicitly to reset.
template <typename T>
void backward(const Tensor<T>& loss) {
    check(loss.numel() == 1, "backward() requires a scalar loss");
    auto root = loss.node();
    if (!root->requires_grad) return;

    std::unordered_set<Node<T>*> seen;
    std::vector<Node<T>*> order;  // parents precede children
    detail::topo_visit(root.get(), seen, order);

    // Non-leaf grads restart from zero on every call so retained graphs can
    // be re-differentiated; leaf grads accumulate across calls.
    for (Node<T>* n : order) {
        if (!n->is_leaf()) {
            n->ensure_grad();
            n->zero_grad();
        }
    }
    root->ensure_grad();
    root->grad[0] += T(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward) n->backward(*n);
    }
}

template <typename T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape();
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (T v : t.data())
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

}  // namespace gca
