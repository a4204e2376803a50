#pragma once

#include <random>
#include <string>
#include <vector>

#include "gca/ops.hpp"
#include "gca/tensor.hpp"

namespace gca {

// A trainable tensor with a unique dotted path. The path seeds deterministic
// initialization and names the entry in checkpoints.
template <typename T>
struct Param {
    Tensor<T> value;
    std::string path;
    int fan_in = 0;   // 0 marks bias-like params (zero-initialized)
    int fan_out = 0;

    Param() = default;
    Param(std::string p, std::vector<int> shape, int fin, int fout)
        : value(std::move(shape), T(0), true), path(std::move(p)), fan_in(fin), fan_out(fout) {}

    i64 numel() const { return value.numel(); }
};

template <typename T>
using ParamRefs = std::vector<Param<T>*>;

// Uniform Glorot initialization on [-a, a], a = sqrt(6/(fan_in+fan_out)).
// The stream is derived from (seed, param.path), so init is order-independent
// and reproducible.
template <typename T>
void xavier_init(Param<T>& p, int fan_in, int fan_out, u64 seed) {
    check(fan_in > 0 && fan_out > 0, "xavier_init: fans must be positive");
    const T a = std::sqrt(T(6) / T(fan_in + fan_out));
    std::mt19937_64 rng(derive_seed(seed, p.path));
    std::uniform_real_distribution<T> dist(-a, a);
    for (auto& v : p.value.data()) v = dist(rng);
}

template <typename T>
void init_params(const ParamRefs<T>& params, u64 seed) {
    for (Param<T>* p : params) {
        if (p->fan_in > 0 && p->fan_out > 0)
            xavier_init(*p, p->fan_in, p->fan_out, seed);
        else
            std::fill(p->value.data().begin(), p->value.data().end(), T(0));
    }
}

template <typename T>
i64 param_count(const ParamRefs<T>& params) {
    i64 n = 0;
    for (const Param<T>* p : params) n += p->numel();
    return n;
}

template <typename T>
void zero_grads(const ParamRefs<T>& params) {
    for (Param<T>* p : params) p->value.zero_grad();
}

// --- layers ------------------------------------------------------------------

template <typename T>
struct Conv2dLayer {
    Param<T> w, b;
    int stride = 1, pad = 1;

    Conv2dLayer() = default;
    Conv2dLayer(const std::string& path, int cin, int cout, int k, int stride_, int pad_)
        : w(path + ".w", {cout, cin, k, k}, cin * k * k, cout * k * k),
          b(path + ".b", {cout}, 0, 0),
          stride(stride_),
          pad(pad_) {}

    Tensor<T> forward(const Tensor<T>& x) const {
        return conv2d(x, w.value, b.value, stride, pad);
    }
    void collect(ParamRefs<T>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

template <typename T>
struct LinearLayer {
    Param<T> w, b;

    LinearLayer() = default;
    LinearLayer(const std::string& path, int din, int dout)
        : w(path + ".w", {dout, din}, din, dout), b(path + ".b", {dout}, 0, 0) {}

    Tensor<T> forward(const Tensor<T>& x) const { return linear(x, w.value, b.value); }
    void collect(ParamRefs<T>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

// --- optimizer ----------------------------------------------------------------

// SGD with momentum and decoupled-into-gradient weight decay:
//   v <- momentum * v + (grad + weight_decay * param)
//   param <- param - lr * v
template <typename T>
class Sgd {
public:
    Sgd(ParamRefs<T> params, T lr, T momentum, T weight_decay)
        : params_(std::move(params)), lr_(lr), momentum_(momentum), wd_(weight_decay) {
        velocity_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i)
            velocity_[i].assign(static_cast<size_t>(params_[i]->numel()), T(0));
    }

    void set_lr(T lr) { lr_ = lr; }
    T lr() const { return lr_; }

    void step() {
        for (size_t i = 0; i < params_.size(); ++i) {
            Param<T>& p = *params_[i];
            check(p.value.node()->grad.size() == p.value.data().size(),
                  "sgd: missing grad for " + p.path);
            auto& v = velocity_[i];
            auto& val = p.value.data();
            auto& g = p.value.node()->grad;
            for (size_t j = 0; j < val.size(); ++j) {
                v[j] = momentum_ * v[j] + (g[j] + wd_ * val[j]);
                val[j] -= lr_ * v[j];
            }
        }
    }

    void zero_grad() { zero_grads(params_); }

private:
    ParamRefs<T> params_;
    std::vector<std::vector<T>> velocity_;
    T lr_, momentum_, wd_;
};

}  // namespace gca
