#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "agediff/error.hpp"
#include "agediff/tensor.hpp"

namespace agediff {

template <class S>
class AdamT {
 public:
  AdamT(std::vector<TensorT<S>> params, double lr, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    if (lr <= 0.0) throw ValueError("adam: learning rate must be positive");
    if (params_.empty()) throw ValueError("adam: no params");
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].numel(), S(0));
      v_[i].assign(params_[i].numel(), S(0));
    }
  }

  // One update over all params that received a gradient this step.
  void step() {
    ++t_;
    const S inv_bc1 = static_cast<S>(1.0 / (1.0 - std::pow(b1_, static_cast<double>(t_))));
    const S inv_bc2 = static_cast<S>(1.0 / (1.0 - std::pow(b2_, static_cast<double>(t_))));
    const S b1 = static_cast<S>(b1_), c1 = static_cast<S>(1.0 - b1_);
    const S b2 = static_cast<S>(b2_), c2 = static_cast<S>(1.0 - b2_);
    const S lr = static_cast<S>(lr_), eps = static_cast<S>(eps_);
    for (size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].has_grad()) continue;
      const auto& g = params_[i].grad();
      for (size_t j = 0; j < g.size(); ++j)
        if (!std::isfinite(g[j]))
          throw NonFiniteError("adam: gradient for param " + std::to_string(i) +
                               " coord " + std::to_string(j));
      auto& w = params_[i].mutable_values();
      S* m = m_[i].data();
      S* v = v_[i].data();
      for (size_t j = 0; j < g.size(); ++j) {
        const S gj = g[j];
        m[j] = b1 * m[j] + c1 * gj;
        v[j] = b2 * v[j] + c2 * gj * gj;
        w[j] -= lr * (m[j] * inv_bc1) / (std::sqrt(v[j] * inv_bc2) + eps);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.clear_grad();
  }

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) {
    if (lr <= 0.0) throw ValueError("adam: learning rate must be positive");
    lr_ = lr;
  }
  long steps_taken() const { return t_; }
  const std::vector<TensorT<S>>& params() const { return params_; }

 private:
  std::vector<TensorT<S>> params_;
  std::vector<std::vector<S>> m_, v_;
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
};

using Adam = AdamT<float>;

}  // namespace agediff
