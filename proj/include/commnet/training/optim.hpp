#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "commnet/checkpoint.hpp"
#include "commnet/tensor.hpp"

namespace commnet {

/// Minimizers; state buffers are aligned with the ParamSet order.
class Optimizer {
public:
  virtual ~Optimizer() = default;
  virtual void step(ParamSet& params, const std::vector<Tensor>& grads) = 0;

protected:
  static void check(const ParamSet& params, const std::vector<Tensor>& grads) {
    if (grads.size() != params.count())
      throw std::invalid_argument("optimizer: gradient list shape mismatch");
    for (std::size_t p = 0; p < grads.size(); ++p) {
      if (!grads[p].same_shape(params.value(p)))
        throw std::invalid_argument("optimizer: gradient shape mismatch for " +
                                    params.name(p));
      if (!grads[p].all_finite())
        throw std::runtime_error("optimizer: non-finite gradient for " + params.name(p));
    }
  }
};

class RmsProp : public Optimizer {
public:
  RmsProp(double lr, double decay = 0.97, double eps = 1e-6)
      : lr_(lr), decay_(decay), eps_(eps) {}

  void step(ParamSet& params, const std::vector<Tensor>& grads) override {
    check(params, grads);
    if (mean_sq_.empty()) mean_sq_ = params.zeros_like();
    for (std::size_t p = 0; p < grads.size(); ++p) {
      Tensor& s = mean_sq_[p];
      Tensor& w = params.value(p);
      const Tensor& g = grads[p];
      for (std::size_t i = 0; i < g.size(); ++i) {
        s[i] = decay_ * s[i] + (1.0 - decay_) * g[i] * g[i];
        w[i] -= lr_ * g[i] / (std::sqrt(s[i]) + eps_);
      }
    }
  }

private:
  double lr_, decay_, eps_;
  std::vector<Tensor> mean_sq_;
};

class Adam : public Optimizer {
public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.99, double eps = 1e-6)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamSet& params, const std::vector<Tensor>& grads) override {
    check(params, grads);
    if (m_.empty()) {
      m_ = params.zeros_like();
      v_ = params.zeros_like();
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t p = 0; p < grads.size(); ++p) {
      Tensor& m = m_[p];
      Tensor& v = v_[p];
      Tensor& w = params.value(p);
      const Tensor& g = grads[p];
      for (std::size_t i = 0; i < g.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<Tensor> m_, v_;
};

inline std::unique_ptr<Optimizer> make_optimizer(const std::string& kind, double lr,
                                                 double rmsprop_decay, double beta1,
                                                 double beta2, double eps) {
  if (kind == "rmsprop") return std::make_unique<RmsProp>(lr, rmsprop_decay, eps);
  if (kind == "adam") return std::make_unique<Adam>(lr, beta1, beta2, eps);
  throw std::invalid_argument("unknown optimizer: " + kind);
}

/// Global-norm gradient clipping; a max_norm of zero disables it.
inline void clip_grad_norm(std::vector<Tensor>& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const Tensor& g : grads)
    for (std::size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
  double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  double f = max_norm / norm;
  for (Tensor& g : grads)
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= f;
}

}  // namespace commnet
