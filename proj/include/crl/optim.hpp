#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <string>

#include "crl/common.hpp"
#include "crl/tensor.hpp"

namespace crl {

// Optimizer state is keyed by parameter name, not by Var: tapes are rebuilt
// every iteration, so Vars are ephemeral while names persist across the run
// and across checkpoint save/load.

/// Polynomial decay schedule: base * (1 - t/T)^power. Hits exactly 0 at t == T.
/// Steps past the horizon clamp to 0 (with a warning) instead of going NaN,
/// so a run resumed with a stale horizon degrades to "stop learning".
inline double poly_lr(double base, long t, long T, double power = 0.9) {
  CRL_CHECK(base > 0.0, "poly_lr: base rate must be positive, got " << base);
  CRL_CHECK(T > 0, "poly_lr: horizon must be positive, got " << T);
  CRL_CHECK(t >= 0, "poly_lr: negative step " << t);
  if (t > T) {
    std::fprintf(stderr, "poly_lr: step %ld is past horizon %ld, clamping rate to 0\n", t, T);
    return 0.0;
  }
  if (t == T) return 0.0;
  return base * std::pow(1.0 - static_cast<double>(t) / static_cast<double>(T), power);
}

/// SGD with momentum and loss-coupled weight decay:
///   v <- momentum*v + grad + weight_decay*param
///   param <- param - lr*v
class Sgd {
 public:
  Sgd(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {
    CRL_CHECK(momentum >= 0.0 && momentum < 1.0,
              "Sgd: momentum must lie in [0, 1), got " << momentum);
    CRL_CHECK(weight_decay >= 0.0, "Sgd: negative weight decay " << weight_decay);
  }

  void step(const std::string& name, Tensor& param, const Tensor& grad, double lr) {
    CRL_CHECK(param.shape() == grad.shape(),
              "Sgd::step: gradient shape mismatch for parameter '" << name << "'");
    Tensor& v = state(velocity_, name, param, "Sgd");
    for (std::size_t i = 0; i < param.size(); ++i) {
      v[i] = momentum_ * v[i] + grad[i] + weight_decay_ * param[i];
      param[i] -= lr * v[i];
    }
  }

 private:
  friend class Adam;
  static Tensor& state(std::map<std::string, Tensor>& m, const std::string& name,
                       const Tensor& like, const char* who) {
    auto it = m.find(name);
    if (it == m.end()) it = m.emplace(name, Tensor(like.shape())).first;
    CRL_CHECK(it->second.shape() == like.shape(),
              who << "::step: parameter '" << name << "' changed shape mid-run");
    return it->second;
  }

  double momentum_;
  double weight_decay_;
  std::map<std::string, Tensor> velocity_;
};

/// Adam with bias correction. Zero gradient leaves the parameter untouched
/// (moments stay zero), so skipping frozen tensors and feeding zero grads are
/// equivalent; the training loop does the former.
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    CRL_CHECK(beta1 >= 0.0 && beta1 < 1.0, "Adam: beta1 out of [0, 1): " << beta1);
    CRL_CHECK(beta2 >= 0.0 && beta2 < 1.0, "Adam: beta2 out of [0, 1): " << beta2);
    CRL_CHECK(eps > 0.0, "Adam: eps must be positive, got " << eps);
  }

  void step(const std::string& name, Tensor& param, const Tensor& grad, double lr) {
    CRL_CHECK(param.shape() == grad.shape(),
              "Adam::step: gradient shape mismatch for parameter '" << name << "'");
    Tensor& m = Sgd::state(m1_, name, param, "Adam");
    Tensor& v = Sgd::state(m2_, name, param, "Adam");
    long t = ++steps_[name];
    double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t));
    double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
      param[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }

 private:
  double beta1_;
  double beta2_;
  double eps_;
  std::map<std::string, Tensor> m1_;
  std::map<std::string, Tensor> m2_;
  std::map<std::string, long> steps_;
};

}  // namespace crl
