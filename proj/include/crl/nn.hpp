#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "crl/ops.hpp"

// Small shared pieces for parameterized networks: a conv layer's tensors, the
// matching tape handles, and the bookkeeping that ties named parameter
// storage to tape leaves so optimizers can walk (name, tensor, grad) triples.

namespace crl {

template <class T>
struct ConvParam {
  T w;  // [out,in,kh,kw]
  T b;  // [out]
};

using ConvTensors = ConvParam<Tensor>;
using ConvVars = ConvParam<Var>;

/// He-style uniform initialization, limit sqrt(6 / fan_in); zero bias.
inline ConvTensors conv_param_init(int out_c, int in_c, int kh, int kw, Rng& rng) {
  const double limit = std::sqrt(6.0 / (static_cast<double>(in_c) * kh * kw));
  return {Tensor::uniform({out_c, in_c, kh, kw}, rng, -limit, limit), Tensor({out_c})};
}

/// One named parameter lifted onto a tape: training reads grads through var
/// and writes optimizer updates through tensor.
struct BoundParam {
  std::string name;
  Tensor* tensor = nullptr;
  Var var;
};

inline ConvVars lift(Tape& t, ConvTensors& p, const std::string& name,
                     std::vector<BoundParam>* bindings) {
  ConvVars v{t.leaf(p.w), t.leaf(p.b)};
  if (bindings != nullptr) {
    bindings->push_back({name + ".w", &p.w, v.w});
    bindings->push_back({name + ".b", &p.b, v.b});
  }
  return v;
}

/// Convolution plus channel bias.
inline Var conv_block(Tape& t, const ConvVars& p, Var x, int stride, int dilation,
                      int padding) {
  return bias_add(t, conv2d(t, x, p.w, stride, dilation, padding), p.b);
}

enum class Activation { Identity, Tanh, Sigmoid };

inline Var apply_activation(Tape& t, Activation a, Var x) {
  switch (a) {
    case Activation::Identity: return x;
    case Activation::Tanh: return tanh(t, x);
    case Activation::Sigmoid: return sigmoid(t, x);
  }
  throw Error("apply_activation: unknown activation");
}

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
  }
  throw Error("to_string: unknown activation");
}

inline Activation parse_activation(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "tanh") return Activation::Tanh;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw Error("parse_activation: unknown activation '" + s +
              "' (expected identity|tanh|sigmoid)");
}

}  // namespace crl
