#pragma once

#include <string>
#include <vector>

#include "crl/nn.hpp"

// A modality branch: strided conv encoder, dilated decoder with a small
// multi-rate block, and a task head. The RGB and depth branches share this
// architecture but never their parameters. The encoder blocks are the
// tensors frozen during the joint training stage, so the enc*/decoder/head
// name partition below is load-bearing.

namespace crl {

enum class HeadKind { Segmentation, DepthRegression };

struct BranchConfig {
  int in_channels = 3;
  int enc1_channels = 8;
  int enc2_channels = 16;
  int feature_channels = 16;  // decoder output channels, what the fusion net sees
  int downsample = 4;         // input H,W over feature H',W'; 2 or 4
  std::vector<int> aspp_rates{1, 2, 4};
  HeadKind head = HeadKind::Segmentation;
  int classes = 5;  // segmentation output channels, labels 1..classes

  void validate() const {
    CRL_CHECK(in_channels >= 1, "BranchConfig: in_channels must be >= 1");
    CRL_CHECK(enc1_channels >= 1 && enc2_channels >= 1,
              "BranchConfig: encoder widths must be >= 1");
    CRL_CHECK(feature_channels >= 2,
              "BranchConfig: feature_channels must be >= 2, got " << feature_channels);
    CRL_CHECK(downsample == 2 || downsample == 4,
              "BranchConfig: downsample must be 2 or 4, got " << downsample);
    CRL_CHECK(!aspp_rates.empty(), "BranchConfig: aspp_rates must be non-empty");
    for (int r : aspp_rates)
      CRL_CHECK(r >= 1, "BranchConfig: aspp rate must be >= 1, got " << r);
    if (head == HeadKind::Segmentation)
      CRL_CHECK(classes >= 2, "BranchConfig: need >= 2 classes, got " << classes);
  }
};

template <class T>
struct BranchParamsT {
  ConvParam<T> enc1, enc2, enc3;
  std::vector<ConvParam<T>> aspp;
  ConvParam<T> aspp_mix;
  ConvParam<T> dec;
  ConvParam<T> head;
};

using BranchTensors = BranchParamsT<Tensor>;
using BranchVars = BranchParamsT<Var>;

/// Fixed-order named visit; checkpoint layout and optimizer state key off it.
template <class T, class Fn>
void for_each_branch_param(BranchParamsT<T>& p, Fn&& fn) {
  fn(std::string("enc1"), p.enc1);
  fn(std::string("enc2"), p.enc2);
  fn(std::string("enc3"), p.enc3);
  for (std::size_t i = 0; i < p.aspp.size(); ++i)
    fn("aspp" + std::to_string(i), p.aspp[i]);
  fn(std::string("aspp_mix"), p.aspp_mix);
  fn(std::string("dec"), p.dec);
  fn(std::string("head"), p.head);
}

template <class T, class Fn>
void for_each_branch_param(const BranchParamsT<T>& p, Fn&& fn) {
  fn(std::string("enc1"), p.enc1);
  fn(std::string("enc2"), p.enc2);
  fn(std::string("enc3"), p.enc3);
  for (std::size_t i = 0; i < p.aspp.size(); ++i)
    fn("aspp" + std::to_string(i), p.aspp[i]);
  fn(std::string("aspp_mix"), p.aspp_mix);
  fn(std::string("dec"), p.dec);
  fn(std::string("head"), p.head);
}

inline BranchTensors init_branch_params(const BranchConfig& cfg, Rng& rng) {
  cfg.validate();
  const int d = cfg.feature_channels;
  BranchTensors p;
  p.enc1 = conv_param_init(cfg.enc1_channels, cfg.in_channels, 3, 3, rng);
  p.enc2 = conv_param_init(cfg.enc2_channels, cfg.enc1_channels, 3, 3, rng);
  p.enc3 = conv_param_init(d, cfg.enc2_channels, 3, 3, rng);
  for (std::size_t i = 0; i < cfg.aspp_rates.size(); ++i)
    p.aspp.push_back(conv_param_init(d, d, 3, 3, rng));
  p.aspp_mix = conv_param_init(d, d, 1, 1, rng);
  p.dec = conv_param_init(d, d, 3, 3, rng);
  const int head_out = cfg.head == HeadKind::Segmentation ? cfg.classes : 1;
  p.head = conv_param_init(head_out, d, 1, 1, rng);
  return p;
}

inline BranchVars lift(Tape& t, BranchTensors& p, const std::string& prefix,
                       std::vector<BoundParam>* bindings) {
  BranchVars v;
  v.enc1 = lift(t, p.enc1, prefix + ".enc1", bindings);
  v.enc2 = lift(t, p.enc2, prefix + ".enc2", bindings);
  v.enc3 = lift(t, p.enc3, prefix + ".enc3", bindings);
  for (std::size_t i = 0; i < p.aspp.size(); ++i)
    v.aspp.push_back(lift(t, p.aspp[i], prefix + ".aspp" + std::to_string(i), bindings));
  v.aspp_mix = lift(t, p.aspp_mix, prefix + ".aspp_mix", bindings);
  v.dec = lift(t, p.dec, prefix + ".dec", bindings);
  v.head = lift(t, p.head, prefix + ".head", bindings);
  return v;
}

/// Parallel dilated 3x3 convolutions summed, then a 1x1 channel mix. Padding
/// equals the rate so every tap keeps the spatial shape.
inline Var aspp_lite(Tape& t, const std::vector<ConvVars>& taps, const ConvVars& mix,
                     Var x, const std::vector<int>& rates) {
  CRL_CHECK(!rates.empty(), "aspp_lite: no dilation rates");
  CRL_CHECK(taps.size() == rates.size(), "aspp_lite: " << taps.size() << " taps for "
                                                       << rates.size() << " rates");
  Var sum = conv_block(t, taps[0], x, 1, rates[0], rates[0]);
  for (std::size_t i = 1; i < taps.size(); ++i)
    sum = add(t, sum, conv_block(t, taps[i], x, 1, rates[i], rates[i]));
  return conv_block(t, mix, sum, 1, 1, 0);
}

/// Image [C,H,W] to feature map [d, H/downsample, W/downsample].
inline Var branch_forward(Tape& t, const BranchConfig& cfg, const BranchVars& v,
                          Var image) {
  const Tensor& img = t.value(image);
  CRL_CHECK(img.rank() == 3 && img.extent(0) == cfg.in_channels,
            "branch_forward: expected [" << cfg.in_channels
                                         << ",H,W] input, got "
                                         << shape_string(img.shape()));
  CRL_CHECK(img.extent(1) % cfg.downsample == 0 && img.extent(2) % cfg.downsample == 0,
            "branch_forward: input " << shape_string(img.shape())
                                     << " not divisible by downsample factor "
                                     << cfg.downsample);
  const int stride2 = cfg.downsample / 2;
  Var x = relu(t, conv_block(t, v.enc1, image, 2, 1, 1));
  x = relu(t, conv_block(t, v.enc2, x, stride2, 1, 1));
  x = relu(t, conv_block(t, v.enc3, x, 1, 2, 2));
  x = relu(t, aspp_lite(t, v.aspp, v.aspp_mix, x, cfg.aspp_rates));
  return conv_block(t, v.dec, x, 1, 1, 1);
}

/// 1x1 conv to class channels, then bilinear upsampling to the label grid.
/// Softmax lives inside the loss, not here.
inline Var segmentation_head(Tape& t, const ConvVars& head, Var feature, int out_h,
                             int out_w) {
  return upsample_bilinear(t, conv_block(t, head, feature, 1, 1, 0), out_h, out_w);
}

/// 1x1 conv to one channel, upsample, softplus for positivity, drop the
/// channel axis. Zero parameters predict softplus(0) = ln 2 everywhere.
inline Var depth_head(Tape& t, const ConvVars& head, Var feature, int out_h, int out_w) {
  Var up = upsample_bilinear(t, conv_block(t, head, feature, 1, 1, 0), out_h, out_w);
  return reshape(t, softplus(t, up), {out_h, out_w});
}

}  // namespace crl
