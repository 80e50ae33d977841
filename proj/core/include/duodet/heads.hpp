// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "duodet/errors.hpp"
#include "duodet/nn.hpp"
#include "duodet/tensor.hpp"

// Detection-head building blocks. The fc-head flattens the RoI grid and runs
// two affine layers; the conv-head stacks residual/non-local blocks on the
// grid and average-pools at the end. Channel widths are constructor
// parameters so gradient checks can run on miniature instances.
namespace duodet {

template <class T>
using StateRefs = std::vector<std::pair<std::string, Tensor<T>*>>;

template <class T>
class HeadBlock {
 public:
  virtual ~HeadBlock() = default;
  virtual void init(Rng& rng) = 0;
  virtual Fmap<T> forward(const Fmap<T>& x, bool train) = 0;
  virtual Fmap<T> backward(const Fmap<T>& dy) = 0;
  virtual void collect(ParamRefs<T>& out, const std::string& prefix) = 0;
  virtual void collect_state(StateRefs<T>& out, const std::string& prefix) = 0;
  virtual std::int64_t parameter_count() const = 0;
  virtual std::string kind() const = 0;
};

/// Residual block that widens the channel count (Fig. "up" variant):
/// 1x1 in->mid, 3x3 mid->mid, 1x1 mid->out on the main path and a 1x1
/// in->out projection on the skip path.
template <class T>
class ResidualUpBlock final : public HeadBlock<T> {
 public:
  ResidualUpBlock(int in_c, int mid_c, int out_c, NormKind norm)
      : conv1_(in_c, mid_c, 1), n1_(norm, mid_c),
        conv2_(mid_c, mid_c, 3), n2_(norm, mid_c),
        conv3_(mid_c, out_c, 1), n3_(norm, out_c),
        proj_(in_c, out_c, 1), np_(norm, out_c) {}

  void init(Rng& rng) override {
    conv1_.init(rng);
    conv2_.init(rng);
    conv3_.init(rng);
    proj_.init(rng);
  }

  Fmap<T> forward(const Fmap<T>& x, bool train) override {
    auto a = r1_.forward(n1_.forward(conv1_.forward(x), train));
    auto b = r2_.forward(n2_.forward(conv2_.forward(a), train));
    auto main = n3_.forward(conv3_.forward(b), train);
    auto skip = np_.forward(proj_.forward(x), train);
    main.mat() += skip.mat();
    return rout_.forward(main);
  }

  Fmap<T> backward(const Fmap<T>& dy) override {
    auto dsum = rout_.backward(dy);
    auto dmain = conv3_.backward(n3_.backward(dsum));
    auto dx = conv1_.backward(n1_.backward(r1_.backward(
        conv2_.backward(n2_.backward(r2_.backward(dmain))))));
    auto dskip = proj_.backward(np_.backward(dsum));
    dx.mat() += dskip.mat();
    return dx;
  }

  void collect(ParamRefs<T>& out, const std::string& p) override {
    conv1_.collect(out, p + ".conv1");
    n1_.collect(out, p + ".n1");
    conv2_.collect(out, p + ".conv2");
    n2_.collect(out, p + ".n2");
    conv3_.collect(out, p + ".conv3");
    n3_.collect(out, p + ".n3");
    proj_.collect(out, p + ".proj");
    np_.collect(out, p + ".np");
  }

  void collect_state(StateRefs<T>& out, const std::string& p) override {
    n1_.collect_state(out, p + ".n1");
    n2_.collect_state(out, p + ".n2");
    n3_.collect_state(out, p + ".n3");
    np_.collect_state(out, p + ".np");
  }

  std::int64_t parameter_count() const override {
    return conv1_.parameter_count() + conv2_.parameter_count() +
           conv3_.parameter_count() + proj_.parameter_count() +
           n1_.parameter_count() + n2_.parameter_count() +
           n3_.parameter_count() + np_.parameter_count();
  }

  std::string kind() const override { return "up"; }

 private:
  Conv2d<T> conv1_;
  Norm2d<T> n1_;
  Conv2d<T> conv2_;
  Norm2d<T> n2_;
  Conv2d<T> conv3_;
  Norm2d<T> n3_;
  Conv2d<T> proj_;
  Norm2d<T> np_;
  ReLU<T> r1_, r2_, rout_;
};

/// Standard residual bottleneck: 1x1 ch->mid, 3x3 mid->mid, 1x1 mid->ch with
/// an identity skip.
template <class T>
class BottleneckBlock final : public HeadBlock<T> {
 public:
  BottleneckBlock(int ch, int mid_c, NormKind norm)
      : conv1_(ch, mid_c, 1), n1_(norm, mid_c),
        conv2_(mid_c, mid_c, 3), n2_(norm, mid_c),
        conv3_(mid_c, ch, 1), n3_(norm, ch) {}

  void init(Rng& rng) override {
    conv1_.init(rng);
    conv2_.init(rng);
    conv3_.init(rng);
  }

  Fmap<T> forward(const Fmap<T>& x, bool train) override {
    auto a = r1_.forward(n1_.forward(conv1_.forward(x), train));
    auto b = r2_.forward(n2_.forward(conv2_.forward(a), train));
    auto main = n3_.forward(conv3_.forward(b), train);
    main.mat() += x.mat();
    return rout_.forward(main);
  }

  Fmap<T> backward(const Fmap<T>& dy) override {
    auto dsum = rout_.backward(dy);
    auto dx = conv1_.backward(n1_.backward(r1_.backward(
        conv2_.backward(n2_.backward(r2_.backward(
            conv3_.backward(n3_.backward(dsum))))))));
    dx.mat() += dsum.mat();
    return dx;
  }

  void collect(ParamRefs<T>& out, const std::string& p) override {
    conv1_.collect(out, p + ".conv1");
    n1_.collect(out, p + ".n1");
    conv2_.collect(out, p + ".conv2");
    n2_.collect(out, p + ".n2");
    conv3_.collect(out, p + ".conv3");
    n3_.collect(out, p + ".n3");
  }

  void collect_state(StateRefs<T>& out, const std::string& p) override {
    n1_.collect_state(out, p + ".n1");
    n2_.collect_state(out, p + ".n2");
    n3_.collect_state(out, p + ".n3");
  }

  std::int64_t parameter_count() const override {
    return conv1_.parameter_count() + conv2_.parameter_count() +
           conv3_.parameter_count() + n1_.parameter_count() +
           n2_.parameter_count() + n3_.parameter_count();
  }

  std::string kind() const override { return "bottleneck"; }

 private:
  Conv2d<T> conv1_;
  Norm2d<T> n1_;
  Conv2d<T> conv2_;
  Norm2d<T> n2_;
  Conv2d<T> conv3_;
  Norm2d<T> n3_;
  ReLU<T> r1_, r2_, rout_;
};

/// Embedded-Gaussian non-local block: softmax attention over the grid
/// positions of each sample, projected back to the trunk width, residual add.
template <class T>
class NonLocalBlock final : public HeadBlock<T> {
 public:
  NonLocalBlock(int ch, int embed)
      : ch_(ch), e_(embed),
        theta_(ch, embed, 1), phi_(ch, embed, 1), g_(ch, embed, 1),
        wz_(embed, ch, 1) {}

  void init(Rng& rng) override {
    theta_.init(rng);
    phi_.init(rng);
    g_.init(rng);
    wz_.init(rng);
  }

  Fmap<T> forward(const Fmap<T>& x, bool train) override {
    (void)train;
    th_ = theta_.forward(x);
    ph_ = phi_.forward(x);
    gg_ = g_.forward(x);
    const int hw = x.h * x.w;
    attn_ = Tensor<T>({x.n, hw, hw});
    Fmap<T> y(x.n, x.h, x.w, e_);
    for (int s = 0; s < x.n; ++s) {
      auto tm = block(th_, s, hw);
      auto pm = block(ph_, s, hw);
      auto gm = block(gg_, s, hw);
      MatMap<T> a(attn_.data() + static_cast<std::int64_t>(s) * hw * hw, hw, hw);
      a.noalias() = tm * pm.transpose();
      for (int i = 0; i < hw; ++i) {
        auto row = a.row(i);
        const T m = row.maxCoeff();
        row = (row.array() - m).exp();
        row /= row.sum();
      }
      MatMap<T>(y.row(static_cast<std::int64_t>(s) * hw), hw, e_).noalias() = a * gm;
    }
    auto z = wz_.forward(y);
    z.mat() += x.mat();
    return z;
  }

  Fmap<T> backward(const Fmap<T>& dy) override {
    auto dyattn = wz_.backward(dy);
    const int hw = dy.h * dy.w;
    Fmap<T> dth(dy.n, dy.h, dy.w, e_), dph(dy.n, dy.h, dy.w, e_), dgg(dy.n, dy.h, dy.w, e_);
    RowMat<T> da(hw, hw), ds(hw, hw);
    for (int s = 0; s < dy.n; ++s) {
      ConstMatMap<T> a(attn_.data() + static_cast<std::int64_t>(s) * hw * hw, hw, hw);
      auto dym = block(dyattn, s, hw);
      auto tm = block(th_, s, hw);
      auto pm = block(ph_, s, hw);
      auto gm = block(gg_, s, hw);
      da.noalias() = dym * gm.transpose();
      MatMap<T>(dgg.row(static_cast<std::int64_t>(s) * hw), hw, e_).noalias() =
          a.transpose() * dym;
      for (int i = 0; i < hw; ++i) {
        const T dot = da.row(i).dot(a.row(i));
        ds.row(i) = a.row(i).array() * (da.row(i).array() - dot);
      }
      MatMap<T>(dth.row(static_cast<std::int64_t>(s) * hw), hw, e_).noalias() = ds * pm;
      MatMap<T>(dph.row(static_cast<std::int64_t>(s) * hw), hw, e_).noalias() =
          ds.transpose() * tm;
    }
    auto dx = theta_.backward(dth);
    dx.mat() += phi_.backward(dph).mat();
    dx.mat() += g_.backward(dgg).mat();
    dx.mat() += dy.mat();
    return dx;
  }

  void collect(ParamRefs<T>& out, const std::string& p) override {
    theta_.collect(out, p + ".theta");
    phi_.collect(out, p + ".phi");
    g_.collect(out, p + ".g");
    wz_.collect(out, p + ".wz");
  }

  void collect_state(StateRefs<T>&, const std::string&) override {}

  std::int64_t parameter_count() const override {
    return theta_.parameter_count() + phi_.parameter_count() +
           g_.parameter_count() + wz_.parameter_count();
  }

  std::string kind() const override { return "nonlocal"; }

  Conv2d<T>& wz() { return wz_; }

 private:
  static ConstMatMap<T> block(const Fmap<T>& f, int sample, int hw) {
    return ConstMatMap<T>(f.row(static_cast<std::int64_t>(sample) * hw), hw, f.c);
  }

  int ch_, e_;
  Conv2d<T> theta_, phi_, g_, wz_;
  Fmap<T> th_, ph_, gg_;
  Tensor<T> attn_;
};

/// fc-head: flatten the RoI grid and apply two affine+rectifier layers.
/// With the default 256x7x7 input and width 1024 this carries about 13.9M
/// parameters (12544*1024 + 1024*1024 weights plus biases).
template <class T>
class FcHead {
 public:
  FcHead() = default;
  FcHead(int in_c, int grid_h, int grid_w, int width = 1024)
      : in_c_(in_c), gh_(grid_h), gw_(grid_w), width_(width),
        fc1_(in_c * grid_h * grid_w, width), fc2_(width, width) {}

  void init(Rng& rng) {
    fc1_.init(rng);
    fc2_.init(rng);
  }

  Tensor<T> forward(const Fmap<T>& x) {
    check_contract(x.c == in_c_ && x.h == gh_ && x.w == gw_, "fc-head: input grid mismatch");
    in_shape_ = {x.n, x.h, x.w, x.c};
    Tensor<T> flat({x.n, gh_ * gw_ * in_c_});
    std::copy(x.t.data(), x.t.data() + x.t.size(), flat.data());
    return r2_.forward(fc2_.forward(r1_.forward(fc1_.forward(flat))));
  }

  Fmap<T> backward(const Tensor<T>& dfeat) {
    auto dflat = fc1_.backward(r1_.backward(fc2_.backward(r2_.backward(dfeat))));
    Fmap<T> dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    std::copy(dflat.data(), dflat.data() + dflat.size(), dx.t.data());
    return dx;
  }

  void collect(ParamRefs<T>& out, const std::string& p) {
    fc1_.collect(out, p + ".fc1");
    fc2_.collect(out, p + ".fc2");
  }

  void collect_state(StateRefs<T>&, const std::string&) {}

  std::int64_t parameter_count() const {
    return fc1_.parameter_count() + fc2_.parameter_count();
  }

  int width() const { return width_; }
  int grid_h() const { return gh_; }
  int grid_w() const { return gw_; }
  int in_channels() const { return in_c_; }
  Linear<T>& fc1() { return fc1_; }
  const Linear<T>& fc1() const { return fc1_; }

 private:
  int in_c_ = 256, gh_ = 7, gw_ = 7, width_ = 1024;
  Linear<T> fc1_, fc2_;
  ReLU<T> r1_, r2_;
  std::vector<int> in_shape_{0, 0, 0, 0};
};

struct ConvHeadConfig {
  int blocks = 5;             // K, counting non-local blocks
  bool use_nonlocal = true;   // alternate (K+1)/2 residual and (K-1)/2 non-local
  int nonlocal_embed = 512;
  int in_channels = 256;
  int mid_channels = 256;
  int trunk_channels = 1024;
  NormKind norm = NormKind::Batch;
  int norm_groups = 32;

  void validate() const {
    if (blocks < 1)
      throw ConfigError("conv-head: blocks must be >= 1 (the up block is mandatory)");
    if (use_nonlocal && blocks % 2 == 0)
      throw ConfigError("conv-head: non-local arrangement requires an odd block count");
    if (nonlocal_embed < 1 || in_channels < 1 || mid_channels < 1 || trunk_channels < 1)
      throw ConfigError("conv-head: channel widths must be positive");
  }
};

/// conv-head: up block, then alternating (non-local, bottleneck) pairs when
/// non-local is enabled, otherwise bottlenecks only; global average pooling
/// produces the head feature vector. The pre-pooling grid is kept for
/// analysis consumers.
template <class T>
class ConvHead {
 public:
  ConvHead() = default;
  explicit ConvHead(const ConvHeadConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    blocks_.push_back(std::make_unique<ResidualUpBlock<T>>(
        cfg_.in_channels, cfg_.mid_channels, cfg_.trunk_channels, cfg_.norm));
    if (cfg_.use_nonlocal) {
      for (int i = 1; i < cfg_.blocks; i += 2) {
        blocks_.push_back(std::make_unique<NonLocalBlock<T>>(cfg_.trunk_channels,
                                                             cfg_.nonlocal_embed));
        blocks_.push_back(std::make_unique<BottleneckBlock<T>>(
            cfg_.trunk_channels, cfg_.mid_channels, cfg_.norm));
      }
    } else {
      for (int i = 1; i < cfg_.blocks; ++i)
        blocks_.push_back(std::make_unique<BottleneckBlock<T>>(
            cfg_.trunk_channels, cfg_.mid_channels, cfg_.norm));
    }
  }

  void init(Rng& rng) {
    for (auto& b : blocks_) b->init(rng);
  }

  Tensor<T> forward(const Fmap<T>& x, bool train) {
    check_contract(x.c == cfg_.in_channels, "conv-head: input channel mismatch");
    Fmap<T> cur = x;
    for (auto& b : blocks_) cur = b->forward(cur, train);
    prepool_ = cur;
    return pool_.forward(cur);
  }

  Fmap<T> backward(const Tensor<T>& dfeat) {
    Fmap<T> d = pool_.backward(dfeat);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) d = (*it)->backward(d);
    return d;
  }

  void collect(ParamRefs<T>& out, const std::string& p) {
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i]->collect(out, p + ".block" + std::to_string(i));
  }

  void collect_state(StateRefs<T>& out, const std::string& p) {
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i]->collect_state(out, p + ".block" + std::to_string(i));
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& b : blocks_) n += b->parameter_count();
    return n;
  }

  std::vector<std::string> block_kinds() const {
    std::vector<std::string> out;
    out.reserve(blocks_.size());
    for (const auto& b : blocks_) out.push_back(b->kind());
    return out;
  }

  /// Pre-pooling (trunk_channels, grid) activations from the last forward.
  const Fmap<T>& prepool() const { return prepool_; }
  int width() const { return cfg_.trunk_channels; }
  const ConvHeadConfig& config() const { return cfg_; }

 private:
  ConvHeadConfig cfg_;
  std::vector<std::unique_ptr<HeadBlock<T>>> blocks_;
  GlobalAvgPool<T> pool_;
  Fmap<T> prepool_;
};

/// Splits the first fc-head weight matrix into one submatrix per RoI grid
/// cell and evaluates each cell's contribution to the first-layer
/// pre-activation. Summing the reconstructed map over cells and adding the
/// bias reproduces fc1(x) exactly.
template <class T>
Fmap<T> reconstruct_fc_feature_map(const Tensor<T>& w, const Fmap<T>& roi) {
  const int hw = roi.h * roi.w;
  check_contract(w.dims().size() == 2 && w.dims()[0] == hw * roi.c,
                 "reconstruct: weight rows must equal grid cells times channels");
  const int width = w.dims()[1];
  Fmap<T> out(roi.n, roi.h, roi.w, width);
  auto wm = w.mat();
  for (int s = 0; s < roi.n; ++s) {
    for (int cell = 0; cell < hw; ++cell) {
      const std::int64_t r = static_cast<std::int64_t>(s) * hw + cell;
      ConstMatMap<T> xc(roi.row(r), 1, roi.c);
      MatMap<T>(out.row(r), 1, width).noalias() =
          xc * wm.middleRows(static_cast<std::int64_t>(cell) * roi.c, roi.c);
    }
  }
  return out;
}

}  // namespace duodet
