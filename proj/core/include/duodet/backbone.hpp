// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "duodet/errors.hpp"
#include "duodet/nn.hpp"

// Single-level stride-16 backbone: four 3x3 stride-2 conv/norm/relu stages
// from RGB to 256 channels. Group norm by default; a from-scratch desk
// backbone has no pretrained batch statistics worth freezing.
namespace duodet {

template <class T>
class Backbone {
 public:
  static constexpr int kStride = 16;
  static constexpr int kOutChannels = 256;

  explicit Backbone(NormKind norm = NormKind::Group, int width = 32)
      : conv1_(3, width, 3, 2), n1_(norm, width),
        conv2_(width, width * 2, 3, 2), n2_(norm, width * 2),
        conv3_(width * 2, width * 4, 3, 2), n3_(norm, width * 4),
        conv4_(width * 4, kOutChannels, 3, 2), n4_(norm, kOutChannels) {}

  void init(Rng& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
    conv3_.init(rng);
    conv4_.init(rng);
  }

  Fmap<T> forward(const Fmap<T>& image, bool train) {
    check_contract(image.c == 3, "backbone: expected RGB input");
    check_contract(image.h % kStride == 0 && image.w % kStride == 0,
                   "backbone: image size must be a multiple of 16");
    auto a = r1_.forward(n1_.forward(conv1_.forward(image), train));
    auto b = r2_.forward(n2_.forward(conv2_.forward(a), train));
    auto c = r3_.forward(n3_.forward(conv3_.forward(b), train));
    return r4_.forward(n4_.forward(conv4_.forward(c), train));
  }

  Fmap<T> backward(const Fmap<T>& dy) {
    auto d3 = conv4_.backward(n4_.backward(r4_.backward(dy)));
    auto d2 = conv3_.backward(n3_.backward(r3_.backward(d3)));
    auto d1 = conv2_.backward(n2_.backward(r2_.backward(d2)));
    return conv1_.backward(n1_.backward(r1_.backward(d1)));
  }

  void collect(ParamRefs<T>& out, const std::string& p) {
    conv1_.collect(out, p + ".conv1");
    n1_.collect(out, p + ".n1");
    conv2_.collect(out, p + ".conv2");
    n2_.collect(out, p + ".n2");
    conv3_.collect(out, p + ".conv3");
    n3_.collect(out, p + ".n3");
    conv4_.collect(out, p + ".conv4");
    n4_.collect(out, p + ".n4");
  }

  void collect_state(std::vector<std::pair<std::string, Tensor<T>*>>& out, const std::string& p) {
    n1_.collect_state(out, p + ".n1");
    n2_.collect_state(out, p + ".n2");
    n3_.collect_state(out, p + ".n3");
    n4_.collect_state(out, p + ".n4");
  }

  std::int64_t parameter_count() const {
    return conv1_.parameter_count() + conv2_.parameter_count() + conv3_.parameter_count() +
           conv4_.parameter_count() + n1_.parameter_count() + n2_.parameter_count() +
           n3_.parameter_count() + n4_.parameter_count();
  }

 private:
  Conv2d<T> conv1_;
  Norm2d<T> n1_;
  Conv2d<T> conv2_;
  Norm2d<T> n2_;
  Conv2d<T> conv3_;
  Norm2d<T> n3_;
  Conv2d<T> conv4_;
  Norm2d<T> n4_;
  ReLU<T> r1_, r2_, r3_, r4_;
};

}  // namespace duodet
