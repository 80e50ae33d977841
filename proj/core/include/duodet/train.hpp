// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <vector>

#include "duodet/errors.hpp"
#include "duodet/model.hpp"
#include "duodet/proposals.hpp"
#include "duodet/roi_align.hpp"

// End-to-end optimization loop: images through the backbone, sampled
// proposals through RoI pooling and the head units, SGD with momentum and
// weight decay on the engaged parameters. Single-threaded on purpose so a
// fixed seed reproduces runs byte for byte.
namespace duodet {

template <class T>
class Sgd {
 public:
  Sgd(ParamRefs<T> params, double momentum, double weight_decay)
      : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    velocity_.reserve(params_.size());
    for (auto* p : params_) velocity_.emplace_back(p->value.dims());
  }

  void zero_grad() {
    for (auto* p : params_) p->grad.zero();
  }

  void step(double lr) {
    const T m = static_cast<T>(momentum_);
    const T wd = static_cast<T>(weight_decay_);
    const T eta = static_cast<T>(lr);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& w = params_[k]->value;
      auto& g = params_[k]->grad;
      auto& v = velocity_[k];
      for (std::int64_t i = 0; i < w.size(); ++i) {
        v[i] = m * v[i] + g[i] + wd * w[i];
        w[i] -= eta * v[i];
      }
    }
  }

 private:
  ParamRefs<T> params_;
  std::vector<Tensor<T>> velocity_;
  double momentum_, weight_decay_;
};

template <class T>
struct TrainExample {
  Fmap<T> image;  // (1, h, w, 3)
  std::vector<GtObject> objects;
};

struct DivergenceReport {
  std::int64_t step = 0;
  double total = 0;
  double lr = 0;
  LossBreakdown breakdown;
};

struct TrainHooks {
  std::function<void(std::int64_t step, const LossBreakdown&)> on_step;
  std::function<double(std::int64_t step)> rpn_loss;  // optional extra term
  std::function<void(const DivergenceReport&)> on_divergence;
};

struct TrainResult {
  std::vector<LossBreakdown> history;
  std::int64_t background_only_batches = 0;
};

inline double lr_at(const TrainConfig& cfg, std::int64_t step) {
  double lr = cfg.lr;
  for (auto s : cfg.lr_decay_steps)
    if (step >= s) lr *= cfg.lr_decay_factor;
  return lr;
}

template <class T>
TrainResult train_detector(Detector<T>& model, const std::vector<TrainExample<T>>& data,
                           const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  check_contract(!data.empty(), "train: dataset is empty");
  const int h = data.front().image.h;
  const int w = data.front().image.w;
  for (const auto& ex : data) {
    check_contract(ex.image.n == 1 && ex.image.c == 3, "train: images must be (1,h,w,3)");
    check_contract(ex.image.h == h && ex.image.w == w, "train: images must share one size");
    check_contract(!ex.objects.empty(), "train: every image needs at least one object");
  }

  Rng rng(cfg.seed);
  Sgd<T> opt(model.active_params(), cfg.momentum, cfg.weight_decay);
  const double stride = model.stride();
  const int roi_size = model.config().roi_size;
  const int roi_samples = model.config().roi_samples;

  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // trigger a shuffle before the first step

  TrainResult result;
  result.history.reserve(static_cast<std::size_t>(cfg.steps));

  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    std::vector<int> batch(static_cast<std::size_t>(cfg.batch_images));
    for (auto& idx : batch) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      idx = order[cursor++];
    }

    Fmap<T> images(cfg.batch_images, h, w, 3);
    for (int b = 0; b < cfg.batch_images; ++b) {
      const auto& src = data[static_cast<std::size_t>(batch[static_cast<std::size_t>(b)])].image;
      std::memcpy(images.row(images.row_index(b, 0, 0)), src.row(0),
                  sizeof(T) * static_cast<std::size_t>(src.size()));
    }
    auto fmap = model.backbone_forward(images, true);

    std::vector<std::vector<Box>> boxes_per_image(static_cast<std::size_t>(cfg.batch_images));
    std::vector<int> labels;
    std::vector<BoxDelta> deltas;
    for (int b = 0; b < cfg.batch_images; ++b) {
      const auto& ex = data[static_cast<std::size_t>(batch[static_cast<std::size_t>(b)])];
      auto pb = sample_proposals(ex.objects, w, h, cfg, rng);
      if (pb.background_only) ++result.background_only_batches;
      for (const auto& p : pb.proposals) {
        boxes_per_image[static_cast<std::size_t>(b)].push_back(p.box);
        labels.push_back(p.label);
        deltas.push_back(p.target);
      }
    }

    const int total_p = static_cast<int>(labels.size());
    Fmap<T> rois(total_p, roi_size, roi_size, fmap.c);
    Tensor<T> targets({total_p, 4});
    {
      int at = 0;
      for (int b = 0; b < cfg.batch_images; ++b) {
        const auto& boxes = boxes_per_image[static_cast<std::size_t>(b)];
        if (boxes.empty()) continue;
        auto pooled = roi_align(fmap, b, boxes, stride, roi_size, roi_samples);
        std::memcpy(rois.row(rois.row_index(at, 0, 0)), pooled.row(0),
                    sizeof(T) * static_cast<std::size_t>(pooled.size()));
        at += static_cast<int>(boxes.size());
      }
      for (int i = 0; i < total_p; ++i) {
        targets[static_cast<std::int64_t>(i) * 4 + 0] = static_cast<T>(deltas[i].dx);
        targets[static_cast<std::int64_t>(i) * 4 + 1] = static_cast<T>(deltas[i].dy);
        targets[static_cast<std::int64_t>(i) * 4 + 2] = static_cast<T>(deltas[i].dw);
        targets[static_cast<std::int64_t>(i) * 4 + 3] = static_cast<T>(deltas[i].dh);
      }
    }

    opt.zero_grad();
    const double l_rpn = hooks.rpn_loss ? hooks.rpn_loss(step) : 0.0;
    auto breakdown = model.train_step_losses(rois, labels, targets, l_rpn);

    const double lr = lr_at(cfg, step);
    if (!std::isfinite(breakdown.total)) {
      DivergenceReport rep{step, breakdown.total, lr, breakdown};
      if (hooks.on_divergence) hooks.on_divergence(rep);
      throw DivergenceError("train: non-finite loss at step " + std::to_string(step));
    }

    // RoI gradients back through the pooling into the backbone.
    Fmap<T> dfmap(fmap.n, fmap.h, fmap.w, fmap.c);
    const auto& droi = model.roi_grad();
    {
      int at = 0;
      for (int b = 0; b < cfg.batch_images; ++b) {
        const auto& boxes = boxes_per_image[static_cast<std::size_t>(b)];
        if (boxes.empty()) continue;
        const int np = static_cast<int>(boxes.size());
        Fmap<T> dslice(np, roi_size, roi_size, droi.c);
        std::memcpy(dslice.row(0), droi.row(droi.row_index(at, 0, 0)),
                    sizeof(T) * static_cast<std::size_t>(dslice.size()));
        roi_align_backward(dslice, b, boxes, stride, dfmap, roi_samples);
        at += np;
      }
    }
    model.backbone_backward(dfmap);

    opt.step(lr);
    if (hooks.on_step) hooks.on_step(step, breakdown);
    result.history.push_back(breakdown);
  }
  return result;
}

}  // namespace duodet
