// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "duodet/errors.hpp"
#include "duodet/geometry.hpp"
#include "duodet/objectives.hpp"
#include "duodet/rng.hpp"

// Proposal sampling for training. A jittered cloud around each ground-truth
// box plus uniform random boxes stands in for an RPN at desk scale; labels
// come from IoU thresholding against the best-matching ground truth.
namespace duodet {

struct GtObject {
  Box box;
  int class_id = 0;  // in [1, C]
};

struct Proposal {
  Box box;
  int label = 0;      // 0 = background, otherwise class id
  BoxDelta target;    // defined iff label > 0
};

struct ProposalBatch {
  std::vector<Proposal> proposals;
  bool background_only = false;  // no foreground was achievable
};

struct TrainConfig {
  LossWeights weights;

  double lr = 0.02;
  std::vector<std::int64_t> lr_decay_steps;
  double lr_decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::int64_t steps = 500;
  int batch_images = 2;

  int proposals_per_image = 64;
  double fg_fraction = 0.25;
  double fg_iou = 0.5;
  double bg_iou = 0.5;
  std::vector<double> jitter_magnitudes{0.05, 0.1, 0.25, 0.5};
  int jitter_per_magnitude = 6;
  int random_per_image = 128;

  std::uint64_t seed = 1;

  void validate() const {
    weights.validate();
    if (!(lr >= 0)) throw ConfigError("train: lr must be non-negative");
    if (!(lr_decay_factor > 0 && lr_decay_factor <= 1))
      throw ConfigError("train: lr_decay_factor must lie in (0,1]");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train: momentum must lie in [0,1)");
    if (weight_decay < 0) throw ConfigError("train: weight_decay must be non-negative");
    if (steps < 0) throw ConfigError("train: steps must be non-negative");
    if (batch_images < 1) throw ConfigError("train: batch_images must be positive");
    if (proposals_per_image < 1) throw ConfigError("train: proposals_per_image must be positive");
    if (!(fg_fraction > 0 && fg_fraction < 1))
      throw ConfigError("train: fg_fraction must lie in (0,1)");
    if (!(bg_iou <= fg_iou)) throw ConfigError("train: IoU thresholds must be ordered");
    if (jitter_per_magnitude < 0 || random_per_image < 0)
      throw ConfigError("train: candidate counts must be non-negative");
    for (double m : jitter_magnitudes)
      if (m < 0) throw ConfigError("train: jitter magnitudes must be non-negative");
  }
};

namespace detail {

inline void label_candidate(Proposal& p, const std::vector<GtObject>& gts, double fg_iou) {
  double best = 0;
  int best_idx = -1;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const double v = iou(p.box, gts[g].box);
    if (v > best) {
      best = v;
      best_idx = static_cast<int>(g);
    }
  }
  if (best_idx >= 0 && best >= fg_iou) {
    p.label = gts[static_cast<std::size_t>(best_idx)].class_id;
    p.target = encode_delta(p.box, gts[static_cast<std::size_t>(best_idx)].box);
  } else {
    p.label = 0;
  }
}

}  // namespace detail

/// Draws labeled training proposals for one image. Deterministic given the
/// rng state; candidates below fg_iou but at or above bg_iou are discarded
/// (neither foreground nor background).
inline ProposalBatch sample_proposals(const std::vector<GtObject>& gts, double image_w,
                                      double image_h, const TrainConfig& cfg, Rng& rng) {
  check_contract(!gts.empty(), "sample_proposals: at least one ground-truth box required");
  std::vector<Proposal> fg, bg;
  auto consider = [&](const Box& b) {
    auto clipped = clip_box(b, image_w, image_h);
    if (!clipped) return;
    Proposal p;
    p.box = *clipped;
    double best = 0;
    for (const auto& gt : gts) best = std::max(best, iou(p.box, gt.box));
    if (best >= cfg.fg_iou) {
      detail::label_candidate(p, gts, cfg.fg_iou);
      fg.push_back(p);
    } else if (best < cfg.bg_iou) {
      p.label = 0;
      bg.push_back(p);
    }
  };

  for (const auto& gt : gts) {
    consider(gt.box);
    for (double mag : cfg.jitter_magnitudes) {
      for (int i = 0; i < cfg.jitter_per_magnitude; ++i) {
        const double cx = gt.box.cx() + rng.gaussian() * mag * gt.box.width();
        const double cy = gt.box.cy() + rng.gaussian() * mag * gt.box.height();
        const double w = gt.box.width() * std::exp(rng.gaussian() * mag);
        const double h = gt.box.height() * std::exp(rng.gaussian() * mag);
        consider(Box::from_center(cx, cy, w, h));
      }
    }
  }
  for (int i = 0; i < cfg.random_per_image; ++i) {
    const double w = std::exp(rng.uniform(std::log(8.0), std::log(0.9 * image_w)));
    const double h = std::exp(rng.uniform(std::log(8.0), std::log(0.9 * image_h)));
    const double cx = rng.uniform(0, image_w);
    const double cy = rng.uniform(0, image_h);
    consider(Box::from_center(cx, cy, w, h));
  }

  const int want_fg = std::max(1, static_cast<int>(cfg.proposals_per_image * cfg.fg_fraction));
  rng.shuffle(fg);
  rng.shuffle(bg);
  ProposalBatch batch;
  const int take_fg = std::min<int>(want_fg, static_cast<int>(fg.size()));
  for (int i = 0; i < take_fg; ++i) batch.proposals.push_back(fg[static_cast<std::size_t>(i)]);
  const int take_bg =
      std::min<int>(cfg.proposals_per_image - take_fg, static_cast<int>(bg.size()));
  for (int i = 0; i < take_bg; ++i) batch.proposals.push_back(bg[static_cast<std::size_t>(i)]);
  // backfill with leftover foreground when background is scarce
  for (int i = take_fg;
       i < static_cast<int>(fg.size()) &&
       static_cast<int>(batch.proposals.size()) < cfg.proposals_per_image;
       ++i)
    batch.proposals.push_back(fg[static_cast<std::size_t>(i)]);
  batch.background_only = take_fg == 0;
  return batch;
}

/// Deterministic multi-scale anchor grid used as first-pass inference
/// proposals.
inline std::vector<Box> inference_grid(double image_w, double image_h, double stride,
                                       const std::vector<double>& scales = {24, 48, 96, 176},
                                       const std::vector<double>& aspects = {0.5, 1.0, 2.0}) {
  std::vector<Box> out;
  for (double cy = stride / 2; cy < image_h; cy += stride) {
    for (double cx = stride / 2; cx < image_w; cx += stride) {
      for (double s : scales) {
        for (double a : aspects) {
          const double w = s * std::sqrt(a);
          const double h = s / std::sqrt(a);
          if (auto c = clip_box(Box::from_center(cx, cy, w, h), image_w, image_h))
            out.push_back(*c);
        }
      }
    }
  }
  return out;
}

}  // namespace duodet
