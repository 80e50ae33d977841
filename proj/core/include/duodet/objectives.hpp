// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "duodet/errors.hpp"
#include "duodet/tensor.hpp"

// Training objective for the two-head detector:
//   total = omega_fc * L_fc + omega_conv * L_conv + L_rpn
//   L_fc   = lambda_fc * cls + (1 - lambda_fc) * reg
//   L_conv = (1 - lambda_conv) * cls + lambda_conv * reg
// plus the complementary score fusion used at inference.
namespace duodet {

struct LossWeights {
  double omega_fc = 2.0;
  double omega_conv = 2.5;
  double lambda_fc = 0.7;
  double lambda_conv = 0.8;

  void validate() const {
    if (!(omega_fc >= 0.0) || !(omega_conv >= 0.0))
      throw ConfigError("loss weights: omega must be >= 0");
    if (!(lambda_fc >= 0.0 && lambda_fc <= 1.0))
      throw ConfigError("loss weights: lambda_fc must lie in [0,1]");
    if (!(lambda_conv >= 0.0 && lambda_conv <= 1.0))
      throw ConfigError("loss weights: lambda_conv must lie in [0,1]");
  }

  // Score fusion needs a classifier on both heads: the fc branch trains one
  // iff lambda_fc > 0 and the conv branch iff lambda_conv < 1.
  bool fusion_applicable() const { return lambda_fc != 0.0 && lambda_conv != 1.0; }

  double fc_cls_coeff() const { return lambda_fc; }
  double fc_reg_coeff() const { return 1.0 - lambda_fc; }
  double conv_cls_coeff() const { return 1.0 - lambda_conv; }
  double conv_reg_coeff() const { return lambda_conv; }
};

template <class T>
struct LossGrad {
  T value = T(0);
  Tensor<T> grad;
};

/// Softmax cross-entropy averaged over all rows. Labels are class indices
/// with 0 = background.
template <class T>
LossGrad<T> cls_loss(const Tensor<T>& logits, const std::vector<int>& labels) {
  const auto dims = logits.dims();
  check_contract(dims.size() == 2, "cls_loss: logits must be (n, classes)");
  const int n = dims[0], k = dims[1];
  check_contract(static_cast<int>(labels.size()) == n, "cls_loss: label count mismatch");
  LossGrad<T> out;
  out.grad = Tensor<T>({n, k});
  auto lm = logits.mat();
  auto gm = out.grad.mat();
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    check_contract(labels[i] >= 0 && labels[i] < k, "cls_loss: label out of range");
    const T mx = lm.row(i).maxCoeff();
    gm.row(i) = (lm.row(i).array() - mx).exp();
    const T z = gm.row(i).sum();
    gm.row(i) /= z;
    loss -= std::log(static_cast<double>(gm(i, labels[i])));
    gm(i, labels[i]) -= T(1);
  }
  gm /= static_cast<T>(n);
  out.value = static_cast<T>(loss / n);
  return out;
}

/// Smooth-L1 (beta = 1) on the true-class delta slice, averaged over the
/// foreground rows. Background rows contribute no loss and no gradient.
/// With no foreground at all the loss is exactly zero and *had_foreground
/// reports it.
template <class T>
LossGrad<T> reg_loss(const Tensor<T>& deltas, const std::vector<int>& labels,
                     const Tensor<T>& targets, bool* had_foreground = nullptr) {
  const auto dims = deltas.dims();
  check_contract(dims.size() == 2 && dims[1] % 4 == 0, "reg_loss: deltas must be (n, 4*classes)");
  const int n = dims[0];
  const int num_classes = dims[1] / 4;
  check_contract(static_cast<int>(labels.size()) == n, "reg_loss: label count mismatch");
  check_contract(targets.dims().size() == 2 && targets.dims()[0] == n && targets.dims()[1] == 4,
                 "reg_loss: targets must be (n, 4)");
  LossGrad<T> out;
  out.grad = Tensor<T>(dims);
  int fg = 0;
  for (int i = 0; i < n; ++i)
    if (labels[i] > 0) ++fg;
  if (had_foreground) *had_foreground = fg > 0;
  if (fg == 0) return out;

  auto dm = deltas.mat();
  auto tm = targets.mat();
  auto gm = out.grad.mat();
  double loss = 0.0;
  const T scale = T(1) / static_cast<T>(fg);
  for (int i = 0; i < n; ++i) {
    if (labels[i] <= 0) continue;
    check_contract(labels[i] <= num_classes, "reg_loss: label exceeds class count");
    const int off = 4 * (labels[i] - 1);
    for (int j = 0; j < 4; ++j) {
      const T d = dm(i, off + j) - tm(i, j);
      const T a = std::abs(d);
      if (a < T(1)) {
        loss += 0.5 * static_cast<double>(d) * d;
        gm(i, off + j) = d * scale;
      } else {
        loss += static_cast<double>(a) - 0.5;
        gm(i, off + j) = (d > T(0) ? scale : -scale);
      }
    }
  }
  out.value = static_cast<T>(loss / fg);
  return out;
}

/// Per-branch losses for one optimization step. Branches a variant does not
/// instantiate stay disengaged (nullopt) and serialize as empty CSV cells.
struct LossBreakdown {
  double total = 0.0;
  double l_rpn = 0.0;
  std::optional<double> l_fc, fc_cls, fc_reg;
  std::optional<double> l_conv, conv_cls, conv_reg;

  static std::string csv_header() {
    return "step,total,l_fc,l_conv,fc_cls,fc_reg,conv_cls,conv_reg,l_rpn";
  }

  std::string csv_row(std::int64_t step) const {
    auto cell = [](const std::optional<double>& v) -> std::string {
      if (!v) return "";
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.10g", *v);
      return buf;
    };
    char head[64];
    std::snprintf(head, sizeof(head), "%lld,%.10g", static_cast<long long>(step), total);
    std::string row = head;
    for (const auto* v : {&l_fc, &l_conv, &fc_cls, &fc_reg, &conv_cls, &conv_reg})
      row += "," + cell(*v);
    char rpn[32];
    std::snprintf(rpn, sizeof(rpn), ",%.10g", l_rpn);
    return row + rpn;
  }
};

inline double fc_branch_loss(const LossWeights& w, double cls, double reg) {
  return w.lambda_fc * cls + (1.0 - w.lambda_fc) * reg;
}

inline double conv_branch_loss(const LossWeights& w, double cls, double reg) {
  return (1.0 - w.lambda_conv) * cls + w.lambda_conv * reg;
}

enum class FusionMode { Complementary, Max, Average };

inline const char* fusion_mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::Complementary: return "complementary";
    case FusionMode::Max: return "max";
    case FusionMode::Average: return "avg";
  }
  return "?";
}

inline FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "complementary") return FusionMode::Complementary;
  if (s == "max") return FusionMode::Max;
  if (s == "avg") return FusionMode::Average;
  throw ConfigError("fusion: unknown mode '" + s + "' (expected complementary, max or avg)");
}

/// Complementary fusion of two classifier scores:
///   s = s_fc + s_conv * (1 - s_fc).
/// Symmetric, bounded by [max(s_fc, s_conv), 1], and increases the stronger
/// score by a fraction of the remaining headroom.
template <class T>
constexpr T fuse_complementary(T s_fc, T s_conv) {
  return s_fc + s_conv * (T(1) - s_fc);
}

template <class T>
constexpr T fuse_max(T a, T b) {
  return a > b ? a : b;
}

template <class T>
constexpr T fuse_average(T a, T b) {
  return (a + b) / T(2);
}

template <class T>
T fuse_scores(FusionMode mode, T s_fc, T s_conv) {
  switch (mode) {
    case FusionMode::Complementary: return fuse_complementary(s_fc, s_conv);
    case FusionMode::Max: return fuse_max(s_fc, s_conv);
    case FusionMode::Average: return fuse_average(s_fc, s_conv);
  }
  throw ContractViolation("fuse_scores: unknown mode");
}

}  // namespace duodet
