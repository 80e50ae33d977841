// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "duodet/backbone.hpp"
#include "duodet/errors.hpp"
#include "duodet/heads.hpp"
#include "duodet/objectives.hpp"
#include "duodet/tensor.hpp"

// The seven head-assignment variants over a shared skeleton. Every head
// unit owns a classifier and a regressor; the variant fixes per-task
// coefficients, and outputs with a zero coefficient are neither computed,
// trained, nor available at inference. This makes the vanilla assignments
// exact boundary cases of the extended (unfocused-supervision) form.
namespace duodet {

enum class DetectorVariant {
  SingleFC,
  SingleConv,
  DoubleFC,
  DoubleConv,
  DoubleHead,
  DoubleHeadReverse,
  DoubleHeadExt,
};

inline const char* variant_name(DetectorVariant v) {
  switch (v) {
    case DetectorVariant::SingleFC: return "single-fc";
    case DetectorVariant::SingleConv: return "single-conv";
    case DetectorVariant::DoubleFC: return "double-fc";
    case DetectorVariant::DoubleConv: return "double-conv";
    case DetectorVariant::DoubleHead: return "double-head";
    case DetectorVariant::DoubleHeadReverse: return "double-head-reverse";
    case DetectorVariant::DoubleHeadExt: return "double-head-ext";
  }
  return "?";
}

inline std::optional<DetectorVariant> parse_variant(const std::string& s) {
  for (auto v : {DetectorVariant::SingleFC, DetectorVariant::SingleConv,
                 DetectorVariant::DoubleFC, DetectorVariant::DoubleConv,
                 DetectorVariant::DoubleHead, DetectorVariant::DoubleHeadReverse,
                 DetectorVariant::DoubleHeadExt}) {
    if (s == variant_name(v)) return v;
  }
  return std::nullopt;
}

enum class HeadStructure { Fc, Conv };

struct DetectorConfig {
  DetectorVariant variant = DetectorVariant::DoubleHead;
  int num_classes = 3;
  int roi_size = 7;
  int roi_samples = 2;
  int backbone_width = 32;
  NormKind backbone_norm = NormKind::Group;
  int fc_width = 1024;
  ConvHeadConfig conv_head;
  LossWeights weights;
  bool fusion_enabled = true;
  FusionMode fusion_mode = FusionMode::Complementary;

  void validate() const {
    weights.validate();
    if (num_classes < 1) throw ConfigError("detector: num_classes must be >= 1");
    if (roi_size < 1) throw ConfigError("detector: roi_size must be >= 1");
    if (roi_samples < 1) throw ConfigError("detector: roi_samples must be >= 1");
    if (fc_width < 1) throw ConfigError("detector: fc_width must be >= 1");
    if (backbone_width < 1) throw ConfigError("detector: backbone_width must be >= 1");
    conv_head.validate();
  }
};

template <class T>
class Detector {
 public:
  struct HeadUnit {
    HeadStructure structure;
    std::string name;
    double cls_coeff = 0;  // weight of the classification term inside the branch loss
    double reg_coeff = 0;  // weight of the regression term
    double omega = 1;      // branch weight in the total loss
    FcHead<T> fc;
    ConvHead<T> conv;
    Linear<T> classifier;
    Linear<T> regressor;
  };

  explicit Detector(DetectorConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    backbone_ = Backbone<T>(cfg_.backbone_norm, cfg_.backbone_width);
    const auto& w = cfg_.weights;
    switch (cfg_.variant) {
      case DetectorVariant::SingleFC:
        add_unit(HeadStructure::Fc, "fc", w.fc_cls_coeff(), w.fc_reg_coeff(), w.omega_fc);
        break;
      case DetectorVariant::SingleConv:
        add_unit(HeadStructure::Conv, "conv", w.conv_cls_coeff(), w.conv_reg_coeff(),
                 w.omega_conv);
        break;
      case DetectorVariant::DoubleFC:
        add_unit(HeadStructure::Fc, "fc_cls", 1, 0, w.omega_fc);
        add_unit(HeadStructure::Fc, "fc_reg", 0, 1, w.omega_fc);
        break;
      case DetectorVariant::DoubleConv:
        add_unit(HeadStructure::Conv, "conv_cls", 1, 0, w.omega_conv);
        add_unit(HeadStructure::Conv, "conv_reg", 0, 1, w.omega_conv);
        break;
      case DetectorVariant::DoubleHead:
        add_unit(HeadStructure::Fc, "fc", 1, 0, w.omega_fc);
        add_unit(HeadStructure::Conv, "conv", 0, 1, w.omega_conv);
        break;
      case DetectorVariant::DoubleHeadReverse:
        add_unit(HeadStructure::Fc, "fc", 0, 1, w.omega_fc);
        add_unit(HeadStructure::Conv, "conv", 1, 0, w.omega_conv);
        break;
      case DetectorVariant::DoubleHeadExt:
        add_unit(HeadStructure::Fc, "fc", w.fc_cls_coeff(), w.fc_reg_coeff(), w.omega_fc);
        add_unit(HeadStructure::Conv, "conv", w.conv_cls_coeff(), w.conv_reg_coeff(),
                 w.omega_conv);
        break;
    }
  }

  void init(Rng& rng) {
    backbone_.init(rng);
    for (auto& u : units_) {
      if (u.structure == HeadStructure::Fc) {
        u.fc.init(rng);
      } else {
        u.conv.init(rng);
      }
      u.classifier.init(rng, 0.01);
      u.regressor.init(rng, 0.001);
    }
  }

  Fmap<T> backbone_forward(const Fmap<T>& image, bool train) {
    return backbone_.forward(image, train);
  }
  Fmap<T> backbone_backward(const Fmap<T>& d) { return backbone_.backward(d); }

  /// One supervised pass over a batch of pooled RoIs. Accumulates parameter
  /// gradients for every engaged branch and keeps the RoI gradient for the
  /// caller (see roi_grad()). Branches with coefficient zero are skipped
  /// entirely, so their gradients stay exactly zero.
  LossBreakdown train_step_losses(const Fmap<T>& rois, const std::vector<int>& labels,
                                  const Tensor<T>& targets, double l_rpn = 0.0) {
    LossBreakdown out;
    out.l_rpn = l_rpn;
    droi_ = Fmap<T>(rois.n, rois.h, rois.w, rois.c);
    double total = l_rpn;
    for (auto& u : units_) {
      auto feat = trunk_forward(u, rois, true);
      Tensor<T> dfeat(feat.dims());
      double branch = 0;
      std::optional<double> cls_val, reg_val;
      if (u.cls_coeff > 0) {
        auto logits = u.classifier.forward(feat);
        auto cls = cls_loss(logits, labels);
        cls_val = static_cast<double>(cls.value);
        branch += u.cls_coeff * *cls_val;
        cls.grad.mat() *= static_cast<T>(u.omega * u.cls_coeff);
        dfeat.mat() += u.classifier.backward(cls.grad).mat();
      }
      if (u.reg_coeff > 0) {
        auto deltas = u.regressor.forward(feat);
        auto reg = reg_loss(deltas, labels, targets);
        reg_val = static_cast<double>(reg.value);
        branch += u.reg_coeff * *reg_val;
        reg.grad.mat() *= static_cast<T>(u.omega * u.reg_coeff);
        dfeat.mat() += u.regressor.backward(reg.grad).mat();
      }
      total += u.omega * branch;
      droi_.mat() += trunk_backward(u, dfeat).mat();
      record_branch(out, u, branch, cls_val, reg_val);
    }
    out.total = total;
    return out;
  }

  /// Gradient w.r.t. the pooled RoI batch from the last train_step_losses.
  const Fmap<T>& roi_grad() const { return droi_; }

  struct RoiScores {
    Tensor<T> probs;   // (P, C+1) softmax from the configured provider (fused for Ext)
    Tensor<T> deltas;  // (P, 4C) from the regression provider
  };

  /// Evaluation-mode scoring of pooled RoIs along the variant's inference
  /// path. Requesting an output whose training coefficient was zero is a
  /// contract violation.
  RoiScores infer_rois(const Fmap<T>& rois) {
    RoiScores out;
    if (cfg_.variant == DetectorVariant::DoubleHeadExt && cfg_.fusion_enabled &&
        cfg_.weights.fusion_applicable()) {
      auto p_fc = unit_probs(unit_by_name("fc"), rois);
      auto p_conv = unit_probs(unit_by_name("conv"), rois);
      out.probs = Tensor<T>(p_fc.dims());
      for (std::int64_t i = 0; i < p_fc.size(); ++i)
        out.probs[i] = fuse_scores(cfg_.fusion_mode, p_fc[i], p_conv[i]);
    } else {
      out.probs = unit_probs(cls_provider(), rois);
    }
    auto& ru = reg_provider();
    check_contract(ru.reg_coeff > 0, "infer: regression output not available for " + ru.name);
    out.deltas = ru.regressor.forward(trunk_forward(ru, rois, false));
    return out;
  }

  /// Evaluation-mode head feature (pre-output vector) for one unit.
  Tensor<T> head_feature(const std::string& name, const Fmap<T>& rois) {
    return trunk_forward(unit_by_name(name), rois, false);
  }

  /// Named-unit outputs. Requesting a task the unit was not trained for is a
  /// contract violation, matching the inference routing rules.
  Tensor<T> unit_cls_probs(const std::string& name, const Fmap<T>& rois) {
    return unit_probs(unit_by_name(name), rois);
  }
  Tensor<T> unit_reg_deltas(const std::string& name, const Fmap<T>& rois) {
    auto& u = unit_by_name(name);
    check_contract(u.reg_coeff > 0, "infer: regression output not available for " + u.name);
    return u.regressor.forward(trunk_forward(u, rois, false));
  }

  bool fusion_active() const {
    return cfg_.variant == DetectorVariant::DoubleHeadExt && cfg_.fusion_enabled &&
           cfg_.weights.fusion_applicable();
  }

  /// Pre-pool activation map of a conv unit from its last forward.
  const Fmap<T>& conv_prepool(const std::string& name) {
    auto& u = unit_by_name(name);
    check_contract(u.structure == HeadStructure::Conv, "prepool: not a conv head");
    return u.conv.prepool();
  }

  /// First fc layer weight of an fc unit (used by the reconstruction).
  const Tensor<T>& fc1_weight(const std::string& name) {
    auto& u = unit_by_name(name);
    check_contract(u.structure == HeadStructure::Fc, "fc1_weight: not an fc head");
    return u.fc.fc1().weight();
  }

  ParamRefs<T> params() {
    ParamRefs<T> out;
    backbone_.collect(out, "backbone");
    for (auto& u : units_) collect_unit(u, out);
    return out;
  }

  /// Parameters of engaged branches only: the backbone, every head trunk,
  /// and output layers whose coefficient is positive.
  ParamRefs<T> active_params() {
    ParamRefs<T> out;
    backbone_.collect(out, "backbone");
    for (auto& u : units_) {
      if (u.structure == HeadStructure::Fc) {
        u.fc.collect(out, u.name);
      } else {
        u.conv.collect(out, u.name);
      }
      if (u.cls_coeff > 0) u.classifier.collect(out, u.name + ".cls");
      if (u.reg_coeff > 0) u.regressor.collect(out, u.name + ".reg");
    }
    return out;
  }

  StateRefs<T> state() {
    StateRefs<T> out;
    backbone_.collect_state(out, "backbone");
    for (auto& u : units_) {
      if (u.structure == HeadStructure::Conv) u.conv.collect_state(out, u.name);
    }
    return out;
  }

  /// Copies parameter and state values from a structurally identical model.
  void copy_values_from(Detector& other) {
    auto a = params();
    auto b = other.params();
    check_contract(a.size() == b.size(), "copy_values_from: structure mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) {
      check_contract(a[i]->value.same_shape(b[i]->value), "copy_values_from: shape mismatch");
      a[i]->value = b[i]->value;
    }
    auto sa = state();
    auto sb = other.state();
    for (std::size_t i = 0; i < sa.size(); ++i) *sa[i].second = *sb[i].second;
  }

  const DetectorConfig& config() const { return cfg_; }
  int num_classes() const { return cfg_.num_classes; }
  double stride() const { return Backbone<T>::kStride; }

  std::vector<std::string> unit_names() const {
    std::vector<std::string> out;
    for (const auto& u : units_) out.push_back(u.name);
    return out;
  }

  struct UnitInfo {
    std::string name;
    HeadStructure structure;
    double cls_coeff, reg_coeff, omega;
  };
  std::vector<UnitInfo> unit_info() const {
    std::vector<UnitInfo> out;
    for (const auto& u : units_)
      out.push_back({u.name, u.structure, u.cls_coeff, u.reg_coeff, u.omega});
    return out;
  }

  std::int64_t parameter_count() {
    std::int64_t n = 0;
    for (auto* p : params()) n += p->value.size();
    return n;
  }

  HeadUnit& unit_by_name(const std::string& name) {
    for (auto& u : units_)
      if (u.name == name) return u;
    throw ContractViolation("no head unit named " + name);
  }

 private:
  void add_unit(HeadStructure s, std::string name, double cls_coeff, double reg_coeff,
                double omega) {
    auto& u = units_.emplace_back();
    u.structure = s;
    u.name = std::move(name);
    u.cls_coeff = cls_coeff;
    u.reg_coeff = reg_coeff;
    u.omega = omega;
    const int width = s == HeadStructure::Fc ? cfg_.fc_width : cfg_.conv_head.trunk_channels;
    if (s == HeadStructure::Fc) {
      u.fc = FcHead<T>(256, cfg_.roi_size, cfg_.roi_size, cfg_.fc_width);
    } else {
      auto hc = cfg_.conv_head;
      hc.in_channels = 256;
      u.conv = ConvHead<T>(hc);
    }
    u.classifier = Linear<T>(width, cfg_.num_classes + 1);
    u.regressor = Linear<T>(width, 4 * cfg_.num_classes);
  }

  Tensor<T> trunk_forward(HeadUnit& u, const Fmap<T>& rois, bool train) {
    return u.structure == HeadStructure::Fc ? u.fc.forward(rois) : u.conv.forward(rois, train);
  }
  Fmap<T> trunk_backward(HeadUnit& u, const Tensor<T>& dfeat) {
    return u.structure == HeadStructure::Fc ? u.fc.backward(dfeat) : u.conv.backward(dfeat);
  }

  void collect_unit(HeadUnit& u, ParamRefs<T>& out) {
    if (u.structure == HeadStructure::Fc) {
      u.fc.collect(out, u.name);
    } else {
      u.conv.collect(out, u.name);
    }
    u.classifier.collect(out, u.name + ".cls");
    u.regressor.collect(out, u.name + ".reg");
  }

  void record_branch(LossBreakdown& out, const HeadUnit& u, double branch,
                     std::optional<double> cls_val, std::optional<double> reg_val) {
    if (u.structure == HeadStructure::Fc) {
      out.l_fc = out.l_fc.value_or(0.0) + branch;
      if (cls_val) out.fc_cls = cls_val;
      if (reg_val) out.fc_reg = reg_val;
    } else {
      out.l_conv = out.l_conv.value_or(0.0) + branch;
      if (cls_val) out.conv_cls = cls_val;
      if (reg_val) out.conv_reg = reg_val;
    }
  }

  Tensor<T> unit_probs(HeadUnit& u, const Fmap<T>& rois) {
    check_contract(u.cls_coeff > 0,
                   "infer: classification output not available for " + u.name);
    auto logits = u.classifier.forward(trunk_forward(u, rois, false));
    // softmax rows
    Tensor<T> probs(logits.dims());
    auto lm = logits.mat();
    auto pm = probs.mat();
    for (std::int64_t i = 0; i < lm.rows(); ++i) {
      const T mx = lm.row(i).maxCoeff();
      pm.row(i) = (lm.row(i).array() - mx).exp();
      pm.row(i) /= pm.row(i).sum();
    }
    return probs;
  }

  HeadUnit& cls_provider() {
    switch (cfg_.variant) {
      case DetectorVariant::SingleFC: return unit_by_name("fc");
      case DetectorVariant::SingleConv: return unit_by_name("conv");
      case DetectorVariant::DoubleFC: return unit_by_name("fc_cls");
      case DetectorVariant::DoubleConv: return unit_by_name("conv_cls");
      case DetectorVariant::DoubleHead: return unit_by_name("fc");
      case DetectorVariant::DoubleHeadReverse: return unit_by_name("conv");
      case DetectorVariant::DoubleHeadExt: {
        // non-fused path: prefer the focused classifier
        auto& fc = unit_by_name("fc");
        if (fc.cls_coeff > 0) return fc;
        return unit_by_name("conv");
      }
    }
    throw ContractViolation("cls_provider: unknown variant");
  }

  HeadUnit& reg_provider() {
    switch (cfg_.variant) {
      case DetectorVariant::SingleFC: return unit_by_name("fc");
      case DetectorVariant::SingleConv: return unit_by_name("conv");
      case DetectorVariant::DoubleFC: return unit_by_name("fc_reg");
      case DetectorVariant::DoubleConv: return unit_by_name("conv_reg");
      case DetectorVariant::DoubleHead: return unit_by_name("conv");
      case DetectorVariant::DoubleHeadReverse: return unit_by_name("fc");
      case DetectorVariant::DoubleHeadExt: return unit_by_name("conv");
    }
    throw ContractViolation("reg_provider: unknown variant");
  }

  DetectorConfig cfg_;
  Backbone<T> backbone_{NormKind::Group, 32};
  std::vector<HeadUnit> units_;
  Fmap<T> droi_;
};

}  // namespace duodet
