// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <map>

#include "doctest.h"
#include "duodet/model.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace duodet;
using duodet::testing::tiny_config;

namespace {

template <class T>
struct Batch {
  Fmap<T> rois;
  std::vector<int> labels;
  Tensor<T> targets;
};

template <class T>
Batch<T> random_batch(Rng& rng, int n) {
  Batch<T> b;
  b.rois = Fmap<T>(n, 7, 7, 256);
  for (std::int64_t i = 0; i < b.rois.size(); ++i)
    b.rois.t[i] = static_cast<T>(rng.gaussian() * 0.5);
  b.labels.resize(static_cast<std::size_t>(n));
  for (auto& l : b.labels) l = rng.uniform_int(0, 3);
  b.labels[0] = 1;  // guarantee foreground
  b.targets = Tensor<T>({n, 4});
  for (std::int64_t i = 0; i < b.targets.size(); ++i)
    b.targets[i] = static_cast<T>(rng.gaussian() * 0.1);
  return b;
}

template <class T>
Param<T>* find_param(ParamRefs<T>& refs, const std::string& name) {
  for (auto* p : refs)
    if (p->name == name) return p;
  return nullptr;
}

template <class T>
bool all_zero(const Tensor<T>& t) {
  for (std::int64_t i = 0; i < t.size(); ++i)
    if (t[i] != T(0)) return false;
  return true;
}

}  // namespace

TEST_CASE("variant head tables route tasks as specified") {
  using V = DetectorVariant;
  const LossWeights w;  // defaults: omega 2.0/2.5, lambda 0.7/0.8
  struct Expect {
    const char* name;
    HeadStructure st;
    double cls, reg, omega;
  };
  std::map<V, std::vector<Expect>> table{
      {V::SingleFC, {{"fc", HeadStructure::Fc, 0.7, 0.3, 2.0}}},
      {V::SingleConv, {{"conv", HeadStructure::Conv, 0.2, 0.8, 2.5}}},
      {V::DoubleFC,
       {{"fc_cls", HeadStructure::Fc, 1, 0, 2.0}, {"fc_reg", HeadStructure::Fc, 0, 1, 2.0}}},
      {V::DoubleConv,
       {{"conv_cls", HeadStructure::Conv, 1, 0, 2.5},
        {"conv_reg", HeadStructure::Conv, 0, 1, 2.5}}},
      {V::DoubleHead,
       {{"fc", HeadStructure::Fc, 1, 0, 2.0}, {"conv", HeadStructure::Conv, 0, 1, 2.5}}},
      {V::DoubleHeadReverse,
       {{"fc", HeadStructure::Fc, 0, 1, 2.0}, {"conv", HeadStructure::Conv, 1, 0, 2.5}}},
      {V::DoubleHeadExt,
       {{"fc", HeadStructure::Fc, 0.7, 0.3, 2.0},
        {"conv", HeadStructure::Conv, 0.2, 0.8, 2.5}}},
  };
  for (const auto& [v, expected] : table) {
    Detector<float> model(tiny_config(v));
    auto info = model.unit_info();
    REQUIRE(info.size() == expected.size());
    for (std::size_t i = 0; i < info.size(); ++i) {
      CHECK(info[i].name == expected[i].name);
      CHECK(info[i].structure == expected[i].st);
      CHECK(info[i].cls_coeff == doctest::Approx(expected[i].cls).epsilon(1e-12));
      CHECK(info[i].reg_coeff == doctest::Approx(expected[i].reg).epsilon(1e-12));
      CHECK(info[i].omega == doctest::Approx(expected[i].omega).epsilon(1e-12));
    }
  }
}

TEST_CASE("per-branch losses recompose into the weighted total") {
  Rng rng(31);
  auto batch = random_batch<float>(rng, 6);
  for (auto v : {DetectorVariant::DoubleHead, DetectorVariant::DoubleHeadExt,
                 DetectorVariant::SingleFC, DetectorVariant::DoubleFC}) {
    Detector<float> model(tiny_config(v));
    Rng init(32);
    model.init(init);
    auto bd = model.train_step_losses(batch.rois, batch.labels, batch.targets, 0.125);
    const auto& w = model.config().weights;
    double expect = bd.l_rpn;
    if (bd.l_fc) expect += w.omega_fc * *bd.l_fc;
    if (bd.l_conv) expect += w.omega_conv * *bd.l_conv;
    CHECK(bd.total == doctest::Approx(expect).epsilon(1e-12));
    CHECK(bd.l_rpn == 0.125);
    // branch losses recompose from the task terms under the lambda mixes
    if (v == DetectorVariant::DoubleHeadExt) {
      REQUIRE(bd.fc_cls);
      REQUIRE(bd.fc_reg);
      REQUIRE(bd.conv_cls);
      REQUIRE(bd.conv_reg);
      CHECK(*bd.l_fc ==
            doctest::Approx(fc_branch_loss(w, *bd.fc_cls, *bd.fc_reg)).epsilon(1e-12));
      CHECK(*bd.l_conv ==
            doctest::Approx(conv_branch_loss(w, *bd.conv_cls, *bd.conv_reg)).epsilon(1e-12));
    }
    if (v == DetectorVariant::DoubleHead) {
      CHECK(bd.fc_cls);
      CHECK(!bd.fc_reg);
      CHECK(!bd.conv_cls);
      CHECK(bd.conv_reg);
    }
  }
}

TEST_CASE("disengaged outputs keep exactly zero gradients at boundary lambdas") {
  auto cfg = tiny_config(DetectorVariant::DoubleHeadExt);
  cfg.weights.lambda_fc = 1.0;
  cfg.weights.lambda_conv = 1.0;
  Detector<float> model(cfg);
  Rng init(33);
  model.init(init);
  Rng rng(34);
  auto batch = random_batch<float>(rng, 6);
  auto refs = model.params();
  for (auto* p : refs) p->grad.zero();
  auto bd = model.train_step_losses(batch.rois, batch.labels, batch.targets);
  CHECK(bd.total > 0);
  CHECK(!bd.fc_reg);
  CHECK(!bd.conv_cls);
  auto* fc_reg_w = find_param(refs, "fc.reg.w");
  auto* fc_reg_b = find_param(refs, "fc.reg.b");
  auto* conv_cls_w = find_param(refs, "conv.cls.w");
  REQUIRE(fc_reg_w);
  REQUIRE(fc_reg_b);
  REQUIRE(conv_cls_w);
  CHECK(all_zero(fc_reg_w->grad));
  CHECK(all_zero(fc_reg_b->grad));
  CHECK(all_zero(conv_cls_w->grad));
  auto* fc_cls_w = find_param(refs, "fc.cls.w");
  REQUIRE(fc_cls_w);
  CHECK(!all_zero(fc_cls_w->grad));

  // active set excludes the disengaged layers
  auto active = model.active_params();
  CHECK(find_param(active, "fc.reg.w") == nullptr);
  CHECK(find_param(active, "conv.cls.w") == nullptr);
  CHECK(find_param(active, "fc.cls.w") != nullptr);
  CHECK(find_param(active, "conv.reg.w") != nullptr);
}

TEST_CASE("extended variant at boundary weights is bit-identical to the vanilla double head") {
  auto ext_cfg = tiny_config(DetectorVariant::DoubleHeadExt);
  ext_cfg.weights.lambda_fc = 1.0;
  ext_cfg.weights.lambda_conv = 1.0;
  ext_cfg.fusion_enabled = false;
  auto dh_cfg = tiny_config(DetectorVariant::DoubleHead);

  Detector<float> ext(ext_cfg), dh(dh_cfg);
  Rng ra(35), rb(35);
  ext.init(ra);
  dh.init(rb);

  Rng rng(36);
  auto batch = random_batch<float>(rng, 5);
  auto be = ext.train_step_losses(batch.rois, batch.labels, batch.targets);
  auto bd = dh.train_step_losses(batch.rois, batch.labels, batch.targets);
  CHECK(be.total == bd.total);

  auto pe = ext.params();
  auto pd = dh.params();
  REQUIRE(pe.size() == pd.size());
  for (std::size_t i = 0; i < pe.size(); ++i) {
    REQUIRE(pe[i]->name == pd[i]->name);
    for (std::int64_t j = 0; j < pe[i]->value.size(); ++j) {
      CHECK(pe[i]->value[j] == pd[i]->value[j]);
      CHECK(pe[i]->grad[j] == pd[i]->grad[j]);
    }
  }

  auto se = ext.infer_rois(batch.rois);
  auto sd = dh.infer_rois(batch.rois);
  for (std::int64_t i = 0; i < se.probs.size(); ++i) CHECK(se.probs[i] == sd.probs[i]);
  for (std::int64_t i = 0; i < se.deltas.size(); ++i) CHECK(se.deltas[i] == sd.deltas[i]);
}

TEST_CASE("requesting an output the variant never trained is a contract violation") {
  Rng init(37);
  Rng rng(38);
  auto batch = random_batch<float>(rng, 3);

  Detector<float> dh(tiny_config(DetectorVariant::DoubleHead));
  dh.init(init);
  CHECK_THROWS_AS(dh.unit_reg_deltas("fc", batch.rois), ContractViolation);
  CHECK_THROWS_AS(dh.unit_cls_probs("conv", batch.rois), ContractViolation);
  CHECK_THROWS_AS(dh.unit_cls_probs("nope", batch.rois), ContractViolation);
  CHECK(dh.unit_cls_probs("fc", batch.rois).all_finite());
  CHECK(dh.unit_reg_deltas("conv", batch.rois).all_finite());

  // single fc head trained purely for regression cannot classify
  auto cfg = tiny_config(DetectorVariant::SingleFC);
  cfg.weights.lambda_fc = 0.0;
  Detector<float> reg_only(cfg);
  reg_only.init(init);
  CHECK_THROWS_AS(reg_only.infer_rois(batch.rois), ContractViolation);
}

TEST_CASE("fused scores follow the complementary rule over both heads") {
  auto cfg = tiny_config(DetectorVariant::DoubleHeadExt);
  Detector<float> model(cfg);
  Rng init(39);
  model.init(init);
  Rng rng(40);
  auto batch = random_batch<float>(rng, 4);
  REQUIRE(model.fusion_active());
  auto fused = model.infer_rois(batch.rois);
  auto p_fc = model.unit_cls_probs("fc", batch.rois);
  auto p_conv = model.unit_cls_probs("conv", batch.rois);
  for (std::int64_t i = 0; i < fused.probs.size(); ++i) {
    const float expect = p_fc[i] + p_conv[i] * (1.0f - p_fc[i]);
    CHECK(fused.probs[i] == doctest::Approx(expect).epsilon(1e-6));
  }

  // fusion changes scores only, never the regression output
  auto off_cfg = cfg;
  off_cfg.fusion_enabled = false;
  Detector<float> off(off_cfg);
  off.init(init);
  off.copy_values_from(model);
  auto plain = off.infer_rois(batch.rois);
  for (std::int64_t i = 0; i < plain.deltas.size(); ++i)
    CHECK(plain.deltas[i] == fused.deltas[i]);
  bool any_prob_differs = false;
  for (std::int64_t i = 0; i < plain.probs.size(); ++i)
    if (plain.probs[i] != fused.probs[i]) any_prob_differs = true;
  CHECK(any_prob_differs);
}

TEST_CASE("detector gradients agree with finite differences across the head stack") {
  Rng rng(41);
  auto batch = random_batch<double>(rng, 4);
  Detector<double> model(tiny_config(DetectorVariant::DoubleHeadExt));
  Rng init(42);
  model.init(init);

  auto loss = [&]() {
    return model.train_step_losses(batch.rois, batch.labels, batch.targets).total;
  };
  auto params = model.active_params();
  for (auto* p : params) p->grad.zero();
  loss();  // analytic gradients accumulate inside the step

  Rng pick(43);
  auto rep = duodet::testing::finite_difference_check_sampled(params, loss, pick, 3, 1e-5);
  CHECK(rep.max_rel_err < 2e-3);
  CHECK(rep.checked > 0);
}

TEST_CASE("initialization is deterministic given the seed") {
  Detector<float> a(tiny_config(DetectorVariant::DoubleHead));
  Detector<float> b(tiny_config(DetectorVariant::DoubleHead));
  Rng ra(44), rb(44);
  a.init(ra);
  b.init(rb);
  auto pa = a.params();
  auto pb = b.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::int64_t j = 0; j < pa[i]->value.size(); ++j)
      CHECK(pa[i]->value[j] == pb[i]->value[j]);
}

TEST_CASE("detector config validation") {
  auto cfg = tiny_config(DetectorVariant::DoubleHead);
  cfg.num_classes = 0;
  CHECK_THROWS_AS(Detector<float>{cfg}, ConfigError);
  cfg = tiny_config(DetectorVariant::DoubleHead);
  cfg.weights.omega_fc = -1;
  CHECK_THROWS_AS(Detector<float>{cfg}, ConfigError);
  cfg = tiny_config(DetectorVariant::DoubleHead);
  cfg.conv_head.blocks = 4;  // even count cannot host the alternating pattern
  CHECK_THROWS_AS(Detector<float>{cfg}, ConfigError);
}
