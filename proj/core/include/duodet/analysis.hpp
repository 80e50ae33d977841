// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "duodet/errors.hpp"
#include "duodet/eval.hpp"
#include "duodet/model.hpp"
#include "duodet/roi_align.hpp"
#include "duodet/train.hpp"

// Head-comparison diagnostics: predefined sliding-window proposals around
// ground truth, 20-bin IoU statistics, Pearson correlation between scores and
// proposal quality, and spatial-correlation grids of head activations and
// first-layer weights.
namespace duodet {

inline constexpr int kIouBins = 20;

/// Uniform [0,1] binning; an IoU of exactly 1 belongs to the top bin.
int iou_bin(double iou);

struct SlidingConfig {
  // geometric scale sweep with the member nearest 1 snapped to exactly 1,
  // so the ground-truth box itself is always on the lattice
  int scale_steps = 10;
  double scale_min = 0.25, scale_max = 2.5;
  // aspect multipliers aspect_max^(k/half) for k in [-half, half]
  int aspect_steps = 7;
  double aspect_max = 1.9;
  // center shifts as fractions of the box size, mirrored to both signs
  std::vector<double> shifts{0.0, 0.02, 0.05, 0.09, 0.15, 0.25, 0.4, 0.6};

  void validate() const;
};

/// Deterministic proposal lattice around one ground-truth box: scales x
/// aspects x per-axis center shifts, clipped to the image, deduplicated, and
/// always containing the ground truth itself.
std::vector<Box> generate_sliding_proposals(const Box& gt, int image_w, int image_h,
                                            const SlidingConfig& cfg = {});

struct ProposalRecord {
  Box proposal, gt;
  int class_id = 0;
  int image_w = 0, image_h = 0;  // for size grouping
  double proposal_iou = 0;       // iou(proposal, gt)
  double fc_score = 0, conv_score = 0;  // classifier probability of the gt class
  Box fc_box, conv_box;                 // class-specific regressed boxes
  double fc_reg_iou = 0, conv_reg_iou = 0;
};

struct BinStats {
  int bin_index = 0;
  double lower = 0, upper = 0;  // [lower, upper); the top bin closes at 1
  std::int64_t count = 0;
  bool defined = false;  // moments are meaningless for empty bins
  double mean = 0;
  double stddev = 0;  // population
};

using MetricFn = std::function<double(const ProposalRecord&)>;

/// Groups records by proposal IoU into 20 uniform bins and reports per-bin
/// count/mean/population-std of the selected metric.
std::array<BinStats, kIouBins> bin_by_iou(const std::vector<ProposalRecord>& records,
                                          const MetricFn& metric);

/// One-pass co-moment implementation; result clamped to [-1, 1]. Constant
/// input has no defined correlation and violates the contract.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

/// Tiled cosine-similarity grid between the feature vectors of all spatial
/// cells. Exactly symmetric, with an exact unit diagonal on defined cells;
/// zero-norm cells are flagged and their rows zeroed.
struct CorrelationGrid {
  int cells = 0;
  Tensor<double> values;      // (cells, cells)
  std::vector<char> defined;  // per cell

  double mean_off_cell() const;  // mean over defined pairs i != j
};

/// fmap is channel-major (D, H, W); cell vectors have length D.
CorrelationGrid spatial_correlation(const Tensor<double>& fmap);

/// Splits a first-layer weight matrix of shape (grid_h*grid_w*channels, out)
/// into one sub-matrix per spatial cell and correlates their flattenings.
CorrelationGrid weight_spatial_correlation(const Tensor<double>& w, int grid_h = 7,
                                           int grid_w = 7, int channels = 256);

/// Entrywise mean of per-object grids; pairs are averaged over the objects
/// where both cells were defined.
struct GridAccumulator {
  int cells = 0;
  Tensor<double> sum, npairs;

  void add(const CorrelationGrid& g);
  CorrelationGrid finish() const;
};

struct DifficultyGroups {
  std::vector<int> easy, moderate, hard;  // class ids
};

/// Ranks classes by AP descending (ties by class id ascending) and cuts the
/// ranking into thirds; remainder classes land in the earlier groups.
DifficultyGroups difficulty_grouping(const std::vector<ClassAp>& per_class_ap);

struct GroupStats {
  std::string name;
  std::int64_t records = 0;
  std::array<BinStats, kIouBins> fc_score, conv_score, fc_reg_iou, conv_reg_iou;
  // correlation between the classification score and the proposal IoU;
  // disengaged when the group is too small or degenerate
  std::optional<double> pcc_fc, pcc_conv;
};

struct AnalysisConfig {
  SlidingConfig sliding;
  int roi_chunk = 512;
  int workers = 1;
  // which unit of each model supplies the fc-side and conv-side predictions;
  // both tasks of the named unit must be engaged
  std::string fc_unit = "fc";
  std::string conv_unit = "conv";
  std::vector<ClassAp> per_class_ap;  // enables difficulty groups when set

  void validate() const {
    sliding.validate();
    if (roi_chunk < 1) throw ConfigError("analysis: roi_chunk must be positive");
    if (workers < 1) throw ConfigError("analysis: workers must be positive");
    if (fc_unit.empty() || conv_unit.empty())
      throw ConfigError("analysis: unit names must be non-empty");
  }
};

struct AnalysisBundle {
  std::int64_t objects = 0;
  std::vector<ProposalRecord> records;  // object-major, deterministic order
  std::vector<GroupStats> groups;       // "all", size groups, difficulty groups
  CorrelationGrid fc_grid;        // reconstructed fc maps, averaged over objects
  CorrelationGrid conv_grid;      // conv pre-pool maps, averaged over objects
  CorrelationGrid fc_weight_grid;  // straight from the fc1 weight matrix
};

/// Group aggregation shared by runs and tests: bins, PCCs and counts for a
/// record subset selected by `member`.
GroupStats aggregate_group(const std::string& name, const std::vector<ProposalRecord>& records,
                           const std::function<bool(const ProposalRecord&)>& member);

/// Builds the standard group list: "all", the three size groups, and — when
/// per-class APs are supplied — the three difficulty groups.
std::vector<GroupStats> aggregate_groups(const std::vector<ProposalRecord>& records,
                                         const std::vector<ClassAp>& per_class_ap);

namespace detail {

/// (sample, y, x, c) slice of an activation map as a channel-major tensor.
template <class T>
Tensor<double> channel_major_slice(const Fmap<T>& m, int sample) {
  Tensor<double> out({m.c, m.h, m.w});
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x)
      for (int c = 0; c < m.c; ++c)
        out[(static_cast<std::int64_t>(c) * m.h + y) * m.w + x] =
            static_cast<double>(m.at(sample, y, x, c));
  return out;
}

struct HeadProbeResult {
  std::vector<double> scores;    // gt-class probability per proposal
  std::vector<Box> boxes;        // class-specific regressed boxes
  std::vector<double> reg_ious;  // iou(regressed, gt)
};

/// Evaluates one unit of one model on a proposal set, chunked.
template <class T>
HeadProbeResult probe_head(Detector<T>& model, const std::string& unit, const Fmap<T>& fmap,
                           const std::vector<Box>& proposals, const GtObject& gt, int image_w,
                           int image_h, int roi_chunk) {
  HeadProbeResult out;
  const double stride = model.stride();
  const int roi_size = model.config().roi_size;
  const int roi_samples = model.config().roi_samples;
  for (std::size_t base = 0; base < proposals.size();
       base += static_cast<std::size_t>(roi_chunk)) {
    const std::size_t n =
        std::min(proposals.size() - base, static_cast<std::size_t>(roi_chunk));
    std::vector<Box> chunk(proposals.begin() + static_cast<std::ptrdiff_t>(base),
                           proposals.begin() + static_cast<std::ptrdiff_t>(base + n));
    auto pooled = roi_align(fmap, 0, chunk, stride, roi_size, roi_samples);
    auto probs = model.unit_cls_probs(unit, pooled);
    auto deltas = model.unit_reg_deltas(unit, pooled);
    auto pm = probs.mat();
    auto dm = deltas.mat();
    const int off = 4 * (gt.class_id - 1);
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<std::int64_t>(i);
      out.scores.push_back(static_cast<double>(pm(r, gt.class_id)));
      BoxDelta d{static_cast<double>(dm(r, off)), static_cast<double>(dm(r, off + 1)),
                 static_cast<double>(dm(r, off + 2)), static_cast<double>(dm(r, off + 3))};
      auto refined = clip_box(decode_delta(chunk[i], d), image_w, image_h);
      out.boxes.push_back(refined.value_or(Box{0, 0, 0, 0}));
      out.reg_ious.push_back(refined ? iou(*refined, gt.box) : 0.0);
    }
  }
  return out;
}

}  // namespace detail

/// The end-to-end head comparison: for every ground-truth object, build the
/// sliding proposal set, score and regress it with the fc side of fc_model
/// and the conv side of conv_model, and aggregate records, binned statistics,
/// PCCs and averaged spatial-correlation grids. Per-object work fans out to
/// `workers` threads over read-only model clones; results are reduced in
/// object order, so the bundle does not depend on the worker count.
template <class T>
AnalysisBundle run_head_comparison(Detector<T>& fc_model, Detector<T>& conv_model,
                                   const std::vector<TrainExample<T>>& data,
                                   const AnalysisConfig& cfg) {
  cfg.validate();
  auto unit_structure = [](Detector<T>& m, const std::string& unit) {
    for (const auto& u : m.unit_info())
      if (u.name == unit) {
        // the comparison needs scores and boxes from the same unit, so a
        // boundary-weight unit that skips one task cannot be probed
        check_contract(u.cls_coeff > 0 && u.reg_coeff > 0,
                       "analysis: unit '" + unit + "' does not train both tasks");
        return u.structure;
      }
    throw ContractViolation("analysis: model has no unit named '" + unit + "'");
  };
  const bool fc_side_is_fc = unit_structure(fc_model, cfg.fc_unit) == HeadStructure::Fc;
  const bool conv_side_is_conv =
      unit_structure(conv_model, cfg.conv_unit) == HeadStructure::Conv;

  struct Job {
    int image = 0, object = 0;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < data.size(); ++i) {
    check_contract(data[i].image.n == 1 && data[i].image.c == 3,
                   "analysis: images must be (1,h,w,3)");
    for (std::size_t k = 0; k < data[i].objects.size(); ++k)
      jobs.push_back(Job{static_cast<int>(i), static_cast<int>(k)});
  }
  check_contract(!jobs.empty(), "analysis: dataset holds no objects");

  struct ObjectOut {
    std::vector<ProposalRecord> records;
    CorrelationGrid fc_grid, conv_grid;
  };
  std::vector<ObjectOut> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::string> failures(static_cast<std::size_t>(cfg.workers));

  auto worker = [&](int w) {
    try {
      // private clones: forward passes mutate layer caches
      Detector<T> fc(fc_model.config());
      fc.copy_values_from(fc_model);
      Detector<T> conv(conv_model.config());
      conv.copy_values_from(conv_model);
      for (std::size_t j = next.fetch_add(1); j < jobs.size(); j = next.fetch_add(1)) {
        const auto& ex = data[static_cast<std::size_t>(jobs[j].image)];
        const auto& obj = ex.objects[static_cast<std::size_t>(jobs[j].object)];
        auto proposals = generate_sliding_proposals(obj.box, ex.image.w, ex.image.h, cfg.sliding);

        auto fmap_fc = fc.backbone_forward(ex.image, false);
        auto fmap_conv = conv.backbone_forward(ex.image, false);
        auto side_fc = detail::probe_head(fc, cfg.fc_unit, fmap_fc, proposals, obj, ex.image.w,
                                          ex.image.h, cfg.roi_chunk);
        auto side_conv = detail::probe_head(conv, cfg.conv_unit, fmap_conv, proposals, obj,
                                            ex.image.w, ex.image.h, cfg.roi_chunk);

        auto& out = results[j];
        out.records.reserve(proposals.size());
        for (std::size_t p = 0; p < proposals.size(); ++p) {
          ProposalRecord rec;
          rec.proposal = proposals[p];
          rec.gt = obj.box;
          rec.class_id = obj.class_id;
          rec.image_w = ex.image.w;
          rec.image_h = ex.image.h;
          rec.proposal_iou = iou(proposals[p], obj.box);
          rec.fc_score = side_fc.scores[p];
          rec.conv_score = side_conv.scores[p];
          rec.fc_box = side_fc.boxes[p];
          rec.conv_box = side_conv.boxes[p];
          rec.fc_reg_iou = side_fc.reg_ious[p];
          rec.conv_reg_iou = side_conv.reg_ious[p];
          out.records.push_back(rec);
        }

        // per-object grids evaluated on the ground-truth box itself, where
        // the side's structure exposes the needed map
        std::vector<Box> just_gt{obj.box};
        if (fc_side_is_fc) {
          auto gt_roi = roi_align(fmap_fc, 0, just_gt, fc.stride(), fc.config().roi_size,
                                  fc.config().roi_samples);
          auto rebuilt = reconstruct_fc_feature_map(fc.fc1_weight(cfg.fc_unit), gt_roi);
          out.fc_grid = spatial_correlation(detail::channel_major_slice(rebuilt, 0));
        }
        if (conv_side_is_conv) {
          auto gt_roi = roi_align(fmap_conv, 0, just_gt, conv.stride(), conv.config().roi_size,
                                  conv.config().roi_samples);
          conv.head_feature(cfg.conv_unit, gt_roi);
          out.conv_grid = spatial_correlation(
              detail::channel_major_slice(conv.conv_prepool(cfg.conv_unit), 0));
        }
      }
    } catch (const std::exception& e) {
      failures[static_cast<std::size_t>(w)] = e.what();
      next.store(jobs.size());  // stop the other workers promptly
    }
  };

  if (cfg.workers == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < cfg.workers; ++w) pool.emplace_back(worker, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& f : failures)
    if (!f.empty()) throw ContractViolation("analysis worker failed: " + f);

  AnalysisBundle bundle;
  bundle.objects = static_cast<std::int64_t>(jobs.size());
  GridAccumulator fc_acc, conv_acc;
  for (std::size_t j = 0; j < results.size(); ++j) {
    for (const auto& rec : results[j].records) bundle.records.push_back(rec);
    if (fc_side_is_fc) fc_acc.add(results[j].fc_grid);
    if (conv_side_is_conv) conv_acc.add(results[j].conv_grid);
  }
  if (fc_side_is_fc) {
    bundle.fc_grid = fc_acc.finish();
    Tensor<double> w = fc_model.fc1_weight(cfg.fc_unit).template cast<double>();
    const int cells = fc_model.config().roi_size * fc_model.config().roi_size;
    bundle.fc_weight_grid = weight_spatial_correlation(
        w, fc_model.config().roi_size, fc_model.config().roi_size,
        static_cast<int>(w.dims()[0] / cells));
  }
  if (conv_side_is_conv) bundle.conv_grid = conv_acc.finish();
  bundle.groups = aggregate_groups(bundle.records, cfg.per_class_ap);
  return bundle;
}

struct UnitGrids {
  std::string unit;
  HeadStructure structure;
  CorrelationGrid activation;  // averaged over ground-truth rois
  CorrelationGrid weight;      // fc units only; empty otherwise
};

/// Correlation grids for every head unit of one model, averaged over the
/// ground-truth boxes of `data`. Works for any variant: fc units contribute
/// the reconstructed per-cell map and their first-layer weight grid, conv
/// units their pre-pool activation map.
template <class T>
std::vector<UnitGrids> correlation_survey(Detector<T>& model,
                                          const std::vector<TrainExample<T>>& data) {
  check_contract(!data.empty(), "survey: dataset is empty");
  const auto infos = model.unit_info();
  const int roi_size = model.config().roi_size;
  std::vector<GridAccumulator> acc(infos.size());
  for (const auto& ex : data) {
    check_contract(ex.image.n == 1 && ex.image.c == 3, "survey: images must be (1,h,w,3)");
    auto fmap = model.backbone_forward(ex.image, false);
    for (const auto& obj : ex.objects) {
      std::vector<Box> just_gt{obj.box};
      auto roi = roi_align(fmap, 0, just_gt, model.stride(), roi_size,
                           model.config().roi_samples);
      for (std::size_t u = 0; u < infos.size(); ++u) {
        if (infos[u].structure == HeadStructure::Fc) {
          auto rebuilt = reconstruct_fc_feature_map(model.fc1_weight(infos[u].name), roi);
          acc[u].add(spatial_correlation(detail::channel_major_slice(rebuilt, 0)));
        } else {
          model.head_feature(infos[u].name, roi);
          acc[u].add(spatial_correlation(
              detail::channel_major_slice(model.conv_prepool(infos[u].name), 0)));
        }
      }
    }
  }
  std::vector<UnitGrids> out;
  for (std::size_t u = 0; u < infos.size(); ++u) {
    UnitGrids g;
    g.unit = infos[u].name;
    g.structure = infos[u].structure;
    g.activation = acc[u].finish();
    if (infos[u].structure == HeadStructure::Fc) {
      Tensor<double> w = model.fc1_weight(infos[u].name).template cast<double>();
      const int cells = roi_size * roi_size;
      g.weight = weight_spatial_correlation(w, roi_size, roi_size,
                                            static_cast<int>(w.dims()[0] / cells));
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace duodet
