// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#include "duodet/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace duodet {

int iou_bin(double iou) {
  check_contract(iou >= 0.0 && iou <= 1.0, "iou_bin: value outside [0,1]");
  const int b = static_cast<int>(std::floor(iou * kIouBins));
  return std::min(b, kIouBins - 1);  // an IoU of exactly 1 closes the top bin
}

void SlidingConfig::validate() const {
  if (scale_steps < 2) throw ConfigError("sliding: need at least two scales");
  if (!(scale_min > 0 && scale_max > scale_min))
    throw ConfigError("sliding: scale range is invalid");
  if (!(scale_min <= 1.0 && scale_max >= 1.0))
    throw ConfigError("sliding: scale range must bracket 1");
  if (aspect_steps < 1 || aspect_steps % 2 == 0)
    throw ConfigError("sliding: aspect_steps must be odd so aspect 1 is on the lattice");
  if (!(aspect_max >= 1.0)) throw ConfigError("sliding: aspect_max must be >= 1");
  if (shifts.empty() || shifts.front() != 0.0)
    throw ConfigError("sliding: shifts must start with 0");
  for (double s : shifts)
    if (s < 0) throw ConfigError("sliding: shifts must be non-negative");
}

std::vector<Box> generate_sliding_proposals(const Box& gt, int image_w, int image_h,
                                            const SlidingConfig& cfg) {
  cfg.validate();
  check_contract(gt.valid(), "sliding: ground-truth box is degenerate");
  check_contract(gt.x1 >= 0 && gt.y1 >= 0 && gt.x2 <= image_w && gt.y2 <= image_h,
                 "sliding: ground-truth box must lie inside the image");

  std::vector<double> scales;
  for (int k = 0; k < cfg.scale_steps; ++k)
    scales.push_back(cfg.scale_min * std::pow(cfg.scale_max / cfg.scale_min,
                                              static_cast<double>(k) / (cfg.scale_steps - 1)));
  std::size_t nearest = 0;
  for (std::size_t k = 1; k < scales.size(); ++k)
    if (std::abs(scales[k] - 1.0) < std::abs(scales[nearest] - 1.0)) nearest = k;
  scales[nearest] = 1.0;

  std::vector<double> aspects;
  const int half = (cfg.aspect_steps - 1) / 2;
  for (int k = -half; k <= half; ++k)
    aspects.push_back(half == 0 ? 1.0
                                : std::pow(cfg.aspect_max, static_cast<double>(k) / half));

  std::vector<double> shifts;
  for (double s : cfg.shifts) {
    shifts.push_back(s);
    if (s != 0.0) shifts.push_back(-s);
  }
  std::sort(shifts.begin(), shifts.end());

  std::vector<Box> out;
  out.reserve(scales.size() * aspects.size() * shifts.size() * shifts.size() + 1);
  out.push_back(gt);
  for (double s : scales) {
    for (double a : aspects) {
      const double w = gt.width() * s * std::sqrt(a);
      const double h = gt.height() * s / std::sqrt(a);
      for (double tx : shifts) {
        for (double ty : shifts) {
          const auto box = Box::from_center(gt.cx() + tx * gt.width(),
                                            gt.cy() + ty * gt.height(), w, h);
          if (auto clipped = clip_box(box, image_w, image_h)) out.push_back(*clipped);
        }
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const Box& a, const Box& b) {
    if (a.x1 != b.x1) return a.x1 < b.x1;
    if (a.y1 != b.y1) return a.y1 < b.y1;
    if (a.x2 != b.x2) return a.x2 < b.x2;
    return a.y2 < b.y2;
  });
  out.erase(std::unique(out.begin(), out.end(),
                        [](const Box& a, const Box& b) {
                          return a.x1 == b.x1 && a.y1 == b.y1 && a.x2 == b.x2 && a.y2 == b.y2;
                        }),
            out.end());
  return out;
}

std::array<BinStats, kIouBins> bin_by_iou(const std::vector<ProposalRecord>& records,
                                          const MetricFn& metric) {
  check_contract(!records.empty(), "bin_by_iou: no records");
  std::array<BinStats, kIouBins> out;
  for (int b = 0; b < kIouBins; ++b) {
    out[b].bin_index = b;
    out[b].lower = static_cast<double>(b) / kIouBins;
    out[b].upper = static_cast<double>(b + 1) / kIouBins;
  }
  // Welford accumulation per bin
  std::array<double, kIouBins> m2{};
  for (const auto& rec : records) {
    auto& bin = out[static_cast<std::size_t>(iou_bin(rec.proposal_iou))];
    const double v = metric(rec);
    bin.count += 1;
    const double d = v - bin.mean;
    bin.mean += d / static_cast<double>(bin.count);
    m2[static_cast<std::size_t>(bin.bin_index)] += d * (v - bin.mean);
  }
  for (int b = 0; b < kIouBins; ++b) {
    if (out[b].count == 0) {
      out[b].mean = out[b].stddev = 0;
      continue;
    }
    out[b].defined = true;
    out[b].stddev =
        std::sqrt(std::max(0.0, m2[static_cast<std::size_t>(b)] / static_cast<double>(out[b].count)));
  }
  return out;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  check_contract(x.size() == y.size(), "pearson: length mismatch");
  check_contract(x.size() >= 2, "pearson: need at least two samples");
  double mx = 0, my = 0, cxy = 0, cxx = 0, cyy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(i + 1);
    const double dx = x[i] - mx;
    mx += dx / n;
    const double dy = y[i] - my;
    my += dy / n;
    cxy += dx * (y[i] - my);
    cxx += dx * (x[i] - mx);
    cyy += dy * (y[i] - my);
  }
  check_contract(cxx > 0 && cyy > 0, "pearson: constant input has no defined correlation");
  return std::clamp(cxy / std::sqrt(cxx * cyy), -1.0, 1.0);
}

double CorrelationGrid::mean_off_cell() const {
  double sum = 0;
  std::int64_t n = 0;
  for (int i = 0; i < cells; ++i) {
    if (!defined[static_cast<std::size_t>(i)]) continue;
    for (int j = 0; j < cells; ++j) {
      if (j == i || !defined[static_cast<std::size_t>(j)]) continue;
      sum += values[static_cast<std::int64_t>(i) * cells + j];
      ++n;
    }
  }
  check_contract(n > 0, "correlation grid: no defined off-cell pairs");
  return sum / static_cast<double>(n);
}

namespace {

/// Cosine grid over rows of a (cells, dim) matrix viewed through `row`.
/// Symmetry and a unit diagonal hold exactly by construction.
CorrelationGrid cosine_grid(int cells,
                            const std::function<const double*(int)>& row, std::int64_t dim) {
  CorrelationGrid g;
  g.cells = cells;
  g.values = Tensor<double>({cells, cells});
  g.defined.assign(static_cast<std::size_t>(cells), 0);
  std::vector<double> norm(static_cast<std::size_t>(cells), 0);
  for (int i = 0; i < cells; ++i) {
    const double* v = row(i);
    double s = 0;
    for (std::int64_t k = 0; k < dim; ++k) s += v[k] * v[k];
    norm[static_cast<std::size_t>(i)] = std::sqrt(s);
    g.defined[static_cast<std::size_t>(i)] = s > 0 ? 1 : 0;
  }
  for (int i = 0; i < cells; ++i) {
    if (!g.defined[static_cast<std::size_t>(i)]) continue;  // row stays zero
    g.values[static_cast<std::int64_t>(i) * cells + i] = 1.0;
    const double* vi = row(i);
    for (int j = i + 1; j < cells; ++j) {
      if (!g.defined[static_cast<std::size_t>(j)]) continue;
      const double* vj = row(j);
      double dot = 0;
      for (std::int64_t k = 0; k < dim; ++k) dot += vi[k] * vj[k];
      const double c = std::clamp(
          dot / (norm[static_cast<std::size_t>(i)] * norm[static_cast<std::size_t>(j)]), -1.0,
          1.0);
      g.values[static_cast<std::int64_t>(i) * cells + j] = c;
      g.values[static_cast<std::int64_t>(j) * cells + i] = c;
    }
  }
  return g;
}

}  // namespace

CorrelationGrid spatial_correlation(const Tensor<double>& fmap) {
  check_contract(fmap.dims().size() == 3, "spatial_correlation: expected a (D,H,W) map");
  const int d = fmap.dims()[0], h = fmap.dims()[1], w = fmap.dims()[2];
  check_contract(d >= 1 && h >= 1 && w >= 1, "spatial_correlation: empty map");
  const int cells = h * w;
  // gather cell vectors (stride h*w in the channel-major layout)
  Tensor<double> gathered({cells, d});
  for (int cell = 0; cell < cells; ++cell)
    for (int c = 0; c < d; ++c)
      gathered[static_cast<std::int64_t>(cell) * d + c] =
          fmap[static_cast<std::int64_t>(c) * cells + cell];
  return cosine_grid(
      cells, [&](int i) { return &gathered[static_cast<std::int64_t>(i) * d]; }, d);
}

CorrelationGrid weight_spatial_correlation(const Tensor<double>& w, int grid_h, int grid_w,
                                           int channels) {
  const int cells = grid_h * grid_w;
  check_contract(w.dims().size() == 2 && w.dims()[0] == cells * channels,
                 "weight_spatial_correlation: weight rows must equal cells times channels");
  const std::int64_t width = w.dims()[1];
  const std::int64_t dim = static_cast<std::int64_t>(channels) * width;
  // rows are contiguous, so each cell's sub-matrix is one flat slice
  return cosine_grid(
      cells, [&](int i) { return &w[static_cast<std::int64_t>(i) * dim]; }, dim);
}

void GridAccumulator::add(const CorrelationGrid& g) {
  if (g.cells == 0) return;
  if (cells == 0) {
    cells = g.cells;
    sum = Tensor<double>({cells, cells});
    npairs = Tensor<double>({cells, cells});
  }
  check_contract(g.cells == cells, "grid accumulator: cell count mismatch");
  for (int i = 0; i < cells; ++i) {
    if (!g.defined[static_cast<std::size_t>(i)]) continue;
    for (int j = 0; j < cells; ++j) {
      if (!g.defined[static_cast<std::size_t>(j)]) continue;
      const auto at = static_cast<std::int64_t>(i) * cells + j;
      sum[at] += g.values[at];
      npairs[at] += 1.0;
    }
  }
}

CorrelationGrid GridAccumulator::finish() const {
  CorrelationGrid g;
  g.cells = cells;
  if (cells == 0) return g;
  g.values = Tensor<double>({cells, cells});
  g.defined.assign(static_cast<std::size_t>(cells), 0);
  for (int i = 0; i < cells; ++i) {
    for (int j = 0; j < cells; ++j) {
      const auto at = static_cast<std::int64_t>(i) * cells + j;
      if (npairs[at] > 0) g.values[at] = sum[at] / npairs[at];
    }
    g.defined[static_cast<std::size_t>(i)] =
        npairs[static_cast<std::int64_t>(i) * cells + i] > 0 ? 1 : 0;
  }
  return g;
}

DifficultyGroups difficulty_grouping(const std::vector<ClassAp>& per_class_ap) {
  check_contract(per_class_ap.size() >= 3, "difficulty_grouping: need at least three classes");
  {
    std::set<int> ids;
    for (const auto& c : per_class_ap) ids.insert(c.class_id);
    check_contract(ids.size() == per_class_ap.size(),
                   "difficulty_grouping: duplicate class ids");
  }
  auto ranked = per_class_ap;
  std::sort(ranked.begin(), ranked.end(), [](const ClassAp& a, const ClassAp& b) {
    if (a.ap != b.ap) return a.ap > b.ap;
    return a.class_id < b.class_id;
  });
  const std::size_t n = ranked.size();
  const std::size_t base = n / 3, rem = n % 3;
  const std::size_t easy_n = base + (rem > 0 ? 1 : 0);
  const std::size_t moderate_n = base + (rem > 1 ? 1 : 0);
  DifficultyGroups out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < easy_n) {
      out.easy.push_back(ranked[i].class_id);
    } else if (i < easy_n + moderate_n) {
      out.moderate.push_back(ranked[i].class_id);
    } else {
      out.hard.push_back(ranked[i].class_id);
    }
  }
  return out;
}

GroupStats aggregate_group(const std::string& name, const std::vector<ProposalRecord>& records,
                           const std::function<bool(const ProposalRecord&)>& member) {
  GroupStats g;
  g.name = name;
  std::vector<ProposalRecord> subset;
  for (const auto& rec : records)
    if (member(rec)) subset.push_back(rec);
  g.records = static_cast<std::int64_t>(subset.size());
  if (subset.empty()) return g;

  g.fc_score = bin_by_iou(subset, [](const ProposalRecord& r) { return r.fc_score; });
  g.conv_score = bin_by_iou(subset, [](const ProposalRecord& r) { return r.conv_score; });
  g.fc_reg_iou = bin_by_iou(subset, [](const ProposalRecord& r) { return r.fc_reg_iou; });
  g.conv_reg_iou = bin_by_iou(subset, [](const ProposalRecord& r) { return r.conv_reg_iou; });

  if (subset.size() >= 2) {
    std::vector<double> ious, fc, conv;
    for (const auto& r : subset) {
      ious.push_back(r.proposal_iou);
      fc.push_back(r.fc_score);
      conv.push_back(r.conv_score);
    }
    try {
      g.pcc_fc = pearson(fc, ious);
    } catch (const ContractViolation&) {
      // constant scores: correlation left disengaged
    }
    try {
      g.pcc_conv = pearson(conv, ious);
    } catch (const ContractViolation&) {
    }
  }
  return g;
}

std::vector<GroupStats> aggregate_groups(const std::vector<ProposalRecord>& records,
                                         const std::vector<ClassAp>& per_class_ap) {
  std::vector<GroupStats> out;
  out.push_back(aggregate_group("all", records, [](const ProposalRecord&) { return true; }));
  const std::pair<const char*, SizeGroup> sizes[] = {{"small", SizeGroup::Small},
                                                     {"medium", SizeGroup::Medium},
                                                     {"large", SizeGroup::Large}};
  for (const auto& [name, group] : sizes)
    out.push_back(aggregate_group(name, records, [group](const ProposalRecord& r) {
      return size_group(r.gt.area(), r.image_w, r.image_h) == group;
    }));
  if (!per_class_ap.empty()) {
    auto groups = difficulty_grouping(per_class_ap);
    const std::pair<const char*, const std::vector<int>*> difficulty[] = {
        {"easy", &groups.easy}, {"moderate", &groups.moderate}, {"hard", &groups.hard}};
    for (const auto& [name, ids] : difficulty)
      out.push_back(aggregate_group(name, records, [ids](const ProposalRecord& r) {
        return std::find(ids->begin(), ids->end(), r.class_id) != ids->end();
      }));
  }
  return out;
}

}  // namespace duodet
