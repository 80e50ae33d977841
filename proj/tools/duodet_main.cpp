// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "duodet/analysis.hpp"
#include "duodet/checkpoint.hpp"
#include "duodet/dataset.hpp"
#include "duodet/errors.hpp"
#include "duodet/eval.hpp"
#include "duodet/infer.hpp"
#include "duodet/png_io.hpp"
#include "duodet/run_config.hpp"
#include "duodet/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace duodet;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_cell(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

// Shared flags; every command resolves its RunConfig the same way so a
// resolved-config dump reproduces the run.
struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration JSON");
    cmd->add_option("--set", sets, "override as dotted.path=value")->take_all();
    cmd->add_option("--out", out_dir, "output directory (overrides out_dir)");
    cmd->add_option("--seed", seed, "override the train and dataset seeds");
    cmd->add_option("--workers", workers, "override analysis fan-out");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    for (const auto& s : sets) apply_override(cfg, s);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (seed) {
      cfg.train.seed = *seed;
      cfg.dataset.seed = *seed;
    }
    if (workers) cfg.analysis.workers = *workers;
    cfg.validate();
    return cfg;
  }
};

RunConfig prepare(const Common& common) {
  auto cfg = common.resolve();
  fs::create_directories(cfg.out_dir);
  save_run_config(cfg, (fs::path(cfg.out_dir) / "resolved.json").string());
  return cfg;
}

/// Training/analysis examples from the manifest when one is configured,
/// otherwise rendered in memory from the synthetic dataset config.
std::vector<TrainExample<float>> load_examples(const RunConfig& cfg) {
  std::vector<TrainExample<float>> data;
  if (cfg.data_manifest.empty()) {
    for (auto& img : generate_corpus(cfg.dataset)) {
      TrainExample<float> ex;
      ex.image = std::move(img.image);
      ex.objects = std::move(img.objects);
      data.push_back(std::move(ex));
    }
    return data;
  }
  auto manifest = load_manifest(cfg.data_manifest);
  auto objects = objects_by_image(manifest);
  const fs::path root = fs::path(cfg.data_manifest).parent_path();
  for (std::size_t i = 0; i < manifest.images.size(); ++i) {
    TrainExample<float> ex;
    ex.image = read_png((root / manifest.images[i].file).string());
    if (ex.image.w != manifest.images[i].width || ex.image.h != manifest.images[i].height)
      throw ConfigError("dataset: " + manifest.images[i].file +
                        " does not match its recorded size");
    ex.objects = objects[i];
    data.push_back(std::move(ex));
  }
  if (data.empty()) throw ConfigError("dataset: " + cfg.data_manifest + " holds no images");
  return data;
}

nlohmann::json grid_to_json(const CorrelationGrid& g) {
  nlohmann::json values = nlohmann::json::array();
  for (int i = 0; i < g.cells; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < g.cells; ++j)
      row.push_back(g.values[static_cast<std::int64_t>(i) * g.cells + j]);
    values.push_back(std::move(row));
  }
  nlohmann::json defined = nlohmann::json::array();
  for (char d : g.defined) defined.push_back(d != 0);
  nlohmann::json out{{"cells", g.cells}, {"values", values}, {"defined", defined}};
  if (g.cells > 0) out["mean_off_cell"] = g.mean_off_cell();
  return out;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Common& common) {
  auto cfg = prepare(common);
  auto manifest = generate_dataset(cfg.dataset, cfg.out_dir);
  std::printf("wrote %zu images, %zu annotations to %s\n", manifest.images.size(),
              manifest.annotations.size(), cfg.out_dir.c_str());
  return kExitOk;
}

int cmd_train(const Common& common) {
  auto cfg = prepare(common);
  auto data = load_examples(cfg);

  Detector<float> model(cfg.detector);
  Rng rng(cfg.train.seed);
  model.init(rng);

  auto losses = open_out(fs::path(cfg.out_dir) / "losses.csv");
  losses << LossBreakdown::csv_header() << "\n";

  const std::int64_t print_every = std::max<std::int64_t>(1, cfg.train.steps / 10);
  TrainHooks hooks;
  hooks.on_step = [&](std::int64_t step, const LossBreakdown& b) {
    losses << b.csv_row(step) << "\n";
    if ((step + 1) % print_every == 0 || step + 1 == cfg.train.steps)
      std::fprintf(stderr, "step %lld/%lld total=%.6g\n", static_cast<long long>(step + 1),
                   static_cast<long long>(cfg.train.steps), b.total);
  };
  hooks.on_divergence = [](const DivergenceReport& r) {
    std::fprintf(stderr, "diverged at step %lld (total=%g, lr=%g)\n",
                 static_cast<long long>(r.step), r.total, r.lr);
  };

  auto result = train_detector(model, data, cfg.train, hooks);
  save_checkpoint(model, (fs::path(cfg.out_dir) / "checkpoint").string());

  const double last = result.history.empty() ? 0.0 : result.history.back().total;
  std::printf("trained %s for %lld steps on %zu images; final loss %.6g\n",
              variant_name(cfg.detector.variant), static_cast<long long>(cfg.train.steps),
              data.size(), last);
  std::printf("checkpoint: %s\n", (fs::path(cfg.out_dir) / "checkpoint").string().c_str());
  return kExitOk;
}

int cmd_eval(const Common& common, const std::string& checkpoint) {
  auto cfg = prepare(common);
  auto data = load_examples(cfg);
  auto model = load_checkpoint<float>(checkpoint);

  std::vector<EvalImage> images;
  for (auto& ex : data) {
    EvalImage im;
    im.detections = infer_image(model, ex.image, cfg.infer);
    im.ground_truth = ex.objects;
    im.width = ex.image.w;
    im.height = ex.image.h;
    images.push_back(std::move(im));
  }
  auto report = evaluate_ap(images, model.num_classes());

  auto csv = open_out(fs::path(cfg.out_dir) / "ap.csv");
  csv << "scope,ap,ap50,ap75,ap_small,ap_medium,ap_large\n";
  csv << "all," << fmt(report.mean_ap) << "," << fmt(report.ap50) << "," << fmt(report.ap75)
      << "," << fmt_cell(report.ap_small) << "," << fmt_cell(report.ap_medium) << ","
      << fmt_cell(report.ap_large) << "\n";
  for (const auto& c : report.per_class)
    csv << "class-" << c.class_id << "," << fmt(c.ap) << ",,,,,\n";

  nlohmann::json j{{"mean_ap", report.mean_ap},
                   {"ap50", report.ap50},
                   {"ap75", report.ap75},
                   {"per_class", nlohmann::json::array()},
                   {"classes_without_gt", report.classes_without_gt}};
  for (const auto& c : report.per_class)
    j["per_class"].push_back({{"class_id", c.class_id}, {"ap", c.ap}});
  for (const auto& [key, value] : {std::pair{"ap_small", report.ap_small},
                                   {"ap_medium", report.ap_medium},
                                   {"ap_large", report.ap_large}})
    j[key] = value ? nlohmann::json(*value) : nlohmann::json();
  open_out(fs::path(cfg.out_dir) / "ap.json") << j.dump(2) << "\n";

  std::printf("AP %.4f  AP50 %.4f  AP75 %.4f over %zu images\n", report.mean_ap, report.ap50,
              report.ap75, images.size());
  return kExitOk;
}

std::vector<ClassAp> load_per_class_ap(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object() || !j.contains("per_class") || !j.at("per_class").is_array())
    throw ConfigError(path + ": expected an evaluation report with a per_class array");
  std::vector<ClassAp> out;
  for (const auto& e : j.at("per_class")) {
    if (!e.is_object() || !e.contains("class_id") || !e.contains("ap"))
      throw ConfigError(path + ": per_class entries need class_id and ap");
    out.push_back(ClassAp{e.at("class_id").get<int>(), e.at("ap").get<double>()});
  }
  return out;
}

int cmd_analyze(const Common& common, std::string fc_checkpoint, std::string conv_checkpoint,
                const std::string& single_checkpoint, const std::string& ap_path,
                bool write_records) {
  if (!single_checkpoint.empty()) {
    if (!fc_checkpoint.empty() || !conv_checkpoint.empty())
      throw ConfigError("analyze: give either --checkpoint or the per-side checkpoints");
    fc_checkpoint = conv_checkpoint = single_checkpoint;
  }
  if (fc_checkpoint.empty() || conv_checkpoint.empty())
    throw ConfigError("analyze: --fc-checkpoint and --conv-checkpoint are required "
                      "(or a single --checkpoint for both sides)");

  auto cfg = prepare(common);
  if (!ap_path.empty()) cfg.analysis.per_class_ap = load_per_class_ap(ap_path);
  auto data = load_examples(cfg);

  auto fc_model = load_checkpoint<float>(fc_checkpoint);
  auto conv_model = load_checkpoint<float>(conv_checkpoint);
  auto bundle = run_head_comparison(fc_model, conv_model, data, cfg.analysis);

  const fs::path out(cfg.out_dir);
  {
    auto bins = open_out(out / "bins.csv");
    bins << "group,head,metric,bin,lower,upper,count,mean,stddev\n";
    auto emit = [&](const GroupStats& g, const char* head, const char* metric,
                    const std::array<BinStats, kIouBins>& stats) {
      for (const auto& b : stats) {
        bins << g.name << "," << head << "," << metric << "," << b.bin_index << ","
             << fmt(b.lower) << "," << fmt(b.upper) << "," << b.count << ",";
        if (b.defined) bins << fmt(b.mean) << "," << fmt(b.stddev);
        else bins << ",";
        bins << "\n";
      }
    };
    for (const auto& g : bundle.groups) {
      if (g.records == 0) continue;
      emit(g, "fc", "score", g.fc_score);
      emit(g, "conv", "score", g.conv_score);
      emit(g, "fc", "reg_iou", g.fc_reg_iou);
      emit(g, "conv", "reg_iou", g.conv_reg_iou);
    }
  }
  {
    auto pcc = open_out(out / "pcc.csv");
    pcc << "group,records,pcc_fc,pcc_conv\n";
    for (const auto& g : bundle.groups)
      pcc << g.name << "," << g.records << "," << fmt_cell(g.pcc_fc) << ","
          << fmt_cell(g.pcc_conv) << "\n";
  }
  if (write_records) {
    auto rec = open_out(out / "records.csv");
    rec << "class_id,gt_x1,gt_y1,gt_x2,gt_y2,px1,py1,px2,py2,proposal_iou,"
           "fc_score,conv_score,fc_reg_iou,conv_reg_iou\n";
    for (const auto& r : bundle.records)
      rec << r.class_id << "," << fmt(r.gt.x1) << "," << fmt(r.gt.y1) << "," << fmt(r.gt.x2)
          << "," << fmt(r.gt.y2) << "," << fmt(r.proposal.x1) << "," << fmt(r.proposal.y1)
          << "," << fmt(r.proposal.x2) << "," << fmt(r.proposal.y2) << ","
          << fmt(r.proposal_iou) << "," << fmt(r.fc_score) << "," << fmt(r.conv_score) << ","
          << fmt(r.fc_reg_iou) << "," << fmt(r.conv_reg_iou) << "\n";
  }
  {
    nlohmann::json grids{{"fc", grid_to_json(bundle.fc_grid)},
                         {"conv", grid_to_json(bundle.conv_grid)},
                         {"fc_weight", grid_to_json(bundle.fc_weight_grid)}};
    open_out(out / "grids.json") << grids.dump(2) << "\n";
  }

  std::printf("analyzed %lld objects, %zu proposal records\n",
              static_cast<long long>(bundle.objects), bundle.records.size());
  for (const auto& g : bundle.groups) {
    if (!g.pcc_fc && !g.pcc_conv) continue;
    std::printf("  %-8s records=%-8lld pcc_fc=%s pcc_conv=%s\n", g.name.c_str(),
                static_cast<long long>(g.records),
                g.pcc_fc ? fmt(*g.pcc_fc).c_str() : "n/a",
                g.pcc_conv ? fmt(*g.pcc_conv).c_str() : "n/a");
  }
  if (bundle.fc_grid.cells > 0)
    std::printf("  fc grid mean off-cell correlation:   %.6f\n", bundle.fc_grid.mean_off_cell());
  if (bundle.conv_grid.cells > 0)
    std::printf("  conv grid mean off-cell correlation: %.6f\n",
                bundle.conv_grid.mean_off_cell());
  return kExitOk;
}

int cmd_correlate(const Common& common, const std::string& checkpoint) {
  auto cfg = prepare(common);
  auto data = load_examples(cfg);
  auto model = load_checkpoint<float>(checkpoint);
  auto survey = correlation_survey(model, data);

  nlohmann::json units = nlohmann::json::array();
  for (const auto& u : survey) {
    nlohmann::json entry{{"unit", u.unit},
                         {"structure", u.structure == HeadStructure::Fc ? "fc" : "conv"},
                         {"activation", grid_to_json(u.activation)}};
    if (u.weight.cells > 0) entry["weight"] = grid_to_json(u.weight);
    units.push_back(std::move(entry));
  }
  open_out(fs::path(cfg.out_dir) / "correlate.json") << units.dump(2) << "\n";

  for (const auto& u : survey) {
    std::printf("%s (%s): activation mean off-cell %.6f", u.unit.c_str(),
                u.structure == HeadStructure::Fc ? "fc" : "conv",
                u.activation.mean_off_cell());
    if (u.weight.cells > 0) std::printf(", weight mean off-cell %.6f", u.weight.mean_off_cell());
    std::printf("\n");
  }
  return kExitOk;
}

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfigError;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return kExitDivergence;
  } catch (const ContractViolation& e) {
    std::fprintf(stderr, "contract violation: %s\n", e.what());
    return kExitContractViolation;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"duodet: a desk-scale two-head detection laboratory"};
  app.set_version_flag("--version", "duodet 0.1.0");
  app.require_subcommand(0, 1);

  Common gen_common, train_common, eval_common, analyze_common, correlate_common;

  auto* gen = app.add_subcommand("gen-data", "render a synthetic dataset to disk");
  gen_common.attach(gen);

  auto* train = app.add_subcommand("train", "train a detector; writes checkpoint + loss CSV");
  train_common.attach(train);

  std::string eval_checkpoint;
  auto* eval = app.add_subcommand("eval", "average-precision report for a checkpoint");
  eval_common.attach(eval);
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint directory")->required();

  std::string fc_ckpt, conv_ckpt, both_ckpt, ap_path;
  bool write_records = false;
  auto* analyze = app.add_subcommand("analyze", "head-comparison study over a dataset");
  analyze_common.attach(analyze);
  analyze->add_option("--fc-checkpoint", fc_ckpt, "checkpoint probed on the fc side");
  analyze->add_option("--conv-checkpoint", conv_ckpt, "checkpoint probed on the conv side");
  analyze->add_option("--checkpoint", both_ckpt, "one checkpoint for both sides");
  analyze->add_option("--ap", ap_path, "evaluation report enabling difficulty groups");
  analyze->add_flag("--records", write_records, "also write the per-proposal records CSV");

  std::string correlate_checkpoint;
  auto* correlate = app.add_subcommand("correlate", "spatial-correlation grids per head unit");
  correlate_common.attach(correlate);
  correlate->add_option("--checkpoint", correlate_checkpoint, "checkpoint directory")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfigError;
  }

  if (gen->parsed()) return guarded([&] { return cmd_gen_data(gen_common); });
  if (train->parsed()) return guarded([&] { return cmd_train(train_common); });
  if (eval->parsed()) return guarded([&] { return cmd_eval(eval_common, eval_checkpoint); });
  if (analyze->parsed())
    return guarded([&] {
      return cmd_analyze(analyze_common, fc_ckpt, conv_ckpt, both_ckpt, ap_path, write_records);
    });
  if (correlate->parsed())
    return guarded([&] { return cmd_correlate(correlate_common, correlate_checkpoint); });

  std::puts(app.help().c_str());
  return kExitOk;
}
