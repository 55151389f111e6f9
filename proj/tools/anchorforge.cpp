// Copyright 2026 The AnchorForge Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// anchorforge: ingest -> cluster / optimize -> eval -> compare.
//
// Exit codes: 0 success, 2 input or parse error, 3 numerical failure.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "anchorforge/cluster.hpp"
#include "anchorforge/errors.hpp"
#include "anchorforge/ingest.hpp"
#include "anchorforge/report.hpp"
#include "anchorforge/trainer.hpp"

namespace fs = std::filesystem;
using namespace anchorforge;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

std::string default_run_dir(const std::string& command) {
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", std::localtime(&now));
  return (fs::path("runs") / (command + "-" + stamp)).string();
}

fs::path make_run_dir(const std::string& out, const std::string& command) {
  const fs::path dir = out.empty() ? fs::path(default_run_dir(command)) : fs::path(out);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void echo_config(const fs::path& dir, const CLI::App& sub) {
  write_text(dir / "config.ini", "[" + sub.get_name() + "]\n" + sub.config_to_str(true, false));
}

std::vector<LrSegment> parse_lr_schedule(const std::string& text) {
  std::vector<LrSegment> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ParseError("lr-schedule entries look like start:lr, got '" + item + "'");
    try {
      std::size_t used = 0;
      const std::string start = item.substr(0, colon), lr = item.substr(colon + 1);
      const long s = std::stol(start, &used);
      if (used != start.size()) throw std::invalid_argument(start);
      const double v = std::stod(lr, &used);
      if (used != lr.size()) throw std::invalid_argument(lr);
      out.push_back({s, v});
    } catch (const std::logic_error&) {
      throw ParseError("bad lr-schedule entry '" + item + "'");
    }
  }
  return out;
}

std::string format_lr_schedule(const std::vector<LrSegment>& schedule) {
  std::string s;
  for (const auto& seg : schedule) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%ld:%g", s.empty() ? "" : ",", seg.start_iter, seg.lr);
    s += buf;
  }
  return s;
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string anchor_list(const AnchorSet& anchors) {
  std::string s;
  for (const auto& a : anchors.sorted_by_area().decoded()) {
    s += "  " + fmt("%9.3f", a.w()) + " " + fmt("%9.3f", a.h()) + "\n";
  }
  return s;
}

// --- ingest ---

struct IngestArgs {
  std::string format;
  std::string input;
  int canvas = 416;
  bool include_crowd = false;
  bool exclude_difficult = false;
  double min_size = kMinBoxSize;
  std::string out;
};

int cmd_ingest(const IngestArgs& a, const CLI::App& sub) {
  ParseOptions options;
  options.include_crowd = a.include_crowd;
  options.include_difficult = !a.exclude_difficult;
  ParseResult parsed;
  if (a.format == "coco") {
    parsed = parse_coco(a.input, options);
  } else if (a.format == "voc") {
    parsed = parse_voc(a.input, options);
  } else {
    parsed = parse_csv(a.input);
  }
  const CanonicalDataset ds = normalize_to_canvas(parsed.boxes, a.canvas, a.min_size);
  const ShapeSummary summary = summarize_shapes(ds);

  const fs::path dir = make_run_dir(a.out, "ingest");
  echo_config(dir, sub);
  write_canonical(ds, dir / "dataset.txt");
  std::ostringstream text;
  text << "records: " << parsed.records << "\nskipped: " << parsed.skipped
       << "\ndropped: " << ds.dropped() << "\nboxes: " << ds.size() << "\ncanvas: " << a.canvas
       << "\n";
  if (!ds.empty()) text << format_summary(summary);
  write_text(dir / "summary.txt", text.str());
  std::cout << text.str() << "dataset: " << (dir / "dataset.txt").string() << "\n";
  return 0;
}

// --- cluster ---

struct ClusterArgs {
  std::string dataset;
  std::size_t num_anchors = 5;
  std::uint64_t seed = 0;
  int stride = 32;
  int max_iter = 300;
  std::string units = "pixels";
  std::string out;
};

void write_anchor_outputs(const fs::path& dir, const AnchorSet& anchors, int canvas,
                          const std::string& units) {
  write_anchors_file(anchors, canvas, dir / "anchors.json");
  write_text(dir / "anchors.txt", yolo_anchor_line(anchors, units == "cells") + "\n");
}

int cmd_cluster(const ClusterArgs& a, const CLI::App& sub) {
  const CanonicalDataset ds = read_canonical(fs::path(a.dataset));
  if (ds.size() < a.num_anchors) {
    throw std::invalid_argument("dataset has " + std::to_string(ds.size()) + " boxes, fewer than " +
                                std::to_string(a.num_anchors) + " anchors");
  }
  const auto shapes = ds.shapes();
  const KMeansResult km = kmeans_iou(shapes, a.num_anchors, {}, a.max_iter, a.seed);
  std::vector<LogShape> logs;
  for (const auto& c : km.centroids) logs.push_back(encode_log(c));
  const AnchorSet anchors = AnchorSet(std::move(logs), a.stride).sorted_by_area();

  const fs::path dir = make_run_dir(a.out, "cluster");
  echo_config(dir, sub);
  write_anchor_outputs(dir, anchors, ds.canvas_size(), a.units);
  std::cout << "mean_best_iou: " << fmt("%.6f", km.mean_best_iou) << "\niterations: " << km.iterations_run
            << "\nanchors (w, h):\n" << anchor_list(anchors)
            << "yolo: " << yolo_anchor_line(anchors, a.units == "cells") << "\n";
  return 0;
}

// --- optimize ---

struct OptimizeArgs {
  std::string dataset;
  std::string init = "kmeans";
  std::string init_file;
  std::size_t num_anchors = 5;
  int stride = 32;
  std::uint64_t seed = 0;
  long iters = 30000;
  int batch_size = 64;
  double momentum = 0.9;
  std::string lr_schedule = format_lr_schedule(voc_lr_schedule());
  double scale = 1.0;
  int warmup_iters = 1500;
  double t_start = 2.0;
  double t_floor = 1e-2;
  bool no_soft_warmup = false;
  bool no_cluster_warmup = false;
  std::optional<double> lambda_pin;
  double anchor_lr_multiplier = 1.0;
  std::string rule = "yolo";
  double rule_tau = 0.5;
  std::string metric = "one_minus_iou";
  bool no_head = false;
  bool no_bn = false;
  std::string bn_grouping = "per_anchor";
  double sigma = 2.0;
  double init_noise = 0.05;
  double init_gamma = 0.1;
  long log_every = 50;
  double tie_jitter = 1e-3;
  std::string units = "pixels";
  std::string out;
};

AssignmentRule rule_of(const std::string& name, double tau) {
  return name == "threshold" ? AssignmentRule::threshold(tau) : AssignmentRule::yolo();
}

TrainConfig train_config(const OptimizeArgs& a) {
  TrainConfig cfg;
  cfg.iters = a.iters;
  cfg.batch_size = a.batch_size;
  cfg.momentum = a.momentum;
  cfg.lr_schedule = parse_lr_schedule(a.lr_schedule);
  cfg.warmup.warmup_iters = a.warmup_iters;
  cfg.warmup.t_start = a.t_start;
  cfg.warmup.t_floor = a.t_floor;
  cfg.soft_warmup = !a.no_soft_warmup;
  cfg.cluster_warmup = !a.no_cluster_warmup;
  cfg.lambda_pin = a.lambda_pin;
  cfg.anchor_lr_multiplier = a.anchor_lr_multiplier;
  cfg.rule = rule_of(a.rule, a.rule_tau);
  cfg.metric = parse_metric(a.metric);
  cfg.head.enabled = !a.no_head;
  cfg.head.batch_norm = !a.no_bn;
  cfg.head.grouping = a.bn_grouping == "joint" ? BnGrouping::kJoint : BnGrouping::kPerAnchor;
  cfg.head.sigma = a.sigma;
  cfg.head.init_noise = a.init_noise;
  cfg.head.init_gamma = a.init_gamma;
  cfg.seed = a.seed;
  cfg.log_every = a.log_every;
  cfg.tie_jitter = a.tie_jitter;
  if (a.scale != 1.0) cfg = cfg.scaled(a.scale);
  cfg.validate();
  return cfg;
}

AnchorSet initial_anchors(const OptimizeArgs& a, const CanonicalDataset& ds) {
  if (a.init == "uniform") {
    if (a.num_anchors != 5) throw std::invalid_argument("init=uniform defines exactly 5 anchors");
    return init_uniform(a.stride);
  }
  if (a.init == "identical") return init_identical(a.stride, a.num_anchors);
  if (a.init == "file") {
    if (a.init_file.empty()) throw std::invalid_argument("init=file needs --init-file");
    return read_anchors_file(a.init_file).first;
  }
  if (ds.size() < a.num_anchors) throw std::invalid_argument("dataset has fewer boxes than anchors");
  return init_kmeans(ds, a.num_anchors, a.seed, a.stride);
}

nlohmann::json metrics_json(const AnchorSet& anchors, const CanonicalDataset& ds) {
  return {{"avg_best_iou", avg_best_iou(anchors, ds)},
          {"recall_at_0.5", recall_at(anchors, ds, 0.5)},
          {"recall_at_0.75", recall_at(anchors, ds, 0.75)}};
}

int cmd_optimize(const OptimizeArgs& a, const CLI::App& sub) {
  const TrainConfig cfg = train_config(a);
  if (a.init == "file" && !a.init_file.empty() && !fs::is_regular_file(a.init_file)) {
    throw ParseError("init file not found: " + a.init_file);
  }
  const CanonicalDataset ds = read_canonical(fs::path(a.dataset));
  if (ds.empty()) throw std::invalid_argument("dataset is empty");
  const AnchorSet anchors0 = initial_anchors(a, ds);

  const fs::path dir = make_run_dir(a.out, "optimize");
  echo_config(dir, sub);
  std::ofstream trajectory(dir / "trajectory.csv", std::ios::binary);
  if (!trajectory) throw std::runtime_error("cannot write trajectory.csv");

  const TrainResult r = run_training(ds, anchors0, cfg, &trajectory);
  write_anchor_outputs(dir, r.anchors, ds.canvas_size(), a.units);

  nlohmann::json summary;
  summary["iterations"] = cfg.iters;
  summary["final_loss"] = r.trajectory.rows.empty() ? 0.0 : r.trajectory.rows.back().loss;
  summary["final_smoothed_loss"] = r.final_smoothed_loss;
  summary["warmup_end_smoothed_loss"] =
      r.warmup_end_smoothed_loss ? nlohmann::json(*r.warmup_end_smoothed_loss) : nlohmann::json(nullptr);
  summary["before"] = metrics_json(anchors0, ds);
  summary["after"] = metrics_json(r.anchors, ds);
  summary["initial_anchors"] = anchors_to_json(anchors0, ds.canvas_size())["anchors"];
  summary["final_anchors"] = anchors_to_json(r.anchors, ds.canvas_size())["anchors"];
  write_text(dir / "summary.json", summary.dump(2) + "\n");

  std::cout << "final smoothed loss: " << fmt("%.6g", r.final_smoothed_loss) << "\n"
            << "avg best IoU: " << fmt("%.4f", summary["before"]["avg_best_iou"].get<double>()) << " -> "
            << fmt("%.4f", summary["after"]["avg_best_iou"].get<double>()) << "\n"
            << "anchors (w, h):\n" << anchor_list(r.anchors)
            << "yolo: " << yolo_anchor_line(r.anchors, a.units == "cells") << "\n"
            << "run directory: " << dir.string() << "\n";
  return 0;
}

// --- eval ---

struct EvalArgs {
  std::string dataset;
  std::string anchors;
  std::vector<double> taus{0.5, 0.75};
  std::string rule = "yolo";
  double rule_tau = 0.5;
  std::string out;
};

int cmd_eval(const EvalArgs& a, const CLI::App& sub) {
  for (double t : a.taus) {
    if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("recall thresholds must be in (0, 1)");
  }
  const CanonicalDataset ds = read_canonical(fs::path(a.dataset));
  if (ds.empty()) throw std::invalid_argument("dataset is empty");
  const AnchorSet anchors = read_anchors_file(a.anchors).first;
  const AnchorReport report = make_report(anchors, ds, rule_of(a.rule, a.rule_tau), a.taus);

  const fs::path dir = make_run_dir(a.out, "eval");
  echo_config(dir, sub);
  const std::string text = render_report_text(report);
  write_text(dir / "report.json", report_to_json(report).dump(2) + "\n");
  write_text(dir / "report.txt", text);
  std::cout << text;
  return 0;
}

// --- compare ---

struct CompareArgs {
  std::string a;
  std::string b;
  std::string out;
};

int cmd_compare(const CompareArgs& a, const CLI::App& sub) {
  const AnchorSet x = read_anchors_file(a.a).first.sorted_by_area();
  const AnchorSet y = read_anchors_file(a.b).first.sorted_by_area();
  const AnchorMatching m = match_anchor_sets(x, y);
  const auto dx = x.decoded(), dy = y.decoded();
  std::ostringstream text;
  nlohmann::json doc;
  doc["pairs"] = nlohmann::json::array();
  for (std::size_t i = 0; i < m.pairs.size(); ++i) {
    const auto [p, q] = m.pairs[i];
    text << "  (" << fmt("%.3f", dx[p].w()) << ", " << fmt("%.3f", dx[p].h()) << ") <-> ("
         << fmt("%.3f", dy[q].w()) << ", " << fmt("%.3f", dy[q].h()) << ")  "
         << fmt("%.5f", m.distances[i]) << "\n";
    doc["pairs"].push_back({{"a", {dx[p].w(), dx[p].h()}}, {"b", {dy[q].w(), dy[q].h()}},
                            {"distance", m.distances[i]}});
  }
  text << "mean log-distance: " << fmt("%.6f", m.mean_distance) << "\n";
  doc["mean_distance"] = m.mean_distance;
  if (!a.out.empty()) {
    const fs::path dir = make_run_dir(a.out, "compare");
    echo_config(dir, sub);
    write_text(dir / "compare.json", doc.dump(2) + "\n");
    write_text(dir / "compare.txt", text.str());
  }
  std::cout << text.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Learn anchor box shapes from ground-truth box populations.", "anchorforge");
  app.set_config("--config", "", "key=value config file with one [section] per command");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.fallthrough();

  const std::vector<std::string> units{"pixels", "cells"};
  const std::vector<std::string> rules{"yolo", "threshold"};

  IngestArgs ig;
  auto* ingest = app.add_subcommand("ingest", "Convert COCO, VOC or CSV annotations to a canonical dataset");
  ingest->add_option("--format", ig.format, "Annotation format")->required()->check(CLI::IsMember({"coco", "voc", "csv"}));
  ingest->add_option("--input", ig.input, "Annotation file (coco, csv) or directory of XML files (voc)")
      ->required()->check(CLI::ExistingPath);
  ingest->add_option("--canvas", ig.canvas, "Square canvas size S in pixels")->capture_default_str()->check(CLI::Range(1, 1 << 20));
  ingest->add_flag("--include-crowd", ig.include_crowd, "Keep COCO crowd annotations");
  ingest->add_flag("--exclude-difficult", ig.exclude_difficult, "Drop VOC difficult objects");
  ingest->add_option("--min-size", ig.min_size, "Drop boxes smaller than this after scaling")->capture_default_str()->check(CLI::PositiveNumber);
  ingest->add_option("--out", ig.out, "Run directory (default runs/ingest-<timestamp>)");

  ClusterArgs cl;
  auto* cluster = app.add_subcommand("cluster", "IoU k-means anchors");
  cluster->add_option("--dataset", cl.dataset, "Canonical dataset file")->required()->check(CLI::ExistingFile);
  cluster->add_option("-k,--num-anchors", cl.num_anchors, "Number of anchors")->capture_default_str()->check(CLI::Range(1, 1000));
  cluster->add_option("--seed", cl.seed, "Seeding RNG seed")->envname("ANCHORFORGE_SEED")->capture_default_str();
  cluster->add_option("--stride", cl.stride, "Feature stride in pixels")->capture_default_str()->check(CLI::Range(1, 4096));
  cluster->add_option("--max-iter", cl.max_iter, "Lloyd iteration cap")->capture_default_str()->check(CLI::Range(1, 1000000));
  cluster->add_option("--units", cl.units, "Units of the YOLO anchor line")->capture_default_str()->check(CLI::IsMember(units));
  cluster->add_option("--out", cl.out, "Run directory (default runs/cluster-<timestamp>)");

  OptimizeArgs op;
  auto* optimize = app.add_subcommand("optimize", "Learn anchors jointly with the surrogate head");
  optimize->add_option("--dataset", op.dataset, "Canonical dataset file")->required()->check(CLI::ExistingFile);
  optimize->add_option("--init", op.init, "Initial anchors")->capture_default_str()
      ->check(CLI::IsMember({"uniform", "identical", "kmeans", "file"}));
  optimize->add_option("--init-file", op.init_file, "Anchors JSON for --init file");
  optimize->add_option("-k,--num-anchors", op.num_anchors, "Number of anchors (identical, kmeans)")->capture_default_str()->check(CLI::Range(1, 1000));
  optimize->add_option("--stride", op.stride, "Feature stride in pixels")->capture_default_str()->check(CLI::Range(1, 4096));
  optimize->add_option("--seed", op.seed, "Seed for batches, head init and k-means")->envname("ANCHORFORGE_SEED")->capture_default_str();
  optimize->add_option("--iters", op.iters, "Iterations")->capture_default_str()->check(CLI::NonNegativeNumber);
  optimize->add_option("--batch-size", op.batch_size, "Boxes per iteration")->capture_default_str()->check(CLI::PositiveNumber);
  optimize->add_option("--momentum", op.momentum, "Heavy-ball momentum")->capture_default_str();
  optimize->add_option("--lr-schedule", op.lr_schedule, "Step schedule as start:lr,start:lr,...")->capture_default_str();
  optimize->add_option("--scale", op.scale, "Stretch iterations, lr breakpoints and warm-up by this factor")->capture_default_str()->check(CLI::PositiveNumber);
  optimize->add_option("--warmup-iters", op.warmup_iters, "Warm-up length")->capture_default_str()->check(CLI::NonNegativeNumber);
  optimize->add_option("--t-start", op.t_start, "Soft-assignment start temperature")->capture_default_str();
  optimize->add_option("--t-floor", op.t_floor, "Soft-assignment temperature floor")->capture_default_str();
  optimize->add_flag("--no-soft-warmup", op.no_soft_warmup, "Use the hard rule from the first iteration");
  optimize->add_flag("--no-cluster-warmup", op.no_cluster_warmup, "Disable the clustering term");
  optimize->add_option("--lambda-pin", op.lambda_pin, "Hold the clustering coefficient fixed");
  optimize->add_option("--anchor-lr-multiplier", op.anchor_lr_multiplier, "Anchor lr factor; 0 keeps anchors fixed")->capture_default_str();
  optimize->add_option("--rule", op.rule, "Assignment rule after warm-up")->capture_default_str()->check(CLI::IsMember(rules));
  optimize->add_option("--rule-tau", op.rule_tau, "IoU threshold for --rule threshold")->capture_default_str();
  optimize->add_option("--metric", op.metric, "Shape distance")->capture_default_str()
      ->check(CLI::IsMember({"one_minus_iou", "sq_l2_log"}));
  optimize->add_flag("--no-head", op.no_head, "Train anchors without the surrogate head");
  optimize->add_flag("--no-bn", op.no_bn, "Raw head outputs without batch normalization");
  optimize->add_option("--bn-grouping", op.bn_grouping, "BN statistics per anchor or pooled")->capture_default_str()
      ->check(CLI::IsMember({"per_anchor", "joint"}));
  optimize->add_option("--sigma", op.sigma, "Head feature noise (capacity knob)")->capture_default_str();
  optimize->add_option("--init-noise", op.init_noise, "Head weight init noise")->capture_default_str();
  optimize->add_option("--init-gamma", op.init_gamma, "Initial BN scale")->capture_default_str();
  optimize->add_option("--log-every", op.log_every, "Trajectory row interval")->capture_default_str()->check(CLI::PositiveNumber);
  optimize->add_option("--tie-jitter", op.tie_jitter, "Perturbation for coincident initial anchors")->capture_default_str();
  optimize->add_option("--units", op.units, "Units of the YOLO anchor line")->capture_default_str()->check(CLI::IsMember(units));
  optimize->add_option("--out", op.out, "Run directory (default runs/optimize-<timestamp>)");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Anchor-quality report");
  eval->add_option("--dataset", ev.dataset, "Canonical dataset file")->required()->check(CLI::ExistingFile);
  eval->add_option("--anchors", ev.anchors, "Anchors JSON")->required()->check(CLI::ExistingFile);
  eval->add_option("--tau", ev.taus, "Recall thresholds")->delimiter(',')->capture_default_str();
  eval->add_option("--rule", ev.rule, "Rule for the utilization histogram")->capture_default_str()->check(CLI::IsMember(rules));
  eval->add_option("--rule-tau", ev.rule_tau, "IoU threshold for --rule threshold")->capture_default_str();
  eval->add_option("--out", ev.out, "Run directory (default runs/eval-<timestamp>)");

  CompareArgs cp;
  auto* compare = app.add_subcommand("compare", "Matched log-space distance between two anchor sets");
  compare->add_option("a", cp.a, "First anchors JSON")->required()->check(CLI::ExistingFile);
  compare->add_option("b", cp.b, "Second anchors JSON")->required()->check(CLI::ExistingFile);
  compare->add_option("--out", cp.out, "Also write compare.json and compare.txt here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (ingest->parsed()) return cmd_ingest(ig, *ingest);
    if (cluster->parsed()) return cmd_cluster(cl, *cluster);
    if (optimize->parsed()) return cmd_optimize(op, *optimize);
    if (eval->parsed()) return cmd_eval(ev, *eval);
    return cmd_compare(cp, *compare);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
}
