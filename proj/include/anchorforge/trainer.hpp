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

// Mini-batch SGD over anchor shapes (log space) and the surrogate head.
//
// Each iteration samples a batch of boxes, assigns them to anchors (soft
// during warm-up, the configured hard rule afterwards), evaluates the
// localization loss plus the annealed clustering term, and takes one
// momentum step on every trainable parameter.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "anchorforge/assign.hpp"
#include "anchorforge/geometry.hpp"
#include "anchorforge/ingest.hpp"
#include "anchorforge/loss.hpp"

namespace anchorforge {

struct LrSegment {
  long start_iter = 0;
  double lr = 0.0;

  friend bool operator==(const LrSegment&, const LrSegment&) = default;
};

// (0, 1e-4), (100, 1e-3), (15000, 1e-4), (27000, 1e-5) over 30k iterations.
std::vector<LrSegment> voc_lr_schedule();

// lr of the last segment with start_iter <= t.
double lr_at(long t, std::span<const LrSegment> schedule);

// Heavy-ball momentum: v <- momentum * v + grad; p <- p - lr * v.
void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
              double lr, double momentum);

struct AssignmentRule {
  enum class Kind { kYolo, kThreshold };
  Kind kind = Kind::kYolo;
  double tau = 0.5;  // kThreshold only

  static AssignmentRule yolo() { return {}; }
  static AssignmentRule threshold(double tau) { return {Kind::kThreshold, tau}; }
};

std::string to_string(const AssignmentRule& rule);

// Applies a hard rule. kYolo uses `metric`; kThreshold always uses IoU.
Assignment apply_rule(const AssignmentRule& rule, std::span<const LogShape> gts,
                      const AnchorSet& anchors, DistanceMetric metric);

struct HeadConfig {
  bool enabled = true;
  bool batch_norm = true;
  BnGrouping grouping = BnGrouping::kPerAnchor;
  double sigma = 2.0;
  double init_noise = 0.05;
  double init_gamma = 0.1;
};

struct TrainConfig {
  long iters = 30000;
  int batch_size = 64;
  double momentum = 0.9;
  std::vector<LrSegment> lr_schedule = voc_lr_schedule();
  WarmupSchedule warmup;
  bool soft_warmup = true;
  bool cluster_warmup = true;
  // Overrides the annealed clustering coefficient at every iteration.
  std::optional<double> lambda_pin;
  double anchor_lr_multiplier = 1.0;
  AssignmentRule rule;
  DistanceMetric metric = DistanceMetric::kOneMinusIou;
  HeadConfig head;
  std::uint64_t seed = 0;
  long log_every = 50;
  // Standard deviation (log units) of the perturbation applied to anchors
  // that coincide exactly at the start of training. 0 disables it.
  double tie_jitter = 1e-3;

  // Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  // Stretches the iteration budget, lr breakpoints and warm-up length.
  TrainConfig scaled(double factor) const;
};

struct TrajectoryRow {
  long iter = 0;
  double loss = 0.0;
  double smoothed_loss = 0.0;  // in memory only
  double lambda = 0.0;
  std::optional<double> temperature;  // nullopt in hard mode
  std::vector<BoxShape> anchors;
  // Boxes whose dominant anchor was k, accumulated since the previous row.
  std::vector<long> utilization;
};

struct Trajectory {
  std::vector<TrajectoryRow> rows;
};

// CSV columns: iter,loss,lambda,T,w1,h1,...,wA,hA,util1,...,utilA. T is 0 in
// hard mode.
void write_trajectory_header(std::ostream& out, std::size_t num_anchors);
void write_trajectory_row(std::ostream& out, const TrajectoryRow& row);
void write_trajectory(std::ostream& out, const Trajectory& trajectory, std::size_t num_anchors);

struct TrainResult {
  AnchorSet anchors;
  HeadParams head;
  Trajectory trajectory;
  // Exponentially smoothed loss, alpha = 1/100.
  double final_smoothed_loss = 0.0;
  std::optional<double> warmup_end_smoothed_loss;
};

inline constexpr double kLossSmoothing = 1.0 / 100.0;

// Throws NumericalError on a non-finite loss or parameter, and
// std::invalid_argument on an invalid config or empty dataset. When
// `trajectory_out` is given, rows are streamed to it as they are logged.
TrainResult run_training(const CanonicalDataset& ds, const AnchorSet& anchors0,
                         const TrainConfig& cfg, std::ostream* trajectory_out = nullptr);

}  // namespace anchorforge
