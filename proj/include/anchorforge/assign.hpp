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

// Ground-truth to anchor responsibility weights.
//
// All anchors of a cell share its center, so matching a ground truth to the
// anchors of its cell only compares shapes; no spatial grid is built.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "anchorforge/geometry.hpp"

namespace anchorforge {

struct AssignmentEntry {
  std::size_t gt = 0;
  std::size_t anchor = 0;
  double weight = 0.0;

  friend bool operator==(const AssignmentEntry&, const AssignmentEntry&) = default;
};

// Sparse weights between ground truths and anchors. Entries are kept sorted
// by (gt, anchor) with at most one entry per pair.
class Assignment {
 public:
  Assignment() = default;
  Assignment(std::size_t num_gts, std::size_t num_anchors, std::vector<AssignmentEntry> entries);

  std::size_t num_gts() const { return num_gts_; }
  std::size_t num_anchors() const { return num_anchors_; }
  std::span<const AssignmentEntry> entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

  // Sum of all weights (the clustering-term normalizer).
  double total_weight() const;

  // Anchor holding the largest weight for each gt (lowest index on ties).
  // Gts without entries map to num_anchors().
  std::vector<std::size_t> dominant_anchor() const;

  friend bool operator==(const Assignment&, const Assignment&) = default;

 private:
  std::size_t num_gts_ = 0;
  std::size_t num_anchors_ = 0;
  std::vector<AssignmentEntry> entries_;
};

// Distances (and IoUs) closer than this to the best count as ties, so that
// exact ties survive the log round-trip.
inline constexpr double kTieTolerance = 1e-12;

// Weight 1 on the closest anchor under `metric` (lowest index on ties).
Assignment hard_assign_yolo(std::span<const LogShape> gts, const AnchorSet& anchors,
                            DistanceMetric metric);

// Weight 1 on every anchor with aligned IoU >= tau, plus the best-IoU anchor.
Assignment hard_assign_threshold(std::span<const LogShape> gts, const AnchorSet& anchors,
                                 double tau);

// Row-wise softmax of -dist / temperature over the anchors.
Assignment soft_assign(std::span<const LogShape> gts, const AnchorSet& anchors,
                       DistanceMetric metric, double temperature);

struct WarmupSchedule {
  int warmup_iters = 1500;
  double t_start = 2.0;
  double t_floor = 1e-2;
  double lambda_start = 1.0;
};

// Soft-assignment temperature at iteration t, or nullopt once warm-up is over
// and the hard rule takes over.
std::optional<double> temperature_at(long t, const WarmupSchedule& sched);

// Clustering-term coefficient: lambda_start * max(0, 1 - t / warmup_iters).
double lambda_at(long t, const WarmupSchedule& sched);

}  // namespace anchorforge
