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

#include "anchorforge/assign.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace anchorforge {

Assignment::Assignment(std::size_t num_gts, std::size_t num_anchors,
                       std::vector<AssignmentEntry> entries)
    : num_gts_(num_gts), num_anchors_(num_anchors), entries_(std::move(entries)) {
  std::sort(entries_.begin(), entries_.end(), [](const auto& a, const auto& b) {
    return a.gt != b.gt ? a.gt < b.gt : a.anchor < b.anchor;
  });
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (e.gt >= num_gts_ || e.anchor >= num_anchors_) {
      throw std::invalid_argument("assignment entry index out of range");
    }
    if (!(e.weight >= 0.0 && e.weight <= 1.0)) {
      throw std::invalid_argument("assignment weight outside [0, 1]");
    }
    if (i > 0 && entries_[i - 1].gt == e.gt && entries_[i - 1].anchor == e.anchor) {
      throw std::invalid_argument("duplicate assignment entry");
    }
  }
}

double Assignment::total_weight() const {
  double n = 0.0;
  for (const auto& e : entries_) n += e.weight;
  return n;
}

std::vector<std::size_t> Assignment::dominant_anchor() const {
  std::vector<std::size_t> best(num_gts_, num_anchors_);
  std::vector<double> best_w(num_gts_, -1.0);
  for (const auto& e : entries_) {
    // Entries are sorted by anchor within a gt, so strict > keeps the lowest.
    if (e.weight > best_w[e.gt]) {
      best_w[e.gt] = e.weight;
      best[e.gt] = e.anchor;
    }
  }
  return best;
}

namespace {

std::size_t argmin_dist(const LogShape& gt, const AnchorSet& anchors, DistanceMetric metric) {
  std::size_t best = 0;
  double best_d = shape_dist(gt, anchors[0], metric);
  for (std::size_t k = 1; k < anchors.size(); ++k) {
    const double d = shape_dist(gt, anchors[k], metric);
    if (d < best_d - kTieTolerance) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

}  // namespace

Assignment hard_assign_yolo(std::span<const LogShape> gts, const AnchorSet& anchors,
                            DistanceMetric metric) {
  std::vector<AssignmentEntry> entries;
  entries.reserve(gts.size());
  for (std::size_t j = 0; j < gts.size(); ++j) {
    entries.push_back({j, argmin_dist(gts[j], anchors, metric), 1.0});
  }
  return Assignment(gts.size(), anchors.size(), std::move(entries));
}

Assignment hard_assign_threshold(std::span<const LogShape> gts, const AnchorSet& anchors,
                                 double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("threshold tau must be in (0, 1)");
  const auto decoded = anchors.decoded();
  std::vector<AssignmentEntry> entries;
  for (std::size_t j = 0; j < gts.size(); ++j) {
    const BoxShape g = decode_log(gts[j]);
    std::size_t best = 0;
    double best_iou = -1.0;
    std::vector<double> ious(decoded.size());
    for (std::size_t k = 0; k < decoded.size(); ++k) {
      ious[k] = iou_aligned(g, decoded[k]);
      if (ious[k] > best_iou + kTieTolerance) {
        best_iou = ious[k];
        best = k;
      }
    }
    for (std::size_t k = 0; k < decoded.size(); ++k) {
      if (ious[k] >= tau || k == best) entries.push_back({j, k, 1.0});
    }
  }
  return Assignment(gts.size(), anchors.size(), std::move(entries));
}

Assignment soft_assign(std::span<const LogShape> gts, const AnchorSet& anchors,
                       DistanceMetric metric, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  const std::size_t a = anchors.size();
  std::vector<AssignmentEntry> entries;
  entries.reserve(gts.size() * a);
  std::vector<double> logits(a);
  for (std::size_t j = 0; j < gts.size(); ++j) {
    double max_logit = -INFINITY;
    for (std::size_t k = 0; k < a; ++k) {
      logits[k] = -shape_dist(gts[j], anchors[k], metric) / temperature;
      max_logit = std::max(max_logit, logits[k]);
    }
    double z = 0.0;
    for (auto& l : logits) {
      l = std::exp(l - max_logit);
      z += l;
    }
    for (std::size_t k = 0; k < a; ++k) entries.push_back({j, k, logits[k] / z});
  }
  return Assignment(gts.size(), a, std::move(entries));
}

std::optional<double> temperature_at(long t, const WarmupSchedule& sched) {
  if (t >= sched.warmup_iters) return std::nullopt;
  const double frac = static_cast<double>(t) / sched.warmup_iters;
  return std::max(sched.t_floor, sched.t_start * (1.0 - frac));
}

double lambda_at(long t, const WarmupSchedule& sched) {
  if (t >= sched.warmup_iters) return 0.0;
  const double frac = static_cast<double>(t) / sched.warmup_iters;
  return sched.lambda_start * std::max(0.0, 1.0 - frac);
}

}  // namespace anchorforge
