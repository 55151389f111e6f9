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

// Anchor-quality proxies. None of these are detection metrics: they measure
// how well a set of anchor shapes covers a box-shape population.

#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "anchorforge/geometry.hpp"
#include "anchorforge/ingest.hpp"
#include "anchorforge/trainer.hpp"

namespace anchorforge {

// Mean over boxes of the best aligned IoU against the anchors. Throws
// std::invalid_argument for an empty dataset.
double avg_best_iou(const AnchorSet& anchors, const CanonicalDataset& ds);

// Fraction of boxes whose best aligned IoU is >= tau.
double recall_at(const AnchorSet& anchors, const CanonicalDataset& ds, double tau);

struct AnchorMatching {
  double mean_distance = 0.0;
  // pairs[i] = (index in a, index in b)
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<double> distances;
};

inline constexpr std::size_t kMaxMatchAnchors = 10;

// Minimum over permutations of the mean Euclidean (lw, lh) distance between
// matched anchors. Exhaustive; both sets must have the same size <= 10.
AnchorMatching match_anchor_sets(const AnchorSet& a, const AnchorSet& b);

struct AnchorReport {
  std::size_t num_boxes = 0;
  std::string rule;
  double avg_best_iou = 0.0;
  std::vector<std::pair<double, double>> recall_at;  // (tau, recall)
  std::vector<long> utilization;
  std::vector<BoxShape> anchors;  // sorted by area

  friend bool operator==(const AnchorReport&, const AnchorReport&) = default;
};

inline constexpr const char* kReportBanner =
    "anchor-quality proxies (best-IoU coverage, recall@tau); these are not detection metrics";

// Anchors are sorted by area before anything is computed, so utilization is
// indexed like `anchors` in the result.
AnchorReport make_report(const AnchorSet& anchors, const CanonicalDataset& ds,
                         const AssignmentRule& rule, const std::vector<double>& taus);

nlohmann::json report_to_json(const AnchorReport& report);
AnchorReport report_from_json(const nlohmann::json& doc);
std::string render_report_text(const AnchorReport& report);

// --- Anchor files ---

// {"canvas": S, "stride": n, "anchors": [[w, h], ...]} sorted by area.
nlohmann::json anchors_to_json(const AnchorSet& anchors, int canvas);
// Returns the anchors and the canvas. Throws ParseError on malformed input.
std::pair<AnchorSet, int> anchors_from_json(const nlohmann::json& doc);
void write_anchors_file(const AnchorSet& anchors, int canvas, const std::filesystem::path& path);
std::pair<AnchorSet, int> read_anchors_file(const std::filesystem::path& path);

// "w1,h1, w2,h2, ..." sorted by area; divides by the stride when
// `cell_units` is set.
std::string yolo_anchor_line(const AnchorSet& anchors, bool cell_units);

}  // namespace anchorforge
