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

#include "anchorforge/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "anchorforge/errors.hpp"

namespace anchorforge {
namespace {

double best_iou(const BoxShape& s, const std::vector<BoxShape>& anchors) {
  double best = 0.0;
  for (const auto& a : anchors) best = std::max(best, iou_aligned(s, a));
  return best;
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

double avg_best_iou(const AnchorSet& anchors, const CanonicalDataset& ds) {
  if (ds.empty()) throw std::invalid_argument("avg_best_iou needs a nonempty dataset");
  const auto decoded = anchors.decoded();
  double total = 0.0;
  for (const auto& r : ds.records()) total += best_iou(r.shape(), decoded);
  return total / static_cast<double>(ds.size());
}

double recall_at(const AnchorSet& anchors, const CanonicalDataset& ds, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("recall threshold must be in (0, 1)");
  if (ds.empty()) return 0.0;
  const auto decoded = anchors.decoded();
  std::size_t hits = 0;
  for (const auto& r : ds.records()) {
    if (best_iou(r.shape(), decoded) >= tau) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

AnchorMatching match_anchor_sets(const AnchorSet& a, const AnchorSet& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("anchor sets differ in size (" + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()) + ")");
  }
  if (a.size() > kMaxMatchAnchors) {
    throw std::invalid_argument("exhaustive matching supports at most 10 anchors");
  }
  const std::size_t n = a.size();
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = std::sqrt(shape_dist(a[i], b[j], DistanceMetric::kSqL2Log));
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::vector<std::size_t> best = perm;
  double best_total = INFINITY;
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < n && total < best_total; ++i) total += cost[i * n + perm[i]];
    if (total < best_total) {
      best_total = total;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  AnchorMatching m;
  for (std::size_t i = 0; i < n; ++i) {
    m.pairs.emplace_back(i, best[i]);
    m.distances.push_back(cost[i * n + best[i]]);
  }
  m.mean_distance = best_total / static_cast<double>(n);
  return m;
}

AnchorReport make_report(const AnchorSet& anchors_in, const CanonicalDataset& ds,
                         const AssignmentRule& rule, const std::vector<double>& taus) {
  const AnchorSet anchors = anchors_in.sorted_by_area();
  AnchorReport r;
  r.num_boxes = ds.size();
  r.rule = to_string(rule);
  r.avg_best_iou = avg_best_iou(anchors, ds);
  for (double tau : taus) r.recall_at.emplace_back(tau, recall_at(anchors, ds, tau));
  r.utilization.assign(anchors.size(), 0);
  const auto gts = ds.log_shapes();
  const Assignment assign = apply_rule(rule, gts, anchors, DistanceMetric::kOneMinusIou);
  for (const auto& e : assign.entries()) {
    if (e.weight > 0.0) ++r.utilization[e.anchor];
  }
  r.anchors = anchors.decoded();
  return r;
}

nlohmann::json report_to_json(const AnchorReport& report) {
  nlohmann::json doc;
  doc["banner"] = kReportBanner;
  doc["num_boxes"] = report.num_boxes;
  doc["rule"] = report.rule;
  doc["avg_best_iou"] = report.avg_best_iou;
  doc["recall"] = nlohmann::json::array();
  for (const auto& [tau, value] : report.recall_at) {
    doc["recall"].push_back({{"tau", tau}, {"value", value}});
  }
  doc["utilization"] = report.utilization;
  doc["anchors"] = nlohmann::json::array();
  for (const auto& s : report.anchors) doc["anchors"].push_back({s.w(), s.h()});
  return doc;
}

AnchorReport report_from_json(const nlohmann::json& doc) {
  try {
    AnchorReport r;
    r.num_boxes = doc.at("num_boxes").get<std::size_t>();
    r.rule = doc.at("rule").get<std::string>();
    r.avg_best_iou = doc.at("avg_best_iou").get<double>();
    for (const auto& e : doc.at("recall")) {
      r.recall_at.emplace_back(e.at("tau").get<double>(), e.at("value").get<double>());
    }
    r.utilization = doc.at("utilization").get<std::vector<long>>();
    for (const auto& a : doc.at("anchors")) r.anchors.emplace_back(a.at(0).get<double>(), a.at(1).get<double>());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed report JSON: ") + e.what());
  }
}

std::string render_report_text(const AnchorReport& report) {
  std::ostringstream out;
  out << "# " << kReportBanner << '\n';
  out << "boxes: " << report.num_boxes << "  rule: " << report.rule << '\n';
  out << "avg best IoU: " << fmt("%.4f", report.avg_best_iou) << '\n';
  for (const auto& [tau, value] : report.recall_at) {
    out << "recall@" << fmt("%g", tau) << ": " << fmt("%.4f", value) << '\n';
  }
  out << "anchors (w, h) and utilization:\n";
  for (std::size_t k = 0; k < report.anchors.size(); ++k) {
    out << "  " << k + 1 << ": " << fmt("%8.2f", report.anchors[k].w()) << ' '
        << fmt("%8.2f", report.anchors[k].h()) << "  " << report.utilization[k] << '\n';
  }
  return out.str();
}

nlohmann::json anchors_to_json(const AnchorSet& anchors, int canvas) {
  nlohmann::json doc;
  doc["canvas"] = canvas;
  doc["stride"] = anchors.stride();
  doc["anchors"] = nlohmann::json::array();
  for (const auto& s : anchors.sorted_by_area().decoded()) doc["anchors"].push_back({s.w(), s.h()});
  return doc;
}

std::pair<AnchorSet, int> anchors_from_json(const nlohmann::json& doc) {
  try {
    const int canvas = doc.at("canvas").get<int>();
    const int stride = doc.at("stride").get<int>();
    std::vector<LogShape> shapes;
    for (const auto& a : doc.at("anchors")) {
      if (!a.is_array() || a.size() != 2) throw ParseError("anchor entries must be [w, h] pairs");
      shapes.push_back(encode_log(BoxShape(a[0].get<double>(), a[1].get<double>())));
    }
    return {AnchorSet(std::move(shapes), stride), canvas};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed anchors JSON: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("invalid anchors: ") + e.what());
  }
}

void write_anchors_file(const AnchorSet& anchors, int canvas, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << anchors_to_json(anchors, canvas).dump(2) << '\n';
}

std::pair<AnchorSet, int> read_anchors_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open anchors file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": malformed JSON at byte " + std::to_string(e.byte), e.byte);
  }
  return anchors_from_json(doc);
}

std::string yolo_anchor_line(const AnchorSet& anchors, bool cell_units) {
  const double div = cell_units ? anchors.stride() : 1.0;
  std::string line;
  for (const auto& s : anchors.sorted_by_area().decoded()) {
    if (!line.empty()) line += ", ";
    line += fmt("%.4g", s.w() / div) + "," + fmt("%.4g", s.h() / div);
  }
  return line;
}

}  // namespace anchorforge
