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

#include "anchorforge/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace anchorforge {

BoxShape::BoxShape(double w, double h) : w_(w), h_(h) {
  if (!std::isfinite(w) || !std::isfinite(h) || w <= 0.0 || h <= 0.0) {
    throw std::invalid_argument("BoxShape requires finite positive w, h; got (" +
                                std::to_string(w) + ", " + std::to_string(h) +
                                ")");
  }
}

Box::Box(double cx, double cy, BoxShape shape) : cx_(cx), cy_(cy), shape_(shape) {
  if (!std::isfinite(cx) || !std::isfinite(cy)) {
    throw std::invalid_argument("Box center must be finite");
  }
}

AnchorSet::AnchorSet(std::vector<LogShape> shapes, int stride)
    : shapes_(std::move(shapes)), stride_(stride) {
  if (shapes_.empty()) throw std::invalid_argument("AnchorSet needs at least one shape");
  if (stride_ < 1) throw std::invalid_argument("AnchorSet stride must be >= 1");
  for (const auto& s : shapes_) {
    if (!std::isfinite(s.lw) || !std::isfinite(s.lh)) {
      throw std::invalid_argument("AnchorSet shapes must be finite");
    }
  }
}

std::vector<BoxShape> AnchorSet::decoded() const {
  std::vector<BoxShape> out;
  out.reserve(shapes_.size());
  for (const auto& s : shapes_) out.push_back(decode_log(s));
  return out;
}

AnchorSet AnchorSet::sorted_by_area() const {
  std::vector<LogShape> sorted = shapes_;
  // log(area) = lw + lh; monotone in area.
  std::stable_sort(sorted.begin(), sorted.end(), [](const LogShape& a, const LogShape& b) {
    return a.lw + a.lh < b.lw + b.lh;
  });
  return AnchorSet(std::move(sorted), stride_);
}

std::string_view to_string(DistanceMetric metric) {
  switch (metric) {
    case DistanceMetric::kOneMinusIou:
      return "one_minus_iou";
    case DistanceMetric::kSqL2Log:
      return "sq_l2_log";
  }
  return "unknown";
}

DistanceMetric parse_metric(std::string_view name) {
  if (name == "one_minus_iou" || name == "iou") return DistanceMetric::kOneMinusIou;
  if (name == "sq_l2_log" || name == "l2") return DistanceMetric::kSqL2Log;
  throw std::invalid_argument("unknown distance metric: " + std::string(name));
}

double iou_aligned(const BoxShape& a, const BoxShape& b) {
  const double inter = std::min(a.w(), b.w()) * std::min(a.h(), b.h());
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

double iou_boxes(const Box& a, const Box& b) {
  const double iw = std::min(a.x_max(), b.x_max()) - std::max(a.x_min(), b.x_min());
  const double ih = std::min(a.y_max(), b.y_max()) - std::max(a.y_min(), b.y_min());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.shape().area() + b.shape().area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

LogShape encode_log(const BoxShape& s) { return {std::log(s.w()), std::log(s.h())}; }

BoxShape decode_log(const LogShape& l) { return {std::exp(l.lw), std::exp(l.lh)}; }

double shape_dist(const LogShape& a, const LogShape& b, DistanceMetric metric) {
  switch (metric) {
    case DistanceMetric::kOneMinusIou:
      if (a == b) return 0.0;
      return std::max(0.0, 1.0 - iou_aligned(decode_log(a), decode_log(b)));
    case DistanceMetric::kSqL2Log: {
      const double dw = a.lw - b.lw;
      const double dh = a.lh - b.lh;
      return dw * dw + dh * dh;
    }
  }
  return 0.0;
}

}  // namespace anchorforge
