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

#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace anchorforge {

// Width/height pair in canvas pixels. Both components are finite and
// strictly positive; the constructor throws std::invalid_argument otherwise.
class BoxShape {
 public:
  BoxShape(double w, double h);

  double w() const { return w_; }
  double h() const { return h_; }
  double area() const { return w_ * h_; }

  BoxShape scaled(double c) const { return {w_ * c, h_ * c}; }

  friend bool operator==(const BoxShape&, const BoxShape&) = default;

 private:
  double w_;
  double h_;
};

// Axis-aligned box in center form.
class Box {
 public:
  Box(double cx, double cy, BoxShape shape);
  Box(double cx, double cy, double w, double h) : Box(cx, cy, BoxShape(w, h)) {}

  double cx() const { return cx_; }
  double cy() const { return cy_; }
  const BoxShape& shape() const { return shape_; }
  double w() const { return shape_.w(); }
  double h() const { return shape_.h(); }

  double x_min() const { return cx_ - 0.5 * shape_.w(); }
  double x_max() const { return cx_ + 0.5 * shape_.w(); }
  double y_min() const { return cy_ - 0.5 * shape_.h(); }
  double y_max() const { return cy_ + 0.5 * shape_.h(); }

  friend bool operator==(const Box&, const Box&) = default;

 private:
  double cx_;
  double cy_;
  BoxShape shape_;
};

// Natural-log encoding of a BoxShape. Components are finite.
struct LogShape {
  double lw = 0.0;
  double lh = 0.0;

  friend bool operator==(const LogShape&, const LogShape&) = default;
};

// Ordered set of learnable anchor shapes (log space) plus the feature map
// stride. Always holds at least one finite shape and stride >= 1.
class AnchorSet {
 public:
  AnchorSet(std::vector<LogShape> shapes, int stride);

  std::size_t size() const { return shapes_.size(); }
  int stride() const { return stride_; }

  std::span<const LogShape> shapes() const { return shapes_; }
  const LogShape& operator[](std::size_t k) const { return shapes_[k]; }

  // Mutable access for optimizers. Callers keep the values finite.
  std::vector<LogShape>& mutable_shapes() { return shapes_; }

  std::vector<BoxShape> decoded() const;

  // Copy with shapes sorted by decoded area ascending (stable).
  AnchorSet sorted_by_area() const;

  friend bool operator==(const AnchorSet&, const AnchorSet&) = default;

 private:
  std::vector<LogShape> shapes_;
  int stride_;
};

enum class DistanceMetric { kOneMinusIou, kSqL2Log };

std::string_view to_string(DistanceMetric metric);
// Accepts "one_minus_iou"/"iou" and "sq_l2_log"/"l2". Throws
// std::invalid_argument for anything else.
DistanceMetric parse_metric(std::string_view name);

// IoU of two shapes sharing a center.
double iou_aligned(const BoxShape& a, const BoxShape& b);

// IoU of two axis-aligned boxes; 0 when disjoint or touching.
double iou_boxes(const Box& a, const Box& b);

LogShape encode_log(const BoxShape& s);
BoxShape decode_log(const LogShape& l);

double shape_dist(const LogShape& a, const LogShape& b, DistanceMetric metric);

}  // namespace anchorforge
