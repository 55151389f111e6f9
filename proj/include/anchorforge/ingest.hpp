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

// Annotation parsers (COCO JSON, VOC XML, CSV), canvas normalization and the
// canonical dataset file.
//
// Canonical file layout (UTF-8, LF):
//
//   anchorforge-dataset v1 S=416
//   <image_id>\t<cx>\t<cy>\t<w>\t<h>
//   ...
//
// Numbers are written with 9 significant digits. Records held by a
// CanonicalDataset are rounded to that precision on insertion, so a dataset
// read back from disk compares equal to the one that was written.

#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "anchorforge/geometry.hpp"

namespace anchorforge {

// One ground-truth box in original image coordinates (center form). w or h
// may be zero for degenerate source annotations; normalize_to_canvas drops
// those.
struct AnnotatedBox {
  std::string image_id;
  double image_w = 0.0;
  double image_h = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
  bool difficult = false;
  bool crowd = false;

  // Throws std::invalid_argument for degenerate boxes.
  Box box() const { return Box(cx, cy, w, h); }
};

struct ParseOptions {
  bool include_crowd = false;
  bool include_difficult = true;
};

struct ParseResult {
  std::vector<AnnotatedBox> boxes;
  std::size_t records = 0;  // annotation records seen in the source
  std::size_t skipped = 0;  // records excluded by ParseOptions
};

// COCO detection JSON. bbox [x_min, y_min, w, h] is converted to center form
// and clamped to the image. Throws ParseError (location = byte offset for
// malformed JSON).
ParseResult parse_coco(const std::filesystem::path& path, const ParseOptions& options = {});

// Directory of Pascal VOC XML files, read in sorted filename order. Throws
// ParseError naming the file when <size> is missing.
ParseResult parse_voc(const std::filesystem::path& dir, const ParseOptions& options = {});

// CSV with header image_id,image_w,image_h,x_min,y_min,x_max,y_max. Throws
// ParseError with the 1-based line number for bad rows.
ParseResult parse_csv(const std::filesystem::path& path);

struct CanonicalRecord {
  std::string image_id;
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  BoxShape shape() const { return {w, h}; }
  LogShape log_shape() const { return encode_log(shape()); }

  friend bool operator==(const CanonicalRecord&, const CanonicalRecord&) = default;
};

// Rounds to the 9 significant digits used by the canonical file.
double canonical_round(double value);

class CanonicalDataset {
 public:
  explicit CanonicalDataset(int canvas_size);

  int canvas_size() const { return canvas_size_; }
  const std::vector<CanonicalRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  // Rounds numeric fields to canonical precision. Throws
  // std::invalid_argument if w, h fall outside (0, S] or the center outside
  // [0, S], or the image id contains a tab or newline.
  void add(CanonicalRecord record);

  std::vector<BoxShape> shapes() const;
  std::vector<LogShape> log_shapes() const;

  // Boxes dropped by normalization (informational, not persisted).
  std::size_t dropped() const { return dropped_; }
  void set_dropped(std::size_t n) { dropped_ = n; }

  friend bool operator==(const CanonicalDataset& a, const CanonicalDataset& b) {
    return a.canvas_size_ == b.canvas_size_ && a.records_ == b.records_;
  }

 private:
  int canvas_size_;
  std::vector<CanonicalRecord> records_;
  std::size_t dropped_ = 0;
};

inline constexpr double kMinBoxSize = 1e-3;

// Stretch-to-square: x scaled by S/image_w, y by S/image_h. Boxes whose
// scaled w or h is below min_size are dropped and counted in dropped().
CanonicalDataset normalize_to_canvas(const std::vector<AnnotatedBox>& boxes, int canvas_size,
                                     double min_size = kMinBoxSize);

// Views a canonical dataset as annotations on an S x S image.
std::vector<AnnotatedBox> to_annotated(const CanonicalDataset& ds);

void write_canonical(const CanonicalDataset& ds, std::ostream& out);
void write_canonical(const CanonicalDataset& ds, const std::filesystem::path& path);
CanonicalDataset read_canonical(std::istream& in);
CanonicalDataset read_canonical(const std::filesystem::path& path);

struct Quantiles {
  static constexpr std::array<double, 5> kLevels = {0.05, 0.25, 0.5, 0.75, 0.95};
  std::array<double, 5> values{};
};

// Shape-distribution summary of a dataset: quantiles of w, h, log w, log h.
struct ShapeSummary {
  std::size_t count = 0;
  Quantiles w, h, log_w, log_h;
};

ShapeSummary summarize_shapes(const CanonicalDataset& ds);
std::string format_summary(const ShapeSummary& summary);

}  // namespace anchorforge
