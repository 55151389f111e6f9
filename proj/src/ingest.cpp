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

#include "anchorforge/ingest.hpp"

#include <algorithm>
#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <json.hpp>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string_view>

#include "anchorforge/errors.hpp"

namespace anchorforge {
namespace {

constexpr std::string_view kCanonicalMagic = "anchorforge-dataset";
constexpr std::string_view kCanonicalVersion = "v1";

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// Strict full-field double parse; nullopt-like failure signalled by false.
bool parse_double(std::string_view text, double& out) {
  text = trim(text);
  if (text.empty()) return false;
  const std::string buf(text);
  char* end = nullptr;
  out = std::strtod(buf.c_str(), &end);
  return end == buf.c_str() + buf.size() && std::isfinite(out);
}

// Center-form box clamped to [0, W] x [0, H]. Zero extents are allowed.
AnnotatedBox make_box(std::string image_id, double image_w, double image_h, double x0, double y0,
                      double x1, double y1) {
  x0 = std::clamp(x0, 0.0, image_w);
  x1 = std::clamp(x1, 0.0, image_w);
  y0 = std::clamp(y0, 0.0, image_h);
  y1 = std::clamp(y1, 0.0, image_h);
  AnnotatedBox b;
  b.image_id = std::move(image_id);
  b.image_w = image_w;
  b.image_h = image_h;
  b.cx = 0.5 * (x0 + x1);
  b.cy = 0.5 * (y0 + y1);
  b.w = std::max(0.0, x1 - x0);
  b.h = std::max(0.0, y1 - y0);
  return b;
}

std::string format_g9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

ParseResult parse_coco(const std::filesystem::path& path, const ParseOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open COCO file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();

  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": malformed JSON at byte " + std::to_string(e.byte) + ": " +
                         e.what(),
                     e.byte);
  }
  if (!doc.is_object() || !doc.contains("images") || !doc.contains("annotations") ||
      !doc["images"].is_array() || !doc["annotations"].is_array()) {
    throw ParseError(path.string() + ": expected \"images\" and \"annotations\" arrays");
  }

  struct ImageInfo {
    std::string name;
    double w;
    double h;
  };
  std::map<long long, ImageInfo> images;
  try {
    for (const auto& img : doc["images"]) {
      const long long id = img.at("id").get<long long>();
      ImageInfo info{img.contains("file_name") ? img["file_name"].get<std::string>()
                                               : std::to_string(id),
                     img.at("width").get<double>(), img.at("height").get<double>()};
      if (!(info.w > 0.0) || !(info.h > 0.0)) {
        throw ParseError(path.string() + ": image " + std::to_string(id) +
                         " has non-positive dimensions");
      }
      images.emplace(id, std::move(info));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": bad image entry: " + e.what());
  }

  ParseResult result;
  for (const auto& ann : doc["annotations"]) {
    ++result.records;
    std::string ann_id = "?";
    try {
      if (ann.contains("id")) ann_id = ann["id"].dump();
      const long long image_id = ann.at("image_id").get<long long>();
      const auto it = images.find(image_id);
      if (it == images.end()) {
        throw ParseError(path.string() + ": annotation " + ann_id + " references missing image " +
                         std::to_string(image_id));
      }
      const bool crowd = ann.contains("iscrowd") && ann["iscrowd"].get<int>() != 0;
      if (crowd && !options.include_crowd) {
        ++result.skipped;
        continue;
      }
      const auto& bbox = ann.at("bbox");
      if (!bbox.is_array() || bbox.size() != 4) {
        throw ParseError(path.string() + ": annotation " + ann_id + " has malformed bbox");
      }
      const double x = bbox[0].get<double>();
      const double y = bbox[1].get<double>();
      const double w = bbox[2].get<double>();
      const double h = bbox[3].get<double>();
      AnnotatedBox b = make_box(it->second.name, it->second.w, it->second.h, x, y, x + w, y + h);
      b.crowd = crowd;
      result.boxes.push_back(std::move(b));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ": annotation " + ann_id + ": " + e.what());
    }
  }
  return result;
}

ParseResult parse_voc(const std::filesystem::path& dir, const ParseOptions& options) {
  namespace pt = boost::property_tree;
  if (!std::filesystem::is_directory(dir)) {
    throw ParseError("VOC annotation directory not found: " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".xml") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  ParseResult result;
  for (const auto& file : files) {
    pt::ptree tree;
    try {
      pt::read_xml(file.string(), tree);
    } catch (const pt::xml_parser_error& e) {
      throw ParseError(file.string() + ": malformed XML: " + e.message(), e.line());
    }
    const auto root = tree.get_child_optional("annotation");
    if (!root) throw ParseError(file.string() + ": missing <annotation>");
    const auto size = root->get_child_optional("size");
    if (!size) throw ParseError(file.string() + ": missing <size>");
    double image_w = 0.0;
    double image_h = 0.0;
    try {
      image_w = size->get<double>("width");
      image_h = size->get<double>("height");
    } catch (const pt::ptree_error& e) {
      throw ParseError(file.string() + ": bad <size>: " + e.what());
    }
    if (!(image_w > 0.0) || !(image_h > 0.0)) {
      throw ParseError(file.string() + ": non-positive image size");
    }
    const std::string image_id = root->get<std::string>("filename", file.stem().string());

    for (const auto& [tag, obj] : *root) {
      if (tag != "object") continue;
      ++result.records;
      const bool difficult = obj.get<int>("difficult", 0) != 0;
      if (difficult && !options.include_difficult) {
        ++result.skipped;
        continue;
      }
      try {
        const auto& bb = obj.get_child("bndbox");
        AnnotatedBox b = make_box(image_id, image_w, image_h, bb.get<double>("xmin"),
                                  bb.get<double>("ymin"), bb.get<double>("xmax"),
                                  bb.get<double>("ymax"));
        b.difficult = difficult;
        result.boxes.push_back(std::move(b));
      } catch (const pt::ptree_error& e) {
        throw ParseError(file.string() + ": bad <bndbox>: " + e.what());
      }
    }
  }
  return result;
}

ParseResult parse_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open CSV file " + path.string());

  static constexpr std::array<std::string_view, 7> kHeader = {
      "image_id", "image_w", "image_h", "x_min", "y_min", "x_max", "y_max"};
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty CSV, header expected", 1);
  ++line_no;
  {
    const auto fields = split(line, ',');
    bool ok = fields.size() == kHeader.size();
    for (std::size_t i = 0; ok && i < fields.size(); ++i) ok = trim(fields[i]) == kHeader[i];
    if (!ok) {
      throw ParseError(path.string() + ":1: expected header image_id,image_w,image_h,x_min,y_min," +
                           "x_max,y_max",
                       1);
    }
  }

  ParseResult result;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++result.records;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    const auto fields = split(line, ',');
    if (fields.size() != kHeader.size()) {
      throw ParseError(where + "expected 7 fields, got " + std::to_string(fields.size()), line_no);
    }
    std::array<double, 6> v{};
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!parse_double(fields[i + 1], v[i])) {
        throw ParseError(where + "bad number in column " + std::string(kHeader[i + 1]), line_no);
      }
    }
    const auto [iw, ih, x0, y0, x1, y1] = v;
    if (!(iw > 0.0) || !(ih > 0.0)) throw ParseError(where + "non-positive image size", line_no);
    if (x1 <= x0 || y1 <= y0) {
      throw ParseError(where + "degenerate box (max <= min)", line_no);
    }
    result.boxes.push_back(make_box(std::string(trim(fields[0])), iw, ih, x0, y0, x1, y1));
  }
  return result;
}

double canonical_round(double value) { return std::strtod(format_g9(value).c_str(), nullptr); }

CanonicalDataset::CanonicalDataset(int canvas_size) : canvas_size_(canvas_size) {
  if (canvas_size < 1) throw std::invalid_argument("canvas size must be >= 1");
}

void CanonicalDataset::add(CanonicalRecord r) {
  r.cx = canonical_round(r.cx);
  r.cy = canonical_round(r.cy);
  r.w = canonical_round(r.w);
  r.h = canonical_round(r.h);
  const double s = canvas_size_;
  if (!(r.w > 0.0 && r.w <= s && r.h > 0.0 && r.h <= s)) {
    throw std::invalid_argument("record size outside (0, S]: " + r.image_id);
  }
  if (!(r.cx >= 0.0 && r.cx <= s && r.cy >= 0.0 && r.cy <= s)) {
    throw std::invalid_argument("record center outside [0, S]: " + r.image_id);
  }
  if (r.image_id.find_first_of("\t\n\r") != std::string::npos) {
    throw std::invalid_argument("image id contains tab or newline: " + r.image_id);
  }
  records_.push_back(std::move(r));
}

std::vector<BoxShape> CanonicalDataset::shapes() const {
  std::vector<BoxShape> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.shape());
  return out;
}

std::vector<LogShape> CanonicalDataset::log_shapes() const {
  std::vector<LogShape> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.log_shape());
  return out;
}

CanonicalDataset normalize_to_canvas(const std::vector<AnnotatedBox>& boxes, int canvas_size,
                                     double min_size) {
  CanonicalDataset ds(canvas_size);
  const double s = canvas_size;
  std::size_t dropped = 0;
  for (const auto& b : boxes) {
    const double sx = s / b.image_w;
    const double sy = s / b.image_h;
    CanonicalRecord r{b.image_id, b.cx * sx, b.cy * sy, std::min(b.w * sx, s),
                      std::min(b.h * sy, s)};
    if (!(r.w >= min_size) || !(r.h >= min_size) || canonical_round(r.w) <= 0.0 ||
        canonical_round(r.h) <= 0.0) {
      ++dropped;
      continue;
    }
    r.cx = std::clamp(r.cx, 0.0, s);
    r.cy = std::clamp(r.cy, 0.0, s);
    ds.add(std::move(r));
  }
  ds.set_dropped(dropped);
  return ds;
}

std::vector<AnnotatedBox> to_annotated(const CanonicalDataset& ds) {
  std::vector<AnnotatedBox> out;
  out.reserve(ds.size());
  const double s = ds.canvas_size();
  for (const auto& r : ds.records()) {
    AnnotatedBox b;
    b.image_id = r.image_id;
    b.image_w = s;
    b.image_h = s;
    b.cx = r.cx;
    b.cy = r.cy;
    b.w = r.w;
    b.h = r.h;
    out.push_back(std::move(b));
  }
  return out;
}

void write_canonical(const CanonicalDataset& ds, std::ostream& out) {
  out << kCanonicalMagic << ' ' << kCanonicalVersion << " S=" << ds.canvas_size() << '\n';
  for (const auto& r : ds.records()) {
    out << r.image_id << '\t' << format_g9(r.cx) << '\t' << format_g9(r.cy) << '\t'
        << format_g9(r.w) << '\t' << format_g9(r.h) << '\n';
  }
}

void write_canonical(const CanonicalDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_canonical(ds, out);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

CanonicalDataset read_canonical(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("canonical dataset: missing header line", 1);
  const auto header = split(trim(line), ' ');
  if (header.size() != 3 || header[0] != kCanonicalMagic) {
    throw ParseError("canonical dataset: bad header '" + line + "'", 1);
  }
  if (header[1] != kCanonicalVersion) {
    throw ParseError("canonical dataset: unsupported version '" + std::string(header[1]) +
                         "' (expected " + std::string(kCanonicalVersion) + ")",
                     1);
  }
  int canvas = 0;
  {
    const auto s = header[2];
    const bool prefixed = s.substr(0, 2) == "S=";
    const auto digits = prefixed ? s.substr(2) : std::string_view{};
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), canvas);
    if (!prefixed || ec != std::errc() || ptr != digits.data() + digits.size() || canvas < 1) {
      throw ParseError("canonical dataset: bad canvas field '" + std::string(s) + "'", 1);
    }
  }

  CanonicalDataset ds(canvas);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 5) {
      throw ParseError("canonical dataset line " + std::to_string(line_no) +
                           ": expected 5 tab-separated fields",
                       line_no);
    }
    CanonicalRecord r;
    r.image_id = std::string(fields[0]);
    if (!parse_double(fields[1], r.cx) || !parse_double(fields[2], r.cy) ||
        !parse_double(fields[3], r.w) || !parse_double(fields[4], r.h)) {
      throw ParseError("canonical dataset line " + std::to_string(line_no) + ": bad number",
                       line_no);
    }
    try {
      ds.add(std::move(r));
    } catch (const std::invalid_argument& e) {
      throw ParseError("canonical dataset line " + std::to_string(line_no) + ": " + e.what(),
                       line_no);
    }
  }
  return ds;
}

CanonicalDataset read_canonical(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open canonical dataset " + path.string());
  return read_canonical(in);
}

namespace {

Quantiles quantiles_of(std::vector<double> v) {
  Quantiles q;
  if (v.empty()) return q;
  std::sort(v.begin(), v.end());
  for (std::size_t i = 0; i < Quantiles::kLevels.size(); ++i) {
    const double pos = Quantiles::kLevels[i] * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    q.values[i] = v[lo] + frac * (v[hi] - v[lo]);
  }
  return q;
}

}  // namespace

ShapeSummary summarize_shapes(const CanonicalDataset& ds) {
  std::vector<double> w, h, lw, lh;
  for (const auto& r : ds.records()) {
    w.push_back(r.w);
    h.push_back(r.h);
    lw.push_back(std::log(r.w));
    lh.push_back(std::log(r.h));
  }
  ShapeSummary s;
  s.count = ds.size();
  s.w = quantiles_of(std::move(w));
  s.h = quantiles_of(std::move(h));
  s.log_w = quantiles_of(std::move(lw));
  s.log_h = quantiles_of(std::move(lh));
  return s;
}

std::string format_summary(const ShapeSummary& summary) {
  std::ostringstream out;
  out << "shape distribution over " << summary.count << " boxes\n";
  out << "  quantile";
  for (double level : Quantiles::kLevels) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%10.2f", level);
    out << buf;
  }
  out << '\n';
  const auto row = [&](const char* name, const Quantiles& q) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "  %-8s", name);
    out << buf;
    for (double v : q.values) {
      std::snprintf(buf, sizeof buf, "%10.3f", v);
      out << buf;
    }
    out << '\n';
  };
  row("w", summary.w);
  row("h", summary.h);
  row("log w", summary.log_w);
  row("log h", summary.log_h);
  return out.str();
}

}  // namespace anchorforge
