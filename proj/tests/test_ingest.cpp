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

#include <cmath>
#include <sstream>
#include <string>

#include <doctest.h>

#include "anchorforge/errors.hpp"
#include "anchorforge/ingest.hpp"
#include "support/synth.hpp"
#include "support/tempdir.hpp"

using namespace anchorforge;
using testing_support::TempDir;

namespace {

constexpr const char* kCoco = R"({
  "images": [{"id": 1, "file_name": "a.jpg", "width": 100, "height": 100},
             {"id": 2, "file_name": "b.jpg", "width": 200, "height": 50}],
  "annotations": [
    {"id": 10, "image_id": 1, "bbox": [0, 0, 10, 20], "iscrowd": 0},
    {"id": 11, "image_id": 2, "bbox": [150, 10, 80, 20], "iscrowd": 0},
    {"id": 12, "image_id": 1, "bbox": [5, 5, 30, 30], "iscrowd": 1},
    {"id": 13, "image_id": 2, "bbox": [1, 2, 3, 4]}
  ]
})";

std::string voc_xml(const std::string& filename, const std::string& objects, bool with_size = true) {
  std::string s = "<annotation><filename>" + filename + "</filename>";
  if (with_size) s += "<size><width>500</width><height>250</height><depth>3</depth></size>";
  return s + objects + "</annotation>";
}

std::string voc_object(int x0, int y0, int x1, int y1, bool difficult = false) {
  return "<object><name>x</name><difficult>" + std::to_string(difficult ? 1 : 0) +
         "</difficult><bndbox><xmin>" + std::to_string(x0) + "</xmin><ymin>" +
         std::to_string(y0) + "</ymin><xmax>" + std::to_string(x1) + "</xmax><ymax>" +
         std::to_string(y1) + "</ymax></bndbox></object>";
}

}  // namespace

TEST_CASE("parse_coco") {
  TempDir dir("coco");
  const auto r = parse_coco(dir.write("a.json", kCoco));
  REQUIRE(r.boxes.size() == 3);
  CHECK(r.records == 4);
  CHECK(r.skipped == 1);
  CHECK(r.boxes[0].cx == 5.0);
  CHECK(r.boxes[0].cy == 10.0);
  CHECK(r.boxes[0].w == 10.0);
  CHECK(r.boxes[0].h == 20.0);
  CHECK(r.boxes[0].image_id == "a.jpg");
  // Clamped to the 200-wide image.
  CHECK(r.boxes[1].w == 50.0);
  CHECK(r.boxes[1].cx == 175.0);
  CHECK(r.boxes[2].w == 3.0);
  CHECK(r.records - r.skipped == r.boxes.size());

  const auto with_crowd = parse_coco(dir / "a.json", {.include_crowd = true});
  CHECK(with_crowd.boxes.size() == 4);
  CHECK(with_crowd.boxes[2].crowd);

  const auto empty = parse_coco(dir.write("e.json", R"({"images": [], "annotations": []})"));
  CHECK(empty.boxes.empty());
}

TEST_CASE("parse_coco errors") {
  TempDir dir("coco-bad");
  try {
    parse_coco(dir.write("bad.json", "{\"images\": [,]}"));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.location() > 0);
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }
  try {
    parse_coco(dir.write("orphan.json",
                         R"({"images": [], "annotations": [{"id": 77, "image_id": 3, "bbox": [0,0,1,1]}]})"));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("77") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_coco(dir / "missing.json"), ParseError);
}

TEST_CASE("parse_voc") {
  TempDir dir("voc");
  dir.write("b.xml", voc_xml("b.jpg", voc_object(1, 1, 3, 5) + voc_object(10, 10, 60, 40, true)));
  dir.write("a.xml", voc_xml("a.jpg", voc_object(0, 0, 100, 100)));
  dir.write("notes.txt", "ignored");
  const auto all = parse_voc(dir.path());
  REQUIRE(all.boxes.size() == 3);
  CHECK(all.boxes[0].image_id == "a.jpg");
  CHECK(all.boxes[1].cx == 2.0);
  CHECK(all.boxes[1].cy == 3.0);
  CHECK(all.boxes[1].w == 2.0);
  CHECK(all.boxes[1].h == 4.0);
  CHECK(all.boxes[2].difficult);
  CHECK(all.boxes[1].image_w == 500.0);

  const auto no_difficult = parse_voc(dir.path(), {.include_difficult = false});
  CHECK(no_difficult.boxes.size() == 2);
  CHECK(no_difficult.records == 3);
  CHECK(no_difficult.skipped == 1);

  TempDir empty("voc-empty");
  CHECK(parse_voc(empty.path()).boxes.empty());
  CHECK_THROWS_AS(parse_voc(empty / "nope"), ParseError);
}

TEST_CASE("parse_voc names the file without <size>") {
  TempDir dir("voc-nosize");
  dir.write("broken_one.xml", voc_xml("x.jpg", voc_object(1, 1, 3, 5), false));
  try {
    parse_voc(dir.path());
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("broken_one.xml") != std::string::npos);
  }
}

TEST_CASE("parse_csv") {
  TempDir dir("csv");
  const auto r = parse_csv(dir.write(
      "a.csv", "image_id,image_w,image_h,x_min,y_min,x_max,y_max\nimg1,100,100,10,10,30,50\n"));
  REQUIRE(r.boxes.size() == 1);
  CHECK(r.boxes[0].cx == 20.0);
  CHECK(r.boxes[0].cy == 30.0);
  CHECK(r.boxes[0].w == 20.0);
  CHECK(r.boxes[0].h == 40.0);

  CHECK(parse_csv(dir.write("h.csv", "image_id,image_w,image_h,x_min,y_min,x_max,y_max\n")).boxes.empty());

  try {
    parse_csv(dir.write("d.csv",
                        "image_id,image_w,image_h,x_min,y_min,x_max,y_max\n"
                        "img1,100,100,10,10,30,50\n"
                        "img2,100,100,10,10,10,50\n"));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.location() == 3);
  }
  CHECK_THROWS_AS(parse_csv(dir.write("x.csv", "id,w,h\n")), ParseError);
  CHECK_THROWS_AS(parse_csv(dir.write("n.csv",
                                      "image_id,image_w,image_h,x_min,y_min,x_max,y_max\n"
                                      "img1,100,100,a,10,30,50\n")),
                  ParseError);
}

TEST_CASE("normalize_to_canvas") {
  AnnotatedBox b{"i", 500, 250, 250, 125, 50, 50};
  auto ds = normalize_to_canvas({b}, 416);
  REQUIRE(ds.size() == 1);
  CHECK(ds.records()[0].w == doctest::Approx(41.6).epsilon(1e-12));
  CHECK(ds.records()[0].h == doctest::Approx(83.2).epsilon(1e-12));

  AnnotatedBox square{"s", 416, 416, 100, 120, 33.5, 70.25};
  ds = normalize_to_canvas({square}, 416);
  CHECK(ds.records()[0] == CanonicalRecord{"s", 100, 120, 33.5, 70.25});

  AnnotatedBox flat{"z", 100, 100, 50, 50, 0, 10};
  ds = normalize_to_canvas({b, flat}, 416);
  CHECK(ds.size() == 1);
  CHECK(ds.dropped() == 1);
}

TEST_CASE("normalize_to_canvas is idempotent on canonical data") {
  const auto ds = synth::five_blobs();
  const auto again = normalize_to_canvas(to_annotated(ds), ds.canvas_size());
  CHECK(again == ds);
}

TEST_CASE("canonical round-trip") {
  const auto ds = synth::mixture({{30, 40, 0.5, 1000}}, 416, 21);
  REQUIRE(ds.size() == 1000);
  std::stringstream buf;
  write_canonical(ds, buf);
  const auto back = read_canonical(buf);
  CHECK(back == ds);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& a = ds.records()[i];
    const auto& b = back.records()[i];
    CHECK(std::abs(a.w - b.w) <= 1e-9 * a.w);
    CHECK(std::abs(a.cx - b.cx) <= 1e-9 * std::max(1.0, a.cx));
  }

  TempDir dir("canon");
  write_canonical(ds, dir / "d.txt");
  CHECK(read_canonical(dir / "d.txt") == ds);
}

TEST_CASE("canonical file format") {
  CanonicalDataset empty(416);
  std::stringstream buf;
  write_canonical(empty, buf);
  CHECK(buf.str() == "anchorforge-dataset v1 S=416\n");
  CHECK(read_canonical(buf).empty());

  std::stringstream v2("anchorforge-dataset v2 S=416\n");
  try {
    read_canonical(v2);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }

  std::stringstream bad("anchorforge-dataset v1 S=416\na\t1\t1\t2\t2\nb\t1\tx\t2\t2\n");
  try {
    read_canonical(bad);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.location() == 3);
  }
  std::stringstream short_line("anchorforge-dataset v1 S=416\na\t1\t1\t2\n");
  CHECK_THROWS_AS(read_canonical(short_line), ParseError);
}

TEST_CASE("CanonicalDataset rejects out-of-canvas records") {
  CanonicalDataset ds(100);
  CHECK_THROWS_AS(ds.add({"a", 50, 50, 0, 10}), std::invalid_argument);
  CHECK_THROWS_AS(ds.add({"a", 50, 50, 101, 10}), std::invalid_argument);
  CHECK_THROWS_AS(ds.add({"a", -1, 50, 10, 10}), std::invalid_argument);
  CHECK_THROWS_AS(ds.add({"a\tb", 50, 50, 10, 10}), std::invalid_argument);
  CHECK_THROWS_AS(CanonicalDataset(0), std::invalid_argument);
}

TEST_CASE("summarize_shapes") {
  CanonicalDataset ds(100);
  for (int i = 1; i <= 101; ++i) ds.add({"x", 50, 50, i * 0.5, 1.0 + i % 3});
  const auto s = summarize_shapes(ds);
  CHECK(s.count == 101);
  CHECK(s.w.values[2] == doctest::Approx(25.5));
  CHECK(s.w.values[0] < s.w.values[1]);
  CHECK(s.log_w.values[2] == doctest::Approx(std::log(25.5)));
  const std::string text = format_summary(s);
  CHECK(text.find("log w") != std::string::npos);
}
