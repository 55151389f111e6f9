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
#include <cstdint>
#include <span>
#include <vector>

#include "anchorforge/geometry.hpp"
#include "anchorforge/ingest.hpp"

namespace anchorforge {

struct KMeansResult {
  std::vector<BoxShape> centroids;
  std::vector<std::size_t> assignments;
  double mean_best_iou = 0.0;
  int iterations_run = 0;
};

// Lloyd iterations with aligned IoU as similarity and the linear (w, h) mean
// as the centroid update. An empty cluster is re-seeded to the shape worst
// covered by the other centroids. When `init` is empty, centroids are seeded
// k-means++ style with (1 - IoU)^2 sampling weights drawn from `seed`.
//
// Throws std::invalid_argument when shapes.size() < k, k < 1 or init has the
// wrong size.
KMeansResult kmeans_iou(std::span<const BoxShape> shapes, std::size_t k,
                        std::span<const BoxShape> init, int max_iter, std::uint64_t seed);

// k-means++ style seeding used by kmeans_iou.
std::vector<BoxShape> seed_centroids(std::span<const BoxShape> shapes, std::size_t k,
                                     std::uint64_t seed);

// (3,3), (3,9), (9,9), (9,3), (6,6) cells, times stride.
AnchorSet init_uniform(int stride);

// `count` copies of (5,5) cells, times stride.
AnchorSet init_identical(int stride, std::size_t count = 5);

// IoU k-means centroids of the dataset shapes, sorted by area.
AnchorSet init_kmeans(const CanonicalDataset& ds, std::size_t count, std::uint64_t seed,
                      int stride = 32, int max_iter = 300);

}  // namespace anchorforge
