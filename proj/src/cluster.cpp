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

#include "anchorforge/cluster.hpp"

#include <algorithm>
#include <stdexcept>

#include "anchorforge/random.hpp"

namespace anchorforge {
namespace {

struct Nearest {
  std::size_t index;
  double iou;
};

Nearest nearest(const BoxShape& s, std::span<const BoxShape> centroids) {
  Nearest best{0, iou_aligned(s, centroids[0])};
  for (std::size_t k = 1; k < centroids.size(); ++k) {
    const double v = iou_aligned(s, centroids[k]);
    if (v > best.iou) best = {k, v};
  }
  return best;
}

std::vector<std::size_t> assign_all(std::span<const BoxShape> shapes,
                                     std::span<const BoxShape> centroids) {
  std::vector<std::size_t> out(shapes.size());
  for (std::size_t i = 0; i < shapes.size(); ++i) out[i] = nearest(shapes[i], centroids).index;
  return out;
}

}  // namespace

std::vector<BoxShape> seed_centroids(std::span<const BoxShape> shapes, std::size_t k,
                                     std::uint64_t seed) {
  Rng rng(seed);
  std::vector<BoxShape> centroids;
  centroids.reserve(k);
  centroids.push_back(shapes[rng.below(shapes.size())]);
  std::vector<double> weight(shapes.size());
  while (centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      const double d = 1.0 - nearest(shapes[i], centroids).iou;
      weight[i] = d * d;
      total += weight[i];
    }
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = rng.below(shapes.size());
    } else {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = shapes.size() - 1;
      for (std::size_t i = 0; i < shapes.size(); ++i) {
        acc += weight[i];
        if (acc > target && weight[i] > 0.0) {
          pick = i;
          break;
        }
      }
    }
    centroids.push_back(shapes[pick]);
  }
  return centroids;
}

KMeansResult kmeans_iou(std::span<const BoxShape> shapes, std::size_t k,
                        std::span<const BoxShape> init, int max_iter, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("k-means needs k >= 1");
  if (shapes.size() < k) {
    throw std::invalid_argument("k-means needs at least k shapes (have " +
                                std::to_string(shapes.size()) + ", k = " + std::to_string(k) +
                                ")");
  }
  if (!init.empty() && init.size() != k) {
    throw std::invalid_argument("k-means init must hold exactly k shapes");
  }

  std::vector<BoxShape> centroids =
      init.empty() ? seed_centroids(shapes, k, seed)
                   : std::vector<BoxShape>(init.begin(), init.end());
  std::vector<std::size_t> assignment = assign_all(shapes, centroids);

  KMeansResult result;
  for (int it = 1; it <= max_iter; ++it) {
    std::vector<double> sum_w(k, 0.0), sum_h(k, 0.0);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      sum_w[assignment[i]] += shapes[i].w();
      sum_h[assignment[i]] += shapes[i].h();
      ++count[assignment[i]];
    }
    std::vector<bool> used(shapes.size(), false);
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] > 0) {
        centroids[c] = BoxShape(sum_w[c] / count[c], sum_h[c] / count[c]);
      }
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] > 0) continue;
      // Re-seed to the worst-covered shape not already used for re-seeding.
      std::size_t worst = shapes.size();
      double worst_iou = 2.0;
      for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (used[i]) continue;
        const double v = nearest(shapes[i], centroids).iou;
        if (v < worst_iou) {
          worst_iou = v;
          worst = i;
        }
      }
      if (worst < shapes.size()) {
        used[worst] = true;
        centroids[c] = shapes[worst];
      }
    }
    std::vector<std::size_t> next = assign_all(shapes, centroids);
    result.iterations_run = it;
    const bool converged = next == assignment;
    assignment = std::move(next);
    if (converged) break;
  }

  double total = 0.0;
  for (const auto& s : shapes) total += nearest(s, centroids).iou;
  result.mean_best_iou = total / static_cast<double>(shapes.size());
  result.centroids = std::move(centroids);
  result.assignments = std::move(assignment);
  return result;
}

AnchorSet init_uniform(int stride) {
  static constexpr double kCells[5][2] = {{3, 3}, {3, 9}, {9, 9}, {9, 3}, {6, 6}};
  std::vector<LogShape> shapes;
  for (const auto& c : kCells) shapes.push_back(encode_log(BoxShape(c[0] * stride, c[1] * stride)));
  return AnchorSet(std::move(shapes), stride);
}

AnchorSet init_identical(int stride, std::size_t count) {
  if (count < 1) throw std::invalid_argument("init_identical needs count >= 1");
  const LogShape s = encode_log(BoxShape(5.0 * stride, 5.0 * stride));
  return AnchorSet(std::vector<LogShape>(count, s), stride);
}

AnchorSet init_kmeans(const CanonicalDataset& ds, std::size_t count, std::uint64_t seed,
                      int stride, int max_iter) {
  if (ds.empty()) throw std::invalid_argument("init_kmeans needs a nonempty dataset");
  const auto shapes = ds.shapes();
  const auto result = kmeans_iou(shapes, count, {}, max_iter, seed);
  std::vector<LogShape> logs;
  for (const auto& c : result.centroids) logs.push_back(encode_log(c));
  return AnchorSet(std::move(logs), stride).sorted_by_area();
}

}  // namespace anchorforge
