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

// Reference implementations used to check the library. They are written
// independently of src/ and favor obviousness over speed.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "anchorforge/geometry.hpp"
#include "anchorforge/ingest.hpp"
#include "anchorforge/loss.hpp"

namespace oracle {

using anchorforge::AnchorSet;
using anchorforge::LogShape;

// Lloyd's k-means in log space with squared Euclidean distance and the
// lowest-index tie rule. Runs to a fixed point.
inline AnchorSet lloyd_log(std::span<const LogShape> pts, const AnchorSet& init,
                           int max_iter = 10000) {
  std::vector<LogShape> c(init.shapes().begin(), init.shapes().end());
  std::vector<std::size_t> owner(pts.size(), c.size());
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < c.size(); ++k) {
        const double dw = pts[j].lw - c[k].lw;
        const double dh = pts[j].lh - c[k].lh;
        const double d = dw * dw + dh * dh;
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      if (owner[j] != best) {
        owner[j] = best;
        changed = true;
      }
    }
    std::vector<double> sw(c.size(), 0.0), sh(c.size(), 0.0), n(c.size(), 0.0);
    for (std::size_t j = 0; j < pts.size(); ++j) {
      sw[owner[j]] += pts[j].lw;
      sh[owner[j]] += pts[j].lh;
      n[owner[j]] += 1.0;
    }
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (n[k] > 0) c[k] = {sw[k] / n[k], sh[k] / n[k]};
    }
    if (!changed) break;
  }
  return AnchorSet(std::move(c), init.stride());
}

// Shape IoU straight from the definition, boxes centered at the origin.
inline double shape_iou(double w1, double h1, double w2, double h2) {
  const double iw = std::min(w1, w2);
  const double ih = std::min(h1, h2);
  const double inter = iw * ih;
  return inter / (w1 * h1 + w2 * h2 - inter);
}

// Lloyd's with shape IoU as similarity and linear-mean updates. Assumes no
// cluster empties.
inline std::vector<anchorforge::BoxShape> lloyd_iou(std::span<const anchorforge::BoxShape> pts,
                                                    std::vector<anchorforge::BoxShape> c,
                                                    int max_iter = 1000) {
  for (int it = 0; it < max_iter; ++it) {
    std::vector<double> sw(c.size(), 0.0), sh(c.size(), 0.0), n(c.size(), 0.0);
    for (const auto& p : pts) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < c.size(); ++k) {
        if (shape_iou(p.w(), p.h(), c[k].w(), c[k].h()) >
            shape_iou(p.w(), p.h(), c[best].w(), c[best].h())) {
          best = k;
        }
      }
      sw[best] += p.w();
      sh[best] += p.h();
      n[best] += 1.0;
    }
    std::vector<anchorforge::BoxShape> next;
    for (std::size_t k = 0; k < c.size(); ++k) next.emplace_back(sw[k] / n[k], sh[k] / n[k]);
    if (next == c) break;
    c = std::move(next);
  }
  return c;
}

// Central difference of f at x along every coordinate.
inline std::vector<double> central_diff(const std::function<double(std::span<const double>)>& f,
                                        std::vector<double> x, double eps = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = f(x);
    x[i] = keep - eps;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

inline double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

// Min over all one-to-one pairings of the mean log-space distance, by
// recursion over the remaining columns.
inline double brute_match(const AnchorSet& a, const AnchorSet& b) {
  const std::size_t n = a.size();
  std::vector<bool> used(n, false);
  std::function<double(std::size_t)> go = [&](std::size_t i) -> double {
    if (i == n) return 0.0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (used[j]) continue;
      used[j] = true;
      const double dw = a[i].lw - b[j].lw;
      const double dh = a[i].lh - b[j].lh;
      best = std::min(best, std::sqrt(dw * dw + dh * dh) + go(i + 1));
      used[j] = false;
    }
    return best;
  };
  return go(0) / static_cast<double>(n);
}

// Flattens head parameters as u (4 per anchor), c (2), gamma (2).
inline std::vector<double> flatten(const anchorforge::HeadParams& p) {
  std::vector<double> x;
  for (const auto& m : p.u) x.insert(x.end(), m.begin(), m.end());
  for (const auto& v : p.c) x.insert(x.end(), v.begin(), v.end());
  for (const auto& v : p.gamma) x.insert(x.end(), v.begin(), v.end());
  return x;
}

inline anchorforge::HeadParams unflatten(anchorforge::HeadParams p, std::span<const double> x) {
  std::size_t i = 0;
  for (auto& m : p.u) for (auto& e : m) e = x[i++];
  for (auto& v : p.c) for (auto& e : v) e = x[i++];
  for (auto& v : p.gamma) for (auto& e : v) e = x[i++];
  return p;
}

inline std::vector<double> flatten(const anchorforge::HeadGrad& g) {
  std::vector<double> x;
  for (const auto& m : g.u) x.insert(x.end(), m.begin(), m.end());
  for (const auto& v : g.c) x.insert(x.end(), v.begin(), v.end());
  for (const auto& v : g.gamma) x.insert(x.end(), v.begin(), v.end());
  return x;
}

}  // namespace oracle
