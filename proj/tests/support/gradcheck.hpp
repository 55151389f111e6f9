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

// Random loss instances and their finite-difference comparison.

#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "anchorforge/assign.hpp"
#include "anchorforge/loss.hpp"
#include "anchorforge/random.hpp"
#include "support/oracles.hpp"

namespace gradcheck {

using namespace anchorforge;

struct Instance {
  std::vector<LogShape> gts;
  AnchorSet anchors{{{0, 0}}, 1};
  Assignment assign;
  double lambda = 0.0;
  bool head = false;
  HeadParams params;
  std::vector<Vec2> features;
  DeltaGrid deltas;  // head off
  std::string label;
};

inline Instance make_instance(Rng& rng, int index) {
  Instance in;
  const std::size_t a = 5;
  const std::size_t n = 2 + rng.below(49);
  for (std::size_t j = 0; j < n; ++j) in.gts.push_back({2 + 3 * rng.uniform(), 2 + 3 * rng.uniform()});
  std::vector<LogShape> s;
  for (std::size_t k = 0; k < a; ++k) s.push_back({2 + 3 * rng.uniform(), 2 + 3 * rng.uniform()});
  in.anchors = AnchorSet(s, 32);
  static constexpr double kLambdas[] = {0.0, 0.5, 1.0};
  in.lambda = kLambdas[index % 3];
  const bool soft = (index / 3) % 2 == 1;
  in.head = (index / 6) % 2 == 1;
  in.assign = soft ? soft_assign(in.gts, in.anchors, DistanceMetric::kOneMinusIou, 1.0)
                   : hard_assign_yolo(in.gts, in.anchors, DistanceMetric::kOneMinusIou);
  in.label = std::string(soft ? "soft" : "hard") + " lambda=" + std::to_string(in.lambda);
  if (in.head) {
    const int variant = (index / 12) % 3;
    in.params = HeadParams::initial(a, 0.3, variant != 2, rng, 0.5, 0.5);
    in.params.grouping = variant == 1 ? BnGrouping::kJoint : BnGrouping::kPerAnchor;
    for (auto& c : in.params.c) c = {rng.normal(), rng.normal()};
    for (auto& g : in.params.gamma) g = {0.2 + rng.uniform(), 0.2 + rng.uniform()};
    in.features = sample_features(in.gts, in.params.sigma, rng);
    in.label += variant == 0 ? " head+bn" : variant == 1 ? " head+bn(joint)" : " head";
  } else {
    in.deltas = DeltaGrid(n, a);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < a; ++k) in.deltas.set(j, k, {0.5 * rng.normal(), 0.5 * rng.normal()});
    }
  }
  return in;
}

inline DeltaGrid deltas_of(const Instance& in, const HeadParams& p) {
  return in.head ? head_forward_batch(p, in.features).deltas : in.deltas;
}

// Largest relative error over all anchor and head coordinates.
inline double max_rel_err(const Instance& in, double eps = 1e-6) {
  double worst = 0.0;

  const DeltaGrid d0 = deltas_of(in, in.params);
  const auto ga = grad_anchors(in.assign, d0, in.anchors, in.gts, in.lambda);
  std::vector<double> x;
  for (const auto& s : in.anchors.shapes()) {
    x.push_back(s.lw);
    x.push_back(s.lh);
  }
  const auto f_anchor = [&](std::span<const double> v) {
    std::vector<LogShape> s;
    for (std::size_t k = 0; k < v.size() / 2; ++k) s.push_back({v[2 * k], v[2 * k + 1]});
    return total_loss(in.assign, d0, AnchorSet(s, 32), in.gts, in.lambda);
  };
  const auto na = oracle::central_diff(f_anchor, x, eps);
  for (std::size_t k = 0; k < ga.size(); ++k) {
    worst = std::max(worst, oracle::rel_err(ga[k].dw, na[2 * k]));
    worst = std::max(worst, oracle::rel_err(ga[k].dh, na[2 * k + 1]));
  }

  if (in.head) {
    const auto fwd = head_forward_batch(in.params, in.features);
    const auto gh = oracle::flatten(grad_head(in.assign, in.anchors, in.gts, in.params, fwd));
    const auto f_head = [&](std::span<const double> v) {
      const HeadParams p = oracle::unflatten(in.params, v);
      return total_loss(in.assign, head_forward_batch(p, in.features).deltas, in.anchors, in.gts,
                        in.lambda);
    };
    const auto nh = oracle::central_diff(f_head, oracle::flatten(in.params), eps);
    for (std::size_t i = 0; i < gh.size(); ++i) worst = std::max(worst, oracle::rel_err(gh[i], nh[i]));
  }
  return worst;
}

}  // namespace gradcheck
