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

// Localization losses, the online clustering term, analytic gradients with
// respect to anchor shapes, batch normalization without shift, and a small
// regression head that stands in for a detector's offset outputs.
//
// For a gt j assigned to anchor k with weight d_jk and predicted offsets
// D_jk, the training objective is
//
//   L = sum d_jk * [(Dw + sw_k - gw_j)^2 + (Dh + sh_k - gh_j)^2]
//     + lambda / (2N) * sum d_jk * [(sw_k - gw_j)^2 + (sh_k - gh_j)^2]
//
// with N = sum d_jk and all shapes in log space. The batch reduction is a
// plain sum.

#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "anchorforge/assign.hpp"
#include "anchorforge/geometry.hpp"
#include "anchorforge/random.hpp"

namespace anchorforge {

using Vec2 = std::array<double, 2>;
// Row-major 2x2: {m00, m01, m10, m11}.
using Mat2 = std::array<double, 4>;

struct DeltaWH {
  double dw = 0.0;
  double dh = 0.0;

  friend bool operator==(const DeltaWH&, const DeltaWH&) = default;
};

// Dense (gt, anchor) table of predicted offsets with a presence mask.
class DeltaGrid {
 public:
  DeltaGrid() = default;
  DeltaGrid(std::size_t num_gts, std::size_t num_anchors);

  static DeltaGrid zeros(std::size_t num_gts, std::size_t num_anchors);

  std::size_t num_gts() const { return num_gts_; }
  std::size_t num_anchors() const { return num_anchors_; }

  void set(std::size_t gt, std::size_t anchor, DeltaWH d);
  // nullptr when the pair is absent or out of range.
  const DeltaWH* find(std::size_t gt, std::size_t anchor) const;

 private:
  std::size_t num_gts_ = 0;
  std::size_t num_anchors_ = 0;
  std::vector<DeltaWH> values_;
  std::vector<unsigned char> present_;
};

double loss_xy(const Vec2& delta_xy, const Vec2& anchor_center, const Vec2& gt_center);
double loss_wh(const DeltaWH& delta, const LogShape& anchor, const LogShape& gt);
double cluster_term(const LogShape& anchor, const LogShape& gt);

// Throws std::invalid_argument naming (j, k) when an assigned pair has no
// delta.
double total_loss(const Assignment& assign, const DeltaGrid& deltas, const AnchorSet& anchors,
                  std::span<const LogShape> gts, double lambda);

struct ShapeGrad {
  double dw = 0.0;
  double dh = 0.0;
};

// dL/d(log anchor shape) for every anchor; zero for anchors with no entries.
std::vector<ShapeGrad> grad_anchors(const Assignment& assign, const DeltaGrid& deltas,
                                    const AnchorSet& anchors, std::span<const LogShape> gts,
                                    double lambda);

// Loss, anchor gradient and dL/dDelta per pair in one pass.
struct LossEval {
  double loss = 0.0;
  std::vector<ShapeGrad> anchor_grad;
  DeltaGrid delta_grad;
};

LossEval evaluate_loss(const Assignment& assign, const DeltaGrid& deltas, const AnchorSet& anchors,
                       std::span<const LogShape> gts, double lambda);

// --- Batch normalization without shift ---

inline constexpr double kBnEps = 1e-5;

struct BNState {
  double mean = 0.0;
  double stddev = 0.0;  // sqrt(biased batch variance + eps)
  double gamma = 1.0;
};

struct BnBatch {
  std::vector<DeltaWH> out;         // gamma * normalized
  std::vector<DeltaWH> normalized;  // pre-scale, zero mean / unit variance
  std::array<BNState, 2> state;     // per channel (w, h)
};

// out = gamma * (x - mean) / sqrt(var + eps) per channel, no shift term.
// Throws std::invalid_argument for batches smaller than 2.
BnBatch bn_no_shift(std::span<const DeltaWH> batch, const Vec2& gamma);

// --- Surrogate regression head ---

enum class BnGrouping {
  kPerAnchor,  // statistics per anchor and channel over the batch
  kJoint,      // statistics per channel pooled over all anchors
};

// Per-anchor affine map over a noisy view of the gt log shape:
//   phi = g + sigma * eps,  raw_k = U_k phi + c_k,
//   Delta_k = gamma_k * BN(raw_k)        (batch_norm on)
//   Delta_k = raw_k                      (batch_norm off)
struct HeadParams {
  std::vector<Mat2> u;
  std::vector<Vec2> c;
  std::vector<Vec2> gamma;  // > 0; unused when batch_norm is off
  double sigma = 0.0;
  bool batch_norm = true;
  BnGrouping grouping = BnGrouping::kPerAnchor;

  std::size_t num_anchors() const { return u.size(); }

  // U_k = I (BN on) or 0 (BN off) plus init_noise * N(0, 1) per entry,
  // c_k = 0, gamma_k = init_gamma.
  static HeadParams initial(std::size_t num_anchors, double sigma, bool batch_norm, Rng& rng,
                            double init_noise = 0.05, double init_gamma = 0.1);

  // Throws std::invalid_argument on inconsistent sizes, gamma <= 0, sigma < 0
  // or non-finite entries.
  void validate() const;
};

// Features for a batch: phi_j = g_j + sigma * N(0, I).
std::vector<Vec2> sample_features(std::span<const LogShape> gts, double sigma, Rng& rng);

// Single-sample head output (raw affine map; BN needs a batch).
DeltaWH head_forward(const LogShape& gt, std::size_t anchor, const HeadParams& params, Rng& rng);

struct HeadForward {
  std::vector<Vec2> features;
  DeltaGrid deltas;                      // complete num_gts x num_anchors
  std::vector<Vec2> normalized;          // [j * A + k], BN pre-scale values
  std::vector<std::array<double, 2>> inv_std;  // per BN group and channel
};

// Deterministic forward pass over fixed features.
HeadForward head_forward_batch(const HeadParams& params, std::span<const Vec2> features);

struct HeadGrad {
  std::vector<Mat2> u;
  std::vector<Vec2> c;
  std::vector<Vec2> gamma;
};

// Gradient of total_loss with respect to the head parameters, back-propagated
// through BN when enabled. `fwd` must come from head_forward_batch with the
// same params.
HeadGrad grad_head(const Assignment& assign, const AnchorSet& anchors,
                   std::span<const LogShape> gts, const HeadParams& params,
                   const HeadForward& fwd);

// Same, given dL/dDelta directly (as produced by evaluate_loss).
HeadGrad grad_head_from_delta_grad(const DeltaGrid& delta_grad, const HeadParams& params,
                                   const HeadForward& fwd);

}  // namespace anchorforge
