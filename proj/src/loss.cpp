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

#include "anchorforge/loss.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace anchorforge {

DeltaGrid::DeltaGrid(std::size_t num_gts, std::size_t num_anchors)
    : num_gts_(num_gts),
      num_anchors_(num_anchors),
      values_(num_gts * num_anchors),
      present_(num_gts * num_anchors, 0) {}

DeltaGrid DeltaGrid::zeros(std::size_t num_gts, std::size_t num_anchors) {
  DeltaGrid g(num_gts, num_anchors);
  std::fill(g.present_.begin(), g.present_.end(), 1);
  return g;
}

void DeltaGrid::set(std::size_t gt, std::size_t anchor, DeltaWH d) {
  if (gt >= num_gts_ || anchor >= num_anchors_) {
    throw std::out_of_range("DeltaGrid::set index out of range");
  }
  values_[gt * num_anchors_ + anchor] = d;
  present_[gt * num_anchors_ + anchor] = 1;
}

const DeltaWH* DeltaGrid::find(std::size_t gt, std::size_t anchor) const {
  if (gt >= num_gts_ || anchor >= num_anchors_) return nullptr;
  const std::size_t i = gt * num_anchors_ + anchor;
  return present_[i] ? &values_[i] : nullptr;
}

double loss_xy(const Vec2& delta_xy, const Vec2& anchor_center, const Vec2& gt_center) {
  const double rx = delta_xy[0] + anchor_center[0] - gt_center[0];
  const double ry = delta_xy[1] + anchor_center[1] - gt_center[1];
  return rx * rx + ry * ry;
}

double loss_wh(const DeltaWH& delta, const LogShape& anchor, const LogShape& gt) {
  const double rw = delta.dw + anchor.lw - gt.lw;
  const double rh = delta.dh + anchor.lh - gt.lh;
  return rw * rw + rh * rh;
}

double cluster_term(const LogShape& anchor, const LogShape& gt) {
  const double dw = anchor.lw - gt.lw;
  const double dh = anchor.lh - gt.lh;
  return dw * dw + dh * dh;
}

namespace {

void check_sizes(const Assignment& assign, const AnchorSet& anchors,
                 std::span<const LogShape> gts) {
  if (assign.num_gts() != gts.size() || assign.num_anchors() != anchors.size()) {
    throw std::invalid_argument("assignment dimensions do not match gts/anchors");
  }
}

const DeltaWH& require_delta(const DeltaGrid& deltas, const AssignmentEntry& e) {
  const DeltaWH* d = deltas.find(e.gt, e.anchor);
  if (d == nullptr) {
    throw std::invalid_argument("missing delta for assigned pair (" + std::to_string(e.gt) +
                                ", " + std::to_string(e.anchor) + ")");
  }
  return *d;
}

}  // namespace

LossEval evaluate_loss(const Assignment& assign, const DeltaGrid& deltas, const AnchorSet& anchors,
                       std::span<const LogShape> gts, double lambda) {
  check_sizes(assign, anchors, gts);
  LossEval out;
  out.anchor_grad.assign(anchors.size(), {});
  out.delta_grad = DeltaGrid::zeros(gts.size(), anchors.size());

  const double n = assign.total_weight();
  double wh_sum = 0.0;
  double cluster_sum = 0.0;
  // Entries are sorted by (gt, anchor), so the summation order is fixed.
  for (const auto& e : assign.entries()) {
    const DeltaWH& d = require_delta(deltas, e);
    const LogShape& s = anchors[e.anchor];
    const LogShape& g = gts[e.gt];
    const double rw = d.dw + s.lw - g.lw;
    const double rh = d.dh + s.lh - g.lh;
    wh_sum += e.weight * (rw * rw + rh * rh);

    auto& ag = out.anchor_grad[e.anchor];
    ag.dw += e.weight * 2.0 * rw;
    ag.dh += e.weight * 2.0 * rh;
    out.delta_grad.set(e.gt, e.anchor, {e.weight * 2.0 * rw, e.weight * 2.0 * rh});

    if (lambda != 0.0 && n > 0.0) cluster_sum += e.weight * cluster_term(s, g);
  }
  out.loss = wh_sum;
  if (lambda != 0.0 && n > 0.0) {
    out.loss += lambda / (2.0 * n) * cluster_sum;
    const double coef = lambda / n;
    for (const auto& e : assign.entries()) {
      const LogShape& s = anchors[e.anchor];
      const LogShape& g = gts[e.gt];
      auto& ag = out.anchor_grad[e.anchor];
      ag.dw += coef * e.weight * (s.lw - g.lw);
      ag.dh += coef * e.weight * (s.lh - g.lh);
    }
  }
  return out;
}

double total_loss(const Assignment& assign, const DeltaGrid& deltas, const AnchorSet& anchors,
                  std::span<const LogShape> gts, double lambda) {
  check_sizes(assign, anchors, gts);
  const double n = assign.total_weight();
  double wh_sum = 0.0;
  double cluster_sum = 0.0;
  for (const auto& e : assign.entries()) {
    const DeltaWH& d = require_delta(deltas, e);
    wh_sum += e.weight * loss_wh(d, anchors[e.anchor], gts[e.gt]);
    cluster_sum += e.weight * cluster_term(anchors[e.anchor], gts[e.gt]);
  }
  if (lambda == 0.0 || n <= 0.0) return wh_sum;
  return wh_sum + lambda / (2.0 * n) * cluster_sum;
}

std::vector<ShapeGrad> grad_anchors(const Assignment& assign, const DeltaGrid& deltas,
                                    const AnchorSet& anchors, std::span<const LogShape> gts,
                                    double lambda) {
  return evaluate_loss(assign, deltas, anchors, gts, lambda).anchor_grad;
}

namespace {

struct ChannelStats {
  double mean;
  double inv_std;
};

ChannelStats channel_stats(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  return {mean, 1.0 / std::sqrt(var + kBnEps)};
}

}  // namespace

BnBatch bn_no_shift(std::span<const DeltaWH> batch, const Vec2& gamma) {
  if (batch.size() < 2) throw std::invalid_argument("batch normalization needs batch size >= 2");
  BnBatch out;
  out.out.resize(batch.size());
  out.normalized.resize(batch.size());
  std::vector<double> x(batch.size());
  for (int c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < batch.size(); ++i) x[i] = c == 0 ? batch[i].dw : batch[i].dh;
    const auto st = channel_stats(x);
    out.state[c] = {st.mean, 1.0 / st.inv_std, gamma[c]};
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double xhat = (x[i] - st.mean) * st.inv_std;
      (c == 0 ? out.normalized[i].dw : out.normalized[i].dh) = xhat;
      (c == 0 ? out.out[i].dw : out.out[i].dh) = gamma[c] * xhat;
    }
  }
  return out;
}

HeadParams HeadParams::initial(std::size_t num_anchors, double sigma, bool batch_norm, Rng& rng,
                               double init_noise, double init_gamma) {
  HeadParams p;
  p.sigma = sigma;
  p.batch_norm = batch_norm;
  const double diag = batch_norm ? 1.0 : 0.0;
  for (std::size_t k = 0; k < num_anchors; ++k) {
    Mat2 u{diag, 0.0, 0.0, diag};
    for (auto& v : u) v += init_noise * rng.normal();
    p.u.push_back(u);
    p.c.push_back({0.0, 0.0});
    p.gamma.push_back({init_gamma, init_gamma});
  }
  return p;
}

void HeadParams::validate() const {
  if (c.size() != u.size() || gamma.size() != u.size()) {
    throw std::invalid_argument("HeadParams: per-anchor arrays differ in size");
  }
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw std::invalid_argument("HeadParams: sigma must be finite and >= 0");
  }
  for (std::size_t k = 0; k < u.size(); ++k) {
    for (double v : u[k]) {
      if (!std::isfinite(v)) throw std::invalid_argument("HeadParams: non-finite U");
    }
    for (double v : c[k]) {
      if (!std::isfinite(v)) throw std::invalid_argument("HeadParams: non-finite c");
    }
    for (double v : gamma[k]) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw std::invalid_argument("HeadParams: gamma must be finite and > 0");
      }
    }
  }
}

std::vector<Vec2> sample_features(std::span<const LogShape> gts, double sigma, Rng& rng) {
  std::vector<Vec2> phi;
  phi.reserve(gts.size());
  for (const auto& g : gts) {
    // Draw both noise terms even for sigma = 0 so the stream position only
    // depends on the batch size.
    const double ew = rng.normal();
    const double eh = rng.normal();
    phi.push_back({g.lw + sigma * ew, g.lh + sigma * eh});
  }
  return phi;
}

namespace {

Vec2 affine(const Mat2& u, const Vec2& c, const Vec2& phi) {
  return {u[0] * phi[0] + u[1] * phi[1] + c[0], u[2] * phi[0] + u[3] * phi[1] + c[1]};
}

// Number of BN groups and the group of anchor k.
std::size_t num_groups(const HeadParams& p) {
  return p.grouping == BnGrouping::kPerAnchor ? p.num_anchors() : 1;
}
std::size_t group_of(const HeadParams& p, std::size_t k) {
  return p.grouping == BnGrouping::kPerAnchor ? k : 0;
}

}  // namespace

DeltaWH head_forward(const LogShape& gt, std::size_t anchor, const HeadParams& params, Rng& rng) {
  const LogShape one[1] = {gt};
  const auto phi = sample_features(one, params.sigma, rng);
  const Vec2 raw = affine(params.u.at(anchor), params.c.at(anchor), phi[0]);
  return {raw[0], raw[1]};
}

HeadForward head_forward_batch(const HeadParams& params, std::span<const Vec2> features) {
  const std::size_t n = features.size();
  const std::size_t a = params.num_anchors();
  HeadForward fwd;
  fwd.features.assign(features.begin(), features.end());
  fwd.deltas = DeltaGrid(n, a);

  std::vector<Vec2> raw(n * a);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < a; ++k) raw[j * a + k] = affine(params.u[k], params.c[k], features[j]);
  }
  if (!params.batch_norm) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < a; ++k) fwd.deltas.set(j, k, {raw[j * a + k][0], raw[j * a + k][1]});
    }
    return fwd;
  }

  const std::size_t groups = num_groups(params);
  const std::size_t per_group = params.grouping == BnGrouping::kPerAnchor ? n : n * a;
  if (per_group < 2) throw std::invalid_argument("batch normalization needs batch size >= 2");

  fwd.normalized.assign(n * a, {0.0, 0.0});
  fwd.inv_std.assign(groups, {0.0, 0.0});
  std::vector<std::vector<double>> values(groups);
  for (int c = 0; c < 2; ++c) {
    for (auto& v : values) v.clear();
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < a; ++k) values[group_of(params, k)].push_back(raw[j * a + k][c]);
    }
    std::vector<ChannelStats> stats(groups);
    for (std::size_t gi = 0; gi < groups; ++gi) {
      stats[gi] = channel_stats(values[gi]);
      fwd.inv_std[gi][c] = stats[gi].inv_std;
    }
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < a; ++k) {
        const auto& st = stats[group_of(params, k)];
        fwd.normalized[j * a + k][c] = (raw[j * a + k][c] - st.mean) * st.inv_std;
      }
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < a; ++k) {
      const Vec2& xhat = fwd.normalized[j * a + k];
      fwd.deltas.set(j, k, {params.gamma[k][0] * xhat[0], params.gamma[k][1] * xhat[1]});
    }
  }
  return fwd;
}

HeadGrad grad_head_from_delta_grad(const DeltaGrid& delta_grad, const HeadParams& params,
                                   const HeadForward& fwd) {
  const std::size_t n = fwd.features.size();
  const std::size_t a = params.num_anchors();
  HeadGrad g;
  g.u.assign(a, Mat2{});
  g.c.assign(a, Vec2{});
  g.gamma.assign(a, Vec2{});

  const auto upstream = [&](std::size_t j, std::size_t k, int c) {
    const DeltaWH* d = delta_grad.find(j, k);
    if (d == nullptr) return 0.0;
    return c == 0 ? d->dw : d->dh;
  };

  // dL/draw for every pair and channel.
  std::vector<Vec2> draw(n * a, {0.0, 0.0});
  if (!params.batch_norm) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < a; ++k) {
        draw[j * a + k] = {upstream(j, k, 0), upstream(j, k, 1)};
      }
    }
  } else {
    const std::size_t groups = num_groups(params);
    for (int c = 0; c < 2; ++c) {
      // dxhat = dy * gamma; dgamma = sum dy * xhat.
      std::vector<double> sum_dxhat(groups, 0.0);
      std::vector<double> sum_dxhat_xhat(groups, 0.0);
      std::vector<double> count(groups, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < a; ++k) {
          const double dy = upstream(j, k, c);
          const double xhat = fwd.normalized[j * a + k][c];
          g.gamma[k][c] += dy * xhat;
          const double dxhat = dy * params.gamma[k][c];
          const std::size_t gi = group_of(params, k);
          sum_dxhat[gi] += dxhat;
          sum_dxhat_xhat[gi] += dxhat * xhat;
          count[gi] += 1.0;
        }
      }
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < a; ++k) {
          const std::size_t gi = group_of(params, k);
          const double dxhat = upstream(j, k, c) * params.gamma[k][c];
          const double xhat = fwd.normalized[j * a + k][c];
          draw[j * a + k][c] = fwd.inv_std[gi][c] *
                               (dxhat - sum_dxhat[gi] / count[gi] -
                                xhat * sum_dxhat_xhat[gi] / count[gi]);
        }
      }
    }
  }

  for (std::size_t j = 0; j < n; ++j) {
    const Vec2& phi = fwd.features[j];
    for (std::size_t k = 0; k < a; ++k) {
      const Vec2& d = draw[j * a + k];
      g.u[k][0] += d[0] * phi[0];
      g.u[k][1] += d[0] * phi[1];
      g.u[k][2] += d[1] * phi[0];
      g.u[k][3] += d[1] * phi[1];
      g.c[k][0] += d[0];
      g.c[k][1] += d[1];
    }
  }
  return g;
}

HeadGrad grad_head(const Assignment& assign, const AnchorSet& anchors,
                   std::span<const LogShape> gts, const HeadParams& params,
                   const HeadForward& fwd) {
  // The clustering term does not depend on Delta, so lambda is irrelevant.
  const auto eval = evaluate_loss(assign, fwd.deltas, anchors, gts, 0.0);
  return grad_head_from_delta_grad(eval.delta_grad, params, fwd);
}

}  // namespace anchorforge
