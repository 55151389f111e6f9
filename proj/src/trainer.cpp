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

#include "anchorforge/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "anchorforge/errors.hpp"
#include "anchorforge/random.hpp"

namespace anchorforge {

std::vector<LrSegment> voc_lr_schedule() {
  return {{0, 1e-4}, {100, 1e-3}, {15000, 1e-4}, {27000, 1e-5}};
}

double lr_at(long t, std::span<const LrSegment> schedule) {
  double lr = schedule.empty() ? 0.0 : schedule.front().lr;
  for (const auto& seg : schedule) {
    if (seg.start_iter <= t) lr = seg.lr;
  }
  return lr;
}

void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
              double lr, double momentum) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw std::invalid_argument("sgd_step: params, grads and velocity differ in size");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grads[i];
    params[i] -= lr * velocity[i];
  }
}

std::string to_string(const AssignmentRule& rule) {
  if (rule.kind == AssignmentRule::Kind::kYolo) return "yolo";
  char buf[48];
  std::snprintf(buf, sizeof buf, "threshold(%g)", rule.tau);
  return buf;
}

Assignment apply_rule(const AssignmentRule& rule, std::span<const LogShape> gts,
                      const AnchorSet& anchors, DistanceMetric metric) {
  if (rule.kind == AssignmentRule::Kind::kThreshold) {
    return hard_assign_threshold(gts, anchors, rule.tau);
  }
  return hard_assign_yolo(gts, anchors, metric);
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("TrainConfig: " + msg); };
  if (iters < 0) fail("iters must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must be in [0, 1)");
  if (lr_schedule.empty()) fail("lr_schedule must be nonempty");
  if (lr_schedule.front().start_iter != 0) fail("lr_schedule must start at iteration 0");
  for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
    if (!(lr_schedule[i].lr >= 0.0) || !std::isfinite(lr_schedule[i].lr)) {
      fail("learning rates must be finite and >= 0");
    }
    if (i > 0 && lr_schedule[i].start_iter <= lr_schedule[i - 1].start_iter) {
      fail("lr_schedule must be strictly increasing in start_iter");
    }
  }
  if (warmup.warmup_iters < 0) fail("warmup_iters must be >= 0");
  if (!(warmup.t_floor > 0.0)) fail("t_floor must be > 0");
  if (!(warmup.t_start >= warmup.t_floor)) fail("t_start must be >= t_floor");
  if (!(warmup.lambda_start >= 0.0 && warmup.lambda_start <= 1.0)) {
    fail("lambda_start must be in [0, 1]");
  }
  if (lambda_pin && !(*lambda_pin >= 0.0 && *lambda_pin <= 1.0)) fail("lambda_pin must be in [0, 1]");
  if (!(anchor_lr_multiplier >= 0.0) || !std::isfinite(anchor_lr_multiplier)) {
    fail("anchor_lr_multiplier must be finite and >= 0");
  }
  if (rule.kind == AssignmentRule::Kind::kThreshold && !(rule.tau > 0.0 && rule.tau < 1.0)) {
    fail("threshold tau must be in (0, 1)");
  }
  if (head.enabled) {
    if (!(head.sigma >= 0.0) || !std::isfinite(head.sigma)) fail("head sigma must be >= 0");
    if (!(head.init_gamma > 0.0)) fail("head init_gamma must be > 0");
    if (!(head.init_noise >= 0.0)) fail("head init_noise must be >= 0");
    if (head.batch_norm && head.grouping == BnGrouping::kPerAnchor && batch_size < 2) {
      fail("batch normalization needs batch_size >= 2");
    }
  }
  if (log_every < 1) fail("log_every must be >= 1");
  if (!(tie_jitter >= 0.0)) fail("tie_jitter must be >= 0");
}

TrainConfig TrainConfig::scaled(double factor) const {
  if (!(factor > 0.0)) throw std::invalid_argument("scale factor must be > 0");
  const auto scale = [factor](long v) { return std::lround(static_cast<double>(v) * factor); };
  TrainConfig out = *this;
  out.iters = scale(iters);
  out.warmup.warmup_iters = static_cast<int>(scale(warmup.warmup_iters));
  out.lr_schedule.clear();
  for (const auto& seg : lr_schedule) {
    const long start = scale(seg.start_iter);
    // Collapse breakpoints that round onto the same iteration.
    if (!out.lr_schedule.empty() && start <= out.lr_schedule.back().start_iter) {
      out.lr_schedule.back().lr = seg.lr;
    } else {
      out.lr_schedule.push_back({start, seg.lr});
    }
  }
  return out;
}

namespace {

void append_number(std::ostream& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  out << buf;
}

// Flat parameter views for the optimizer.
std::vector<double> pack_anchors(const AnchorSet& anchors) {
  std::vector<double> p;
  for (const auto& s : anchors.shapes()) {
    p.push_back(s.lw);
    p.push_back(s.lh);
  }
  return p;
}

void unpack_anchors(std::span<const double> p, AnchorSet& anchors) {
  auto& shapes = anchors.mutable_shapes();
  for (std::size_t k = 0; k < shapes.size(); ++k) shapes[k] = {p[2 * k], p[2 * k + 1]};
}

std::vector<double> pack_head(const HeadParams& h) {
  std::vector<double> p;
  for (std::size_t k = 0; k < h.num_anchors(); ++k) {
    p.insert(p.end(), h.u[k].begin(), h.u[k].end());
    p.insert(p.end(), h.c[k].begin(), h.c[k].end());
    p.insert(p.end(), h.gamma[k].begin(), h.gamma[k].end());
  }
  return p;
}

std::vector<double> pack_head_grad(const HeadGrad& g) {
  std::vector<double> p;
  for (std::size_t k = 0; k < g.u.size(); ++k) {
    p.insert(p.end(), g.u[k].begin(), g.u[k].end());
    p.insert(p.end(), g.c[k].begin(), g.c[k].end());
    p.insert(p.end(), g.gamma[k].begin(), g.gamma[k].end());
  }
  return p;
}

void unpack_head(std::span<const double> p, HeadParams& h) {
  std::size_t i = 0;
  for (std::size_t k = 0; k < h.num_anchors(); ++k) {
    for (auto& v : h.u[k]) v = p[i++];
    for (auto& v : h.c[k]) v = p[i++];
    for (auto& v : h.gamma[k]) v = p[i++];
  }
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// Log shapes whose linear form is a positive finite double.
bool decodable(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) {
    const double e = std::exp(x);
    return std::isfinite(e) && e > 0.0;
  });
}

bool has_coincident_anchors(const AnchorSet& anchors) {
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    for (std::size_t b = a + 1; b < anchors.size(); ++b) {
      if (anchors[a] == anchors[b]) return true;
    }
  }
  return false;
}

// Cycles through seeded permutations of [0, n), reshuffling every epoch.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, Rng& rng) : order_(n), rng_(rng) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(std::span<std::size_t>(order_));
  }

  void next(std::size_t batch_size, std::vector<std::size_t>& out) {
    out.clear();
    while (out.size() < batch_size) {
      if (pos_ == order_.size()) {
        rng_.shuffle(std::span<std::size_t>(order_));
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng& rng_;
};

}  // namespace

void write_trajectory_header(std::ostream& out, std::size_t num_anchors) {
  out << "iter,loss,lambda,T";
  for (std::size_t k = 1; k <= num_anchors; ++k) out << ",w" << k << ",h" << k;
  for (std::size_t k = 1; k <= num_anchors; ++k) out << ",util" << k;
  out << '\n';
}

void write_trajectory_row(std::ostream& out, const TrajectoryRow& row) {
  out << row.iter << ',';
  append_number(out, row.loss);
  out << ',';
  append_number(out, row.lambda);
  out << ',';
  append_number(out, row.temperature.value_or(0.0));
  for (const auto& s : row.anchors) {
    out << ',';
    append_number(out, s.w());
    out << ',';
    append_number(out, s.h());
  }
  for (long u : row.utilization) out << ',' << u;
  out << '\n';
}

void write_trajectory(std::ostream& out, const Trajectory& trajectory, std::size_t num_anchors) {
  write_trajectory_header(out, num_anchors);
  for (const auto& row : trajectory.rows) write_trajectory_row(out, row);
}

TrainResult run_training(const CanonicalDataset& ds, const AnchorSet& anchors0,
                         const TrainConfig& cfg, std::ostream* trajectory_out) {
  cfg.validate();
  if (ds.empty()) throw std::invalid_argument("run_training needs a nonempty dataset");

  const std::size_t num_anchors = anchors0.size();
  Rng rng(cfg.seed);
  // Head initialization and tie-breaking draw from their own streams so the
  // batch sequence does not depend on them.
  Rng init_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  AnchorSet anchors = anchors0;
  HeadParams head = HeadParams::initial(num_anchors, cfg.head.sigma, cfg.head.batch_norm, init_rng,
                                        cfg.head.init_noise, cfg.head.init_gamma);
  head.grouping = cfg.head.grouping;

  TrainResult result{anchors, head, {}, 0.0, std::nullopt};
  if (trajectory_out != nullptr) write_trajectory_header(*trajectory_out, num_anchors);
  if (cfg.iters == 0) return result;

  if (cfg.tie_jitter > 0.0 && cfg.anchor_lr_multiplier > 0.0 && has_coincident_anchors(anchors)) {
    for (auto& s : anchors.mutable_shapes()) {
      s.lw += cfg.tie_jitter * init_rng.normal();
      s.lh += cfg.tie_jitter * init_rng.normal();
    }
  }

  const auto all_gts = ds.log_shapes();
  BatchSampler sampler(all_gts.size(), rng);
  std::vector<std::size_t> batch_idx;
  std::vector<LogShape> gts(static_cast<std::size_t>(cfg.batch_size));

  std::vector<double> anchor_params = pack_anchors(anchors);
  std::vector<double> anchor_velocity(anchor_params.size(), 0.0);
  std::vector<double> head_params = pack_head(head);
  std::vector<double> head_velocity(head_params.size(), 0.0);

  std::vector<long> utilization(num_anchors, 0);
  double smoothed = 0.0;
  const long last = cfg.iters - 1;

  for (long t = 0; t < cfg.iters; ++t) {
    sampler.next(static_cast<std::size_t>(cfg.batch_size), batch_idx);
    for (std::size_t i = 0; i < batch_idx.size(); ++i) gts[i] = all_gts[batch_idx[i]];

    const std::optional<double> temperature =
        cfg.soft_warmup ? temperature_at(t, cfg.warmup) : std::nullopt;
    const Assignment assign = temperature ? soft_assign(gts, anchors, cfg.metric, *temperature)
                                          : apply_rule(cfg.rule, gts, anchors, cfg.metric);
    const double lambda =
        cfg.lambda_pin ? *cfg.lambda_pin : (cfg.cluster_warmup ? lambda_at(t, cfg.warmup) : 0.0);

    HeadForward fwd;
    if (cfg.head.enabled) {
      const auto features = sample_features(gts, head.sigma, rng);
      fwd = head_forward_batch(head, features);
    } else {
      fwd.deltas = DeltaGrid::zeros(gts.size(), num_anchors);
    }

    const LossEval eval = evaluate_loss(assign, fwd.deltas, anchors, gts, lambda);
    if (!std::isfinite(eval.loss)) {
      std::ostringstream msg;
      msg << "non-finite loss " << eval.loss << " at iteration " << t << "; anchors:";
      for (const auto& s : anchors.shapes()) msg << " (" << s.lw << ", " << s.lh << ")";
      throw NumericalError(msg.str(), t);
    }
    smoothed = t == 0 ? eval.loss : (1.0 - kLossSmoothing) * smoothed + kLossSmoothing * eval.loss;
    if (cfg.warmup.warmup_iters > 0 && t == cfg.warmup.warmup_iters - 1) {
      result.warmup_end_smoothed_loss = smoothed;
    }
    for (std::size_t k : assign.dominant_anchor()) {
      if (k < num_anchors) ++utilization[k];
    }

    const double lr = lr_at(t, cfg.lr_schedule);
    std::vector<double> anchor_grad;
    anchor_grad.reserve(anchor_params.size());
    for (const auto& g : eval.anchor_grad) {
      anchor_grad.push_back(g.dw);
      anchor_grad.push_back(g.dh);
    }
    sgd_step(anchor_params, anchor_grad, anchor_velocity, lr * cfg.anchor_lr_multiplier,
             cfg.momentum);
    if (cfg.head.enabled) {
      const auto head_grad = pack_head_grad(grad_head_from_delta_grad(eval.delta_grad, head, fwd));
      sgd_step(head_params, head_grad, head_velocity, lr, cfg.momentum);
      unpack_head(head_params, head);
      // Keep the BN scale strictly positive.
      for (auto& g : head.gamma) {
        for (auto& v : g) v = std::max(v, 1e-6);
      }
      head_params = pack_head(head);
    }
    if (!decodable(anchor_params) || !all_finite(head_params)) {
      throw NumericalError("non-finite parameters after iteration " + std::to_string(t), t);
    }
    unpack_anchors(anchor_params, anchors);

    if ((t + 1) % cfg.log_every == 0 || t == last) {
      TrajectoryRow row;
      row.iter = t;
      row.loss = eval.loss;
      row.smoothed_loss = smoothed;
      row.lambda = lambda;
      row.temperature = temperature;
      row.anchors = anchors.decoded();
      row.utilization = utilization;
      std::fill(utilization.begin(), utilization.end(), 0);
      if (trajectory_out != nullptr) {
        write_trajectory_row(*trajectory_out, row);
        trajectory_out->flush();
      }
      result.trajectory.rows.push_back(std::move(row));
    }
  }

  result.anchors = anchors;
  result.head = head;
  result.final_smoothed_loss = smoothed;
  return result;
}

}  // namespace anchorforge
