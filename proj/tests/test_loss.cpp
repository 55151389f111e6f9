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
#include <stdexcept>
#include <vector>

#include <doctest.h>

#include "anchorforge/loss.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace anchorforge;

namespace {

Assignment single(double weight = 1.0) { return Assignment(1, 1, {{0, 0, weight}}); }

DeltaGrid grid1(DeltaWH d) {
  DeltaGrid g(1, 1);
  g.set(0, 0, d);
  return g;
}

}  // namespace

TEST_CASE("loss_xy examples") {
  CHECK(loss_xy({0, 0}, {5, 5}, {5, 5}) == 0.0);
  CHECK(loss_xy({1, 0}, {0, 0}, {0, 0}) == 1.0);
  CHECK(loss_xy({0.5, -0.5}, {1, 1}, {2, 2}) == doctest::Approx(2.5));
}

TEST_CASE("loss_wh and cluster_term examples") {
  CHECK(loss_wh({0, 0}, {1.5, 2.5}, {1.5, 2.5}) == 0.0);
  CHECK(loss_wh({0.5, 0}, {0, 0}, {0, 0}) == doctest::Approx(0.25));
  CHECK(loss_wh({0, 0}, encode_log({2, 2}), encode_log({4, 4})) ==
        doctest::Approx(2 * std::log(2.0) * std::log(2.0)));
  CHECK(cluster_term({1, 1}, {1, 1}) == 0.0);
  CHECK(cluster_term({0, 0}, {1, 2}) == doctest::Approx(5.0));
}

TEST_CASE("cluster_term equals loss_wh with zero offsets") {
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const LogShape a{rng.normal(), rng.normal()}, g{rng.normal(), rng.normal()};
    CHECK(cluster_term(a, g) == loss_wh({0, 0}, a, g));
  }
}

TEST_CASE("total_loss examples") {
  const AnchorSet anchors({{0, 0}}, 1);
  const std::vector<LogShape> gts{{1, 0}};
  CHECK(total_loss(single(), grid1({0, 0}), anchors, gts, 1.0) == doctest::Approx(1.5));
  CHECK(total_loss(single(), grid1({0, 0}), anchors, gts, 0.0) == doctest::Approx(1.0));
  CHECK(total_loss(Assignment(1, 1, {}), DeltaGrid(1, 1), anchors, gts, 1.0) == 0.0);
  try {
    total_loss(single(), DeltaGrid(1, 1), anchors, gts, 1.0);
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("(0, 0)") != std::string::npos);
  }
}

TEST_CASE("total_loss with lambda 0 is the plain weighted wh sum") {
  Rng rng(9);
  const auto in = gradcheck::make_instance(rng, 3);  // soft, lambda 0, head off
  double sum = 0.0;
  for (const auto& e : in.assign.entries()) {
    sum += e.weight * loss_wh(*in.deltas.find(e.gt, e.anchor), in.anchors[e.anchor], in.gts[e.gt]);
  }
  CHECK(total_loss(in.assign, in.deltas, in.anchors, in.gts, 0.0) == doctest::Approx(sum).epsilon(1e-12));
}

TEST_CASE("total_loss ignores entry order bitwise") {
  Rng rng(10);
  const auto in = gradcheck::make_instance(rng, 5);
  std::vector<AssignmentEntry> entries(in.assign.entries().begin(), in.assign.entries().end());
  rng.shuffle(std::span<AssignmentEntry>(entries));
  const Assignment shuffled(in.assign.num_gts(), in.assign.num_anchors(), entries);
  CHECK(total_loss(shuffled, in.deltas, in.anchors, in.gts, 0.5) ==
        total_loss(in.assign, in.deltas, in.anchors, in.gts, 0.5));
}

TEST_CASE("grad_anchors examples") {
  const AnchorSet anchors({{1, 0}, {3, 3}}, 1);
  const std::vector<LogShape> gts{{0, 0}};
  DeltaGrid d(1, 2);
  d.set(0, 0, {0, 0});
  const auto g = grad_anchors(Assignment(1, 2, {{0, 0, 1.0}}), d, anchors, gts, 0.0);
  CHECK(g[0].dw == doctest::Approx(2.0));
  CHECK(g[0].dh == 0.0);
  CHECK(g[1].dw == 0.0);
  CHECK(g[1].dh == 0.0);
}

TEST_CASE("evaluate_loss agrees with total_loss and grad_anchors") {
  Rng rng(77);
  for (int i = 0; i < 12; ++i) {
    const auto in = gradcheck::make_instance(rng, i);
    const DeltaGrid d = gradcheck::deltas_of(in, in.params);
    const auto eval = evaluate_loss(in.assign, d, in.anchors, in.gts, in.lambda);
    CHECK(eval.loss == doctest::Approx(total_loss(in.assign, d, in.anchors, in.gts, in.lambda)).epsilon(1e-12));
    const auto ga = grad_anchors(in.assign, d, in.anchors, in.gts, in.lambda);
    for (std::size_t k = 0; k < ga.size(); ++k) {
      CHECK(eval.anchor_grad[k].dw == doctest::Approx(ga[k].dw).epsilon(1e-12));
      CHECK(eval.anchor_grad[k].dh == doctest::Approx(ga[k].dh).epsilon(1e-12));
    }
  }
}

TEST_CASE("analytic gradients match central differences") {
  Rng rng(1234);
  for (int i = 0; i < 72; ++i) {
    const auto in = gradcheck::make_instance(rng, i);
    CAPTURE(i);
    CAPTURE(in.label);
    CHECK(gradcheck::max_rel_err(in) < 1e-5);
  }
}

TEST_CASE("bn_no_shift examples") {
  const double s = 1.0 / std::sqrt(1.0 + kBnEps);
  auto b = bn_no_shift(std::vector<DeltaWH>{{-1, -1}, {1, 1}}, {1, 1});
  CHECK(b.out[0].dw == doctest::Approx(-s).epsilon(1e-12));
  CHECK(b.out[1].dh == doctest::Approx(s).epsilon(1e-12));
  b = bn_no_shift(std::vector<DeltaWH>{{4, 4}, {4, 4}, {4, 4}}, {1, 1});
  for (const auto& d : b.out) {
    CHECK(d.dw == 0.0);
    CHECK(d.dh == 0.0);
  }
  b = bn_no_shift(std::vector<DeltaWH>{{0, 0}, {2, 2}}, {2, 2});
  CHECK(b.out[0].dw == doctest::Approx(-2 * s).epsilon(1e-12));
  CHECK(b.out[1].dw == doctest::Approx(2 * s).epsilon(1e-12));
  CHECK(b.state[0].mean == doctest::Approx(1.0));
  CHECK(b.state[0].gamma == 2.0);
  CHECK_THROWS_AS(bn_no_shift(std::vector<DeltaWH>{{1, 1}}, {1, 1}), std::invalid_argument);
}

TEST_CASE("bn_no_shift batch statistics") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 16 + rng.below(200);
    const double sd_w = 10 + 90 * rng.uniform(), sd_h = 10 + 90 * rng.uniform();
    std::vector<DeltaWH> batch;
    for (std::size_t i = 0; i < n; ++i) batch.push_back({rng.normal(3, sd_w), rng.normal(-7, sd_h)});
    const auto b = bn_no_shift(batch, {0.3, 2.0});
    double m[2] = {0, 0}, v[2] = {0, 0};
    for (const auto& x : b.normalized) {
      m[0] += x.dw;
      m[1] += x.dh;
    }
    m[0] /= n;
    m[1] /= n;
    for (const auto& x : b.normalized) {
      v[0] += (x.dw - m[0]) * (x.dw - m[0]);
      v[1] += (x.dh - m[1]) * (x.dh - m[1]);
    }
    for (int c = 0; c < 2; ++c) {
      CHECK(std::abs(m[c]) < 1e-7);
      CHECK(std::abs(v[c] / n - 1.0) < 1e-6);
    }
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(b.out[i].dw == doctest::Approx(0.3 * b.normalized[i].dw));
    }
  }
}

TEST_CASE("head_forward examples") {
  Rng rng(1);
  HeadParams p = HeadParams::initial(2, 0.0, false, rng, 0.0);
  const LogShape g{3.1, 2.7};
  for (auto& u : p.u) u = {0, 0, 0, 0};
  Rng r1(4);
  const DeltaWH zero = head_forward(g, 1, p, r1);
  CHECK(zero.dw == 0.0);
  CHECK(zero.dh == 0.0);

  const LogShape anchor{2.0, 2.5};
  p.u[0] = {1, 0, 0, 1};
  p.c[0] = {-anchor.lw, -anchor.lh};
  Rng r2(4);
  const DeltaWH perfect = head_forward(g, 0, p, r2);
  CHECK(perfect.dw == doctest::Approx(g.lw - anchor.lw));
  CHECK(loss_wh(perfect, anchor, g) == doctest::Approx(0.0));

  p.sigma = 0.1;
  Rng a(99), b(99);
  const DeltaWH x = head_forward(g, 0, p, a), y = head_forward(g, 0, p, b);
  CHECK(x == y);
  CHECK(x.dw != perfect.dw);
}

TEST_CASE("HeadParams initial and validate") {
  Rng rng(2);
  const HeadParams bn = HeadParams::initial(3, 0.5, true, rng, 0.0, 0.1);
  CHECK(bn.num_anchors() == 3);
  CHECK(bn.u[1] == Mat2{1, 0, 0, 1});
  CHECK(bn.gamma[2] == Vec2{0.1, 0.1});
  const HeadParams raw = HeadParams::initial(3, 0.5, false, rng, 0.0);
  CHECK(raw.u[0] == Mat2{0, 0, 0, 0});
  CHECK_NOTHROW(bn.validate());
  HeadParams bad = bn;
  bad.gamma[0][1] = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = bn;
  bad.sigma = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = bn;
  bad.c.pop_back();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("grad_head is zero when residuals vanish") {
  const std::vector<LogShape> gts{{3, 2}, {2.5, 3.5}, {4, 4}};
  const AnchorSet anchors({{2, 2}, {3, 3}}, 1);
  Rng rng(0);
  HeadParams p = HeadParams::initial(2, 0.0, false, rng, 0.0);
  for (std::size_t k = 0; k < 2; ++k) {
    p.u[k] = {1, 0, 0, 1};
    p.c[k] = {-anchors[k].lw, -anchors[k].lh};
  }
  std::vector<Vec2> features;
  for (const auto& g : gts) features.push_back({g.lw, g.lh});
  const auto fwd = head_forward_batch(p, features);
  const auto assign = soft_assign(gts, anchors, DistanceMetric::kOneMinusIou, 1.0);
  for (double v : oracle::flatten(grad_head(assign, anchors, gts, p, fwd))) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("head gradient on uninformative features shrinks U") {
  // Features carry no information about the target once shuffled, so in
  // expectation dL/dU = 2 v U for targets with per-axis variance v when c is
  // at its optimum.
  Rng rng(31);
  const double v = 0.25;
  const LogShape mean{3.0, 2.0};
  const LogShape anchor{2.5, 2.5};
  HeadParams p = HeadParams::initial(1, 0.0, false, rng, 0.0);
  p.u[0] = {0.4, -0.2, 0.1, 0.3};
  p.c[0] = {mean.lw - anchor.lw - (p.u[0][0] * mean.lw + p.u[0][1] * mean.lh),
            mean.lh - anchor.lh - (p.u[0][2] * mean.lw + p.u[0][3] * mean.lh)};
  const AnchorSet anchors({anchor}, 1);
  const std::size_t samples = 20000;
  std::vector<LogShape> gts;
  for (std::size_t i = 0; i < samples; ++i) {
    gts.push_back({rng.normal(mean.lw, std::sqrt(v)), rng.normal(mean.lh, std::sqrt(v))});
  }
  std::vector<std::size_t> perm(samples);
  for (std::size_t i = 0; i < samples; ++i) perm[i] = i;
  rng.shuffle(std::span<std::size_t>(perm));

  double sum[4] = {0, 0, 0, 0}, sq[4] = {0, 0, 0, 0};
  const Assignment one(1, 1, {{0, 0, 1.0}});
  for (std::size_t i = 0; i < samples; ++i) {
    const LogShape& f = gts[perm[i]];
    const std::vector<Vec2> phi{{f.lw, f.lh}};
    const std::vector<LogShape> g{gts[i]};
    const auto fwd = head_forward_batch(p, phi);
    const auto grad = grad_head(one, anchors, g, p, fwd);
    for (int e = 0; e < 4; ++e) {
      sum[e] += grad.u[0][e];
      sq[e] += grad.u[0][e] * grad.u[0][e];
    }
  }
  double dot = 0.0;
  for (int e = 0; e < 4; ++e) {
    const double m = sum[e] / samples;
    const double se = std::sqrt((sq[e] / samples - m * m) / samples);
    CAPTURE(e);
    CHECK(std::abs(m - 2 * v * p.u[0][e]) < 3 * se);
    dot += m * p.u[0][e];
  }
  CHECK(dot > 0.0);
}

TEST_CASE("head_forward_batch BN groups") {
  Rng rng(8);
  HeadParams p = HeadParams::initial(3, 0.0, true, rng, 0.3, 1.0);
  std::vector<Vec2> phi;
  for (int j = 0; j < 20; ++j) phi.push_back({rng.normal(3, 1), rng.normal(2, 1)});
  const auto fwd = head_forward_batch(p, phi);
  for (std::size_t k = 0; k < 3; ++k) {
    double m = 0.0;
    for (std::size_t j = 0; j < 20; ++j) m += fwd.deltas.find(j, k)->dw;
    CHECK(std::abs(m) < 1e-9);
  }
  p.grouping = BnGrouping::kJoint;
  const auto joint = head_forward_batch(p, phi);
  double total = 0.0;
  for (std::size_t j = 0; j < 20; ++j) {
    for (std::size_t k = 0; k < 3; ++k) total += joint.deltas.find(j, k)->dh;
  }
  CHECK(std::abs(total) < 1e-9);
  const std::vector<Vec2> lone{{1, 1}};
  p.grouping = BnGrouping::kPerAnchor;
  CHECK_THROWS_AS(head_forward_batch(p, lone), std::invalid_argument);
}
