// Copyright 2026 The Brane Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <random>

#include "brane/diffcore.hpp"
#include "brane/error.hpp"
#include "doctest.h"

using namespace brane;

namespace {

Matrix random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

struct TwoLayer {
  ParamStore params;
  int w1, b1, w2, b2;
  Matrix x;
};

TwoLayer make_two_layer(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TwoLayer net;
  net.w1 = net.params.add_block(1, "w1", 5, 7);
  net.b1 = net.params.add_block(1, "b1", 1, 7);
  net.w2 = net.params.add_block(2, "w2", 7, 3);
  net.b2 = net.params.add_block(2, "b2", 1, 3);
  std::normal_distribution<double> n(0.0, 0.7);
  for (double& v : net.params.values()) v = n(rng);
  net.x = random_matrix(6, 5, rng);
  return net;
}

// Scalar loss of a two-layer ReLU net built from every smooth primitive.
Var two_layer_program(Tape& t, const TwoLayer& net) {
  Var x = t.constant(net.x);
  Var h = t.relu(t.add_row(t.matmul(x, t.param(net.w1)), t.param(net.b1)));
  Var z = t.add_row(t.matmul(h, t.param(net.w2)), t.param(net.b2));
  return t.cross_entropy(z, {3, 3, 2, 3, 3, 3}, {0, 1, 1, 2, 0, 2}, {1, 0.5, 1, 1, 2, 1});
}

// Independent straight-line evaluation of two_layer_program.
double two_layer_reference(const TwoLayer& net) {
  auto w1 = net.params.view(net.w1);
  auto b1 = net.params.view(net.b1);
  auto w2 = net.params.view(net.w2);
  auto b2 = net.params.view(net.b2);
  const int width[] = {3, 3, 2, 3, 3, 3};
  const int target[] = {0, 1, 1, 2, 0, 2};
  const double weight[] = {1, 0.5, 1, 1, 2, 1};
  double total = 0;
  for (int r = 0; r < 6; ++r) {
    double hidden[7];
    for (int j = 0; j < 7; ++j) {
      double s = b1(0, j);
      for (int k = 0; k < 5; ++k) s += net.x(r, k) * w1(k, j);
      hidden[j] = s > 0 ? s : 0;
    }
    double z[3];
    for (int c = 0; c < 3; ++c) {
      z[c] = b2(0, c);
      for (int j = 0; j < 7; ++j) z[c] += hidden[j] * w2(j, c);
    }
    double lse = 0;
    for (int c = 0; c < width[r]; ++c) lse += std::exp(z[c]);
    total += weight[r] * (std::log(lse) - z[target[r]]);
  }
  return total;
}

template <typename Program>
double finite_difference_check(ParamStore& params, Program&& program, int coords,
                               std::uint64_t seed) {
  auto fwd = forward_scalar(program, params);
  Vector g = fwd.tape.backward(fwd.output);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, params.dim() - 1);
  double worst = 0;
  const double h = 1e-5;
  for (int k = 0; k < coords; ++k) {
    std::size_t i = pick(rng);
    double saved = params.values()[i];
    params.values()[i] = saved + h;
    double up = forward_scalar(program, params).value;
    params.values()[i] = saved - h;
    double down = forward_scalar(program, params).value;
    params.values()[i] = saved;
    double fd = (up - down) / (2 * h);
    double ad = g[static_cast<Eigen::Index>(i)];
    double rel = std::abs(fd - ad) / (std::max(std::abs(fd), std::abs(ad)) + 1e-8);
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace

TEST_CASE("trivial programs") {
  ParamStore empty;
  auto id = forward_scalar([](Tape& t) { return t.sum(t.constant(Matrix::Constant(1, 1, 3.0))); },
                           empty);
  CHECK(id.value == 3.0);

  ParamStore p;
  int w = p.add_block(1, "w", 1, 4);
  Matrix x(1, 4);
  x << 1.5, -2.0, 0.25, 4.0;
  p.view(w) << 0.5, 1.0, -1.0, 2.0;
  auto lin = forward_scalar([&](Tape& t) { return t.dot(t.param(w), t.constant(x)); }, p);
  CHECK(lin.value == doctest::Approx(0.75 - 2.0 - 0.25 + 8.0));
  Vector g = lin.tape.backward(lin.output);
  for (int i = 0; i < 4; ++i) CHECK(g[i] == x(0, i));

  auto konst = forward_scalar([&](Tape& t) { return t.sum(t.constant(x)); }, p);
  CHECK(konst.tape.backward(konst.output).isZero(0.0));
}

TEST_CASE("tape value matches an independent straight-line implementation") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    TwoLayer net = make_two_layer(s);
    auto fwd = forward_scalar([&](Tape& t) { return two_layer_program(t, net); }, net.params);
    CHECK(std::abs(fwd.value - two_layer_reference(net)) <= 1e-12 * std::max(1.0, fwd.value));
  }
}

TEST_CASE("reverse mode agrees with central finite differences") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    TwoLayer net = make_two_layer(100 + s);
    double worst = finite_difference_check(
        net.params, [&](Tape& t) { return two_layer_program(t, net); }, 64, s);
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("every primitive passes the finite-difference check") {
  std::mt19937_64 rng(5);
  ParamStore p;
  int a = p.add_block(1, "a", 6, 4);
  int b = p.add_block(1, "b", 6, 4);
  int s = p.add_block(2, "s", 1, 1);
  for (double& v : p.values()) v = std::normal_distribution<double>(0, 1)(rng);
  for (double& v : p.values().subspan(0, 24)) v = std::abs(v) + 0.5;  // keep log well-defined
  Matrix pattern = random_matrix(6, 3, rng);
  auto program = [&](Tape& t) {
    Var pa = t.param(a);
    Var pb = t.param(b);
    Var l = t.log(pa);
    Var sm = t.softmax_rows(pb);
    Var g = t.gather_rows(t.add(l, sm), {5, 0, 0, 3, 2, 1});
    Var seg_s = t.segment_sum(g, {0, 1, 1, 2, 0, 2}, 3);
    Var seg_m = t.segment_max(pb, {0, 0, 1, 1, 2, 2}, 3);
    Var scores = t.block_pair_scores(t.add(seg_s, seg_m), seg_m, {0, 1, 3});
    Var scaled = t.add_scaled(scores, pattern.topRows(3).leftCols(2), t.param(s));
    Var margin = t.row_margin(scaled, 1, 2, 0);
    Var ce = t.cross_entropy(scaled, {1, 2, 2}, {0, 1, 0}, {0.5, 1.0, 2.0});
    return t.add(t.add(margin, ce), t.dot(pa, t.relu(pb)));
  };
  CHECK(finite_difference_check(p, program, 64, 9) <= 1e-4);
}

TEST_CASE("segment_max breaks ties toward the earliest row") {
  ParamStore p;
  int w = p.add_block(1, "w", 3, 1);
  p.view(w) << 2.0, 2.0, 1.0;
  auto fwd = forward_scalar([&](Tape& t) { return t.sum(t.segment_max(t.param(w), {0, 0, 0}, 1)); },
                            p);
  Vector g = fwd.tape.backward(fwd.output);
  CHECK(g[0] == 1.0);
  CHECK(g[1] == 0.0);
}

TEST_CASE("grad_suffix slices the contiguous layer suffix") {
  TwoLayer net = make_two_layer(3);
  auto fwd = forward_scalar([&](Tape& t) { return two_layer_program(t, net); }, net.params);
  Vector full = fwd.tape.backward(fwd.output);
  CHECK(fwd.tape.grad_suffix(fwd.output, 1) == full);
  Vector tail = fwd.tape.grad_suffix(fwd.output, 2);
  Vector joined(full.size());
  const auto head = full.size() - tail.size();
  joined << full.head(head), tail;
  CHECK(joined == full);
  CHECK(static_cast<std::size_t>(head) == net.params.suffix_offset(2));
  try {
    fwd.tape.grad_suffix(fwd.output, 3);
    FAIL("expected BadLayerIndex");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kBadLayerIndex);
  }
  CHECK_THROWS_AS(fwd.tape.grad_suffix(fwd.output, 0), Error);
}

TEST_CASE("jvp equals the gradient contracted with the direction") {
  TwoLayer net = make_two_layer(11);
  std::mt19937_64 rng(2);
  std::vector<double> dir(net.params.dim());
  for (double& d : dir) d = std::normal_distribution<double>(0, 1)(rng);
  Tape t(net.params);
  Var x = t.constant(net.x);
  Var h = t.relu(t.add_row(t.matmul(x, t.param(net.w1)), t.param(net.b1)));
  Var z = t.add_row(t.matmul(h, t.param(net.w2)), t.param(net.b2));
  Matrix tangent = t.jvp(z, dir);
  Eigen::Map<const Vector> d(dir.data(), static_cast<Eigen::Index>(dir.size()));
  for (int r = 0; r < z.id && r < 6; ++r)
    for (int c = 0; c < 3; ++c) {
      Matrix seed = Matrix::Zero(6, 3);
      seed(r, c) = 1.0;
      CHECK(t.backward(z, seed).dot(d) == doctest::Approx(tangent(r, c)).epsilon(1e-12));
    }
}

TEST_CASE("affine programs are exactly linear in their parameters") {
  std::mt19937_64 rng(4);
  ParamStore p;
  int w = p.add_block(1, "w", 4, 3);
  int b = p.add_block(1, "b", 1, 3);
  Matrix x = random_matrix(5, 4, rng);
  Matrix c = random_matrix(5, 3, rng);
  for (double& v : p.values()) v = std::normal_distribution<double>(0, 1)(rng);
  auto program = [&](Tape& t) {
    return t.dot(t.add_row(t.matmul(t.constant(x), t.param(w)), t.param(b)), t.constant(c));
  };
  auto base = forward_scalar(program, p);
  Vector g = base.tape.backward(base.output);
  ParamStore moved = p;
  Vector delta(static_cast<Eigen::Index>(p.dim()));
  for (Eigen::Index i = 0; i < delta.size(); ++i) {
    delta[i] = std::normal_distribution<double>(0, 3)(rng);
    moved.values()[static_cast<std::size_t>(i)] += delta[i];
  }
  double f1 = forward_scalar(program, moved).value;
  CHECK(std::abs(f1 - base.value - g.dot(delta)) <= 1e-10);
}

TEST_CASE("shape errors are reported") {
  ParamStore p;
  Tape t(p);
  Var a = t.constant(Matrix::Ones(2, 3));
  Var b = t.constant(Matrix::Ones(2, 3));
  try {
    t.matmul(a, b);
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kShapeMismatch);
  }
}

TEST_CASE("adam") {
  std::vector<double> x{1.0, -2.0, 3.0};
  std::vector<double> zero(3, 0.0);
  AdamState st;
  adam_step(x, zero, st, {});
  CHECK(x == std::vector<double>{1.0, -2.0, 3.0});

  std::vector<double> y(3, 0.0);
  std::vector<double> g{0.3, -5.0, 1e-3};
  AdamState fresh;
  adam_step(y, g, fresh, {});
  for (int i = 0; i < 3; ++i) CHECK(std::signbit(y[i]) != std::signbit(g[i]));

  // Convex quadratic 0.5 * sum a_i (x_i - c_i)^2 with a known optimum.
  const double a[] = {1.0, 2.0, 0.5, 1.5};
  const double c[] = {0.3, -0.2, 0.1, 0.25};
  std::vector<double> q(4, 0.0), grad(4);
  AdamState qs;
  AdamHyper hyper;
  hyper.lr = 0.03;
  hyper.beta1 = 0.5;
  for (int step = 0; step < 100; ++step) {
    for (int i = 0; i < 4; ++i) grad[i] = a[i] * (q[i] - c[i]);
    adam_step(q, grad, qs, hyper);
  }
  double norm = 0;
  for (int i = 0; i < 4; ++i) norm += std::pow(a[i] * (q[i] - c[i]), 2);
  CHECK(std::sqrt(norm) < 1e-6);

  std::vector<double> m{1.0, 1.0};
  std::vector<char> mask{0, 1};
  AdamState ms;
  adam_step(m, std::vector<double>{1.0, 1.0}, ms, {}, mask);
  CHECK(m[0] == 1.0);
  CHECK(m[1] < 1.0);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  TwoLayer net = make_two_layer(8);
  net.params.seed = 99;
  ParamStore back = parse_checkpoint(serialize_checkpoint(net.params));
  CHECK(back == net.params);
  CHECK(back.seed == 99);
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(net.params));
  std::string bytes = serialize_checkpoint(net.params);
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 3)), Error);
}

TEST_CASE("forward and backward are bit-deterministic") {
  TwoLayer net = make_two_layer(21);
  auto a = forward_scalar([&](Tape& t) { return two_layer_program(t, net); }, net.params);
  auto b = forward_scalar([&](Tape& t) { return two_layer_program(t, net); }, net.params);
  CHECK(a.value == b.value);
  CHECK(a.tape.backward(a.output) == b.tape.backward(b.output));
}
