// tests/test_tensor.cc
//
// Copyright 2026  The cmm authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "testing_util.h"

using namespace cmm;
using cmm::testing::finite_difference_check;
using cmm::testing::random_tensor;

namespace {

// Generic gradient harness: loss = sum(out .* R) for a fixed random R so
// every output entry receives a distinct upstream gradient.
using GraphFn = std::function<Var(Tape &, const std::vector<Var> &)>;

double check_op_gradients(const GraphFn &fn, std::vector<Tensor> params,
                          uint64_t seed) {
  Tape t;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor &p : params) vars.push_back(t.param(p));
  Var out = fn(t, vars);
  Rng rng(seed);
  Tensor r = random_tensor(t.val(out).shape, rng);
  Var loss = t.sum(t.mul(out, t.constant(r)));
  t.backward(loss);

  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Var v : vars) analytic.push_back(t.grad(v));

  auto eval = [&](const std::vector<Tensor> &ps) {
    Tape t2(false);
    std::vector<Var> vs;
    vs.reserve(ps.size());
    for (const Tensor &p : ps) vs.push_back(t2.constant(p));
    Var o = fn(t2, vs);
    const Tensor &ov = t2.val(o);
    double acc = 0;
    for (size_t i = 0; i < ov.data.size(); ++i) acc += ov.data[i] * r.data[i];
    return acc;
  };
  auto report = finite_difference_check(eval, params, analytic);
  INFO(report.worst);
  CHECK(report.max_rel_err < 1e-5);
  return report.max_rel_err;
}

}  // namespace

TEST_CASE("matmul basics") {
  Tape t;
  Var id = t.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  Var b = t.constant(Tensor({2, 2}, {3, 4, 5, 6}));
  const Tensor &out = t.val(t.matmul(id, b));
  CHECK(out.data == std::vector<real>{3, 4, 5, 6});

  Var x = t.constant(Tensor({1, 1}, {2}));
  Var y = t.constant(Tensor({1, 1}, {3}));
  CHECK(t.val(t.matmul(x, y)).data[0] == 6.0);

  CHECK_THROWS_AS(t.matmul(id, t.constant(Tensor::zeros({3, 2}))), UsageError);
}

TEST_CASE("matmul gradients, three shapes") {
  Rng rng(7);
  for (auto [m, k, n] : {std::tuple{3, 4, 2}, {1, 5, 5}, {6, 2, 3}}) {
    std::vector<Tensor> params = {random_tensor({m, k}, rng),
                                  random_tensor({k, n}, rng)};
    double err = check_op_gradients(
        [](Tape &t, const std::vector<Var> &v) { return t.matmul(v[0], v[1]); },
        params, 11);
    CHECK(err < 1e-6);  // tightened per the matmul contract
  }
}

TEST_CASE("matmul_nt gradients") {
  Rng rng(8);
  for (auto [m, k, n] : {std::tuple{3, 4, 2}, {1, 3, 4}, {5, 2, 5}}) {
    std::vector<Tensor> params = {random_tensor({m, k}, rng),
                                  random_tensor({n, k}, rng)};
    check_op_gradients(
        [](Tape &t, const std::vector<Var> &v) {
          return t.matmul_nt(v[0], v[1]);
        },
        params, 12);
  }
}

TEST_CASE("elementwise op gradients, three shapes") {
  Rng rng(9);
  for (auto shape : {std::vector<int>{3, 4}, {1, 7}, {5, 2}}) {
    std::vector<Tensor> two = {random_tensor(shape, rng),
                               random_tensor(shape, rng)};
    check_op_gradients(
        [](Tape &t, const std::vector<Var> &v) { return t.add(v[0], v[1]); },
        two, 21);
    check_op_gradients(
        [](Tape &t, const std::vector<Var> &v) { return t.sub(v[0], v[1]); },
        two, 22);
    check_op_gradients(
        [](Tape &t, const std::vector<Var> &v) { return t.mul(v[0], v[1]); },
        two, 23);
    std::vector<Tensor> one = {random_tensor(shape, rng)};
    check_op_gradients(
        [](Tape &t, const std::vector<Var> &v) {
          return t.scale_add(v[0], -1.5, 0.25);
        },
        one, 24);
    check_op_gradients(
        [](Tape &t, const std::vector<Var> &v) { return t.tanh(v[0]); }, one,
        25);
    check_op_gradients(
        [](Tape &t, const std::vector<Var> &v) { return t.sigmoid(v[0]); },
        one, 26);
  }
}

TEST_CASE("relu gradient away from the kink") {
  Rng rng(10);
  for (auto shape : {std::vector<int>{3, 4}, {2, 2}, {1, 9}}) {
    Tensor x = random_tensor(shape, rng);
    // keep samples > 10*step away from zero so central differences are exact
    for (real &v : x.data) v += (v >= 0 ? 1 : -1) * 1e-3;
    check_op_gradients(
        [](Tape &t, const std::vector<Var> &v) { return t.relu(v[0]); }, {x},
        27);
  }
}

TEST_CASE("structural op gradients") {
  Rng rng(11);
  check_op_gradients(
      [](Tape &t, const std::vector<Var> &v) {
        return t.add_row(v[0], v[1]);
      },
      {random_tensor({4, 3}, rng), random_tensor({3}, rng)}, 31);
  check_op_gradients(
      [](Tape &t, const std::vector<Var> &v) {
        return t.concat_cols(v[0], v[1]);
      },
      {random_tensor({3, 2}, rng), random_tensor({3, 4}, rng)}, 32);
  check_op_gradients(
      [](Tape &t, const std::vector<Var> &v) {
        return t.slice_cols(v[0], 1, 3);
      },
      {random_tensor({4, 5}, rng)}, 33);
  check_op_gradients(
      [](Tape &t, const std::vector<Var> &v) {
        return t.stack_rows({t.slice_cols(v[0], 0, 4),
                             t.slice_cols(v[1], 0, 4)});
      },
      {random_tensor({1, 4}, rng), random_tensor({1, 4}, rng)}, 34);
  check_op_gradients(
      [](Tape &t, const std::vector<Var> &v) {
        return t.gather_rows(v[0], {2, 0, 2, 1});
      },
      {random_tensor({3, 4}, rng)}, 35);
  check_op_gradients(
      [](Tape &t, const std::vector<Var> &v) {
        return t.pairwise_row_sum(v[0], v[1]);
      },
      {random_tensor({3, 4}, rng), random_tensor({2, 4}, rng)}, 36);
  check_op_gradients(
      [](Tape &t, const std::vector<Var> &v) {
        return t.rel_pos_bias(v[0], 1, 5, 3);
      },
      {random_tensor({2, 7}, rng)}, 37);
}

TEST_CASE("layer_norm values") {
  Tape t;
  Var gain3 = t.constant(Tensor({3}, {1, 1, 1}));
  Var bias3 = t.constant(Tensor({3}, {0, 0, 0}));
  // zero-variance input collapses onto the bias
  Var y = t.layer_norm(t.constant(Tensor({1, 3}, {1, 1, 1})), gain3, bias3,
                       1e-5);
  for (real v : t.val(y).data) CHECK(v == doctest::Approx(0.0));

  // mean 0, population variance 1: identity in the eps->0 limit
  Var gain2 = t.constant(Tensor({2}, {1, 1}));
  Var bias2 = t.constant(Tensor({2}, {0, 0}));
  Var y2 = t.layer_norm(t.constant(Tensor({1, 2}, {1, -1})), gain2, bias2,
                        1e-12);
  CHECK(t.val(y2).data[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(t.val(y2).data[1] == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("layer_norm gradients, three shapes") {
  Rng rng(12);
  for (int d : {8, 3, 5}) {
    std::vector<Tensor> params = {random_tensor({2, d}, rng),
                                  random_tensor({d}, rng, 0.5, 1.5),
                                  random_tensor({d}, rng)};
    check_op_gradients(
        [](Tape &t, const std::vector<Var> &v) {
          return t.layer_norm(v[0], v[1], v[2], 1e-5);
        },
        params, 41);
  }
}

TEST_CASE("softmax values") {
  Tape t;
  const Tensor &y = t.val(t.softmax_rows(t.constant(Tensor({1, 2}, {0, 0}))));
  CHECK(y.data[0] == 0.5);
  CHECK(y.data[1] == 0.5);

  // stability: huge logits must not overflow
  const Tensor &y2 =
      t.val(t.softmax_rows(t.constant(Tensor({1, 2}, {1000, 0}))));
  CHECK(y2.data[0] == doctest::Approx(1.0));
  CHECK(y2.data[1] < 1e-300);
  CHECK(y2.all_finite());
}

TEST_CASE("softmax is a probability vector") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    Tape t;
    Tensor x = random_tensor({3, 11}, rng, -30, 30);
    const Tensor &y = t.val(t.softmax_rows(t.constant(x)));
    for (int i = 0; i < 3; ++i) {
      real sum = 0;
      for (int j = 0; j < 11; ++j) {
        CHECK(y.at(i, j) >= 0);
        sum += y.at(i, j);
      }
      CHECK(std::fabs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("softmax and log_softmax gradients") {
  Rng rng(14);
  for (int d : {10, 4, 7}) {
    std::vector<Tensor> params = {random_tensor({2, d}, rng, -2, 2)};
    double err = check_op_gradients(
        [](Tape &t, const std::vector<Var> &v) {
          return t.softmax_rows(v[0]);
        },
        params, 51);
    CHECK(err < 1e-6);
    check_op_gradients(
        [](Tape &t, const std::vector<Var> &v) {
          return t.log_softmax_rows(v[0]);
        },
        params, 52);
  }
}

TEST_CASE("backward: sum gives all-ones") {
  Tape t;
  Var x = t.param(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  t.backward(t.sum(x));
  for (real g : t.grad(x).data) CHECK(g == 1.0);
}

TEST_CASE("backward: x*x gives 2x") {
  Tape t;
  Var x = t.param(Tensor::scalar(3.5));
  t.backward(t.mul(x, x));
  CHECK(t.grad(x).data[0] == 7.0);
}

TEST_CASE("backward usage contract") {
  Tape t;
  Var x = t.param(Tensor({2, 2}, {1, 2, 3, 4}));
  Var s = t.sum(x);
  CHECK_THROWS_AS(t.backward(x), UsageError);  // non-scalar root
  t.backward(s);
  CHECK_THROWS_AS(t.backward(s), UsageError);  // double backward

  Tape frozen(false);
  Var c = frozen.constant(Tensor::scalar(1));
  CHECK_THROWS_AS(frozen.backward(c), UsageError);
}

TEST_CASE("gradient accumulates over shared subexpressions") {
  Tape t;
  Var x = t.param(Tensor::scalar(2.0));
  Var y = t.add(t.mul(x, x), x);  // x^2 + x
  t.backward(y);
  CHECK(t.grad(x).data[0] == 5.0);
}

TEST_CASE("non-finite op output raises in checked builds") {
#ifdef CMM_FINITE_CHECKS
  Tape t;
  Var big = t.constant(Tensor({1, 2}, {1e300, 1e300}));
  CHECK_THROWS_AS(t.mul(big, big), NumericError);
#endif
}

TEST_CASE("determinism: identical graph evaluates bit-identically") {
  auto run = [] {
    Rng rng(99);
    Tape t;
    Var a = t.param(random_tensor({8, 8}, rng));
    Var b = t.param(random_tensor({8, 8}, rng));
    Var z = t.log_softmax_rows(t.tanh(t.matmul(a, b)));
    Var loss = t.sum(z);
    t.backward(loss);
    std::vector<real> out = t.val(z).data;
    const auto &g = t.grad(a).data;
    out.insert(out.end(), g.begin(), g.end());
    return out;
  };
  auto r1 = run(), r2 = run();
  REQUIRE(r1.size() == r2.size());
  CHECK(std::memcmp(r1.data(), r2.data(), r1.size() * sizeof(real)) == 0);
}

TEST_CASE("rng distributions are sane and serializable") {
  Rng rng(123);
  auto st = rng.state();
  double first = rng.uniform();
  rng.set_state(st);
  CHECK(rng.uniform() == first);

  // uniform_int covers its range
  Rng r2(5);
  std::vector<int> seen(7, 0);
  for (int i = 0; i < 7000; ++i) seen[r2.uniform_int(7)]++;
  for (int c : seen) CHECK(c > 700);

  // sample_without_replacement excludes and never repeats
  Rng r3(6);
  for (int trial = 0; trial < 100; ++trial) {
    auto s = r3.sample_without_replacement(10, 4, 3);
    std::vector<bool> used(10, false);
    for (int v : s) {
      CHECK(v != 3);
      CHECK(!used[v]);
      used[v] = true;
    }
  }
}
