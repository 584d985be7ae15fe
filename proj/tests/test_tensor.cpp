#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sasr/grad_check.hpp"
#include "sasr/rng.hpp"
#include "sasr/tape.hpp"

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

using namespace sasr;

namespace {

Tensor random_param(Shape shape, uint64_t seed, Scalar lo = -1.0, Scalar hi = 1.0) {
  Rng rng(seed);
  Tensor t = Tensor::zeros(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.values()(i) = rng.uniform(lo, hi);
  t.set_requires_grad(true);
  return t;
}

bool message_mentions(const std::exception& e, const std::string& needle) {
  return std::string(e.what()).find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("matmul: identity and annihilator cases") {
  Tape tape;
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor r = matmul(tape, eye, m);
  CHECK(r(0, 0) == 1.0);
  CHECK(r(0, 1) == 2.0);
  CHECK(r(1, 0) == 3.0);
  CHECK(r(1, 1) == 4.0);

  Tensor a = Tensor::from({2, 2}, {1, 0, 0, 0});
  Tensor b = Tensor::from({2, 1}, {0, 5});
  Tensor z = matmul(tape, a, b);
  CHECK(z(0, 0) == 0.0);
  CHECK(z(1, 0) == 0.0);
}

TEST_CASE("matmul: mismatched shapes raise an error naming both") {
  Tape tape;
  Tensor a = Tensor::zeros({3, 4});
  Tensor b = Tensor::zeros({5, 2});
  try {
    matmul(tape, a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(message_mentions(e, "[3x4]"));
    CHECK(message_mentions(e, "[5x2]"));
  }
}

TEST_CASE("matmul: gradient of sum(output) matches finite differences") {
  Tensor a = random_param({3, 4}, 11);
  Tensor b = random_param({4, 2}, 12);
  std::vector<GradCheckParam> params{{"a", a}, {"b", b}};
  auto f = [&](Tape& t) { return sum_all(t, matmul(t, a, b)); };
  auto report = grad_check(f, params, 1e-5, 60, 99);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("softmax_rows: symmetry, hand-computed value, shift invariance") {
  Tape tape;
  Tensor sym = softmax_rows(tape, Tensor::from({1, 2}, {0, 0}));
  CHECK(sym(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(sym(0, 1) == doctest::Approx(0.5).epsilon(1e-12));

  Tensor hand = softmax_rows(tape, Tensor::from({1, 2}, {1, 0}));
  CHECK(std::abs(hand(0, 0) - 0.73106) < 1e-5);
  CHECK(std::abs(hand(0, 1) - 0.26894) < 1e-5);

  Tensor big = softmax_rows(tape, Tensor::from({1, 2}, {1000, 1000}));
  CHECK(big(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(big.all_finite());
}

TEST_CASE("softmax_rows: every row sums to 1 over fuzzed shapes") {
  Rng rng(7);
  for (int it = 0; it < 300; ++it) {
    Index r = 1 + static_cast<Index>(rng.below(64));
    Index c = 1 + static_cast<Index>(rng.below(64));
    Tensor x = Tensor::zeros({r, c});
    for (Index i = 0; i < x.size(); ++i) x.values()(i) = rng.uniform(-50.0, 50.0);
    Tape tape;
    Tensor y = softmax_rows(tape, x);
    for (Index i = 0; i < r; ++i) {
      Scalar s = y.values().segment(i * c, c).sum();
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("linear: zero weights give bias rows; identity weights pass through") {
  Tape tape;
  Tensor x = Tensor::from({2, 2}, {3, -1, 7, 2});
  Tensor w0 = Tensor::zeros({2, 2});
  Tensor bias = Tensor::from({2}, {1, 2});
  Tensor y = linear(tape, x, w0, bias);
  for (Index i = 0; i < 2; ++i) {
    CHECK(y(i, 0) == 1.0);
    CHECK(y(i, 1) == 2.0);
  }

  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor b0 = Tensor::zeros({2});
  Tensor id = linear(tape, x, eye, b0);
  for (Index i = 0; i < x.size(); ++i) CHECK(id.values()(i) == x.values()(i));
}

TEST_CASE("linear: gradients of input, weight, and bias match finite differences") {
  Tensor x = random_param({3, 5}, 21);
  Tensor w = random_param({5, 4}, 22);
  Tensor b = random_param({4}, 23);
  std::vector<GradCheckParam> params{{"x", x}, {"w", w}, {"b", b}};
  auto f = [&](Tape& t) { return sum_all(t, tanh(t, linear(t, x, w, b))); };
  auto report = grad_check(f, params, 1e-5, 80, 99);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("linear: broadcasts over leading dims and rejects mismatch") {
  Tape tape;
  Tensor x3 = Tensor::zeros({2, 3, 4});
  Tensor w = Tensor::zeros({4, 6});
  Tensor b = Tensor::zeros({6});
  Tensor y = linear(tape, x3, w, b);
  CHECK(y.shape() == Shape{2, 3, 6});
  Tensor wbad = Tensor::zeros({5, 6});
  CHECK_THROWS_AS(linear(tape, x3, wbad, b), DimensionError);
}

TEST_CASE("tanh and sigmoid at zero") {
  Tape tape;
  Tensor z = Tensor::zeros({3});
  CHECK(tanh(tape, z)(0) == 0.0);
  CHECK(sigmoid(tape, z)(0) == 0.5);
}

TEST_CASE("concat then split along the last axis is the identity") {
  Tape tape;
  Tensor a = Tensor::from({1, 1}, {1});
  Tensor b = Tensor::from({1, 1}, {2});
  Tensor cat = concat_last_axis(tape, a, b);
  CHECK(cat.shape() == Shape{1, 2});
  CHECK(cat(0, 0) == 1.0);
  CHECK(cat(0, 1) == 2.0);
  auto [l, r] = split_last_axis(tape, cat, 1);
  CHECK(l(0, 0) == 1.0);
  CHECK(r(0, 0) == 2.0);

  Tensor x = random_param({3, 5}, 31).set_requires_grad(false);
  for (Index boundary = 1; boundary < 5; ++boundary) {
    Tape t2;
    auto [u, v] = split_last_axis(t2, x, boundary);
    Tensor back = concat_last_axis(t2, u, v);
    REQUIRE(back.shape() == x.shape());
    for (Index i = 0; i < x.size(); ++i) CHECK(back.values()(i) == x.values()(i));
  }
}

TEST_CASE("mean_axis: axis 0, axis 1, and rank-1 mean") {
  Tape tape;
  Tensor m = Tensor::from({2, 2}, {2, 4, 6, 8});
  Tensor col = mean_axis(tape, m, 0);
  CHECK(col.shape() == Shape{2});
  CHECK(col(0) == 4.0);
  CHECK(col(1) == 6.0);
  Tensor row = mean_axis(tape, m, 1);
  CHECK(row(0) == 3.0);
  CHECK(row(1) == 7.0);
  Tensor v = mean_axis(tape, Tensor::from({4}, {1, 2, 3, 6}), 0);
  CHECK(v.value() == 3.0);
}

TEST_CASE("backward: sum gives unit gradients; sum of squares gives 2x") {
  {
    Tensor x = Tensor::from({3}, {5, -2, 9}).set_requires_grad(true);
    Tape tape;
    Tensor loss = sum_all(tape, x);
    tape.backward(loss);
    for (Index i = 0; i < 3; ++i) CHECK(x.grad()(i) == 1.0);
  }
  {
    Tensor x = Tensor::from({2}, {1, 2}).set_requires_grad(true);
    Tape tape;
    Tensor loss = sum_all(tape, mul(tape, x, x));
    tape.backward(loss);
    CHECK(x.grad()(0) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(x.grad()(1) == doctest::Approx(4.0).epsilon(1e-14));
  }
}

TEST_CASE("backward: rejects a non-scalar loss and double invocation") {
  Tensor x = Tensor::from({2}, {1, 2}).set_requires_grad(true);
  Tape tape;
  Tensor y = mul(tape, x, x);
  CHECK_THROWS_AS(tape.backward(y), ContractError);

  Tensor loss = sum_all(tape, y);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), ContractError);
  CHECK_THROWS_AS(sum_all(tape, x), ContractError);
  tape.clear();
  Tensor loss2 = sum_all(tape, x);
  tape.backward(loss2);
}

TEST_CASE("backward: a loss never recorded on the tape is rejected") {
  Tape tape;
  Tensor constant = Tensor::scalar(4.0);
  CHECK_THROWS_AS(tape.backward(constant), ContractError);
}

TEST_CASE("gradients accumulate additively until zero_grad") {
  Tensor x = Tensor::from({2}, {1, 2}).set_requires_grad(true);
  for (int pass = 0; pass < 2; ++pass) {
    Tape tape;
    Tensor loss = sum_all(tape, x);
    tape.backward(loss);
  }
  CHECK(x.grad()(0) == 2.0);
  x.zero_grad();
  CHECK(x.grad()(0) == 0.0);
}

TEST_CASE("backward is linear in the loss") {
  const Scalar ca = 0.7, cb = -1.3;
  Tensor x = random_param({3, 3}, 41);

  auto l1 = [&](Tape& t) { return sum_all(t, mul(t, x, x)); };
  auto l2 = [&](Tape& t) { return sum_all(t, tanh(t, x)); };

  x.zero_grad();
  {
    Tape t;
    t.backward(l1(t));
  }
  Array g1 = x.grad();
  x.zero_grad();
  {
    Tape t;
    t.backward(l2(t));
  }
  Array g2 = x.grad();
  x.zero_grad();
  {
    Tape t;
    Tensor combined = add(t, scale(t, l1(t), ca), scale(t, l2(t), cb));
    t.backward(combined);
  }
  for (Index i = 0; i < x.size(); ++i) CHECK(std::abs(x.grad()(i) - (ca * g1(i) + cb * g2(i))) <= 1e-10);
}

TEST_CASE("grad_check: quadratic at x=3") {
  Tensor x = Tensor::from({1}, {3}).set_requires_grad(true);
  std::vector<GradCheckParam> params{{"x", x}};
  auto f = [&](Tape& t) { return sum_all(t, mul(t, x, x)); };
  auto report = grad_check(f, params, 1e-5, 10, 5);
  CHECK(report.max_rel_error < 1e-7);
}

TEST_CASE("grad_check: softmax cross entropy on 4 logits") {
  Tensor x = Tensor::from({4}, {0.3, -1.2, 2.0, 0.1}).set_requires_grad(true);
  std::vector<GradCheckParam> params{{"logits", x}};
  std::vector<Index> target{2};
  auto f = [&](Tape& t) { return cross_entropy_rows(t, x, target); };
  auto report = grad_check(f, params, 1e-5, 20, 5);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("grad_check: composite graph covering gather/slice/stack ops") {
  Tensor table = random_param({5, 3}, 51);
  Tensor m = random_param({4, 6}, 52);
  Tensor w = random_param({3, 2}, 53);
  std::vector<uint16_t> ids{3, 0, 3, 1};
  std::vector<GradCheckParam> params{{"table", table}, {"m", m}, {"w", w}};
  auto f = [&](Tape& t) {
    Tensor g = embed(t, table, ids);                       // 4x3
    Tensor s = slice_rows(t, m, 1, 2);                     // 2x6
    auto [sl, sr] = split_last_axis(t, s, 3);              // 2x3, 2x3
    Tensor stack = concat_rows(t, {g, sl, sr});            // 8x3
    Tensor y = tanh(t, linear(t, stack, w));               // 8x2
    Tensor tr = transpose(t, y);                           // 2x8
    Tensor c0 = chip(t, tr, 0);                            // 8
    Tensor r = reshape(t, c0, {2, 4});                     // 2x4
    Tensor mean = mean_axis(t, r, 1);                      // 2
    Tensor weights = softmax_rows(t, mean);                // 2
    Tensor joined = concat_last_axis(t, weights, mean);    // 4
    return scale(t, sum_all(t, mul(t, joined, joined)), 0.5);
  };
  auto report = grad_check(f, params, 1e-5, 120, 77);
  CAPTURE(report.worst_param);
  CAPTURE(report.worst_coord);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("grad_check: losses with integer targets") {
  Tensor logits = random_param({6, 4}, 61);
  Tensor blogits = random_param({2, 5}, 62);
  Tensor btargets = Tensor::from({2, 5}, {1, 0, 1, 1, 0, 0, 0, 1, 0, 1});
  std::vector<Index> targets{0, 3, 1, 1, 2, 0};
  std::vector<GradCheckParam> params{{"ce_logits", logits}, {"bce_logits", blogits}};
  auto f = [&](Tape& t) {
    Tensor ce = cross_entropy_rows(t, logits, targets);
    Tensor bce = bce_with_logits_mean(t, blogits, btargets);
    return add(t, ce, bce);
  };
  auto report = grad_check(f, params, 1e-5, 68, 13);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("cross entropy on uniform logits equals log of the class count") {
  Tape tape;
  Tensor logits = Tensor::zeros({3, 4});
  std::vector<Index> targets{0, 1, 3};
  Tensor loss = cross_entropy_rows(tape, logits, targets);
  CHECK(std::abs(loss.value() - std::log(4.0)) <= 1e-12);
}

TEST_CASE("binary cross entropy with zero logits equals log 2") {
  Tape tape;
  Tensor logits = Tensor::zeros({6});
  Tensor targets = Tensor::from({6}, {1, 0, 1, 0, 0, 1});
  Tensor loss = bce_with_logits_mean(tape, logits, targets);
  CHECK(std::abs(loss.value() - std::log(2.0)) <= 1e-12);
}

TEST_CASE("embed: rejects ids outside the table") {
  Tape tape;
  Tensor table = Tensor::zeros({3, 2});
  std::vector<uint16_t> bad{5};
  CHECK_THROWS_AS(embed(tape, table, bad), ContractError);
}

TEST_CASE("determinism: identical inputs give bit-identical values and grads") {
  auto run = [](Array& values_out, Array& grad_out) {
    Tensor x = random_param({4, 4}, 71);
    Tensor w = random_param({4, 3}, 72);
    Tape tape;
    Tensor y = softmax_rows(tape, matmul(tape, tanh(tape, x), w));
    Tensor loss = sum_all(tape, mul(tape, y, y));
    tape.backward(loss);
    values_out = y.values();
    grad_out = x.grad();
  };
  Array v1, g1, v2, g2;
  run(v1, g1);
  run(v2, g2);
  REQUIRE(v1.size() == v2.size());
  CHECK(std::memcmp(v1.data(), v2.data(), sizeof(Scalar) * v1.size()) == 0);
  CHECK(std::memcmp(g1.data(), g2.data(), sizeof(Scalar) * g1.size()) == 0);
}

TEST_CASE("eval mode records nothing") {
  Tensor x = random_param({2, 2}, 81);
  Tape tape;
  tape.grad_enabled = false;
  Tensor y = matmul(tape, x, x);
  CHECK(tape.op_count() == 0);
  CHECK_FALSE(y.requires_grad());
}
