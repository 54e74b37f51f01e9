#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tafnet/errors.hpp"
#include "tafnet/grad_check.hpp"
#include "tafnet/ops.hpp"
#include "tafnet/rng.hpp"

using namespace tafnet;

namespace {

Tensor4 randn(Shape4 s, Rng& rng, double scale = 1.0) {
  Tensor4 t(s);
  for (double& v : t.data) v = rng.normal(0.0, scale);
  return t;
}

}  // namespace

TEST_CASE("grad_check on sum(x^2): quadratic is exact") {
  ParamStore ps;
  Parameter& x = ps.create("x", Tensor4::from(Shape4{1, 2, 1, 1}, {1.0, 2.0}));
  auto f = [&](Tape* t) { return ops::sum_all(t, ops::mul(t, x.var, x.var)); };

  Tape tape;
  Var loss = f(&tape);
  tape.backward(loss);
  CHECK(x.grad().data[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(x.grad().data[1] == doctest::Approx(4.0).epsilon(1e-14));

  const auto res = grad_check(f, ps.all());
  CHECK(res.max_rel_err < 1e-9);
}

TEST_CASE("grad_check on conv -> relu -> sum chain") {
  Rng rng(21);
  ParamStore ps;
  Parameter& x = ps.create("x", randn(Shape4{1, 2, 6, 6}, rng));
  Parameter& w = ps.create("w", randn(Shape4{3, 2, 3, 3}, rng, 0.5));
  Parameter& b = ps.create("b", randn(Shape4{1, 3, 1, 1}, rng, 0.5));
  auto f = [&](Tape* t) {
    return ops::sum_all(t, ops::relu(t, ops::conv2d(t, x.var, w.var, b.var, 1, 1)));
  };
  const auto res = grad_check(f, ps.all());
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("conv2d analytic input-gradient vs finite differences, 10 seeds") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    ParamStore ps;
    Parameter& x = ps.create("x", randn(Shape4{2, 3, 8, 8}, rng));
    Parameter& w = ps.create("w", randn(Shape4{4, 3, 3, 3}, rng, 0.5));
    Parameter& b = ps.create("b", randn(Shape4{1, 4, 1, 1}, rng, 0.5));
    Var r = make_const(randn(Shape4{2, 4, 8, 8}, rng));
    auto f = [&](Tape* t) {
      return ops::sum_all(t, ops::mul(t, ops::conv2d(t, x.var, w.var, b.var, 1, 1), r));
    };
    const auto res = grad_check(f, ps.all());
    CHECK(res.max_rel_err < 1e-6);
  }
}

TEST_CASE("linear gradient vs finite differences, 10 seeds") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    ParamStore ps;
    Parameter& x = ps.create("x", randn(Shape4{3, 5, 1, 1}, rng));
    Parameter& w = ps.create("w", randn(Shape4{2, 5, 1, 1}, rng));
    Parameter& b = ps.create("b", randn(Shape4{1, 2, 1, 1}, rng));
    Var r = make_const(randn(Shape4{3, 2, 1, 1}, rng));
    auto f = [&](Tape* t) {
      return ops::sum_all(t, ops::mul(t, ops::linear(t, x.var, w.var, b.var), r));
    };
    CHECK(grad_check(f, ps.all()).max_rel_err < 1e-6);
  }
}

TEST_CASE("parameters with no influence keep an exactly zero gradient") {
  Rng rng(5);
  ParamStore ps;
  Parameter& x = ps.create("x", randn(Shape4{1, 2, 2, 2}, rng));
  Parameter& unused = ps.create("unused", randn(Shape4{1, 3, 1, 1}, rng));

  Tape tape;
  Var loss = ops::sum_all(&tape, x.var);
  ps.zero_grads();
  tape.backward(loss);

  for (double g : unused.grad().data) CHECK(g == 0.0);
  for (double g : x.grad().data) CHECK(g == 1.0);  // sum gradient is all ones
}

TEST_CASE("maxpool tie-break: all-equal window routes gradient to (0,0)") {
  Var x = make_var(Tensor4::from(Shape4{1, 1, 2, 2}, {7, 7, 7, 7}), true);
  Tape tape;
  Var y = ops::maxpool2d(&tape, x);
  tape.backward(ops::sum_all(&tape, y));
  CHECK(x.grad->data == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("maxpool tie-break is deterministic across repeated passes") {
  Rng rng(9);
  Tensor4 base = randn(Shape4{2, 3, 6, 6}, rng);
  base.data[7] = base.data[6];  // manufacture a tie
  std::vector<double> first;
  for (int run = 0; run < 3; ++run) {
    Var x = make_var(base, true);
    Tape tape;
    Var y = ops::maxpool2d(&tape, x);
    tape.backward(ops::sum_all(&tape, y));
    if (run == 0) {
      first = x.grad->data;
    } else {
      CHECK(x.grad->data == first);
    }
  }
}

TEST_CASE("relu subgradient at zero is zero") {
  Var x = make_var(Tensor4::from(Shape4{1, 3, 1, 1}, {-1.0, 0.0, 2.0}), true);
  Tape tape;
  Var y = ops::relu(&tape, x);
  tape.backward(ops::sum_all(&tape, y));
  CHECK(x.grad->data == std::vector<double>{0, 0, 1});
}

TEST_CASE("gradients accumulate across uses of the same value") {
  Var x = make_var(Tensor4::from(Shape4{1, 1, 1, 1}, {3.0}), true);
  Tape tape;
  Var y = ops::add(&tape, x, x);  // y = 2x
  tape.backward(ops::sum_all(&tape, y));
  CHECK(x.grad->data[0] == 2.0);
}

TEST_CASE("backward requires a tracked scalar") {
  Var x = make_var(Tensor4(Shape4{1, 1, 2, 2}, 1.0), true);
  Tape tape;
  Var y = ops::relu(&tape, x);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);

  Var untracked = make_const(Tensor4::scalar(1.0));
  CHECK_THROWS_AS(tape.backward(untracked), std::invalid_argument);
}

TEST_CASE("grad_check reports a non-finite loss with the parameter name") {
  ParamStore ps;
  Parameter& x = ps.create("fragile", Tensor4::from(Shape4{1, 1, 1, 1}, {1.0}));
  auto f = [&](Tape* t) {
    // NaN as soon as the probe moves the value off its initial point
    const double v = x.value().data[0];
    Tensor4 out = Tensor4::scalar(v == 1.0 ? 1.0 : std::nan(""));
    return make_var(std::move(out), t != nullptr);
  };
  try {
    grad_check(f, ps.all());
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("fragile") != std::string::npos);
  }
}

TEST_CASE("ParamStore rejects duplicate names and unknown lookups") {
  ParamStore ps;
  ps.create("a", Tensor4::scalar(1.0));
  CHECK_THROWS_AS(ps.create("a", Tensor4::scalar(2.0)), std::invalid_argument);
  CHECK_THROWS_AS(ps.at("missing"), std::invalid_argument);
  CHECK(ps.find("missing") == nullptr);
}
