#include <cmath>

#include "doctest.h"
#include "djscc/autodiff.hpp"
#include "djscc/error.hpp"
#include "djscc/ops.hpp"
#include "djscc/rng.hpp"

using namespace djscc;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double sd = 1.0) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  rng.fill_normal(t.data(), sd);
  return t;
}

Tensor param(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

}  // namespace

TEST_CASE("tensor construction and invariants") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK_FALSE(t.grad().has_value());
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), ShapeError);
  CHECK(Tensor::scalar(3.5).item() == 3.5);
  CHECK(Tensor::scalar(1.0).rank() == 0);

  t.accumulate_grad(std::vector<double>(6, 1.0));
  t.accumulate_grad(std::vector<double>(6, 0.5));
  REQUIRE(t.grad().has_value());
  CHECK(t.grad()->size() == 6);
  CHECK((*t.grad())[4] == 1.5);
  CHECK_THROWS(t.accumulate_grad(std::vector<double>(5, 0.0)));
}

TEST_CASE("add, sub, mul forward and broadcast") {
  Tape tape;
  Var a = tape.constant(Tensor::vec({1, 2}));
  Var b = tape.constant(Tensor::vec({3, 4}));
  CHECK(add(a, b).value().values() == std::vector<double>{4, 6});
  CHECK(sub(a, b).value().values() == std::vector<double>{-2, -2});

  Tensor x = random_tensor({2, 3}, 1);
  Var xv = tape.constant(x);
  CHECK(mul(xv, tape.constant(Tensor::full({2, 3}, 1.0))).value().values() == x.values());

  Var m = tape.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var row = tape.constant(Tensor::vec({10, 20, 30}));
  CHECK(add(m, row).value().values() == std::vector<double>{11, 22, 33, 14, 25, 36});
  CHECK(add(row, m).value().shape() == Shape{2, 3});

  Var bad = tape.constant(Tensor::vec({1, 2}));
  try {
    add(m, bad);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[2]") != std::string::npos);
  }
}

TEST_CASE("backward of add passes the upstream gradient through") {
  Tensor a = param(Tensor::vec({1, 2, 3}));
  Tensor b = param(Tensor::vec({4, 5, 6}));
  Tape tape;
  Var s = add(tape.parameter(a), tape.parameter(b));
  // sum(3 * s) makes the upstream gradient 3 everywhere.
  tape.backward(sum(scale(s, 3.0)));
  CHECK(*a.grad() == std::vector<double>{3, 3, 3});
  CHECK(*b.grad() == std::vector<double>{3, 3, 3});
}

TEST_CASE("broadcast backward reduces over the repeated dims") {
  Tensor m = param(random_tensor({4, 3}, 2));
  Tensor r = param(random_tensor({3}, 3));
  Tape tape;
  tape.backward(sum(mul(tape.parameter(m), tape.parameter(r))));
  for (std::size_t j = 0; j < 3; ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < 4; ++i) col += m[i * 3 + j];
    CHECK((*r.grad())[j] == doctest::Approx(col).epsilon(1e-14));
  }
  for (std::size_t i = 0; i < 12; ++i) CHECK((*m.grad())[i] == r[i % 3]);
}

TEST_CASE("reduce_mean") {
  Tape tape;
  CHECK(reduce_mean(tape.constant(Tensor::vec({2, 4}))).value().item() == 3.0);
  CHECK(reduce_mean(tape.constant(Tensor::zeros({5}))).value().item() == 0.0);

  Tensor x = param(Tensor::vec({1, 7, -2, 4}));
  Tape t2;
  t2.backward(reduce_mean(t2.parameter(x)));
  CHECK(*x.grad() == std::vector<double>{0.25, 0.25, 0.25, 0.25});
}

TEST_CASE("backward rules and errors") {
  SUBCASE("mean of squares") {
    Tensor x = param(Tensor::vec({1, -2}));
    Tape tape;
    tape.backward(reduce_mean(square(tape.parameter(x))));
    CHECK(*x.grad() == std::vector<double>{1, -2});
  }
  SUBCASE("constant loss gives zero gradients") {
    Tensor x = param(Tensor::vec({1, 2, 3}));
    Tape tape;
    tape.parameter(x);
    auto grads = tape.backward(tape.constant(Tensor::scalar(4.0)));
    REQUIRE(x.grad().has_value());
    CHECK(*x.grad() == std::vector<double>{0, 0, 0});
    CHECK(grads.at(&x) == std::vector<double>{0, 0, 0});
  }
  SUBCASE("non-scalar loss") {
    Tensor x = param(Tensor::vec({1, 2}));
    Tape tape;
    CHECK_THROWS_AS(tape.backward(square(tape.parameter(x))), ShapeError);
  }
  SUBCASE("detached loss") {
    Tensor x = param(Tensor::vec({1, 2}));
    Tape a, b;
    Var loss = sum(a.parameter(x));
    CHECK_THROWS(b.backward(loss));
    a.clear();
    CHECK(a.size() == 0);
    CHECK_THROWS(a.backward(loss));
  }
  SUBCASE("tensors without requires_grad are constants") {
    Tensor x = Tensor::vec({1, 2});
    Tape tape;
    tape.backward(sum(square(tape.parameter(x))));
    CHECK_FALSE(x.grad().has_value());
  }
}

TEST_CASE("grad_check examples") {
  const Tensor x = random_tensor({6}, 4);
  CHECK(grad_check([](Tape&, Var v) { return reduce_mean(square(v)); }, x) < 1e-6);
  CHECK(grad_check([](Tape&, Var v) { return sum(v); }, x) < 1e-9);
}

TEST_CASE("every primitive passes grad_check on 10 seeds") {
  const std::vector<std::pair<const char*, ScalarFn>> cases = {
      {"add", [](Tape& t, Var v) { return sum(square(add(v, t.constant(Tensor::vec({0.3, -1, 2, 0.5, 1, -0.2}))))); }},
      {"sub", [](Tape& t, Var v) { return sum(square(sub(t.constant(Tensor::full({6}, 0.7)), v))); }},
      {"mul", [](Tape&, Var v) { return sum(mul(v, square(v))); }},
      {"scale", [](Tape&, Var v) { return sum(square(scale(v, -1.7))); }},
      {"add_scalar", [](Tape&, Var v) { return sum(square(add_scalar(v, 0.4))); }},
      {"sigmoid", [](Tape&, Var v) { return sum(square(sigmoid(v))); }},
      {"softplus", [](Tape&, Var v) { return sum(square(softplus(v))); }},
      {"reshape", [](Tape&, Var v) { return sum(mul(reshape(v, {2, 3}), reshape(square(v), {2, 3}))); }},
      {"mse", [](Tape& t, Var v) { return mse(v, t.constant(Tensor::full({6}, 0.1))); }},
  };
  for (const auto& [name, f] : cases) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const double err = grad_check(f, random_tensor({6}, 100 + seed));
      INFO(name << " seed " << seed);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("linearity of backward") {
  Tensor x = param(random_tensor({5}, 9));
  auto l1 = [](Var v) { return sum(square(sigmoid(v))); };
  auto l2 = [](Var v) { return reduce_mean(mul(v, square(v))); };
  const double alpha = 0.7, beta = -2.3;

  Tape t1;
  t1.backward(l1(t1.parameter(x)));
  const auto g1 = *x.grad();
  x.clear_grad();
  Tape t2;
  t2.backward(l2(t2.parameter(x)));
  const auto g2 = *x.grad();
  x.clear_grad();
  Tape t3;
  Var v = t3.parameter(x);
  t3.backward(add(scale(l1(v), alpha), scale(l2(v), beta)));
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs((*x.grad())[i] - (alpha * g1[i] + beta * g2[i])) < 1e-12);
}

TEST_CASE("softplus is finite for large inputs") {
  Tape tape;
  Var y = softplus(tape.constant(Tensor::vec({-800, 0, 800})));
  CHECK(y.value().all_finite());
  CHECK(y.value()[1] == doctest::Approx(std::log(2.0)));
  CHECK(y.value()[2] == 800.0);
}

TEST_CASE("determinism: same seed and ops give identical values and grads") {
  auto run = [] {
    Tensor x = param(random_tensor({8}, 42));
    Tape tape;
    Var loss = reduce_mean(square(sigmoid(scale(tape.parameter(x), 3.0))));
    tape.backward(loss);
    std::vector<double> out = *x.grad();
    out.push_back(loss.value().item());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("rng streams") {
  Rng a(123), b(123), c(124);
  std::vector<std::uint64_t> sa, sb, sc;
  for (int i = 0; i < 16; ++i) {
    sa.push_back(a.next_u64());
    sb.push_back(b.next_u64());
    sc.push_back(c.next_u64());
  }
  CHECK(sa == sb);
  CHECK(sa != sc);
  // xoshiro256** seeded through splitmix64: pinned values guard cross-platform stability.
  std::uint64_t state = 0;
  CHECK(splitmix64(state) == 0xe220a8397b1dcdafull);
  CHECK(splitmix64(state) == 0x6e789e6aa1b965f4ull);

  Rng s0 = Rng(5).split(0), s1 = Rng(5).split(1);
  CHECK(s0.next_u64() != s1.next_u64());

  Rng u(7);
  double mean = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double x = u.uniform();
    CHECK_FALSE((x < 0.0 || x >= 1.0));
    mean += x;
  }
  CHECK(mean / 100000 == doctest::Approx(0.5).epsilon(0.01));

  std::vector<int> counts(3, 0);
  for (int i = 0; i < 30000; ++i) ++counts[u.uniform_index(3)];
  for (int c3 : counts) CHECK(std::abs(c3 - 10000) < 400);

  std::vector<int> items{1, 2, 3, 4, 5, 6};
  Rng sh(3);
  sh.shuffle(items);
  std::vector<int> sorted = items;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{1, 2, 3, 4, 5, 6});
}
