#include <stdexcept>

#include "doctest.h"
#include "msct/tensor.hpp"

using msct::Shape;
using msct::Tensor;

TEST_CASE("shape helpers") {
  CHECK(msct::numel_of({2, 3, 4}) == 24);
  CHECK(msct::numel_of({}) == 1);  // rank-0 scalar
  CHECK(msct::shape_to_string({2, 3}) == "[2, 3]");
  CHECK(msct::row_major_strides({2, 3, 4}) == std::vector<std::int64_t>{12, 4, 1});
}

TEST_CASE("construction enforces numel match") {
  CHECK_NOTHROW(Tensor({2, 2}, {1, 2, 3, 4}));
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({0, 2}, {}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({-1}, {1.0}), std::invalid_argument);
}

TEST_CASE("factories") {
  auto z = Tensor::zeros({2, 3});
  CHECK(z.numel() == 6);
  for (double v : z.data()) CHECK(v == 0.0);

  auto o = Tensor::ones({4});
  for (double v : o.data()) CHECK(v == 1.0);

  auto f = Tensor::full({2}, 2.5);
  CHECK(f.at({0}) == 2.5);

  auto s = Tensor::scalar(7.0);
  CHECK(s.ndim() == 0);
  CHECK(s.numel() == 1);
  CHECK(s.scalar_value() == 7.0);
}

TEST_CASE("randn is deterministic for a given seed") {
  std::mt19937_64 rng1(42), rng2(42), rng3(43);
  auto a = Tensor::randn({3, 3}, rng1);
  auto b = Tensor::randn({3, 3}, rng2);
  auto c = Tensor::randn({3, 3}, rng3);
  for (std::int64_t i = 0; i < 9; ++i) CHECK(a.data()[i] == b.data()[i]);
  bool any_diff = false;
  for (std::int64_t i = 0; i < 9; ++i) any_diff |= (a.data()[i] != c.data()[i]);
  CHECK(any_diff);
}

TEST_CASE("indexing") {
  Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
  CHECK(t.at({0, 0}) == 0.0);
  CHECK(t.at({1, 2}) == 5.0);
  CHECK(t.size(0) == 2);
  CHECK(t.size(1) == 3);
  CHECK_THROWS_AS(t.at({2, 0}), std::out_of_range);
  CHECK_THROWS_AS(t.at({0}), std::invalid_argument);
}

TEST_CASE("copies share storage, clone does not") {
  Tensor t({2}, {1, 2});
  Tensor alias = t;
  alias.mutable_values()[0] = 9.0;
  CHECK(t.at({0}) == 9.0);

  Tensor deep = t.clone();
  deep.mutable_values()[0] = -1.0;
  CHECK(t.at({0}) == 9.0);
  CHECK_FALSE(deep.requires_grad());
}

TEST_CASE("grad slot lifecycle") {
  Tensor t({2}, {1, 2});
  t.set_requires_grad();
  CHECK(t.requires_grad());
  CHECK_FALSE(t.has_grad());

  std::vector<double> g{0.5, 0.25};
  t.accumulate_grad(g);
  REQUIRE(t.has_grad());
  auto grad = t.grad();
  CHECK(grad.shape() == t.shape());  // grad shape matches parameter shape
  CHECK(grad.at({0}) == 0.5);

  t.accumulate_grad(g);  // accumulation is additive
  CHECK(t.grad().at({0}) == 1.0);

  t.zero_grad();
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("debug finite check honours the runtime toggle") {
  const bool was = msct::debug_checks_enabled();
  Tensor bad({2}, {1.0, std::numeric_limits<double>::quiet_NaN()});

  msct::set_debug_checks(true);
  CHECK_THROWS_AS(msct::debug_check_finite(bad, "test"), std::invalid_argument);

  msct::set_debug_checks(false);
  CHECK_NOTHROW(msct::debug_check_finite(bad, "test"));

  msct::set_debug_checks(was);
}
