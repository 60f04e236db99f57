// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "vlmq/errors.hpp"
#include "vlmq/quant.hpp"

using namespace vlmq;

TEST_CASE("fit_params on grid values") {
  const std::vector<double> v{0.0, 1.0, 2.0, 3.0};
  const QuantParams p = fit_params(v, 2);
  CHECK(p.scale == 1.0);
  CHECK(p.zero_point == 0);
}

TEST_CASE("fit_params degenerate negative constant") {
  const std::vector<double> v{-5.0, -5.0, -5.0};
  const QuantParams p = fit_params(v, 2);
  CHECK(p.scale == doctest::Approx(5.0 / 3.0).epsilon(1e-12));
  CHECK(p.zero_point == 3);
  const QuantDequantResult qd = quant_dequant(v, p);
  for (double d : qd.values) {
    CHECK(d == -5.0);
  }
}

TEST_CASE("fit_params all-zero row keeps a positive scale") {
  const std::vector<double> v{0.0, 0.0, 0.0};
  const QuantParams p = fit_params(v, 4);
  CHECK(p.scale > 0.0);
  CHECK(p.zero_point == 0);
  const QuantDequantResult qd = quant_dequant(v, p);
  for (double d : qd.values) {
    CHECK(d == 0.0);
  }
}

TEST_CASE("quant_dequant on the exact grid") {
  const QuantParams p{1.0, 0, 2};
  const std::vector<double> v{0.0, 1.0, 2.0, 3.0};
  const QuantDequantResult qd = quant_dequant(v, p);
  CHECK(qd.codes == std::vector<std::uint8_t>{0, 1, 2, 3});
  CHECK(qd.values == v);
}

TEST_CASE("out-of-range values clamp to the last code") {
  const QuantParams p{1.0, 0, 2};
  CHECK(quantize_value(10.0, p) == 3);
  CHECK(dequantize_code(3, p) == 3.0);
  CHECK(quantize_value(-10.0, p) == 0);
}

TEST_CASE("round trip stays within half a scale step") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> uni(-7.0, 11.0);
  std::vector<double> v(4096);
  for (double &x : v) {
    x = uni(rng);
  }
  for (int bits : {2, 3, 4, 8}) {
    const QuantParams p = fit_params(v, bits);
    const QuantDequantResult qd = quant_dequant(v, p);
    for (std::size_t i = 0; i < v.size(); ++i) {
      CHECK(std::fabs(v[i] - qd.values[i]) <= 0.5 * p.scale * (1.0 + 1e-12));
    }
  }
}

TEST_CASE("dequantized values are exact fixed points") {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> uni(-3.0, 3.0);
  std::vector<double> v(256);
  for (double &x : v) {
    x = uni(rng);
  }
  const QuantParams p = fit_params(v, 3);
  const QuantDequantResult once = quant_dequant(v, p);
  const QuantDequantResult twice = quant_dequant(once.values, p);
  CHECK(twice.values == once.values);
  CHECK(twice.codes == once.codes);
}

TEST_CASE("codes are monotone in the input value") {
  std::mt19937_64 rng(44);
  std::uniform_real_distribution<double> uni(-5.0, 5.0);
  std::vector<double> v(512);
  for (double &x : v) {
    x = uni(rng);
  }
  const QuantParams p = fit_params(v, 4);
  std::sort(v.begin(), v.end());
  std::uint8_t prev = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::uint8_t c = quantize_value(v[i], p);
    if (i > 0) {
      CHECK(c >= prev);
    }
    prev = c;
  }
}

TEST_CASE("half-to-even tie rule") {
  const QuantParams p{1.0, 0, 3};
  CHECK(quantize_value(0.5, p) == 0);
  CHECK(quantize_value(1.5, p) == 2);
  CHECK(quantize_value(2.5, p) == 2);
  CHECK(quantize_value(3.5, p) == 4);
}

TEST_CASE("row quantizer with group covering the row equals per-channel") {
  std::mt19937_64 rng(45);
  std::uniform_real_distribution<double> uni(-2.0, 2.0);
  std::vector<double> row(8);
  for (double &x : row) {
    x = uni(rng);
  }
  RowQuantizer grouped(row.size(), 3, static_cast<int>(row.size()));
  RowQuantizer channel(row.size(), 3, -1);
  grouped.begin_column(0, row);
  channel.begin_column(0, row);
  for (std::size_t i = 0; i < row.size(); ++i) {
    CHECK(grouped.quantize(i, row[i]) == channel.quantize(i, row[i]));
  }
  CHECK(grouped.num_groups() == 1);
  CHECK(channel.num_groups() == 1);
}

TEST_CASE("two groups fit independently") {
  const std::vector<double> row{0.0, 1.0, 10.0, 30.0};
  RowQuantizer rq(4, 2, 2);
  rq.begin_column(0, row);
  rq.begin_column(1, row);
  rq.begin_column(2, row);
  CHECK(rq.num_groups() == 2);
  const QuantParams lo = fit_params(std::vector<double>{0.0, 1.0}, 2);
  const QuantParams hi = fit_params(std::vector<double>{10.0, 30.0}, 2);
  CHECK(rq.group_params()[0].scale == lo.scale);
  CHECK(rq.group_params()[0].zero_point == lo.zero_point);
  CHECK(rq.group_params()[1].scale == hi.scale);
  CHECK(rq.group_params()[1].zero_point == hi.zero_point);
}

TEST_CASE("quantizing before the group head throws") {
  RowQuantizer rq(4, 2, 2);
  const std::vector<double> row{0.0, 1.0, 2.0, 3.0};
  rq.begin_column(0, row);
  CHECK_NOTHROW(rq.quantize(1, 1.0));
  CHECK_THROWS_AS(rq.quantize(2, 2.0), GroupParamsMissing);
}

TEST_CASE("fit_params rejects bad input") {
  CHECK_THROWS_AS(fit_params(std::vector<double>{}, 4), Error);
  CHECK_THROWS_AS(fit_params(std::vector<double>{1.0}, 1), Error);
  CHECK_THROWS_AS(fit_params(std::vector<double>{1.0}, 9), Error);
}
