#include <cmath>
#include <vector>

#include "bncl/fixedpoint.hpp"
#include "bncl/rng.hpp"
#include "doctest.h"

using namespace bncl;

TEST_CASE("calibrate uses max-abs over the symmetric range") {
  const std::vector<double> v{-1.0, 0.5, 1.0};
  const QParams p = calibrate(v, 8);
  CHECK(p.scale == doctest::Approx(1.0 / 127.0).epsilon(1e-15));
  CHECK(p.bits == 8);
}

TEST_CASE("calibrate of an all-zero tensor falls back to scale 1") {
  const std::vector<double> v{0.0, 0.0, 0.0};
  const QParams p = calibrate(v, 16);
  CHECK(p.scale == 1.0);
}

TEST_CASE("calibrate matches an independent max over random data") {
  Rng rng(11);
  std::vector<double> v(1000);
  for (double& x : v) x = rng.uniform(-3.0, 3.0);
  double max_abs = 0.0;  // independent oracle
  for (double x : v) max_abs = std::max(max_abs, std::fabs(x));
  const QParams p = calibrate(v, 8);
  CHECK(std::fabs(p.scale - max_abs / 127.0) < 1e-12);
}

TEST_CASE("calibrate rejects non-finite and empty input") {
  std::vector<double> v{1.0, std::nan("")};
  CHECK_THROWS_AS(calibrate(v, 8), Error);
  try {
    calibrate(v, 8);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::non_finite);
  }
  const std::vector<double> empty;
  CHECK_THROWS_AS(calibrate(empty, 8), Error);
}

TEST_CASE("quantize maps zero to code zero and rounds half to even") {
  const QParams p{0.25, 8};
  const std::vector<double> v{0.0, 0.25 * 5.5, -0.25 * 5.5, 0.25 * 6.5};
  const QTensor q = quantize(v, p);
  CHECK(q.data[0] == 0);
  CHECK(q.data[1] == 6);   // 5.5 rounds to even 6
  CHECK(q.data[2] == -6);
  CHECK(q.data[3] == 6);   // 6.5 rounds to even 6
}

TEST_CASE("quantize saturates symmetrically and never emits -2^(b-1)") {
  const QParams p{0.5, 8};
  const std::vector<double> v{1e9, -1e9};
  std::uint64_t sat = 0;
  const QTensor q = quantize(v, p, &sat);
  CHECK(q.data[0] == 127);
  CHECK(q.data[1] == -127);
  CHECK(sat == 2);
}

TEST_CASE("dequantize basics") {
  QTensor t;
  t.data = {0, 127};
  t.shape = {2};
  t.params = {1.0 / 127.0, 8};
  const std::vector<double> back = dequantize(t);
  CHECK(back[0] == 0.0);
  CHECK(back[1] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("round trip bound |dq(q(v)) - v| <= scale/2 over random tensors") {
  Rng rng(22);
  for (int bits : {8, 16, 32}) {
    const QParams p{0.013, bits};
    const double range = p.scale * static_cast<double>(qmax(bits));
    std::vector<double> v(100000);
    for (double& x : v) x = rng.uniform(-range, range);
    const QTensor q = quantize(v, p);
    const std::vector<double> back = dequantize(q);
    double worst = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i)
      worst = std::max(worst, std::fabs(back[i] - v[i]));
    CHECK(worst <= p.scale / 2.0 + 1e-12);
  }
}

TEST_CASE("quantize is monotone") {
  Rng rng(33);
  const QParams p{0.01, 16};
  for (int trial = 0; trial < 2000; ++trial) {
    double a = rng.uniform(-400.0, 400.0);
    double b = rng.uniform(-400.0, 400.0);
    if (a > b) std::swap(a, b);
    const QTensor q = quantize(std::vector<double>{a, b}, p);
    CHECK(q.data[0] <= q.data[1]);
  }
}

TEST_CASE("requant multiplier decomposition on exact powers of two") {
  const RequantMultiplier half = make_requant_multiplier(0.5);
  CHECK(half.mantissa == (1 << 30));
  CHECK(half.right_shift == 0);
  CHECK(requant_value(half) == 0.5);

  const RequantMultiplier quarter = make_requant_multiplier(0.25);
  CHECK(quarter.mantissa == (1 << 30));
  CHECK(quarter.right_shift == 1);
  CHECK(requant_value(quarter) == 0.25);
}

TEST_CASE("requant multiplier reconstructs arbitrary scales to 2^-30") {
  Rng rng(44);
  for (int trial = 0; trial < 1000; ++trial) {
    const double s =
        trial == 0 ? 0.3 : std::pow(10.0, rng.uniform(-9.0, 2.0));
    const RequantMultiplier m = make_requant_multiplier(s);
    CHECK(m.mantissa >= (1 << 30));
    CHECK(std::fabs(requant_value(m) - s) / s <= std::ldexp(1.0, -30));
  }
  CHECK_THROWS_AS(make_requant_multiplier(0.0), Error);
  CHECK_THROWS_AS(make_requant_multiplier(-1.0), Error);
}

TEST_CASE("requant_apply is exact round-to-nearest-even") {
  const RequantMultiplier half = make_requant_multiplier(0.5);
  CHECK(requant_apply(half, 10) == 5);
  CHECK(requant_apply(half, 11) == 6);   // 5.5 -> 6
  CHECK(requant_apply(half, 13) == 6);   // 6.5 -> 6
  CHECK(requant_apply(half, -11) == -6);
  // against a long-double oracle on random inputs
  Rng rng(55);
  for (int trial = 0; trial < 5000; ++trial) {
    const double s = std::pow(10.0, rng.uniform(-6.0, -0.01));
    const RequantMultiplier m = make_requant_multiplier(s);
    const auto acc = static_cast<std::int64_t>(rng.uniform_int(1u << 30)) -
                     (1 << 29);
    const long double exact =
        static_cast<long double>(m.mantissa) * acc /
        powl(2.0L, 31 + m.right_shift);
    const auto nearest = static_cast<std::int64_t>(llrintl(exact));
    // rne ties are the only spot llrintl could disagree; exclude them
    if (fabsl(exact - floorl(exact) - 0.5L) < 1e-12L) continue;
    CHECK(requant_apply(m, acc) == nearest);
  }
}

TEST_CASE("qlinear with zero weights and bias yields zero codes") {
  QTensor w = quantize(std::vector<double>(6, 0.0), {2, 3}, QParams{0.1, 8});
  QTensor a = quantize(std::vector<double>{1.0, -1.0, 0.5}, QParams{0.05, 8});
  QTensor b = quantize(std::vector<double>{0.0, 0.0}, QParams{0.1 * 0.05, 64});
  const QTensor out =
      qlinear_forward(w, a, b, make_requant_multiplier(0.5), 8);
  CHECK(out.data == std::vector<std::int64_t>{0, 0});
}

TEST_CASE("qlinear 1x1 exact case: 0.5 * (2*3 + 4) = 5") {
  QTensor w;
  w.data = {2};
  w.shape = {1, 1};
  w.params = {0.5, 8};
  QTensor a;
  a.data = {3};
  a.shape = {1};
  a.params = {0.5, 8};
  QTensor b;
  b.data = {4};
  b.shape = {1};
  b.params = {0.25, 64};
  const QTensor out =
      qlinear_forward(w, a, b, make_requant_multiplier(0.5), 8);
  CHECK(out.data == std::vector<std::int64_t>{5});
  CHECK(out.params.scale == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("qlinear matches the float reference within 3 output steps") {
  Rng rng(66);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 16, cols = 32;
    std::vector<double> wreal(rows * cols), areal(cols), breal(rows);
    for (double& x : wreal) x = rng.uniform(-1.0, 1.0);
    for (double& x : areal) x = rng.uniform(-2.0, 2.0);
    for (double& x : breal) x = rng.uniform(-0.5, 0.5);

    const QParams wp = calibrate(wreal, 16);
    const QParams ap = calibrate(areal, 16);
    const QTensor w = quantize(wreal, {rows, cols}, wp);
    const QTensor a = quantize(areal, ap);
    const double prod_scale = wp.scale * ap.scale;
    const QTensor b = quantize(breal, QParams{prod_scale, 64});

    // float reference over the *dequantized* operands isolates the
    // integer pipeline from input quantization error
    const std::vector<double> wd = dequantize(w);
    const std::vector<double> ad = dequantize(a);
    const std::vector<double> bd = dequantize(b);
    std::vector<double> ref(rows);
    double max_ref = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = bd[r];
      for (std::size_t c = 0; c < cols; ++c) acc += wd[r * cols + c] * ad[c];
      ref[r] = acc;
      max_ref = std::max(max_ref, std::fabs(acc));
    }
    const double out_scale_target = max_ref / static_cast<double>(qmax(16));
    const RequantMultiplier m =
        make_requant_multiplier(prod_scale / out_scale_target);
    const QTensor out = qlinear_forward(w, a, b, m, 16);
    const std::vector<double> got = dequantize(out);
    for (std::size_t r = 0; r < rows; ++r)
      CHECK(std::fabs(got[r] - ref[r]) <= 3.0 * out.params.scale);
  }
}

TEST_CASE("qlinear at 32-bit output is 2^-20-accurate for the top codes") {
  Rng rng(77);
  const std::size_t rows = 8, cols = 16;
  std::vector<double> wreal(rows * cols), areal(cols);
  for (double& x : wreal) x = rng.uniform(0.2, 1.0);  // no cancellation
  for (double& x : areal) x = rng.uniform(0.2, 1.0);
  const QParams wp = calibrate(wreal, 32);
  const QParams ap = calibrate(areal, 32);
  const QTensor w = quantize(wreal, {rows, cols}, wp);
  const QTensor a = quantize(areal, ap);
  const double prod_scale = wp.scale * ap.scale;
  const QTensor b =
      quantize(std::vector<double>(rows, 0.0), QParams{prod_scale, 64});

  const std::vector<double> wd = dequantize(w);
  const std::vector<double> ad = dequantize(a);
  std::vector<double> ref(rows);
  double max_ref = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += wd[r * cols + c] * ad[c];
    ref[r] = acc;
    max_ref = std::max(max_ref, std::fabs(acc));
  }
  const RequantMultiplier m = make_requant_multiplier(
      prod_scale / (max_ref / static_cast<double>(qmax(32))));
  const QTensor out = qlinear_forward(w, a, b, m, 32);
  const std::vector<double> got = dequantize(out);
  for (std::size_t r = 0; r < rows; ++r)
    CHECK(std::fabs(got[r] - ref[r]) / std::fabs(ref[r]) <=
          std::ldexp(1.0, -20));
}

TEST_CASE("qlinear rejects shape mismatches") {
  QTensor w = quantize(std::vector<double>(6, 0.1), {2, 3}, QParams{0.1, 8});
  QTensor a = quantize(std::vector<double>{1.0, -1.0}, QParams{0.05, 8});
  QTensor b = quantize(std::vector<double>{0.0, 0.0}, QParams{0.1 * 0.05, 64});
  CHECK_THROWS_AS(qlinear_forward(w, a, b, make_requant_multiplier(0.5), 8),
                  Error);
}
