#include "bncl/fixedpoint.hpp"

#include <cmath>
#include <limits>

namespace bncl {

std::int64_t qmax(int bits) {
  switch (bits) {
    case 8:
      return 127;
    case 16:
      return 32767;
    case 32:
      return 2147483647LL;
    case 64:
      return std::numeric_limits<std::int64_t>::max();
    default:
      fail(ErrorKind::invalid_argument,
           "unsupported bit width " + std::to_string(bits));
  }
}

void validate_qparams(const QParams& p) {
  require(std::isfinite(p.scale) && p.scale > 0.0, ErrorKind::invalid_argument,
          "quantization scale must be positive and finite");
  qmax(p.bits);  // rejects unknown widths
}

double requant_value(const RequantMultiplier& m) {
  return std::ldexp(static_cast<double>(m.mantissa), -31 - m.right_shift);
}

namespace {

std::int64_t saturate_i64(__int128 v) {
  constexpr auto lo =
      static_cast<__int128>(std::numeric_limits<std::int64_t>::min());
  constexpr auto hi =
      static_cast<__int128>(std::numeric_limits<std::int64_t>::max());
  if (v < lo) return std::numeric_limits<std::int64_t>::min();
  if (v > hi) return std::numeric_limits<std::int64_t>::max();
  return static_cast<std::int64_t>(v);
}

}  // namespace

std::int64_t requant_apply(const RequantMultiplier& m, __int128 acc) {
  __int128 prod = static_cast<__int128>(m.mantissa) * acc;
  const int shift = 31 + m.right_shift;
  if (shift <= 0) return saturate_i64(prod << (-shift));
  __int128 floor_part = prod >> shift;  // arithmetic shift = floor division
  const __int128 rem = prod - (floor_part << shift);
  const __int128 half = static_cast<__int128>(1) << (shift - 1);
  if (rem > half || (rem == half && (floor_part & 1))) ++floor_part;
  return saturate_i64(floor_part);
}

QParams calibrate(std::span<const double> values, int bits) {
  require(!values.empty(), ErrorKind::invalid_argument,
          "calibrate: empty tensor");
  double max_abs = 0.0;
  for (double v : values) {
    require(std::isfinite(v), ErrorKind::non_finite,
            "calibrate: non-finite value in tensor");
    max_abs = std::max(max_abs, std::fabs(v));
  }
  QParams p;
  p.bits = bits;
  p.scale = max_abs > 0.0 ? max_abs / static_cast<double>(qmax(bits)) : 1.0;
  return p;
}

namespace {

std::int64_t quantize_one(double v, double scale, std::int64_t limit,
                          std::uint64_t* saturations) {
  if (std::isnan(v)) return 0;
  const double scaled = v / scale;
  double r = std::nearbyint(scaled);  // default FP mode = round half to even
  if (r > static_cast<double>(limit)) {
    if (saturations) ++*saturations;
    return limit;
  }
  if (r < -static_cast<double>(limit)) {
    if (saturations) ++*saturations;
    return -limit;
  }
  return static_cast<std::int64_t>(r);
}

}  // namespace

QTensor quantize(std::span<const double> values, const QParams& params,
                 std::uint64_t* saturations) {
  return quantize(values, {values.size()}, params, saturations);
}

QTensor quantize(std::span<const double> values,
                 std::vector<std::size_t> shape, const QParams& params,
                 std::uint64_t* saturations) {
  validate_qparams(params);
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  require(n == values.size(), ErrorKind::shape_mismatch,
          "quantize: shape does not match element count");
  QTensor t;
  t.shape = std::move(shape);
  t.params = params;
  t.data.resize(values.size());
  const std::int64_t limit = qmax(params.bits);
  for (std::size_t i = 0; i < values.size(); ++i)
    t.data[i] = quantize_one(values[i], params.scale, limit, saturations);
  return t;
}

std::vector<double> dequantize(const QTensor& t) {
  std::vector<double> out(t.data.size());
  for (std::size_t i = 0; i < t.data.size(); ++i)
    out[i] = static_cast<double>(t.data[i]) * t.params.scale;
  return out;
}

RequantMultiplier make_requant_multiplier(double effective_scale) {
  require(std::isfinite(effective_scale) && effective_scale > 0.0,
          ErrorKind::invalid_argument,
          "requant multiplier scale must be positive and finite");
  int exp = 0;
  const double q = std::frexp(effective_scale, &exp);  // q in [0.5, 1)
  auto mant = static_cast<std::int64_t>(
      std::nearbyint(q * static_cast<double>(1LL << 31)));
  if (mant == (1LL << 31)) {  // q rounded up to 1.0
    mant >>= 1;
    ++exp;
  }
  return {static_cast<std::int32_t>(mant), -exp};
}

QTensor requantize(const QTensor& t, const QParams& to,
                   std::uint64_t* saturations) {
  validate_qparams(to);
  QTensor out;
  out.shape = t.shape;
  out.params = to;
  out.data.resize(t.data.size());
  if (t.params.scale == to.scale && t.params.bits <= to.bits) {
    out.data = t.data;
    return out;
  }
  const RequantMultiplier m = make_requant_multiplier(t.params.scale / to.scale);
  const std::int64_t limit = qmax(to.bits);
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    std::int64_t code = requant_apply(m, t.data[i]);
    if (code > limit) {
      code = limit;
      if (saturations) ++*saturations;
    } else if (code < -limit) {
      code = -limit;
      if (saturations) ++*saturations;
    }
    out.data[i] = code;
  }
  return out;
}

std::vector<__int128> qlinear_accumulate(const QTensor& W, const QTensor& a,
                                         const QTensor& b) {
  require(W.shape.size() == 2, ErrorKind::shape_mismatch,
          "qlinear: W must be 2-D");
  require(a.shape.size() == 1, ErrorKind::shape_mismatch,
          "qlinear: a must be 1-D");
  const std::size_t rows = W.shape[0];
  const std::size_t cols = W.shape[1];
  require(a.data.size() == cols, ErrorKind::shape_mismatch,
          "qlinear: inner dimensions disagree");
  require(b.data.size() == rows, ErrorKind::shape_mismatch,
          "qlinear: bias length does not match output rows");
  const double product_scale = W.params.scale * a.params.scale;
  require(std::fabs(b.params.scale - product_scale) <=
              1e-9 * std::max(b.params.scale, product_scale),
          ErrorKind::invalid_argument,
          "qlinear: bias must be quantized at scale_W * scale_a");
  std::vector<__int128> acc(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    __int128 sum = b.data[r];
    const std::int64_t* wrow = W.data.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c)
      sum += static_cast<__int128>(wrow[c]) * a.data[c];
    acc[r] = sum;
  }
  return acc;
}

QTensor qlinear_forward(const QTensor& W, const QTensor& a, const QTensor& b,
                        const RequantMultiplier& m, int out_bits) {
  const std::vector<__int128> acc = qlinear_accumulate(W, a, b);
  QTensor out;
  out.shape = {acc.size()};
  out.params.bits = out_bits;
  out.params.scale = W.params.scale * a.params.scale / requant_value(m);
  out.data.resize(acc.size());
  const std::int64_t limit = qmax(out_bits);
  for (std::size_t r = 0; r < acc.size(); ++r) {
    std::int64_t code = requant_apply(m, acc[r]);
    if (code > limit)
      code = limit;
    else if (code < -limit)
      code = -limit;
    out.data[r] = code;
  }
  return out;
}

}  // namespace bncl
