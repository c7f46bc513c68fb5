#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bncl/common.hpp"

namespace bncl {

// Symmetric signed fixed-point scheme: real value = code * scale, codes in
// [-qmax(bits), qmax(bits)]. The most negative code of the two's-complement
// range is never produced, so negation stays closed. Zero-point is fixed
// at 0. Rounding is round-to-nearest-even throughout.

// Model tensors use 8/16/32 bits. 64 is accepted for accumulator-scale
// tensors (the linear-layer bias quantized at scale_W * scale_a, whose
// codes exceed the 32-bit range when the operands are 32-bit).
struct QParams {
  double scale = 1.0;  // real-value per integer step, > 0 and finite
  int bits = 8;        // one of 8, 16, 32, 64
};

std::int64_t qmax(int bits);
void validate_qparams(const QParams& p);

struct QTensor {
  std::vector<std::int64_t> data;
  std::vector<std::size_t> shape;  // {n} or {rows, cols}, row-major
  QParams params;

  std::size_t size() const { return data.size(); }
  bool operator==(const QTensor& o) const {
    return data == o.data && shape == o.shape &&
           params.scale == o.params.scale && params.bits == o.params.bits;
  }
};

// 32-bit fixed-point scaling factor: value = mantissa * 2^(-31 - right_shift)
// with mantissa in [2^30, 2^31) (or 0 for a zero multiplier). right_shift is
// >= 0 for every effective scale < 1, which is all the engine produces in
// steady state; negative values (left shifts) keep the decomposition exact
// for scales >= 1.
struct RequantMultiplier {
  std::int32_t mantissa = 0;
  int right_shift = 0;
};

// Exact real value of the multiplier.
double requant_value(const RequantMultiplier& m);

// round-to-nearest-even of (mantissa * acc) / 2^(31 + right_shift),
// computed exactly in integer arithmetic; saturates at the int64 bounds.
std::int64_t requant_apply(const RequantMultiplier& m, __int128 acc);

// exact per-row accumulators W*a + b (the integer core of qlinear_forward,
// exposed so callers can calibrate an output scale from the true range)
std::vector<__int128> qlinear_accumulate(const QTensor& W, const QTensor& a,
                                         const QTensor& b);

// scale = max|values| / qmax(bits); an all-zero tensor calibrates to
// scale 1 so codes stay zero. Non-finite input is rejected.
QParams calibrate(std::span<const double> values, int bits);

// code = clamp(rne(v / scale), -qmax, qmax). Saturating: out-of-range
// magnitudes clamp, NaN maps to code 0. If `saturations` is given it is
// incremented once per clamped element.
QTensor quantize(std::span<const double> values, const QParams& params,
                 std::uint64_t* saturations = nullptr);
QTensor quantize(std::span<const double> values,
                 std::vector<std::size_t> shape, const QParams& params,
                 std::uint64_t* saturations = nullptr);

std::vector<double> dequantize(const QTensor& t);

// Decomposes a positive finite scale into the 31-bit mantissa form.
RequantMultiplier make_requant_multiplier(double effective_scale);

// Requantizes codes from t.params onto `to` (saturating, rne), going through
// the fixed-point multiplier t.scale / to.scale.
QTensor requantize(const QTensor& t, const QParams& to,
                   std::uint64_t* saturations = nullptr);

// Quantized linear layer: out = sat_cast_out_bits( rne( m * (W*a + b) ) ).
// W is 2-D (out x in), a is 1-D, b is 1-D quantized at the product scale
// scale_W * scale_a. Accumulation is exact (128-bit internally; the spec's
// 64-bit accumulator can overflow for adversarial 32-bit-code inputs).
// The output scale is scale_W * scale_a / requant_value(m).
QTensor qlinear_forward(const QTensor& W, const QTensor& a, const QTensor& b,
                        const RequantMultiplier& m, int out_bits);

}  // namespace bncl
