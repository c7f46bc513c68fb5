#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bncl/common.hpp"

namespace bncl::refcheck {

// Independent dense reference math for oracle checks. Everything here is
// plain double loops with no calls into the packed/quantized paths it is
// used to verify.
std::vector<double> dense_linear(const MatD& W, const std::vector<double>& b,
                                 const std::vector<double>& a);
std::vector<double> softmax_ref(const std::vector<double>& logits);
double cross_entropy_ref(const std::vector<double>& probs, std::size_t label);

struct CheckResult {
  std::string name;
  bool pass = false;
  double seconds = 0.0;
  std::string detail;
};

// analytic head gradients vs central finite differences of cross-entropy
// through the float head; 100 random instances, M in {2,10}, dim <= 64,
// 1e-5 relative tolerance
CheckResult check_head_gradients(std::uint64_t seed);

// bitdot/bitlinear vs dense +/-1 integer dot products, exact, 1000 cases
// including non-word-multiple lengths
CheckResult check_bit_kernels(std::uint64_t seed);

// quantizer round-trip <= scale/2, saturation and monotonicity over 1e5
// random values at each of 8/16/32 bits
CheckResult check_quantizer_bounds(std::uint64_t seed);

// backbone scale gradients vs central finite differences, 1e-4 relative
CheckResult check_backbone_scale_gradients(std::uint64_t seed);

std::vector<CheckResult> run_all_checks(std::uint64_t seed);

}  // namespace bncl::refcheck
