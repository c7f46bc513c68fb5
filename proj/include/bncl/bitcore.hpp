#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bncl/common.hpp"

namespace bncl {

// Bit-packed +/-1 tensor: bit 1 encodes +1, bit 0 encodes -1. Rows are
// padded independently to 64-bit word boundaries so a row dot product is
// a plain xor/popcount loop over that row's words; padding bits are kept
// at 0 and cancel in the xor.
struct BitTensor {
  std::vector<std::uint64_t> words;
  std::vector<std::size_t> shape;  // {n} or {rows, cols}

  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.size() == 2 ? shape[1] : shape[0]; }
  std::size_t words_per_row() const { return (cols() + 63) / 64; }
  std::size_t logical_size() const { return rows() * cols(); }

  // logical bit (r, c); true = +1
  bool get(std::size_t r, std::size_t c) const {
    const std::uint64_t w = words[r * words_per_row() + c / 64];
    return (w >> (c % 64)) & 1u;
  }

  bool operator==(const BitTensor& o) const {
    return words == o.words && shape == o.shape;
  }
};

// sign binarization with sign(0) = +1: v >= 0 -> +1, v < 0 -> -1
BitTensor binarize(std::span<const double> values);
BitTensor binarize(std::span<const float> values);
BitTensor binarize_matrix(const MatF& values);
BitTensor binarize_matrix(const MatD& values);

// packs an explicit +1/-1 (true/false) pattern; test and tooling aid
BitTensor pack_bits(const std::vector<bool>& bits,
                    std::vector<std::size_t> shape);
std::vector<bool> unpack_bits(const BitTensor& t);

// +/-1 expansion as doubles, for dense reference math
std::vector<double> unpack_pm1(const BitTensor& t);

// sum_i u_i * v_i over +/-1 semantics = N - 2*popcount(u xor v)
long long bitdot(const BitTensor& u, const BitTensor& v);

// row-wise bitdot of a 2-D weight tensor against a 1-D activation vector;
// outputs are exact integers in [-N, N] with the parity of N
std::vector<long long> bitlinear_forward(const BitTensor& W,
                                         const BitTensor& a);

// clipped straight-through estimator: passes upstream gradient where
// |pre_activation| <= 1, zero elsewhere
std::vector<double> ste_backward(std::span<const double> upstream_grad,
                                 std::span<const double> pre_activation);

}  // namespace bncl
