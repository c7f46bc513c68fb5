#include "bncl/bitcore.hpp"

#include <bit>
#include <cmath>

namespace bncl {

namespace {

template <class T>
BitTensor pack_rows(const T* data, std::size_t rows, std::size_t cols,
                    std::vector<std::size_t> shape) {
  BitTensor t;
  t.shape = std::move(shape);
  const std::size_t wpr = (cols + 63) / 64;
  t.words.assign(rows * wpr, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = data + r * cols;
    std::uint64_t* dst = t.words.data() + r * wpr;
    for (std::size_t c = 0; c < cols; ++c)
      if (!(src[c] < T{0})) dst[c / 64] |= std::uint64_t{1} << (c % 64);
  }
  return t;
}

void check_equal_length(const BitTensor& u, const BitTensor& v) {
  require(u.logical_size() == v.logical_size() && u.cols() == v.cols(),
          ErrorKind::shape_mismatch, "bitdot: logical lengths differ");
}

}  // namespace

BitTensor binarize(std::span<const double> values) {
  return pack_rows(values.data(), 1, values.size(), {values.size()});
}

BitTensor binarize(std::span<const float> values) {
  return pack_rows(values.data(), 1, values.size(), {values.size()});
}

BitTensor binarize_matrix(const MatF& values) {
  return pack_rows(values.v.data(), values.rows, values.cols,
                   {values.rows, values.cols});
}

BitTensor binarize_matrix(const MatD& values) {
  return pack_rows(values.v.data(), values.rows, values.cols,
                   {values.rows, values.cols});
}

BitTensor pack_bits(const std::vector<bool>& bits,
                    std::vector<std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  require(n == bits.size(), ErrorKind::shape_mismatch,
          "pack_bits: shape does not match bit count");
  BitTensor t;
  t.shape = std::move(shape);
  const std::size_t rows = t.rows();
  const std::size_t cols = t.cols();
  const std::size_t wpr = t.words_per_row();
  t.words.assign(rows * wpr, 0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      if (bits[r * cols + c])
        t.words[r * wpr + c / 64] |= std::uint64_t{1} << (c % 64);
  return t;
}

std::vector<bool> unpack_bits(const BitTensor& t) {
  std::vector<bool> out(t.logical_size());
  const std::size_t cols = t.cols();
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = t.get(r, c);
  return out;
}

std::vector<double> unpack_pm1(const BitTensor& t) {
  std::vector<double> out(t.logical_size());
  const std::size_t cols = t.cols();
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = t.get(r, c) ? 1.0 : -1.0;
  return out;
}

long long bitdot(const BitTensor& u, const BitTensor& v) {
  check_equal_length(u, v);
  const std::size_t n = u.logical_size();
  long long mismatches = 0;
  for (std::size_t w = 0; w < u.words.size(); ++w)
    mismatches += std::popcount(u.words[w] ^ v.words[w]);
  return static_cast<long long>(n) - 2 * mismatches;
}

std::vector<long long> bitlinear_forward(const BitTensor& W,
                                         const BitTensor& a) {
  require(W.shape.size() == 2, ErrorKind::shape_mismatch,
          "bitlinear: W must be 2-D");
  require(W.cols() == a.logical_size(), ErrorKind::shape_mismatch,
          "bitlinear: row length does not match activation length");
  const std::size_t rows = W.rows();
  const std::size_t wpr = W.words_per_row();
  const auto n = static_cast<long long>(W.cols());
  std::vector<long long> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::uint64_t* wrow = W.words.data() + r * wpr;
    long long mismatches = 0;
    for (std::size_t w = 0; w < wpr; ++w)
      mismatches += std::popcount(wrow[w] ^ a.words[w]);
    out[r] = n - 2 * mismatches;
  }
  return out;
}

std::vector<double> ste_backward(std::span<const double> upstream_grad,
                                 std::span<const double> pre_activation) {
  require(upstream_grad.size() == pre_activation.size(),
          ErrorKind::shape_mismatch, "ste_backward: shapes differ");
  std::vector<double> out(upstream_grad.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::fabs(pre_activation[i]) <= 1.0 ? upstream_grad[i] : 0.0;
  return out;
}

}  // namespace bncl
