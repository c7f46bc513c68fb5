#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace bncl {

enum class ErrorKind {
  invalid_argument,
  shape_mismatch,
  non_finite,
  unknown_class,
  constraint,
  io,
  bad_magic,
  bad_version,
  truncated,
};

inline const char* error_category(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument:
      return "invalid-argument";
    case ErrorKind::shape_mismatch:
      return "shape-mismatch";
    case ErrorKind::non_finite:
      return "non-finite";
    case ErrorKind::unknown_class:
      return "unknown-class";
    case ErrorKind::constraint:
      return "constraint";
    case ErrorKind::io:
      return "io";
    case ErrorKind::bad_magic:
      return "bad-magic";
    case ErrorKind::bad_version:
      return "bad-version";
    case ErrorKind::truncated:
      return "truncated";
  }
  return "unknown";
}

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  const char* category() const noexcept { return error_category(kind_); }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

// Minimal row-major matrix. Dimensions are small everywhere (head layers,
// desk-scale backbones), so plain loops over this beat pulling in a BLAS.
template <class T>
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> v;  // row-major, rows*cols

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, T{}) {}

  T& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  const T& at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
  T* row(std::size_t r) { return v.data() + r * cols; }
  const T* row(std::size_t r) const { return v.data() + r * cols; }
  std::size_t size() const { return v.size(); }

  bool operator==(const Mat& o) const {
    return rows == o.rows && cols == o.cols && v == o.v;
  }
};

using MatD = Mat<double>;
using MatF = Mat<float>;

}  // namespace bncl
