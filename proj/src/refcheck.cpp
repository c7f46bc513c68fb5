#include "bncl/refcheck.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "bncl/backbone.hpp"
#include "bncl/bitcore.hpp"
#include "bncl/cwr.hpp"
#include "bncl/fixedpoint.hpp"
#include "bncl/rng.hpp"

namespace bncl::refcheck {

std::vector<double> dense_linear(const MatD& W, const std::vector<double>& b,
                                 const std::vector<double>& a) {
  std::vector<double> out(W.rows);
  for (std::size_t r = 0; r < W.rows; ++r) {
    double acc = b[r];
    for (std::size_t c = 0; c < W.cols; ++c) acc += W.at(r, c) * a[c];
    out[r] = acc;
  }
  return out;
}

std::vector<double> softmax_ref(const std::vector<double>& logits) {
  double m = logits[0];
  for (double l : logits) m = std::max(m, l);
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

double cross_entropy_ref(const std::vector<double>& probs, std::size_t label) {
  return -std::log(std::max(probs[label], 1e-300));
}

namespace {

class Timer {
public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

private:
  std::chrono::steady_clock::time_point start_;
};

// float-config head holding an arbitrary W/b via the public protocol:
// cw is set, then preload with every class in the batch copies cw into tw
CwrState make_float_head(const MatD& W, const std::vector<double>& b) {
  CwrState state(W.cols, QuantConfig{0, 0, 0.01});
  std::vector<int> classes;
  for (std::size_t r = 0; r < W.rows; ++r)
    classes.push_back(static_cast<int>(r));
  expand_head(state, classes);
  state.cw = W;
  state.cw_bias = b;
  preload_tw(state, classes);
  return state;
}

}  // namespace

CheckResult check_head_gradients(std::uint64_t seed) {
  const Timer timer;
  Rng rng(seed);
  double worst = 0.0;
  constexpr double kTol = 1e-5;
  constexpr double kStep = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = (trial % 2 == 0) ? 2 : 10;
    const std::size_t dim = 1 + rng.uniform_int(64);
    // fan-in scaling keeps logits O(1): saturated softmax instances have
    // vanishing gradients and compare FD noise against itself
    const double w_range = 1.0 / std::sqrt(static_cast<double>(dim));
    MatD w(m, dim);
    for (double& v : w.v) v = rng.uniform(-w_range, w_range);
    std::vector<double> b(m);
    for (double& v : b) v = rng.uniform(-0.5, 0.5);
    std::vector<double> a(dim);
    for (double& v : a) v = rng.uniform(-2.0, 2.0);
    const auto label = static_cast<std::size_t>(rng.uniform_int(m));

    CwrState state = make_float_head(w, b);
    const HeadOutput out = head_forward(state, a);
    std::vector<double> one_hot(m, 0.0);
    one_hot[label] = 1.0;
    const HeadGradient analytic = head_gradients(a, out.probs, one_hot);

    // central differences of the reference loss, element by element
    auto loss_at = [&](const MatD& wx, const std::vector<double>& bx) {
      return cross_entropy_ref(softmax_ref(dense_linear(wx, bx, a)), label);
    };
    double max_fd = 0.0;
    double max_err = 0.0;
    MatD wp = w;
    for (std::size_t k = 0; k < w.size(); ++k) {
      wp.v[k] = w.v[k] + kStep;
      const double up = loss_at(wp, b);
      wp.v[k] = w.v[k] - kStep;
      const double dn = loss_at(wp, b);
      wp.v[k] = w.v[k];
      const double fd = (up - dn) / (2.0 * kStep);
      max_fd = std::max(max_fd, std::fabs(fd));
      max_err = std::max(max_err, std::fabs(fd - analytic.w.v[k]));
    }
    std::vector<double> bp = b;
    for (std::size_t r = 0; r < m; ++r) {
      bp[r] = b[r] + kStep;
      const double up = loss_at(w, bp);
      bp[r] = b[r] - kStep;
      const double dn = loss_at(w, bp);
      bp[r] = b[r];
      const double fd = (up - dn) / (2.0 * kStep);
      max_fd = std::max(max_fd, std::fabs(fd));
      max_err = std::max(max_err, std::fabs(fd - analytic.b[r]));
    }
    worst = std::max(worst, max_err / std::max(max_fd, 1e-12));
  }
  std::ostringstream detail;
  detail << "max relative deviation " << worst << " (tol " << kTol << ")";
  return {"gradient-correctness", worst <= kTol, timer.seconds(),
          detail.str()};
}

CheckResult check_bit_kernels(std::uint64_t seed) {
  const Timer timer;
  Rng rng(seed);
  std::size_t cases = 0;
  std::size_t failures = 0;

  auto random_pm1 = [&rng](std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform() < 0.5 ? -1.0 : 1.0;
    return v;
  };

  for (int trial = 0; trial < 500; ++trial) {
    // sweep lengths around word boundaries plus random ones
    const std::size_t n = (trial < 130)
                              ? 1 + static_cast<std::size_t>(trial)
                              : 1 + rng.uniform_int(320);
    const std::vector<double> u = random_pm1(n);
    const std::vector<double> v = random_pm1(n);
    long long expect = 0;
    for (std::size_t i = 0; i < n; ++i)
      expect += static_cast<long long>(u[i]) * static_cast<long long>(v[i]);
    if (bitdot(binarize(u), binarize(v)) != expect) ++failures;
    ++cases;
  }
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t rows = 1 + rng.uniform_int(16);
    const std::size_t cols = (trial % 4 == 0) ? 64 * (1 + trial % 3)
                                              : 1 + rng.uniform_int(200);
    MatD w(rows, cols);
    for (double& x : w.v) x = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const std::vector<double> a = random_pm1(cols);
    const std::vector<long long> got =
        bitlinear_forward(binarize_matrix(w), binarize(a));
    for (std::size_t r = 0; r < rows; ++r) {
      long long expect = 0;
      for (std::size_t c = 0; c < cols; ++c)
        expect += static_cast<long long>(w.at(r, c)) *
                  static_cast<long long>(a[c]);
      if (got[r] != expect) {
        ++failures;
        break;
      }
    }
    ++cases;
  }
  std::ostringstream detail;
  detail << cases << " cases, " << failures << " mismatches";
  return {"bit-kernel-exactness", failures == 0, timer.seconds(),
          detail.str()};
}

CheckResult check_quantizer_bounds(std::uint64_t seed) {
  const Timer timer;
  Rng rng(seed);
  std::size_t failures = 0;
  for (int bits : {8, 16, 32}) {
    const double limit = static_cast<double>(qmax(bits));
    for (int trial = 0; trial < 100000; ++trial) {
      const double scale = std::pow(10.0, rng.uniform(-6.0, 0.0));
      const QParams params{scale, bits};
      const double range = scale * limit;
      const double v1 = rng.uniform(-range, range);
      const double v2 = rng.uniform(-range, range);
      std::vector<double> pair{v1, v2};
      const QTensor q = quantize(pair, params);
      const std::vector<double> back = dequantize(q);
      if (std::fabs(back[0] - v1) > scale / 2.0 + 1e-12 * range) ++failures;
      if (std::fabs(back[1] - v2) > scale / 2.0 + 1e-12 * range) ++failures;
      const bool ordered = v1 <= v2 ? q.data[0] <= q.data[1]
                                    : q.data[1] <= q.data[0];
      if (!ordered) ++failures;
      // saturation stays inside the symmetric range for any magnitude
      const std::vector<double> big{v1 * 1e3, -v2 * 1e3};
      const QTensor qs = quantize(big, params);
      if (std::llabs(qs.data[0]) > qmax(bits) ||
          std::llabs(qs.data[1]) > qmax(bits))
        ++failures;
    }
  }
  std::ostringstream detail;
  detail << "3x100000 values, " << failures << " violations";
  return {"quantizer-bounds", failures == 0, timer.seconds(), detail.str()};
}

CheckResult check_backbone_scale_gradients(std::uint64_t seed) {
  const Timer timer;
  Rng rng(seed);
  double worst = 0.0;
  constexpr double kTol = 1e-4;
  for (int trial = 0; trial < 20; ++trial) {
    BackboneModel model =
        make_backbone({8, 4}, derive_seed(seed, 100 + trial));
    // keep z terms nonzero so scale gradients are informative
    std::vector<float> input(8);
    for (float& v : input) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    MatD head_w(3, 4);
    for (double& v : head_w.v) v = rng.uniform(-1.0, 1.0);
    std::vector<double> head_b(3, 0.0);
    const auto label = static_cast<std::size_t>(rng.uniform_int(3));

    auto loss_of_model = [&](const BackboneModel& m) {
      const std::vector<double> f =
          forward_features(m, std::span<const float>(input));
      return cross_entropy_ref(softmax_ref(dense_linear(head_w, head_b, f)),
                               label);
    };

    const std::vector<double> x(input.begin(), input.end());
    const ForwardCache cache = forward_cache(model, x);
    const std::vector<double> probs =
        softmax_ref(dense_linear(head_w, head_b, cache.features));
    std::vector<double> dfeat(4, 0.0);
    for (std::size_t r = 0; r < 3; ++r) {
      const double d = probs[r] - (r == label ? 1.0 : 0.0);
      for (std::size_t c = 0; c < 4; ++c) dfeat[c] += d * head_w.at(r, c);
    }
    BackboneGrads grads = zero_grads(model);
    backward_accumulate(model, cache, dfeat, grads);

    constexpr double kStep = 0x1.0p-12;  // exactly representable in float
    double max_fd = 0.0;
    double max_err = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      BackboneModel probe = model;
      probe.blocks[0].scale[j] =
          model.blocks[0].scale[j] + static_cast<float>(kStep);
      const double up = loss_of_model(probe);
      probe.blocks[0].scale[j] =
          model.blocks[0].scale[j] - static_cast<float>(kStep);
      const double dn = loss_of_model(probe);
      const double fd = (up - dn) / (2.0 * kStep);
      max_fd = std::max(max_fd, std::fabs(fd));
      max_err = std::max(max_err, std::fabs(fd - grads.scale[0][j]));
    }
    worst = std::max(worst, max_err / std::max(max_fd, 1e-9));
  }
  std::ostringstream detail;
  detail << "max relative deviation " << worst << " (tol " << kTol << ")";
  return {"backbone-scale-gradients", worst <= kTol, timer.seconds(),
          detail.str()};
}

std::vector<CheckResult> run_all_checks(std::uint64_t seed) {
  return {check_head_gradients(seed), check_bit_kernels(seed + 1),
          check_quantizer_bounds(seed + 2),
          check_backbone_scale_gradients(seed + 3)};
}

}  // namespace bncl::refcheck
