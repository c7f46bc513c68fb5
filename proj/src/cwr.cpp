#include "bncl/cwr.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace bncl {

void validate_config(const QuantConfig& cfg) {
  auto ok_bits = [](int b) {
    return b == 0 || b == 8 || b == 16 || b == 32;
  };
  require(ok_bits(cfg.lp_bits) && ok_bits(cfg.hp_bits),
          ErrorKind::invalid_argument,
          "quantization widths must be 8, 16, 32 or float");
  require(precision_rank(cfg.hp_bits) >= precision_rank(cfg.lp_bits),
          ErrorKind::invalid_argument,
          "hp precision must be at least lp precision");
  require(std::isfinite(cfg.learning_rate) && cfg.learning_rate > 0.0,
          ErrorKind::invalid_argument, "learning rate must be positive");
}

const char* bits_name(int bits) {
  switch (bits) {
    case 0:
      return "float";
    case 8:
      return "8";
    case 16:
      return "16";
    case 32:
      return "32";
  }
  return "?";
}

int parse_bits(const std::string& s) {
  if (s == "float" || s == "fp" || s == "f32") return 0;
  if (s == "8") return 8;
  if (s == "16") return 16;
  if (s == "32") return 32;
  fail(ErrorKind::invalid_argument,
       "bit width must be one of 8, 16, 32, float (got '" + s + "')");
}

CwrState::CwrState(std::size_t feature_dim, QuantConfig cfg)
    : config(cfg), feat_dim(feature_dim) {
  validate_config(cfg);
  require(feature_dim > 0, ErrorKind::invalid_argument,
          "feature dimension must be > 0");
}

std::size_t CwrState::row_of(int id) const {
  auto it = class_rows.find(id);
  require(it != class_rows.end(), ErrorKind::unknown_class,
          "class " + std::to_string(id) + " not registered");
  return it->second;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  double max_logit = logits[0];
  for (double l : logits) max_logit = std::max(max_logit, l);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - max_logit);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

void expand_head(CwrState& state, const std::vector<int>& new_classes) {
  bool grew = false;
  for (int id : new_classes) {
    if (state.has_class(id)) continue;
    const std::size_t r = state.class_count();
    state.class_ids.push_back(id);
    state.class_rows.emplace(id, r);
    state.past.push_back(0);
    state.cw_bias.push_back(0.0);
    MatD grown(r + 1, state.feat_dim);
    std::copy(state.cw.v.begin(), state.cw.v.end(), grown.v.begin());
    state.cw = std::move(grown);
    grew = true;
  }
  if (grew) state.preloaded = false;  // forces a fresh preload
}

namespace {

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

// Experience-fixed tw scale. The representable window must cover not just
// weight growth but the raw per-batch gradients quantized at this same
// scale: fresh classes see |probs - y| near 1, so gradients reach feature
// magnitude while consolidated weights stay small. 32x the cw range keeps
// those gradients inside the window at every width.
constexpr double kTwHeadroom = 32.0;

double tw_scale(double cw_range, int bits) {
  return cw_range > 0.0
             ? kTwHeadroom * cw_range / static_cast<double>(qmax(bits))
             : 1.0;
}

}  // namespace

void preload_tw(CwrState& state, const std::vector<int>& batch_classes) {
  const std::size_t rows = state.class_count();
  require(rows > 0, ErrorKind::constraint, "preload on an empty head");
  std::vector<char> in_batch(rows, 0);
  for (int id : batch_classes) in_batch[state.row_of(id)] = 1;

  MatD masked(rows, state.feat_dim);
  std::vector<double> masked_bias(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!in_batch[r]) continue;
    std::copy(state.cw.row(r), state.cw.row(r) + state.feat_dim,
              masked.row(r));
    masked_bias[r] = state.cw_bias[r];
  }

  if (state.float_update_path()) {
    state.tw_float = std::move(masked);
    state.tw_float_bias = std::move(masked_bias);
    state.tw_hp = TwBank{};
    state.tw_lp = TwBank{};
  } else {
    const double w_range = max_abs(state.cw.v);
    const double b_range = max_abs(state.cw_bias);
    state.hp_w_params = {tw_scale(w_range, state.effective_hp()),
                         state.effective_hp()};
    state.hp_b_params = {tw_scale(b_range, state.effective_hp()),
                         state.effective_hp()};
    state.lp_w_params = {tw_scale(w_range, state.effective_lp()),
                         state.effective_lp()};
    state.lp_b_params = {tw_scale(b_range, state.effective_lp()),
                         state.effective_lp()};
    state.eta_mult = make_requant_multiplier(state.config.learning_rate);
    state.tw_hp.w = quantize(masked.v, {rows, state.feat_dim},
                             state.hp_w_params, &state.saturation_events);
    state.tw_hp.b =
        quantize(masked_bias, state.hp_b_params, &state.saturation_events);
    state.tw_lp.w =
        requantize(state.tw_hp.w, state.lp_w_params, &state.saturation_events);
    state.tw_lp.b =
        requantize(state.tw_hp.b, state.lp_b_params, &state.saturation_events);
    state.tw_float = MatD{};
    state.tw_float_bias.clear();
  }
  state.preloaded = true;
}

namespace {

std::vector<double> float_logits(const MatD& w, const std::vector<double>& b,
                                 std::span<const double> a) {
  std::vector<double> logits(w.rows);
  for (std::size_t r = 0; r < w.rows; ++r) {
    double acc = b[r];
    const double* row = w.row(r);
    for (std::size_t c = 0; c < w.cols; ++c) acc += row[c] * a[c];
    logits[r] = acc;
  }
  return logits;
}

std::vector<double> quantized_logits(const CwrState& state,
                                     std::span<const double> a) {
  const int lp = state.effective_lp();
  const QParams act_params = calibrate(a, lp);
  const QTensor act = quantize(a, act_params);
  const double product_scale = state.lp_w_params.scale * act_params.scale;

  // re-code the lp bias at the product (accumulator) scale
  const std::vector<double> bias_real = dequantize(state.tw_lp.b);
  const QTensor bias = quantize(bias_real, QParams{product_scale, 64});

  // the exact accumulator range fixes the output scale; the requantizing
  // pass then runs with that multiplier
  const std::vector<__int128> acc =
      qlinear_accumulate(state.tw_lp.w, act, bias);
  __int128 max_acc = 0;
  for (__int128 v : acc) max_acc = std::max(max_acc, v < 0 ? -v : v);
  if (max_acc == 0) return std::vector<double>(acc.size(), 0.0);

  const RequantMultiplier m = make_requant_multiplier(
      static_cast<double>(qmax(lp)) / static_cast<double>(max_acc));
  const QTensor out = qlinear_forward(state.tw_lp.w, act, bias, m, lp);
  return dequantize(out);
}

}  // namespace

HeadOutput head_forward(const CwrState& state,
                        std::span<const double> features) {
  require(state.preloaded, ErrorKind::constraint,
          "head_forward before preload_tw");
  require(features.size() == state.feat_dim, ErrorKind::shape_mismatch,
          "feature length does not match head");
  HeadOutput out;
  out.logits = state.float_forward_path()
                   ? float_logits(state.tw_float, state.tw_float_bias, features)
                   : quantized_logits(state, features);
  out.probs = softmax(out.logits);
  return out;
}

HeadGradient head_gradients(std::span<const double> features,
                            std::span<const double> probs,
                            std::span<const double> one_hot) {
  require(probs.size() == one_hot.size(), ErrorKind::shape_mismatch,
          "probs/one-hot length mismatch");
  HeadGradient g;
  g.w = MatD(probs.size(), features.size());
  g.b.resize(probs.size());
  for (std::size_t r = 0; r < probs.size(); ++r) {
    const double d = probs[r] - one_hot[r];
    g.b[r] = d;
    double* row = g.w.row(r);
    for (std::size_t c = 0; c < features.size(); ++c)
      row[c] = d * features[c];
  }
  return g;
}

void sgd_update(CwrState& state, const HeadGradient& grad) {
  require(state.preloaded, ErrorKind::constraint,
          "sgd_update before preload_tw");
  require(grad.w.rows == state.class_count() &&
              grad.w.cols == state.feat_dim &&
              grad.b.size() == state.class_count(),
          ErrorKind::shape_mismatch, "gradient not shaped to tw");

  if (state.float_update_path()) {
    const double eta = state.config.learning_rate;
    for (std::size_t k = 0; k < grad.w.size(); ++k)
      state.tw_float.v[k] -= eta * grad.w.v[k];
    for (std::size_t r = 0; r < grad.b.size(); ++r)
      state.tw_float_bias[r] -= eta * grad.b[r];
    return;
  }

  // fused fixed-point update: gradient codes at the hp scale, eta applied
  // as a 31-bit fixed-point multiplier, result subtracted code-to-code
  const QTensor gw = quantize(grad.w.v, {grad.w.rows, grad.w.cols},
                              state.hp_w_params, &state.saturation_events);
  const QTensor gb =
      quantize(grad.b, state.hp_b_params, &state.saturation_events);
  const std::int64_t limit = qmax(state.hp_w_params.bits);
  auto step = [&](std::int64_t code, std::int64_t gcode) {
    std::int64_t next = code - requant_apply(state.eta_mult, gcode);
    if (next > limit) {
      next = limit;
      ++state.saturation_events;
    } else if (next < -limit) {
      next = -limit;
      ++state.saturation_events;
    }
    return next;
  };
  for (std::size_t k = 0; k < gw.data.size(); ++k)
    state.tw_hp.w.data[k] = step(state.tw_hp.w.data[k], gw.data[k]);
  for (std::size_t r = 0; r < gb.data.size(); ++r)
    state.tw_hp.b.data[r] = step(state.tw_hp.b.data[r], gb.data[r]);

  state.tw_lp.w =
      requantize(state.tw_hp.w, state.lp_w_params, &state.saturation_events);
  state.tw_lp.b =
      requantize(state.tw_hp.b, state.lp_b_params, &state.saturation_events);
}

MatD tw_real(const CwrState& state) {
  if (state.float_update_path()) return state.tw_float;
  MatD out(state.tw_hp.w.shape[0], state.tw_hp.w.shape[1]);
  const std::vector<double> vals = dequantize(state.tw_hp.w);
  out.v = vals;
  return out;
}

std::vector<double> tw_real_bias(const CwrState& state) {
  if (state.float_update_path()) return state.tw_float_bias;
  return dequantize(state.tw_hp.b);
}

void consolidate(CwrState& state,
                 const std::map<int, std::uint64_t>& batch_class_counts) {
  require(state.preloaded, ErrorKind::constraint,
          "consolidate before preload_tw");
  require(!batch_class_counts.empty(), ErrorKind::invalid_argument,
          "consolidate with an empty batch");
  for (const auto& [id, cur] : batch_class_counts) {
    state.row_of(id);  // throws on unknown class
    require(cur > 0, ErrorKind::constraint,
            "class " + std::to_string(id) + " has cur = 0");
  }

  const MatD tw = tw_real(state);
  const std::vector<double> tw_b = tw_real_bias(state);

  std::vector<double> avg_w(state.feat_dim, 0.0);
  double avg_b = 0.0;
  for (const auto& [id, cur] : batch_class_counts) {
    const std::size_t r = state.row_of(id);
    for (std::size_t c = 0; c < state.feat_dim; ++c)
      avg_w[c] += tw.at(r, c);
    avg_b += tw_b[r];
  }
  const auto batch_n = static_cast<double>(batch_class_counts.size());
  for (double& v : avg_w) v /= batch_n;
  avg_b /= batch_n;

  for (const auto& [id, cur] : batch_class_counts) {
    const std::size_t r = state.row_of(id);
    const double wpast = std::sqrt(static_cast<double>(state.past[r]) /
                                   static_cast<double>(cur));
    for (std::size_t c = 0; c < state.feat_dim; ++c)
      state.cw.at(r, c) =
          (state.cw.at(r, c) * wpast + (tw.at(r, c) - avg_w[c])) /
          (wpast + 1.0);
    state.cw_bias[r] =
        (state.cw_bias[r] * wpast + (tw_b[r] - avg_b)) / (wpast + 1.0);
    state.past[r] += cur;
  }
  state.preloaded = false;  // next experience must preload again
}

double gradient_mae(const CwrState& state,
                    const std::vector<std::vector<double>>& features,
                    std::span<const std::size_t> label_rows) {
  require(features.size() == label_rows.size() && !features.empty(),
          ErrorKind::invalid_argument, "gradient_mae: empty mini-batch");
  if (state.float_update_path()) return 0.0;

  const MatD w_ref = tw_real(state);
  const std::vector<double> b_ref = tw_real_bias(state);
  const std::size_t rows = state.class_count();
  MatD g_float(rows, state.feat_dim);
  MatD g_quant_real(rows, state.feat_dim);

  std::vector<double> one_hot(rows, 0.0);
  for (std::size_t s = 0; s < features.size(); ++s) {
    const std::vector<double>& a = features[s];
    one_hot.assign(rows, 0.0);
    one_hot[label_rows[s]] = 1.0;

    const std::vector<double> pf =
        softmax(float_logits(w_ref, b_ref, a));
    const std::vector<double> pq = head_forward(state, a).probs;
    for (std::size_t r = 0; r < rows; ++r) {
      const double df = pf[r] - one_hot[r];
      const double dq = pq[r] - one_hot[r];
      double* frow = g_float.row(r);
      double* qrow = g_quant_real.row(r);
      for (std::size_t c = 0; c < state.feat_dim; ++c) {
        frow[c] += df * a[c];
        qrow[c] += dq * a[c];
      }
    }
  }
  const double inv_n = 1.0 / static_cast<double>(features.size());
  for (double& v : g_float.v) v *= inv_n;
  for (double& v : g_quant_real.v) v *= inv_n;

  const QTensor gq = quantize(g_quant_real.v, {rows, state.feat_dim},
                              state.hp_w_params);
  const std::vector<double> g_hat = dequantize(gq);

  double err_sum = 0.0;
  double ref_sum = 0.0;
  for (std::size_t k = 0; k < g_float.size(); ++k) {
    err_sum += std::fabs(g_float.v[k] - g_hat[k]);
    ref_sum += std::fabs(g_float.v[k]);
  }
  if (ref_sum == 0.0) return 0.0;
  return 100.0 * err_sum / ref_sum;
}

std::vector<double> consolidated_logits(const CwrState& state,
                                        std::span<const double> features) {
  require(features.size() == state.feat_dim, ErrorKind::shape_mismatch,
          "feature length does not match head");
  require(state.class_count() > 0, ErrorKind::constraint,
          "no classes registered");
  return float_logits(state.cw, state.cw_bias, features);
}

int classify(const CwrState& state, std::span<const double> features) {
  const std::vector<double> logits = consolidated_logits(state, features);
  std::size_t best = 0;
  for (std::size_t r = 1; r < logits.size(); ++r)
    if (logits[r] > logits[best]) best = r;
  return state.class_ids[best];
}

std::vector<double> feature_gradient(const CwrState& state,
                                     std::span<const double> probs,
                                     std::size_t label_row) {
  const MatD w = tw_real(state);
  require(probs.size() == w.rows, ErrorKind::shape_mismatch,
          "probs length does not match head");
  std::vector<double> g(state.feat_dim, 0.0);
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double d = probs[r] - (r == label_row ? 1.0 : 0.0);
    const double* row = w.row(r);
    for (std::size_t c = 0; c < state.feat_dim; ++c) g[c] += d * row[c];
  }
  return g;
}

}  // namespace bncl
