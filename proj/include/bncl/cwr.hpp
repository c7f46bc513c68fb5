#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <unordered_map>
#include <vector>

#include "bncl/common.hpp"
#include "bncl/fixedpoint.hpp"

namespace bncl {

// Bit widths are 8/16/32; 0 means full floating point. Precision ordering
// treats float as the highest.
inline int precision_rank(int bits) { return bits == 0 ? 1000 : bits; }

struct QuantConfig {
  int lp_bits = 0;  // forward-pass weight copy
  int hp_bits = 0;  // update-step weight copy, precision >= lp
  double learning_rate = 0.01;
};

void validate_config(const QuantConfig& cfg);
const char* bits_name(int bits);        // "float", "8", "16", "32"
int parse_bits(const std::string& s);   // inverse of bits_name

// Quantized temporary-weight bank (weights + bias as separate tensors).
struct TwBank {
  QTensor w;  // {classes, feat}
  QTensor b;  // {classes}
};

// CWR* head state: consolidated weights cw are real-valued and serve
// inference; temporary weights tw live in a high-precision copy for the
// update step and a low-precision copy, derived from it, for the forward
// pass. During the first experience the head trains in floating point
// regardless of the configured widths (float_override).
struct CwrState {
  QuantConfig config;
  std::size_t feat_dim = 0;

  std::vector<int> class_ids;  // registration order
  std::unordered_map<int, std::size_t> class_rows;
  MatD cw;  // rows x feat
  std::vector<double> cw_bias;
  std::vector<std::uint64_t> past;

  // float master (active while the effective update path is float)
  MatD tw_float;
  std::vector<double> tw_float_bias;
  // quantized copies (active otherwise); tw_lp is always rederived from
  // tw_hp, never updated independently
  TwBank tw_hp, tw_lp;
  QParams hp_w_params, hp_b_params, lp_w_params, lp_b_params;
  RequantMultiplier eta_mult;

  bool float_override = false;
  bool preloaded = false;
  std::uint64_t saturation_events = 0;

  CwrState() = default;
  CwrState(std::size_t feature_dim, QuantConfig cfg);

  std::size_t class_count() const { return class_ids.size(); }
  bool has_class(int id) const { return class_rows.count(id) != 0; }
  std::size_t row_of(int id) const;
  int effective_lp() const { return float_override ? 0 : config.lp_bits; }
  int effective_hp() const { return float_override ? 0 : config.hp_bits; }
  bool float_update_path() const { return effective_hp() == 0; }
  bool float_forward_path() const { return effective_lp() == 0; }
};

struct HeadOutput {
  std::vector<double> logits;
  std::vector<double> probs;
};

struct HeadGradient {
  MatD w;  // rows x feat
  std::vector<double> b;
};

// Registers new classes with zero consolidated weights and past = 0;
// idempotent for already-known classes.
void expand_head(CwrState& state, const std::vector<int>& new_classes);

// tw[i] = cw[i] for classes in the batch, 0 otherwise. Fixes the hp/lp
// scales for the experience (cw range with headroom for weight growth and
// raw gradients; an all-zero range calibrates to scale 1) and derives the
// lp copy.
void preload_tw(CwrState& state, const std::vector<int>& batch_classes);

// Forward through the lp copy: quantized linear layer, then softmax in
// real arithmetic on the dequantized logits (max-subtracted).
HeadOutput head_forward(const CwrState& state,
                        std::span<const double> features);

// Analytic softmax/cross-entropy gradients for one sample:
// dW = outer(probs - y, features), db = probs - y.
HeadGradient head_gradients(std::span<const double> features,
                            std::span<const double> probs,
                            std::span<const double> one_hot);

// SGD step on the hp copy with the (mini-batch mean) gradient. Quantized
// path: gradient codes at the hp scale, learning rate folded into the
// requantization multiplier, then the lp copy is rederived.
void sgd_update(CwrState& state, const HeadGradient& grad);

// Algorithm-1 consolidation: per batch class i with cur_i samples,
//   wpast = sqrt(past_i / cur_i)
//   cw[i] = (cw[i] * wpast + (tw[i] - avg_batch(tw))) / (wpast + 1)
//   past_i += cur_i
// avg ranges over the classes present in the batch.
void consolidate(CwrState& state,
                 const std::map<int, std::uint64_t>& batch_class_counts);

// MAE% between the float-path gradient and the quantized-pipeline gradient
// of the weight tensor, both taken from the same hp weights, over one
// mini-batch. 0 when the effective path is float or the float gradient
// vanishes.
double gradient_mae(const CwrState& state,
                    const std::vector<std::vector<double>>& features,
                    std::span<const std::size_t> label_rows);

// Inference on the consolidated weights (the tested model).
std::vector<double> consolidated_logits(const CwrState& state,
                                        std::span<const double> features);
int classify(const CwrState& state, std::span<const double> features);

// dL/dfeatures for joint first-experience training, through the
// update-path weight view.
std::vector<double> feature_gradient(const CwrState& state,
                                     std::span<const double> probs,
                                     std::size_t label_row);

// Real-valued view of the update-path weights (float master or
// dequantized hp copy).
MatD tw_real(const CwrState& state);
std::vector<double> tw_real_bias(const CwrState& state);

std::vector<double> softmax(std::span<const double> logits);

}  // namespace bncl
