#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "bncl/bitcore.hpp"
#include "bncl/common.hpp"

namespace bncl {

// One binary layer: y = scale .* (sign(W) . sign(x)) + shift. The shadow
// weights are the real-valued training master; packed_weights is always
// binarize(shadow_weights) and is what the forward pass executes against.
struct BinaryBlock {
  MatF shadow_weights;       // out x in
  BitTensor packed_weights;  // binarize(shadow_weights), kept in sync
  std::vector<float> scale;  // per output unit, > 0
  std::vector<float> shift;

  std::size_t in_dim() const { return shadow_weights.cols; }
  std::size_t out_dim() const { return shadow_weights.rows; }
};

// A small trainable binary MLP. Trained with the straight-through estimator
// during the first experience, then frozen; the last block emits real-valued
// (pre-sign) features for the classification head.
struct BackboneModel {
  std::vector<BinaryBlock> blocks;
  std::size_t input_dim = 0;
  std::size_t feature_dim = 0;
  bool frozen = false;
};

// dims = {input, hidden..., feature}; shadow weights uniform in [-1, 1],
// scale = 1, shift = 0.
BackboneModel make_backbone(const std::vector<std::size_t>& dims,
                            std::uint64_t seed);

std::vector<double> forward_features(const BackboneModel& model,
                                     std::span<const float> input);
std::vector<double> forward_features(const BackboneModel& model,
                                     std::span<const double> input);

// Per-block intermediates needed by the backward pass.
struct ForwardCache {
  std::vector<std::vector<double>> inputs;      // x per block
  std::vector<BitTensor> input_bits;            // sign(x) per block
  std::vector<std::vector<long long>> bitdots;  // z = sign(W) . sign(x)
  std::vector<double> features;                 // last affine output
};

ForwardCache forward_cache(const BackboneModel& model,
                           std::span<const double> input);

struct BackboneGrads {
  std::vector<MatD> shadow;          // per block, out x in
  std::vector<std::vector<double>> scale;
  std::vector<std::vector<double>> shift;
};

BackboneGrads zero_grads(const BackboneModel& model);

// Backprop through scale/shift and, via clipped STE, through the sign of
// weights and activations; accumulates into `grads`.
void backward_accumulate(const BackboneModel& model, const ForwardCache& cache,
                         std::span<const double> feature_grad,
                         BackboneGrads& grads);

// SGD step with gradients scaled by grad_scale (1/batch for a mean update);
// re-binarizes packed weights and clamps scale at a small positive floor.
// Rejected on a frozen model.
void apply_backbone_sgd(BackboneModel& model, const BackboneGrads& grads,
                        double learning_rate, double grad_scale);

// dL/dfeatures for one sample, provided by the attached head.
using HeadBackwardFn =
    std::function<std::vector<double>(std::span<const double> features,
                                      int label)>;

struct Minibatch {
  std::vector<std::span<const float>> inputs;
  std::vector<int> labels;
};

// One joint SGD step over a minibatch (mean gradients). The head callback
// sees each sample's features and returns the feature gradient; head-side
// updates are the caller's business.
void train_backbone_step(BackboneModel& model, const Minibatch& batch,
                         const HeadBackwardFn& head_backward,
                         double learning_rate);

// Monotone latch; folds scale/shift to 16-bit fixed point (the binarized
// backbone keeps only low-precision auxiliaries once deployed).
void freeze(BackboneModel& model);

// "BNCL" checkpoint container, backbone payload only.
void save_checkpoint(const BackboneModel& model, const std::string& path);
BackboneModel load_checkpoint(const std::string& path);

// stream-level payload helpers shared with the run-checkpoint container
void write_container_header(std::ostream& out);
void read_container_header(std::istream& in);
void write_backbone_payload(std::ostream& out, const BackboneModel& model);
BackboneModel read_backbone_payload(std::istream& in);

}  // namespace bncl
