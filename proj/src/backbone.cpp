#include "bncl/backbone.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "bncl/fixedpoint.hpp"
#include "bncl/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace bncl {

namespace {

constexpr float kScaleFloor = 1e-3f;  // keeps the scale > 0 invariant

std::vector<double> to_double(std::span<const float> v) {
  return std::vector<double>(v.begin(), v.end());
}

void run_block(const BinaryBlock& block, const std::vector<double>& x,
               BitTensor* bits_out, std::vector<long long>* z_out,
               std::vector<double>& y) {
  BitTensor bits = binarize(std::span<const double>(x));
  std::vector<long long> z = bitlinear_forward(block.packed_weights, bits);
  y.resize(block.out_dim());
  for (std::size_t j = 0; j < y.size(); ++j)
    y[j] = static_cast<double>(block.scale[j]) * static_cast<double>(z[j]) +
           static_cast<double>(block.shift[j]);
  if (bits_out) *bits_out = std::move(bits);
  if (z_out) *z_out = std::move(z);
}

}  // namespace

BackboneModel make_backbone(const std::vector<std::size_t>& dims,
                            std::uint64_t seed) {
  require(dims.size() >= 2, ErrorKind::invalid_argument,
          "backbone needs at least input and feature dims");
  for (std::size_t d : dims)
    require(d > 0, ErrorKind::invalid_argument, "backbone dims must be > 0");
  BackboneModel model;
  model.input_dim = dims.front();
  model.feature_dim = dims.back();
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    BinaryBlock block;
    block.shadow_weights = MatF(dims[l + 1], dims[l]);
    for (auto& w : block.shadow_weights.v)
      w = static_cast<float>(rng.uniform(-1.0, 1.0));
    block.packed_weights = binarize_matrix(block.shadow_weights);
    // fan-in normalization keeps feature magnitudes O(1); a raw bitdot
    // ranges over +/-in_dim and would swamp downstream value ranges
    block.scale.assign(dims[l + 1],
                       1.0f / std::sqrt(static_cast<float>(dims[l])));
    block.shift.assign(dims[l + 1], 0.0f);
    model.blocks.push_back(std::move(block));
  }
  return model;
}

std::vector<double> forward_features(const BackboneModel& model,
                                     std::span<const double> input) {
  require(input.size() == model.input_dim, ErrorKind::shape_mismatch,
          "forward_features: input length != input_dim");
  std::vector<double> x(input.begin(), input.end());
  std::vector<double> y;
  for (const BinaryBlock& block : model.blocks) {
    run_block(block, x, nullptr, nullptr, y);
    x.swap(y);
  }
  return x;
}

std::vector<double> forward_features(const BackboneModel& model,
                                     std::span<const float> input) {
  const std::vector<double> x = to_double(input);
  return forward_features(model, std::span<const double>(x));
}

ForwardCache forward_cache(const BackboneModel& model,
                           std::span<const double> input) {
  require(input.size() == model.input_dim, ErrorKind::shape_mismatch,
          "forward_cache: input length != input_dim");
  ForwardCache cache;
  std::vector<double> x(input.begin(), input.end());
  for (const BinaryBlock& block : model.blocks) {
    cache.inputs.push_back(x);
    BitTensor bits;
    std::vector<long long> z;
    std::vector<double> y;
    run_block(block, x, &bits, &z, y);
    cache.input_bits.push_back(std::move(bits));
    cache.bitdots.push_back(std::move(z));
    x.swap(y);
  }
  cache.features = x;
  return cache;
}

BackboneGrads zero_grads(const BackboneModel& model) {
  BackboneGrads g;
  for (const BinaryBlock& block : model.blocks) {
    g.shadow.emplace_back(block.out_dim(), block.in_dim());
    g.scale.emplace_back(block.out_dim(), 0.0);
    g.shift.emplace_back(block.out_dim(), 0.0);
  }
  return g;
}

void backward_accumulate(const BackboneModel& model, const ForwardCache& cache,
                         std::span<const double> feature_grad,
                         BackboneGrads& grads) {
  require(feature_grad.size() == model.feature_dim, ErrorKind::shape_mismatch,
          "backward: feature gradient length != feature_dim");
  std::vector<double> g_y(feature_grad.begin(), feature_grad.end());
  for (std::size_t l = model.blocks.size(); l-- > 0;) {
    const BinaryBlock& block = model.blocks[l];
    const std::vector<double>& x = cache.inputs[l];
    const std::vector<long long>& z = cache.bitdots[l];
    const BitTensor& bits = cache.input_bits[l];
    const std::size_t out = block.out_dim();
    const std::size_t in = block.in_dim();

    std::vector<double> g_z(out);
    for (std::size_t j = 0; j < out; ++j) {
      grads.scale[l][j] += g_y[j] * static_cast<double>(z[j]);
      grads.shift[l][j] += g_y[j];
      g_z[j] = g_y[j] * static_cast<double>(block.scale[j]);
    }

    // weight path: dL/d(sign W) = g_z x sign(x), clipped STE onto the shadow
    std::vector<double> g_x_raw(in, 0.0);
    for (std::size_t j = 0; j < out; ++j) {
      const float* wrow = block.shadow_weights.row(j);
      double* grow = grads.shadow[l].row(j);
      const double gz = g_z[j];
      for (std::size_t i = 0; i < in; ++i) {
        const double b = bits.get(0, i) ? 1.0 : -1.0;
        if (std::fabs(wrow[i]) <= 1.0f) grow[i] += gz * b;
        const double sw = wrow[i] < 0.0f ? -1.0 : 1.0;
        g_x_raw[i] += sw * gz;
      }
    }
    if (l > 0) g_y = ste_backward(g_x_raw, x);
  }
}

void apply_backbone_sgd(BackboneModel& model, const BackboneGrads& grads,
                        double learning_rate, double grad_scale) {
  require(!model.frozen, ErrorKind::constraint,
          "cannot train a frozen backbone");
  const double step = learning_rate * grad_scale;
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    BinaryBlock& block = model.blocks[l];
    for (std::size_t k = 0; k < block.shadow_weights.size(); ++k)
      block.shadow_weights.v[k] -=
          static_cast<float>(step * grads.shadow[l].v[k]);
    for (std::size_t j = 0; j < block.out_dim(); ++j) {
      block.scale[j] -= static_cast<float>(step * grads.scale[l][j]);
      if (block.scale[j] < kScaleFloor) block.scale[j] = kScaleFloor;
      block.shift[j] -= static_cast<float>(step * grads.shift[l][j]);
    }
    block.packed_weights = binarize_matrix(block.shadow_weights);
  }
}

void train_backbone_step(BackboneModel& model, const Minibatch& batch,
                         const HeadBackwardFn& head_backward,
                         double learning_rate) {
  require(!model.frozen, ErrorKind::constraint,
          "cannot train a frozen backbone");
  require(batch.inputs.size() == batch.labels.size() && !batch.inputs.empty(),
          ErrorKind::invalid_argument, "minibatch inputs/labels mismatch");
  BackboneGrads grads = zero_grads(model);
  for (std::size_t s = 0; s < batch.inputs.size(); ++s) {
    const std::vector<double> x = to_double(batch.inputs[s]);
    const ForwardCache cache = forward_cache(model, x);
    const std::vector<double> dfeat =
        head_backward(cache.features, batch.labels[s]);
    backward_accumulate(model, cache, dfeat, grads);
  }
  apply_backbone_sgd(model, grads, learning_rate,
                     1.0 / static_cast<double>(batch.inputs.size()));
}

void freeze(BackboneModel& model) {
  if (model.frozen) return;
  for (BinaryBlock& block : model.blocks) {
    // fold the real auxiliaries to 16-bit fixed point; the deployed model
    // carries only packed weights plus low-precision scale/shift
    for (auto* vec : {&block.scale, &block.shift}) {
      std::vector<double> vals(vec->begin(), vec->end());
      const QParams p = calibrate(vals, 16);
      const QTensor q = quantize(vals, p);
      const std::vector<double> folded = dequantize(q);
      for (std::size_t j = 0; j < vec->size(); ++j)
        (*vec)[j] = static_cast<float>(folded[j]);
    }
  }
  model.frozen = true;
}

// --- checkpoint container ------------------------------------------------

namespace {

constexpr char kMagic[4] = {'B', 'N', 'C', 'L'};
constexpr std::uint32_t kVersion = 1;

void write_raw(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_raw(std::istream& in, void* p, std::size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  require(static_cast<std::size_t>(in.gcount()) == n, ErrorKind::truncated,
          "checkpoint truncated");
}

template <class T>
void write_pod(std::ostream& out, T v) {
  write_raw(out, &v, sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
  T v;
  read_raw(in, &v, sizeof(T));
  return v;
}

}  // namespace

void write_backbone_payload(std::ostream& out, const BackboneModel& model) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.blocks.size()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.input_dim));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.feature_dim));
  write_pod<std::uint8_t>(out, model.frozen ? 1 : 0);
  for (const BinaryBlock& b : model.blocks) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(b.in_dim()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(b.out_dim()));
  }
  for (const BinaryBlock& b : model.blocks) {
    write_raw(out, b.shadow_weights.v.data(),
              b.shadow_weights.size() * sizeof(float));
    write_raw(out, b.packed_weights.words.data(),
              b.packed_weights.words.size() * sizeof(std::uint64_t));
    write_raw(out, b.scale.data(), b.scale.size() * sizeof(float));
    write_raw(out, b.shift.data(), b.shift.size() * sizeof(float));
  }
}

BackboneModel read_backbone_payload(std::istream& in) {
  BackboneModel model;
  const auto block_count = read_pod<std::uint32_t>(in);
  model.input_dim = read_pod<std::uint32_t>(in);
  model.feature_dim = read_pod<std::uint32_t>(in);
  model.frozen = read_pod<std::uint8_t>(in) != 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> dims(block_count);
  for (auto& d : dims) {
    d.first = read_pod<std::uint32_t>(in);
    d.second = read_pod<std::uint32_t>(in);
  }
  for (const auto& [in_dim, out_dim] : dims) {
    require(in_dim > 0 && out_dim > 0, ErrorKind::constraint,
            "checkpoint block with zero dimension");
    BinaryBlock b;
    b.shadow_weights = MatF(out_dim, in_dim);
    read_raw(in, b.shadow_weights.v.data(),
             b.shadow_weights.size() * sizeof(float));
    b.packed_weights.shape = {out_dim, in_dim};
    b.packed_weights.words.resize(out_dim * ((in_dim + 63) / 64));
    read_raw(in, b.packed_weights.words.data(),
             b.packed_weights.words.size() * sizeof(std::uint64_t));
    b.scale.resize(out_dim);
    read_raw(in, b.scale.data(), out_dim * sizeof(float));
    b.shift.resize(out_dim);
    read_raw(in, b.shift.data(), out_dim * sizeof(float));
    require(b.packed_weights == binarize_matrix(b.shadow_weights),
            ErrorKind::constraint,
            "checkpoint packed weights inconsistent with shadow weights");
    model.blocks.push_back(std::move(b));
  }
  if (!model.blocks.empty()) {
    require(model.blocks.front().in_dim() == model.input_dim &&
                model.blocks.back().out_dim() == model.feature_dim,
            ErrorKind::constraint, "checkpoint dims inconsistent");
    for (std::size_t l = 0; l + 1 < model.blocks.size(); ++l)
      require(model.blocks[l].out_dim() == model.blocks[l + 1].in_dim(),
              ErrorKind::constraint, "checkpoint block dims do not compose");
  }
  return model;
}

void write_container_header(std::ostream& out) {
  write_raw(out, kMagic, 4);
  write_pod<std::uint32_t>(out, kVersion);
}

void read_container_header(std::istream& in) {
  char magic[4];
  read_raw(in, magic, 4);
  require(std::memcmp(magic, kMagic, 4) == 0, ErrorKind::bad_magic,
          "not a BNCL checkpoint");
  const auto version = read_pod<std::uint32_t>(in);
  require(version == kVersion, ErrorKind::bad_version,
          "unsupported checkpoint version " + std::to_string(version));
}

void save_checkpoint(const BackboneModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::io, "cannot open " + path + " for writing");
  write_container_header(out);
  write_backbone_payload(out, model);
  out.flush();
  require(out.good(), ErrorKind::io, "write failed for " + path);
}

BackboneModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot open " + path);
  read_container_header(in);
  return read_backbone_payload(in);
}

}  // namespace bncl
