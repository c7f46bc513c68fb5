#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bncl/common.hpp"

namespace bncl {

struct Sample {
  std::vector<float> features;
  std::uint16_t class_id = 0;
  std::uint16_t instance_id = 0;
};

// class ids are dense in [0, class_count); instance ids tag object
// instances within a class (the NI scenario partitions by them)
struct Dataset {
  std::vector<Sample> samples;
  std::size_t class_count = 0;
  std::size_t input_dim = 0;
};

// checks density of class ids and uniform feature dimension
void validate_dataset(const Dataset& ds);

enum class DatasetFormat { binary, text, auto_detect };

// "BNDS" binary container: magic, u32 version, u32 sample count, u32 dim,
// then per record dim x f32 features + u16 class + u16 instance, all
// little-endian. Text format: one sample per line, `class instance f0 f1
// ...` with comma or whitespace delimiters, '#' comments allowed.
Dataset load_dataset(const std::string& path,
                     DatasetFormat format = DatasetFormat::auto_detect);
void save_dataset(const Dataset& ds, const std::string& path,
                  DatasetFormat format = DatasetFormat::binary);

struct SyntheticSpec {
  std::size_t classes = 10;
  std::size_t instances_per_class = 8;
  std::size_t samples_per_instance = 100;
  std::size_t dim = 64;
  double class_separation = 2.5;  // std of class centers per coordinate
  double instance_spread = 1.2;   // std of per-instance offsets
  double noise = 0.4;             // per-sample noise std
};

// Gaussian class/instance clusters; byte-identical for identical inputs.
Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// order-insensitive content fingerprint used to validate checkpoints
std::uint64_t dataset_fingerprint(const Dataset& ds);

}  // namespace bncl
