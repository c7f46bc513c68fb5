#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bncl/dataset.hpp"

namespace bncl {

enum class Scenario { ni, nc };

const char* scenario_name(Scenario s);
Scenario parse_scenario(const std::string& s);

// One training batch B_j of the continual-learning stream.
struct Experience {
  int index = 0;
  std::vector<std::size_t> sample_indices;  // into the dataset
  std::vector<int> class_set;               // sorted
  Scenario scenario = Scenario::nc;
};

struct ScenarioSplit {
  std::vector<Experience> experiences;
  std::vector<std::size_t> test_indices;  // fixed across experiences
};

// Holds out a stratified test split (per class/instance cell), then
// partitions the remaining train samples into experiences:
//   NC: class groups in id order, disjoint, class_count % count == 0
//   NI: instance groups in id order, every experience sees all classes
// The experiences cover the train split exactly once.
ScenarioSplit build_scenario(const Dataset& ds, Scenario scenario,
                             std::size_t experience_count, std::uint64_t seed,
                             double test_fraction = 0.2);

}  // namespace bncl
