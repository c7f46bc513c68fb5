#include "bncl/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "bncl/rng.hpp"

namespace bncl {

const char* scenario_name(Scenario s) {
  return s == Scenario::ni ? "ni" : "nc";
}

Scenario parse_scenario(const std::string& s) {
  if (s == "ni" || s == "NI") return Scenario::ni;
  if (s == "nc" || s == "NC") return Scenario::nc;
  fail(ErrorKind::invalid_argument, "scenario must be 'ni' or 'nc'");
}

ScenarioSplit build_scenario(const Dataset& ds, Scenario scenario,
                             std::size_t experience_count, std::uint64_t seed,
                             double test_fraction) {
  validate_dataset(ds);
  require(experience_count > 0, ErrorKind::invalid_argument,
          "experience count must be > 0");
  require(test_fraction >= 0.0 && test_fraction < 1.0,
          ErrorKind::invalid_argument, "test fraction must be in [0, 1)");

  // group sample indices by (class, instance) cell, dataset order
  std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    cells[{ds.samples[i].class_id, ds.samples[i].instance_id}].push_back(i);

  // held-out test split, stratified per cell, before any experience split
  ScenarioSplit split;
  Rng rng(derive_seed(seed, 0x5C17));
  std::map<std::pair<int, int>, std::vector<std::size_t>> train_cells;
  for (auto& [key, idx] : cells) {
    std::vector<std::size_t> shuffled = idx;
    rng.shuffle(shuffled);
    auto hold = static_cast<std::size_t>(
        std::floor(test_fraction * static_cast<double>(shuffled.size())));
    if (hold >= shuffled.size()) hold = shuffled.size() - 1;  // keep 1 train
    split.test_indices.insert(split.test_indices.end(), shuffled.begin(),
                              shuffled.begin() + hold);
    train_cells[key].assign(shuffled.begin() + hold, shuffled.end());
  }
  std::sort(split.test_indices.begin(), split.test_indices.end());

  if (scenario == Scenario::nc) {
    require(ds.class_count % experience_count == 0, ErrorKind::constraint,
            "NC scenario: class count (" + std::to_string(ds.class_count) +
                ") not divisible by experience count (" +
                std::to_string(experience_count) + ")");
    const std::size_t group = ds.class_count / experience_count;
    for (std::size_t e = 0; e < experience_count; ++e) {
      Experience exp;
      exp.index = static_cast<int>(e);
      exp.scenario = scenario;
      for (std::size_t c = e * group; c < (e + 1) * group; ++c)
        exp.class_set.push_back(static_cast<int>(c));
      for (const auto& [key, idx] : train_cells)
        if (key.first >= static_cast<int>(e * group) &&
            key.first < static_cast<int>((e + 1) * group))
          exp.sample_indices.insert(exp.sample_indices.end(), idx.begin(),
                                    idx.end());
      std::sort(exp.sample_indices.begin(), exp.sample_indices.end());
      split.experiences.push_back(std::move(exp));
    }
  } else {
    std::set<int> instance_ids;
    for (const Sample& s : ds.samples) instance_ids.insert(s.instance_id);
    require(instance_ids.size() % experience_count == 0, ErrorKind::constraint,
            "NI scenario: instance count (" +
                std::to_string(instance_ids.size()) +
                ") not divisible by experience count (" +
                std::to_string(experience_count) + ")");
    const std::size_t group = instance_ids.size() / experience_count;
    std::vector<int> ordered(instance_ids.begin(), instance_ids.end());
    std::map<int, std::size_t> exp_of_instance;
    for (std::size_t k = 0; k < ordered.size(); ++k)
      exp_of_instance[ordered[k]] = k / group;

    std::vector<int> all_classes;
    for (std::size_t c = 0; c < ds.class_count; ++c)
      all_classes.push_back(static_cast<int>(c));
    for (std::size_t e = 0; e < experience_count; ++e) {
      Experience exp;
      exp.index = static_cast<int>(e);
      exp.scenario = scenario;
      exp.class_set = all_classes;
      split.experiences.push_back(std::move(exp));
    }
    for (const auto& [key, idx] : train_cells) {
      Experience& exp = split.experiences[exp_of_instance.at(key.second)];
      exp.sample_indices.insert(exp.sample_indices.end(), idx.begin(),
                                idx.end());
    }
    for (Experience& exp : split.experiences)
      std::sort(exp.sample_indices.begin(), exp.sample_indices.end());
  }
  return split;
}

}  // namespace bncl
