#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bncl/backbone.hpp"
#include "bncl/checkpoint.hpp"
#include "bncl/cwr.hpp"
#include "bncl/dataset.hpp"
#include "bncl/metrics.hpp"
#include "bncl/scenario.hpp"

namespace bncl {

struct RunConfig {
  Scenario scenario = Scenario::nc;
  int lp_bits = 0;  // 0 = float
  int hp_bits = 0;
  double learning_rate = 0.01;   // head
  double backbone_lr = 0.01;     // experience-1 backbone training
  std::size_t epochs_first = 10;
  std::size_t epochs_rest = 5;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;

  std::string dataset_path;  // empty -> synthetic
  SyntheticSpec synthetic;
  std::size_t experiences = 0;  // 0 -> scenario default (nc 5, ni 8)
  double test_fraction = 0.2;
  std::vector<std::size_t> hidden_dims = {256, 128};  // feature dim = back()

  bool mae_instrumentation = false;
  std::string resume_checkpoint;  // produced by pretrain; resumes at exp 1
  std::string metrics_path;       // flushed after every experience
  MetricsFormat metrics_format = MetricsFormat::csv;
};

std::size_t default_experience_count(Scenario s);

// Observation points for oracles and instrumentation: the exact feature
// stream the head consumes and the fixed test set used for evaluation.
class TrainObserver {
public:
  virtual ~TrainObserver() = default;
  virtual void on_experience_start(int /*index*/,
                                   const std::vector<int>& /*class_set*/) {}
  virtual void on_minibatch(int /*experience*/,
                            const std::vector<std::vector<double>>& /*features*/,
                            const std::vector<int>& /*class_labels*/) {}
  virtual void on_eval(int /*experience*/,
                       const std::vector<std::vector<double>>& /*test_features*/,
                       const std::vector<int>& /*test_labels*/,
                       double /*accuracy_percent*/) {}
};

struct RunResult {
  RunMetrics metrics;
  BackboneModel backbone;
  CwrState head;
};

// Algorithm-1 outer loop: experience 0 trains backbone and head jointly in
// float for epochs_first epochs, then the backbone freezes; every later
// experience expands/preloads the head, trains it for epochs_rest epochs on
// the configured quantized path, consolidates and evaluates cw on the fixed
// test split. Deterministic for a given (dataset bytes, config, seed).
RunResult run_experiment(const RunConfig& config,
                         TrainObserver* observer = nullptr);

// experience 0 only; writes a resumable "BNCL"+"CWRS" checkpoint
RunResult pretrain(const RunConfig& config, const std::string& checkpoint_path,
                   TrainObserver* observer = nullptr);

// lp = hp grid over {8, 16, 32, float} for each seed
std::vector<RunMetrics> sweep_runs(const RunConfig& base,
                                   const std::vector<std::uint64_t>& seeds);

}  // namespace bncl
