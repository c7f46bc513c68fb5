#pragma once

#include <cstdint>
#include <string>

#include "bncl/backbone.hpp"
#include "bncl/cwr.hpp"
#include "bncl/scenario.hpp"

namespace bncl {

// BNCL container plus a "CWRS" section holding the head state and the run
// fingerprint, written at an experience boundary (tw is rebuilt by the
// next preload, so only cw/past/classes travel).
struct RunCheckpoint {
  BackboneModel backbone;
  // head boundary state
  std::vector<int> class_ids;
  MatD cw;
  std::vector<double> cw_bias;
  std::vector<std::uint64_t> past;
  // resume fingerprint
  Scenario scenario = Scenario::nc;
  std::uint64_t seed = 0;
  std::uint64_t dataset_fingerprint = 0;
  std::uint32_t experiences_done = 0;
};

void save_run_checkpoint(const RunCheckpoint& ckpt, const std::string& path);
RunCheckpoint load_run_checkpoint(const std::string& path);

}  // namespace bncl
