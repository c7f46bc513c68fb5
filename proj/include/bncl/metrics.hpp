#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bncl/scenario.hpp"

namespace bncl {

struct ExperienceMetrics {
  int experience = 0;
  double accuracy = 0.0;     // top-1 on the fixed test split, percent
  double mae_percent = 0.0;  // accumulated gradient MAE% (0 when disabled
                             // and for experience 0, which trains in float)
};

struct RunMetrics {
  std::vector<ExperienceMetrics> rows;
  Scenario scenario = Scenario::nc;
  int lp_bits = 0;
  int hp_bits = 0;
  std::uint64_t seed = 0;
  bool partial = false;  // set when a run aborted mid-stream
};

enum class MetricsFormat { csv, json };

// CSV columns, in this order: experience, accuracy, mae_percent, scenario,
// lp_bits, hp_bits, seed. JSON mirrors the same fields. Output is
// byte-stable for identical metrics.
void export_metrics(const RunMetrics& metrics, const std::string& path,
                    MetricsFormat format = MetricsFormat::csv);
std::string metrics_to_csv(const RunMetrics& metrics);
std::string metrics_to_json(const RunMetrics& metrics);
extern const char* const kMetricsCsvHeader;  // header line, no newline
std::string metrics_rows_csv(const RunMetrics& metrics);  // rows only

// parses what metrics_to_csv wrote (used by tests and `sweep` merging)
RunMetrics parse_metrics_csv(const std::string& text);

}  // namespace bncl
