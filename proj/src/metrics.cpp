#include "bncl/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "bncl/cwr.hpp"
#include "json.hpp"

namespace bncl {

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

const char* const kMetricsCsvHeader =
    "experience,accuracy,mae_percent,scenario,lp_bits,hp_bits,seed";

std::string metrics_rows_csv(const RunMetrics& m) {
  std::ostringstream out;
  for (const ExperienceMetrics& row : m.rows)
    out << row.experience << ',' << fixed6(row.accuracy) << ','
        << fixed6(row.mae_percent) << ',' << scenario_name(m.scenario) << ','
        << bits_name(m.lp_bits) << ',' << bits_name(m.hp_bits) << ','
        << m.seed << '\n';
  return out.str();
}

std::string metrics_to_csv(const RunMetrics& m) {
  std::string out = std::string(kMetricsCsvHeader) + "\n" +
                    metrics_rows_csv(m);
  if (m.partial) out += "# partial: run aborted before completion\n";
  return out;
}

std::string metrics_to_json(const RunMetrics& m) {
  nlohmann::json doc;
  doc["scenario"] = scenario_name(m.scenario);
  doc["lp_bits"] = bits_name(m.lp_bits);
  doc["hp_bits"] = bits_name(m.hp_bits);
  doc["seed"] = m.seed;
  doc["partial"] = m.partial;
  doc["rows"] = nlohmann::json::array();
  for (const ExperienceMetrics& row : m.rows)
    doc["rows"].push_back({{"experience", row.experience},
                           {"accuracy", row.accuracy},
                           {"mae_percent", row.mae_percent}});
  return doc.dump(2) + "\n";
}

void export_metrics(const RunMetrics& metrics, const std::string& path,
                    MetricsFormat format) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::io, "cannot open " + path + " for writing");
  out << (format == MetricsFormat::csv ? metrics_to_csv(metrics)
                                       : metrics_to_json(metrics));
  out.flush();
  require(out.good(), ErrorKind::io, "write failed for " + path);
}

RunMetrics parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::io,
          "metrics CSV is empty");
  require(line == kMetricsCsvHeader, ErrorKind::io,
          "unexpected metrics CSV header");
  RunMetrics m;
  bool have_config = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.find("partial") != std::string::npos) m.partial = true;
      continue;
    }
    std::istringstream fields(line);
    std::string tok;
    std::vector<std::string> cols;
    while (std::getline(fields, tok, ',')) cols.push_back(tok);
    require(cols.size() == 7, ErrorKind::io, "bad metrics CSV row: " + line);
    ExperienceMetrics row;
    row.experience = std::stoi(cols[0]);
    row.accuracy = std::stod(cols[1]);
    row.mae_percent = std::stod(cols[2]);
    m.rows.push_back(row);
    if (!have_config) {
      m.scenario = parse_scenario(cols[3]);
      m.lp_bits = parse_bits(cols[4]);
      m.hp_bits = parse_bits(cols[5]);
      m.seed = std::stoull(cols[6]);
      have_config = true;
    }
  }
  return m;
}

}  // namespace bncl
