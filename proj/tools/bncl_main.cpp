#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "bncl/experiment.hpp"
#include "bncl/refcheck.hpp"

namespace {

struct CliOptions {
  bncl::RunConfig run;
  std::string scenario = "nc";
  std::string lp_bits = "float";
  std::string hp_bits = "float";
  std::string metrics_format = "csv";
  bool synthetic = false;
};

void add_run_options(CLI::App* cmd, CliOptions& opt) {
  cmd->add_option("--scenario", opt.scenario, "CL scenario: ni or nc")
      ->check(CLI::IsMember({"ni", "nc"}));
  cmd->add_option("--lp-bits", opt.lp_bits,
                  "forward-pass precision: 8, 16, 32 or float");
  cmd->add_option("--hp-bits", opt.hp_bits,
                  "update-step precision: 8, 16, 32 or float");
  cmd->add_option("--lr", opt.run.learning_rate, "head learning rate");
  cmd->add_option("--backbone-lr", opt.run.backbone_lr,
                  "backbone learning rate (experience 1)");
  cmd->add_option("--epochs-first", opt.run.epochs_first,
                  "epochs for the first experience");
  cmd->add_option("--epochs-rest", opt.run.epochs_rest,
                  "epochs for later experiences");
  cmd->add_option("--batch-size", opt.run.batch_size, "mini-batch size");
  cmd->add_option("--seed", opt.run.seed, "run seed");
  cmd->add_option("--experiences", opt.run.experiences,
                  "experience count (0 = scenario default)");
  cmd->add_option("--test-fraction", opt.run.test_fraction,
                  "held-out test fraction");
  cmd->add_option("--hidden-dims", opt.run.hidden_dims,
                  "backbone block output dims (last = feature dim)");

  auto* dataset = cmd->add_option("--dataset", opt.run.dataset_path,
                                  "dataset file (BNDS binary or text)");
  auto* synth = cmd->add_flag("--synthetic", opt.synthetic,
                              "use the synthetic benchmark (default)");
  synth->excludes(dataset);
  cmd->add_option("--classes", opt.run.synthetic.classes,
                  "synthetic: class count");
  cmd->add_option("--instances", opt.run.synthetic.instances_per_class,
                  "synthetic: instances per class");
  cmd->add_option("--samples-per-instance",
                  opt.run.synthetic.samples_per_instance,
                  "synthetic: samples per instance");
  cmd->add_option("--dim", opt.run.synthetic.dim, "synthetic: input dim");
  cmd->add_option("--class-sep", opt.run.synthetic.class_separation,
                  "synthetic: class center spread");
  cmd->add_option("--instance-spread", opt.run.synthetic.instance_spread,
                  "synthetic: instance offset spread");
  cmd->add_option("--noise", opt.run.synthetic.noise,
                  "synthetic: per-sample noise");

  cmd->add_option("--metrics-out", opt.run.metrics_path,
                  "metrics file, flushed after every experience");
  cmd->add_option("--metrics-format", opt.metrics_format, "csv or json")
      ->check(CLI::IsMember({"csv", "json"}));
  cmd->add_flag("--mae-instrumentation", opt.run.mae_instrumentation,
                "accumulate gradient MAE% per experience");
}

bncl::RunConfig finalize(CliOptions& opt) {
  opt.run.scenario = bncl::parse_scenario(opt.scenario);
  opt.run.lp_bits = bncl::parse_bits(opt.lp_bits);
  opt.run.hp_bits = bncl::parse_bits(opt.hp_bits);
  opt.run.metrics_format = opt.metrics_format == "json"
                               ? bncl::MetricsFormat::json
                               : bncl::MetricsFormat::csv;
  return opt.run;
}

class ProgressPrinter : public bncl::TrainObserver {
public:
  void on_eval(int experience, const std::vector<std::vector<double>>&,
               const std::vector<int>&, double accuracy) override {
    std::printf("experience %d: accuracy %.2f%%\n", experience, accuracy);
    std::fflush(stdout);
  }
};

int cmd_run(CliOptions& opt) {
  const bncl::RunConfig config = finalize(opt);
  ProgressPrinter progress;
  const bncl::RunResult result = bncl::run_experiment(config, &progress);
  for (const auto& row : result.metrics.rows)
    if (row.mae_percent > 0.0)
      std::printf("experience %d: accumulated gradient MAE %.3f%%\n",
                  row.experience, row.mae_percent);
  if (!config.metrics_path.empty())
    std::printf("metrics written to %s\n", config.metrics_path.c_str());
  return 0;
}

int cmd_pretrain(CliOptions& opt, const std::string& out_path) {
  const bncl::RunConfig config = finalize(opt);
  ProgressPrinter progress;
  bncl::pretrain(config, out_path, &progress);
  std::printf("checkpoint written to %s\n", out_path.c_str());
  return 0;
}

int cmd_sweep(CliOptions& opt, std::size_t seed_count,
              const std::string& out_path) {
  const bncl::RunConfig base = finalize(opt);
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < seed_count; ++i) seeds.push_back(base.seed + i);
  const std::vector<bncl::RunMetrics> all = bncl::sweep_runs(base, seeds);

  std::string combined = std::string(bncl::kMetricsCsvHeader) + "\n";
  for (const bncl::RunMetrics& m : all) {
    combined += bncl::metrics_rows_csv(m);
    std::printf("lp=%s hp=%s seed=%llu: final accuracy %.2f%%\n",
                bncl::bits_name(m.lp_bits), bncl::bits_name(m.hp_bits),
                static_cast<unsigned long long>(m.seed),
                m.rows.back().accuracy);
  }
  std::ofstream out(out_path, std::ios::binary);
  bncl::require(out.good(), bncl::ErrorKind::io,
                "cannot open " + out_path + " for writing");
  out << combined;
  out.flush();
  bncl::require(out.good(), bncl::ErrorKind::io, "write failed for " + out_path);
  std::printf("combined metrics written to %s\n", out_path.c_str());
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  const auto results = bncl::refcheck::run_all_checks(seed);
  bool all_pass = true;
  for (const auto& r : results) {
    std::printf("[%s] %s — %.2fs (%s)\n", r.pass ? "PASS" : "FAIL",
                r.name.c_str(), r.seconds, r.detail.c_str());
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bncl — on-device continual learning with binary networks"};
  app.require_subcommand(1);

  CliOptions run_opt;
  auto* run = app.add_subcommand("run", "full continual-learning experiment");
  add_run_options(run, run_opt);
  run->add_option("--checkpoint", run_opt.run.resume_checkpoint,
                  "resume from a pretrain checkpoint");

  CliOptions pre_opt;
  std::string pre_out = "pretrain.bncl";
  auto* pre = app.add_subcommand("pretrain",
                                 "first experience only, writes a checkpoint");
  add_run_options(pre, pre_opt);
  pre->add_option("--out", pre_out, "checkpoint output path");

  CliOptions sweep_opt;
  std::size_t sweep_seeds = 1;
  std::string sweep_out = "sweep.csv";
  auto* sweep = app.add_subcommand(
      "sweep", "lp/hp grid over 8, 16, 32, float; combined CSV");
  add_run_options(sweep, sweep_opt);
  sweep->add_option("--seeds", sweep_seeds, "number of consecutive seeds");
  sweep->add_option("--out", sweep_out, "combined CSV path");

  std::uint64_t gradcheck_seed = 7;
  auto* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference and oracle verification suites");
  gradcheck->add_option("--seed", gradcheck_seed, "verification seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_opt);
    if (pre->parsed()) return cmd_pretrain(pre_opt, pre_out);
    if (sweep->parsed()) return cmd_sweep(sweep_opt, sweep_seeds, sweep_out);
    if (gradcheck->parsed()) return cmd_gradcheck(gradcheck_seed);
  } catch (const bncl::Error& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
