#include "bncl/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include "bncl/rng.hpp"

namespace bncl {

std::size_t default_experience_count(Scenario s) {
  return s == Scenario::nc ? 5 : 8;
}

namespace {

struct Pipeline {
  RunConfig config;
  Dataset dataset;
  ScenarioSplit split;
  BackboneModel backbone;
  CwrState head;
  std::vector<std::vector<double>> test_features;  // cached once frozen
  std::vector<int> test_labels;
  RunMetrics metrics;
  TrainObserver* observer = nullptr;
  std::size_t start_experience = 0;
};

std::uint64_t shuffle_tag(std::size_t experience, std::size_t epoch) {
  return 0xE0000000ULL + experience * 0x10000ULL + epoch;
}

Dataset open_dataset(const RunConfig& config) {
  if (!config.dataset_path.empty()) return load_dataset(config.dataset_path);
  return make_synthetic(config.synthetic, derive_seed(config.seed, 0xDA7A));
}

Pipeline make_pipeline(const RunConfig& config, TrainObserver* observer) {
  require(config.batch_size > 0, ErrorKind::invalid_argument,
          "batch size must be > 0");
  require(!config.hidden_dims.empty(), ErrorKind::invalid_argument,
          "backbone needs at least one block dimension");
  Pipeline p;
  p.config = config;
  p.observer = observer;
  p.dataset = open_dataset(config);
  const std::size_t experience_count =
      config.experiences > 0 ? config.experiences
                             : default_experience_count(config.scenario);
  p.split = build_scenario(p.dataset, config.scenario, experience_count,
                           config.seed, config.test_fraction);
  p.metrics.scenario = config.scenario;
  p.metrics.lp_bits = config.lp_bits;
  p.metrics.hp_bits = config.hp_bits;
  p.metrics.seed = config.seed;

  const QuantConfig qcfg{config.lp_bits, config.hp_bits,
                         config.learning_rate};
  if (config.resume_checkpoint.empty()) {
    std::vector<std::size_t> dims;
    dims.push_back(p.dataset.input_dim);
    dims.insert(dims.end(), config.hidden_dims.begin(),
                config.hidden_dims.end());
    p.backbone = make_backbone(dims, derive_seed(config.seed, 0xB0B0));
    p.head = CwrState(p.backbone.feature_dim, qcfg);
  } else {
    RunCheckpoint ckpt = load_run_checkpoint(config.resume_checkpoint);
    require(ckpt.scenario == config.scenario && ckpt.seed == config.seed,
            ErrorKind::constraint,
            "checkpoint scenario/seed do not match the run config");
    require(ckpt.dataset_fingerprint == dataset_fingerprint(p.dataset),
            ErrorKind::constraint,
            "checkpoint was produced from a different dataset");
    require(ckpt.experiences_done >= 1 &&
                ckpt.experiences_done <= p.split.experiences.size(),
            ErrorKind::constraint, "checkpoint experience index out of range");
    p.backbone = std::move(ckpt.backbone);
    p.head = CwrState(p.backbone.feature_dim, qcfg);
    p.head.class_ids = ckpt.class_ids;
    for (std::size_t r = 0; r < ckpt.class_ids.size(); ++r)
      p.head.class_rows.emplace(ckpt.class_ids[r], r);
    p.head.cw = std::move(ckpt.cw);
    p.head.cw_bias = std::move(ckpt.cw_bias);
    p.head.past = std::move(ckpt.past);
    p.start_experience = ckpt.experiences_done;
  }
  return p;
}

void cache_test_features(Pipeline& p) {
  if (!p.test_features.empty()) return;
  p.test_features.reserve(p.split.test_indices.size());
  p.test_labels.reserve(p.split.test_indices.size());
  for (std::size_t idx : p.split.test_indices) {
    const Sample& s = p.dataset.samples[idx];
    p.test_features.push_back(
        forward_features(p.backbone, std::span<const float>(s.features)));
    p.test_labels.push_back(s.class_id);
  }
}

double evaluate(Pipeline& p) {
  cache_test_features(p);
  require(!p.test_features.empty(), ErrorKind::constraint,
          "empty test split");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < p.test_features.size(); ++i)
    if (classify(p.head, p.test_features[i]) == p.test_labels[i]) ++correct;
  return 100.0 * static_cast<double>(correct) /
         static_cast<double>(p.test_features.size());
}

void flush_metrics(const Pipeline& p) {
  if (p.config.metrics_path.empty()) return;
  export_metrics(p.metrics, p.config.metrics_path, p.config.metrics_format);
}

// mean head gradient over one mini-batch of precomputed features
void head_minibatch_update(CwrState& head,
                           const std::vector<std::vector<double>>& feats,
                           const std::vector<std::size_t>& label_rows) {
  const std::size_t rows = head.class_count();
  HeadGradient mean;
  mean.w = MatD(rows, head.feat_dim);
  mean.b.assign(rows, 0.0);
  std::vector<double> one_hot(rows);
  for (std::size_t s = 0; s < feats.size(); ++s) {
    const HeadOutput out = head_forward(head, feats[s]);
    one_hot.assign(rows, 0.0);
    one_hot[label_rows[s]] = 1.0;
    const HeadGradient g = head_gradients(feats[s], out.probs, one_hot);
    for (std::size_t k = 0; k < mean.w.size(); ++k) mean.w.v[k] += g.w.v[k];
    for (std::size_t r = 0; r < rows; ++r) mean.b[r] += g.b[r];
  }
  const double inv_n = 1.0 / static_cast<double>(feats.size());
  for (double& v : mean.w.v) v *= inv_n;
  for (double& v : mean.b) v *= inv_n;
  sgd_update(head, mean);
}

// experience 0: joint backbone + head training on the float path
void run_joint_experience(Pipeline& p, const Experience& exp) {
  for (std::size_t epoch = 0; epoch < p.config.epochs_first; ++epoch) {
    std::vector<std::size_t> order = exp.sample_indices;
    Rng rng(derive_seed(p.config.seed, shuffle_tag(exp.index, epoch)));
    rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size();
         begin += p.config.batch_size) {
      const std::size_t end =
          std::min(begin + p.config.batch_size, order.size());
      const std::size_t n = end - begin;
      const std::size_t rows = p.head.class_count();

      BackboneGrads bgrads = zero_grads(p.backbone);
      HeadGradient hgrad;
      hgrad.w = MatD(rows, p.head.feat_dim);
      hgrad.b.assign(rows, 0.0);
      std::vector<std::vector<double>> feats;
      std::vector<int> labels;
      std::vector<double> one_hot(rows);
      feats.reserve(n);
      for (std::size_t k = begin; k < end; ++k) {
        const Sample& s = p.dataset.samples[order[k]];
        const std::vector<double> x(s.features.begin(), s.features.end());
        const ForwardCache cache = forward_cache(p.backbone, x);
        const HeadOutput out = head_forward(p.head, cache.features);
        const std::size_t label_row = p.head.row_of(s.class_id);
        one_hot.assign(rows, 0.0);
        one_hot[label_row] = 1.0;
        const HeadGradient g = head_gradients(cache.features, out.probs,
                                              one_hot);
        for (std::size_t i = 0; i < hgrad.w.size(); ++i)
          hgrad.w.v[i] += g.w.v[i];
        for (std::size_t r = 0; r < rows; ++r) hgrad.b[r] += g.b[r];
        const std::vector<double> dfeat =
            feature_gradient(p.head, out.probs, label_row);
        backward_accumulate(p.backbone, cache, dfeat, bgrads);
        feats.push_back(cache.features);
        labels.push_back(s.class_id);
      }
      if (p.observer) p.observer->on_minibatch(exp.index, feats, labels);

      const double inv_n = 1.0 / static_cast<double>(n);
      for (double& v : hgrad.w.v) v *= inv_n;
      for (double& v : hgrad.b) v *= inv_n;
      sgd_update(p.head, hgrad);
      apply_backbone_sgd(p.backbone, bgrads, p.config.backbone_lr, inv_n);
    }
  }
}

// experiences >= 1: frozen backbone, quantized head path
double run_head_experience(Pipeline& p, const Experience& exp) {
  // features are fixed once the backbone froze; compute them once
  std::vector<std::vector<double>> feats;
  std::vector<int> class_labels;
  std::vector<std::size_t> label_rows;
  feats.reserve(exp.sample_indices.size());
  for (std::size_t idx : exp.sample_indices) {
    const Sample& s = p.dataset.samples[idx];
    feats.push_back(
        forward_features(p.backbone, std::span<const float>(s.features)));
    class_labels.push_back(s.class_id);
    label_rows.push_back(p.head.row_of(s.class_id));
  }

  double mae_accumulated = 0.0;
  const bool instrument =
      p.config.mae_instrumentation && !p.head.float_update_path();
  std::vector<std::size_t> order(feats.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < p.config.epochs_rest; ++epoch) {
    std::vector<std::size_t> shuffled = order;
    Rng rng(derive_seed(p.config.seed, shuffle_tag(exp.index, epoch)));
    rng.shuffle(shuffled);
    for (std::size_t begin = 0; begin < shuffled.size();
         begin += p.config.batch_size) {
      const std::size_t end =
          std::min(begin + p.config.batch_size, shuffled.size());
      std::vector<std::vector<double>> batch_feats;
      std::vector<int> batch_ids;
      std::vector<std::size_t> batch_rows;
      for (std::size_t k = begin; k < end; ++k) {
        batch_feats.push_back(feats[shuffled[k]]);
        batch_ids.push_back(class_labels[shuffled[k]]);
        batch_rows.push_back(label_rows[shuffled[k]]);
      }
      if (p.observer) p.observer->on_minibatch(exp.index, batch_feats, batch_ids);
      if (instrument)
        mae_accumulated += gradient_mae(p.head, batch_feats, batch_rows);
      head_minibatch_update(p.head, batch_feats, batch_rows);
    }
  }
  return mae_accumulated;
}

void run_one_experience(Pipeline& p, std::size_t e) {
  const Experience& exp = p.split.experiences[e];
  require(!exp.sample_indices.empty(), ErrorKind::constraint,
          "experience " + std::to_string(e) + " has no training samples");
  if (p.observer) p.observer->on_experience_start(exp.index, exp.class_set);

  std::map<int, std::uint64_t> counts;
  for (std::size_t idx : exp.sample_indices)
    ++counts[p.dataset.samples[idx].class_id];
  std::vector<int> batch_classes;
  for (const auto& [id, n] : counts) batch_classes.push_back(id);

  expand_head(p.head, exp.class_set);
  p.head.float_override = (e == 0);
  preload_tw(p.head, batch_classes);

  const std::uint64_t saturations_before = p.head.saturation_events;
  double mae_accumulated = 0.0;
  if (e == 0) {
    run_joint_experience(p, exp);
    freeze(p.backbone);
  } else {
    mae_accumulated = run_head_experience(p, exp);
  }

  consolidate(p.head, counts);
  p.head.float_override = false;
  if (p.head.saturation_events > saturations_before)
    std::fprintf(stderr, "experience %d: %llu quantization saturations\n",
                 exp.index,
                 static_cast<unsigned long long>(p.head.saturation_events -
                                                 saturations_before));

  const double accuracy = evaluate(p);
  if (p.observer)
    p.observer->on_eval(exp.index, p.test_features, p.test_labels, accuracy);
  p.metrics.rows.push_back(
      {exp.index, accuracy, mae_accumulated});
  flush_metrics(p);
}

RunResult finish(Pipeline&& p) {
  RunResult result;
  result.metrics = std::move(p.metrics);
  result.backbone = std::move(p.backbone);
  result.head = std::move(p.head);
  return result;
}

// recomputed evaluation rows for experiences already covered by a
// checkpoint; mae is 0 there (experience 0 always trains in float)
void replay_done_experiences(Pipeline& p) {
  for (std::size_t e = 0; e < p.start_experience; ++e) {
    const double accuracy = evaluate(p);
    if (p.observer)
      p.observer->on_eval(static_cast<int>(e), p.test_features, p.test_labels,
                          accuracy);
    p.metrics.rows.push_back({static_cast<int>(e), accuracy, 0.0});
  }
  flush_metrics(p);
}

}  // namespace

RunResult run_experiment(const RunConfig& config, TrainObserver* observer) {
  Pipeline p = make_pipeline(config, observer);
  try {
    replay_done_experiences(p);
    for (std::size_t e = p.start_experience; e < p.split.experiences.size();
         ++e)
      run_one_experience(p, e);
  } catch (...) {
    p.metrics.partial = true;
    try {
      flush_metrics(p);
    } catch (...) {
      // the original error wins
    }
    throw;
  }
  return finish(std::move(p));
}

RunResult pretrain(const RunConfig& config, const std::string& checkpoint_path,
                   TrainObserver* observer) {
  require(config.resume_checkpoint.empty(), ErrorKind::invalid_argument,
          "pretrain cannot itself resume from a checkpoint");
  Pipeline p = make_pipeline(config, observer);
  try {
    run_one_experience(p, 0);
  } catch (...) {
    p.metrics.partial = true;
    try {
      flush_metrics(p);
    } catch (...) {
    }
    throw;
  }
  RunCheckpoint ckpt;
  ckpt.backbone = p.backbone;
  ckpt.class_ids = p.head.class_ids;
  ckpt.cw = p.head.cw;
  ckpt.cw_bias = p.head.cw_bias;
  ckpt.past = p.head.past;
  ckpt.scenario = config.scenario;
  ckpt.seed = config.seed;
  ckpt.dataset_fingerprint = dataset_fingerprint(p.dataset);
  ckpt.experiences_done = 1;
  save_run_checkpoint(ckpt, checkpoint_path);
  return finish(std::move(p));
}

std::vector<RunMetrics> sweep_runs(const RunConfig& base,
                                   const std::vector<std::uint64_t>& seeds) {
  require(!seeds.empty(), ErrorKind::invalid_argument, "sweep needs seeds");
  static constexpr int kGrid[4] = {8, 16, 32, 0};
  std::vector<RunMetrics> out;
  for (std::uint64_t seed : seeds) {
    for (int bits : kGrid) {
      RunConfig cfg = base;
      cfg.seed = seed;
      cfg.lp_bits = bits;
      cfg.hp_bits = bits;
      cfg.metrics_path.clear();  // merged by the caller
      out.push_back(run_experiment(cfg).metrics);
    }
  }
  return out;
}

}  // namespace bncl
