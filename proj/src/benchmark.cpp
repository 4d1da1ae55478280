#include "clipfit/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <utility>

#include "clipfit/checkpoint.hpp"
#include "clipfit/errors.hpp"
#include "clipfit/params.hpp"
#include "clipfit/reports.hpp"
#include "clipfit/rng.hpp"

namespace clipfit::bench {

namespace fs = std::filesystem;

DatasetSpec dataset_spec(std::uint64_t seed) {
  DatasetSpec s;  // struct defaults are the committed values
  s.seed = seed;
  return s;
}

ModelConfig model_config() { return ModelConfig::toy(); }

std::uint64_t model_init_seed(std::uint64_t seed) {
  return seed ^ 0x5eed5a17c0ffee42ull;
}

TrainConfig pretrain_config(std::uint64_t seed) {
  TrainConfig c;
  c.lr = 0.01;
  c.batch_size = 32;
  c.epochs = 60;  // chunk budget for pretrain_recipe
  c.momentum = 0.9;
  c.schedule = Schedule::Constant;
  c.regularizer = Regularizer::None;
  c.seed = seed;
  return c;
}

TrainConfig finetune_config(std::uint64_t seed, Regularizer reg) {
  TrainConfig c;
  c.lr = 0.02;
  c.batch_size = 32;
  c.epochs = 150;  // 150 steps: the 4-shot set fits in one batch
  c.momentum = 0.9;
  c.schedule = Schedule::Cosine;
  c.beta = 8.0;
  c.regularizer = reg;
  c.seed = seed;
  return c;
}

std::vector<AblationSelector> ablation_selectors() {
  return {AblationSelector::parse("none"), AblationSelector::parse("bottom3"),
          AblationSelector::parse("top3"), AblationSelector::parse("all")};
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  if (v.size() % 2 == 1) return v[mid];
  return 0.5 * (v[mid - 1] + v[mid]);
}

namespace {

void restore_snapshot(DualEncoder& model, const Snapshot& snap) {
  for (std::size_t i = 0; i < snap.names.size(); ++i) {
    Tensor t = model.param(snap.names[i]);
    std::copy(snap.values[i].begin(), snap.values[i].end(), t.data());
  }
}

void write_stage_manifest(const fs::path& dir, const std::string& command,
                          const json& config,
                          const std::vector<std::string>& outputs,
                          const fs::path* dataset_manifest) {
  RunManifest m;
  m.command = command;
  m.config = config;
  m.outputs = outputs;
  if (dataset_manifest != nullptr) m.add_input(*dataset_manifest);
  write_manifest(dir, m);
}

void save_strategy_artifacts(const fs::path& dir, const StrategyOutcome& s,
                             const TrainConfig& cfg, const DualEncoder& model,
                             const fs::path& dataset_manifest) {
  fs::create_directories(dir);
  write_json(dir / "train_report.json", train_report_to_json(s.report));
  write_text(dir / "loss.csv", loss_csv(s.report));
  write_text(dir / "changes.csv", changes_csv(s.report));
  write_json(dir / "eval.json", eval_result_to_json(s.eval));
  write_text(dir / "per_class.csv", per_class_csv(s.eval));
  save_checkpoint(dir / "checkpoint.cfit", model);
  write_stage_manifest(
      dir, "bench finetune " + s.tag,
      json{{"strategy", s.tag}, {"train", cfg.to_json()}},
      {"train_report.json", "loss.csv", "changes.csv", "eval.json",
       "per_class.csv", "checkpoint.cfit", "manifest.json"},
      &dataset_manifest);
}

}  // namespace

namespace {

// Temperature used when scoring snapshots. Zero-shot accuracy is an argmax
// over cosines and thus temperature-invariant, so a fixed value keeps scores
// comparable across snapshots with different live logit scales.
constexpr double kProbeTau = 0.07;

// Mean zero-shot cross-entropy of the true class over the probe subset, with
// class weights rebuilt from the canonical prompts each call. This scores the
// class-level geometry the downstream evaluation measures; an instance-level
// contrastive score can improve while the class structure collapses.
double probe_score(const DualEncoder& model, const std::vector<Example>& probe,
                   const std::vector<std::vector<std::uint16_t>>& prompts) {
  const ClassWeights weights = build_class_weights(model, prompts);
  double total = 0.0;
  for (const Example& ex : probe) {
    const Tensor f = model.encode_image(ex.image);
    const std::vector<double> p = classify(f, weights, kProbeTau);
    total -= std::log(p[static_cast<std::size_t>(ex.label)]);
  }
  return total / static_cast<double>(probe.size());
}

}  // namespace

PretrainReport pretrain_recipe(DualEncoder& model,
                               const std::vector<Example>& corpus,
                               const TrainConfig& cfg) {
  constexpr std::size_t kChunksPerEpoch = 4;
  constexpr std::size_t kProbeTarget = 96;  // examples in the scoring subset
  constexpr double kRegressTolerance = 0.02;  // only catastrophes trigger rewind
  constexpr std::size_t kPatience = 8;  // rewinds at one lr before halving
  constexpr double kLrFloorFactor = 1.0 / 16.0;

  PretrainReport out;
  out.seed = cfg.seed;

  // Class-balanced scoring subset: the corpus is laid out per class, so a
  // stride covers every class evenly. Prompts cover every class seen.
  std::vector<Example> probe;
  const std::size_t stride = std::max<std::size_t>(1, corpus.size() / kProbeTarget);
  for (std::size_t i = 0; i < corpus.size(); i += stride) probe.push_back(corpus[i]);
  int max_label = 0;
  for (const Example& ex : corpus) max_label = std::max(max_label, ex.label);
  std::vector<std::vector<std::uint16_t>> prompts;
  for (int c = 0; c <= max_label; ++c) prompts.push_back(make_caption(c));

  TrainConfig chunk_cfg = cfg;
  chunk_cfg.epochs = 1;
  chunk_cfg.schedule = Schedule::Constant;

  const std::size_t chunk_len =
      std::max<std::size_t>(2 * cfg.batch_size, corpus.size() / kChunksPerEpoch);
  const std::size_t budget = cfg.epochs * kChunksPerEpoch;

  double lr = cfg.lr;
  Snapshot best = take_snapshot(model);
  double best_score = probe_score(model, probe, prompts);
  std::size_t trips = 0;

  Rng order_rng(cfg.seed ^ 0x7ec15eedull);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = corpus.size();  // forces an initial shuffle

  for (std::size_t chunk = 0; chunk < budget; ++chunk) {
    if (cursor + chunk_len > corpus.size()) {
      order_rng.shuffle(order);
      cursor = 0;
    }
    std::vector<Example> slice;
    slice.reserve(chunk_len);
    for (std::size_t i = 0; i < chunk_len; ++i) slice.push_back(corpus[order[cursor + i]]);
    cursor += chunk_len;

    chunk_cfg.lr = lr;
    chunk_cfg.seed = cfg.seed ^ (0x9e3779b97f4a7c15ull * (chunk + 1));
    const PretrainReport r = pretrain(model, slice, chunk_cfg);
    out.loss.insert(out.loss.end(), r.loss.begin(), r.loss.end());
    out.steps += r.steps;

    const double score = probe_score(model, probe, prompts);
    if (score < best_score) {
      best_score = score;
      best = take_snapshot(model);
      trips = 0;
    } else if (score > best_score + kRegressTolerance) {
      restore_snapshot(model, best);
      if (++trips >= kPatience) {
        trips = 0;
        lr = std::max(0.5 * lr, cfg.lr * kLrFloorFactor);
      }
    }
  }

  restore_snapshot(model, best);
  out.final_tau = model.temperature();
  return out;
}

SeedOutcome run_seed(std::uint64_t seed, const RunOptions& opt) {
  SeedOutcome out;
  out.seed = seed;

  const DatasetSpec spec = dataset_spec(seed);
  const Dataset ds = generate(spec);

  const bool save = !opt.artifacts.empty();
  fs::path root = opt.artifacts;
  fs::path dataset_manifest;
  if (save) {
    save_dataset(root / "dataset", ds);
    dataset_manifest = root / "dataset" / "dataset.json";
    write_stage_manifest(root / "dataset", "bench gen",
                         json{{"dataset", spec.to_json()}},
                         {"dataset.json", "dataset.bin", "manifest.json"},
                         nullptr);
  }

  DualEncoder pretrained(model_config(), model_init_seed(seed));
  const TrainConfig pre_cfg = pretrain_config(seed);
  out.pretrain_report = pretrain_recipe(pretrained, ds.pretrain, pre_cfg);
  out.zero_shot = evaluate(pretrained, ds);
  if (save) {
    const fs::path dir = root / "pretrain";
    fs::create_directories(dir);
    save_checkpoint(dir / "checkpoint.cfit", pretrained);
    write_json(dir / "pretrain_report.json",
               pretrain_report_to_json(out.pretrain_report, &out.zero_shot));
    write_text(dir / "per_class.csv", per_class_csv(out.zero_shot));
    write_stage_manifest(
        dir, "bench pretrain",
        json{{"model", model_config().to_json()},
             {"init_seed", model_init_seed(seed)},
             {"train", pre_cfg.to_json()}},
        {"checkpoint.cfit", "pretrain_report.json", "per_class.csv",
         "manifest.json"},
        &dataset_manifest);
  }

  const std::vector<Example> shots = sample_shots(ds.train, kShots, seed);

  auto run_strategy = [&](const char* tag, StrategyKind kind, Regularizer reg,
                          DualEncoder* keep_model) {
    DualEncoder model = pretrained.clone();
    const TrainConfig cfg = finetune_config(seed, reg);
    StrategyOutcome s;
    s.tag = tag;
    s.report = finetune(model, ds, shots, Strategy::preset(kind), cfg);
    s.eval = evaluate(model, ds);
    if (save) {
      save_strategy_artifacts(root / tag, s, cfg, model, dataset_manifest);
    }
    if (keep_model != nullptr) *keep_model = std::move(model);
    return s;
  };

  DualEncoder clipfit_model = pretrained.clone();
  out.clipfit_kd = run_strategy("clipfit_kd", StrategyKind::ClipFit,
                                Regularizer::Kd, &clipfit_model);
  out.clipfit_plain = run_strategy("clipfit_plain", StrategyKind::ClipFit,
                                   Regularizer::None, nullptr);
  out.layer_norm_image = run_strategy(
      "layer_norm_image", StrategyKind::LayerNormImage, Regularizer::None,
      nullptr);
  out.proj_bias_text = run_strategy(
      "proj_bias_text", StrategyKind::ProjBiasText, Regularizer::None,
      nullptr);

  {
    std::vector<double> changes, grads;
    const TrainReport& r = out.clipfit_kd.report;
    for (std::size_t i = 0; i < r.tracked_groups.size(); ++i) {
      changes.push_back(r.change_curves[i].back());
      grads.push_back(r.gradient_sums[i]);
    }
    out.spearman_grad_change = spearman(grads, changes);
  }

  if (opt.ablation) {
    const TrainConfig cfg = finetune_config(seed, Regularizer::Kd);
    out.ablation =
        freeze_ablation(pretrained, ds, shots,
                        Strategy::preset(StrategyKind::ClipFit),
                        ablation_selectors(), cfg);
    out.has_ablation = true;
    if (save) {
      const fs::path dir = root / "ablation";
      fs::create_directories(dir);
      write_json(dir / "ablation.json", ablation_to_json(out.ablation));
      write_stage_manifest(dir, "bench ablation",
                           json{{"strategy", "clipfit"},
                                {"train", cfg.to_json()}},
                           {"ablation.json", "manifest.json"},
                           &dataset_manifest);
    }
  }

  if (opt.features) {
    const FeatureExport before = export_features(pretrained, ds.base_test);
    const FeatureExport after = export_features(clipfit_model, ds.base_test);
    out.fisher_zero_shot = fisher_ratio(before.features, before.labels);
    out.fisher_clipfit = fisher_ratio(after.features, after.labels);
    out.has_features = true;
    if (save) {
      const fs::path dir = root / "features";
      fs::create_directories(dir);
      write_text(dir / "features_zero_shot.csv", features_csv(before));
      write_text(dir / "features_clipfit.csv", features_csv(after));
      write_json(dir / "fisher.json",
                 json{{"zero_shot", out.fisher_zero_shot},
                      {"clipfit_kd", out.fisher_clipfit}});
      write_stage_manifest(dir, "bench features", json::object(),
                           {"features_zero_shot.csv", "features_clipfit.csv",
                            "fisher.json", "manifest.json"},
                           &dataset_manifest);
    }
  }

  return out;
}

}  // namespace clipfit::bench
