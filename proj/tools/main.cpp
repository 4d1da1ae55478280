// clipfit — a desk-scale laboratory for selective fine-tuning of a miniature
// dual-encoder vision-language model.
//
// Subcommands: gen, pretrain, finetune, eval, count, analyze, bench.
// Exit codes: 0 success, 2 configuration/usage error, 3 numeric failure
// (non-finite loss), 1 anything else.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "clipfit/analyze.hpp"
#include "clipfit/benchmark.hpp"
#include "clipfit/checkpoint.hpp"
#include "clipfit/errors.hpp"
#include "clipfit/hash.hpp"
#include "clipfit/kernels.hpp"
#include "clipfit/model.hpp"
#include "clipfit/params.hpp"
#include "clipfit/reports.hpp"
#include "clipfit/synthdata.hpp"
#include "clipfit/train.hpp"

namespace fs = std::filesystem;
using namespace clipfit;

namespace {

std::string g_command_line;

std::string join_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

std::string pct(double fraction) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << fraction * 100.0;
  return os.str();
}

json read_json_file(const fs::path& p, bool config_ctx) {
  std::ifstream in(p, std::ios::binary);
  if (!in) {
    const std::string msg = "cannot open \"" + p.string() + "\"";
    if (config_ctx) throw ConfigError(msg);
    throw IoError(msg);
  }
  try {
    return json::parse(in);
  } catch (const std::exception& e) {
    const std::string msg = "bad JSON in \"" + p.string() + "\": " + e.what();
    if (config_ctx) throw ConfigError(msg);
    throw IoError(msg);
  }
}

// A config file holds up to three sections; absent sections keep defaults.
struct FullConfig {
  ModelConfig model;
  TrainConfig train;
  DatasetSpec dataset;

  json resolved() const {
    return json{{"model", model.to_json()},
                {"train", train.to_json()},
                {"dataset", dataset.to_json()}};
  }
};

FullConfig load_config(const std::string& path) {
  FullConfig c;
  if (path.empty()) return c;
  const json j = read_json_file(path, /*config_ctx=*/true);
  strict_keys(j, "config", {"model", "train", "dataset"});
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
  if (j.contains("dataset")) c.dataset = DatasetSpec::from_json(j.at("dataset"));
  return c;
}

ModelConfig resolve_model_arg(const std::string& arg) {
  if (arg == "toy") return ModelConfig::toy();
  if (arg == "vit_b16_clip") return ModelConfig::vit_b16_clip();
  if (fs::exists(arg)) {
    const json j = read_json_file(arg, /*config_ctx=*/true);
    return ModelConfig::from_json(j.contains("model") ? j.at("model") : j);
  }
  throw ConfigError("\"" + arg +
                    "\" is neither a preset (toy, vit_b16_clip) nor a file");
}

RunManifest make_manifest(const json& config,
                          std::vector<std::string> outputs) {
  RunManifest m;
  m.command = g_command_line;
  m.config = config;
  m.outputs = std::move(outputs);
  return m;
}

struct CommonOpts {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
};

// ---------------------------------------------------------------- commands

void cmd_gen(const CommonOpts& c) {
  FullConfig fc = load_config(c.config);
  if (c.seed_opt->count() > 0) fc.dataset.seed = c.seed;
  fc.dataset.validate();
  const Dataset ds = generate(fc.dataset);
  save_dataset(c.out, ds);

  RunManifest m = make_manifest(json{{"dataset", fc.dataset.to_json()}},
                                {"dataset.json", "dataset.bin",
                                 "manifest.json"});
  if (!c.config.empty()) m.add_input(c.config);
  write_manifest(c.out, m);

  std::cout << "dataset: " << ds.spec.num_classes << " classes ("
            << ds.base_class_ids.size() << " base / "
            << ds.new_class_ids.size() << " new), pretrain "
            << ds.pretrain.size() << ", train " << ds.train.size()
            << ", base-test " << ds.base_test.size() << ", new-test "
            << ds.new_test.size() << "\n"
            << "wrote " << (fs::path(c.out) / "dataset.json").string() << "\n";
}

void cmd_pretrain(const CommonOpts& c, const std::string& dataset) {
  FullConfig fc = load_config(c.config);
  if (c.seed_opt->count() > 0) fc.train.seed = c.seed;
  fc.model.validate();
  fc.train.validate();

  const Dataset ds = load_dataset(dataset);
  DualEncoder model(fc.model, bench::model_init_seed(fc.train.seed));
  const PretrainReport report = pretrain(model, ds.pretrain, fc.train);
  const EvalResult zero_shot = evaluate(model, ds);

  fs::create_directories(c.out);
  const fs::path out(c.out);
  save_checkpoint(out / "checkpoint.cfit", model);
  write_json(out / "pretrain_report.json",
             pretrain_report_to_json(report, &zero_shot));
  write_text(out / "per_class.csv", per_class_csv(zero_shot));

  RunManifest m = make_manifest(
      json{{"model", fc.model.to_json()},
           {"init_seed", bench::model_init_seed(fc.train.seed)},
           {"train", fc.train.to_json()}},
      {"checkpoint.cfit", "pretrain_report.json", "per_class.csv",
       "manifest.json"});
  if (!c.config.empty()) m.add_input(c.config);
  m.add_input(fs::path(dataset).has_extension() ? fs::path(dataset)
                                                : fs::path(dataset) /
                                                      "dataset.json");
  write_manifest(out, m);

  std::cout << "pretrain: " << report.steps << " steps, final loss "
            << report.loss.back() << ", tau " << report.final_tau << "\n"
            << "zero-shot: base " << pct(zero_shot.base_acc) << "  new "
            << pct(zero_shot.new_acc) << "  hm " << pct(zero_shot.hm) << "\n";
}

struct FinetuneOpts {
  std::string checkpoint, dataset, strategy = "clipfit";
  std::size_t shots = 4;
  double beta = 0.0;
  std::string regularizer;
  std::size_t epochs = 0;
  double lr = 0.0;
  CLI::Option *beta_opt = nullptr, *epochs_opt = nullptr, *lr_opt = nullptr;
};

void cmd_finetune(const CommonOpts& c, const FinetuneOpts& f) {
  FullConfig fc = load_config(c.config);
  if (c.seed_opt->count() > 0) fc.train.seed = c.seed;
  if (f.beta_opt->count() > 0) fc.train.beta = f.beta;
  if (!f.regularizer.empty()) {
    fc.train.regularizer = regularizer_parse(f.regularizer);
  }
  if (f.epochs_opt->count() > 0) fc.train.epochs = f.epochs;
  if (f.lr_opt->count() > 0) fc.train.lr = f.lr;
  fc.train.validate();
  if (f.shots == 0) throw ConfigError("--shots must be >= 1");
  const Strategy strategy = Strategy::parse(f.strategy);

  DualEncoder model = load_checkpoint(f.checkpoint);
  const Dataset ds = load_dataset(f.dataset);
  const std::vector<Example> shots =
      sample_shots(ds.train, f.shots, fc.train.seed);
  const TrainReport report = finetune(model, ds, shots, strategy, fc.train);
  const EvalResult eval = evaluate(model, ds);

  fs::create_directories(c.out);
  const fs::path out(c.out);
  save_checkpoint(out / "checkpoint.cfit", model);
  write_json(out / "train_report.json", train_report_to_json(report));
  write_text(out / "loss.csv", loss_csv(report));
  write_text(out / "changes.csv", changes_csv(report));
  write_json(out / "eval.json", eval_result_to_json(eval));
  write_text(out / "per_class.csv", per_class_csv(eval));

  RunManifest m = make_manifest(
      json{{"strategy", strategy.name()},
           {"shots", f.shots},
           {"train", fc.train.to_json()}},
      {"checkpoint.cfit", "train_report.json", "loss.csv", "changes.csv",
       "eval.json", "per_class.csv", "manifest.json"});
  if (!c.config.empty()) m.add_input(c.config);
  m.add_input(f.checkpoint);
  m.add_input(fs::path(f.dataset).has_extension()
                  ? fs::path(f.dataset)
                  : fs::path(f.dataset) / "dataset.json");
  write_manifest(out, m);

  std::cout << "finetune " << strategy.name() << ": "
            << report.trainable_scalars << " trainable scalars, "
            << report.steps << " steps, final loss "
            << (report.loss.empty() ? 0.0 : report.loss.back()) << "\n"
            << "eval: base " << pct(eval.base_acc) << "  new "
            << pct(eval.new_acc) << "  hm " << pct(eval.hm) << "\n";
}

void cmd_eval(const CommonOpts& c, const std::string& checkpoint,
              const std::string& dataset) {
  const DualEncoder model = load_checkpoint(checkpoint);
  const Dataset ds = load_dataset(dataset);
  const EvalResult eval = evaluate(model, ds);

  if (!c.out.empty()) {
    fs::create_directories(c.out);
    const fs::path out(c.out);
    write_json(out / "eval.json", eval_result_to_json(eval));
    write_text(out / "per_class.csv", per_class_csv(eval));
    RunManifest m = make_manifest(
        json::object(), {"eval.json", "per_class.csv", "manifest.json"});
    m.add_input(checkpoint);
    m.add_input(fs::path(dataset).has_extension()
                    ? fs::path(dataset)
                    : fs::path(dataset) / "dataset.json");
    write_manifest(out, m);
  }
  std::cout << "eval: base " << pct(eval.base_acc) << "  new "
            << pct(eval.new_acc) << "  hm " << pct(eval.hm) << "\n";
}

void cmd_count(const std::string& model_arg, const std::string& strategy_arg) {
  const ModelConfig cfg = resolve_model_arg(model_arg);
  cfg.validate();
  const Strategy strategy = Strategy::parse(strategy_arg);
  std::cout << count_trainable(cfg, strategy) << "\n";
}

// ------------------------------------------------------------- analyze

void cmd_analyze_changes(const CommonOpts& c, const std::string& pre_path,
                         const std::string& post_path,
                         const std::string& group_by) {
  GroupBy by;
  if (group_by == "parameter") {
    by = GroupBy::Parameter;
  } else if (group_by == "layer") {
    by = GroupBy::Layer;
  } else {
    throw ConfigError("--group-by must be parameter or layer");
  }
  const DualEncoder pre_model = load_checkpoint(pre_path);
  const DualEncoder post_model = load_checkpoint(post_path);
  const std::vector<ChangeRow> rows =
      change_report(take_snapshot(pre_model), take_snapshot(post_model), by);

  if (!c.out.empty()) {
    fs::create_directories(c.out);
    write_json(fs::path(c.out) / "changes.json", change_report_to_json(rows));
    RunManifest m = make_manifest(json{{"group_by", group_by}},
                                  {"changes.json", "manifest.json"});
    m.add_input(pre_path);
    m.add_input(post_path);
    write_manifest(c.out, m);
  }
  for (const ChangeRow& r : rows) {
    std::cout << std::setw(3) << r.rank << "  " << std::setw(12)
              << r.squared_change << "  " << r.group << "\n";
  }
}

void cmd_analyze_gradients(const CommonOpts& c, const std::string& run_dir) {
  const json j =
      read_json_file(fs::path(run_dir) / "train_report.json", false);
  TrainReport report;
  for (const auto& [group, sum] : j.at("gradient_sums").items()) {
    report.tracked_groups.push_back(group);
    report.gradient_sums.push_back(sum.get<double>());
  }
  const std::vector<GradientRow> rows = gradient_report(report);

  if (!c.out.empty()) {
    fs::create_directories(c.out);
    write_json(fs::path(c.out) / "gradients.json",
               gradient_report_to_json(rows));
    RunManifest m =
        make_manifest(json::object(), {"gradients.json", "manifest.json"});
    m.add_input(fs::path(run_dir) / "train_report.json");
    write_manifest(c.out, m);
  }
  for (const GradientRow& r : rows) {
    std::cout << std::setw(3) << r.rank << "  " << std::setw(12)
              << r.squared_sum << "  " << r.group << "\n";
  }
}

void cmd_analyze_features(const CommonOpts& c, const std::string& checkpoint,
                          const std::string& dataset,
                          const std::string& split) {
  const DualEncoder model = load_checkpoint(checkpoint);
  const Dataset ds = load_dataset(dataset);
  const std::vector<Example>* examples = nullptr;
  if (split == "pretrain") examples = &ds.pretrain;
  else if (split == "train") examples = &ds.train;
  else if (split == "base_test") examples = &ds.base_test;
  else if (split == "new_test") examples = &ds.new_test;
  else throw ConfigError("--split must be pretrain|train|base_test|new_test");

  const FeatureExport fx = export_features(model, *examples);
  const double fisher = fisher_ratio(fx.features, fx.labels);

  if (!c.out.empty()) {
    fs::create_directories(c.out);
    const fs::path out(c.out);
    write_text(out / "features.csv", features_csv(fx));
    write_json(out / "features.json",
               json{{"split", split},
                    {"rows", fx.ids.size()},
                    {"fisher_ratio", fisher},
                    {"pca_eigenvalues", fx.pca_eigenvalues}});
    RunManifest m = make_manifest(
        json{{"split", split}},
        {"features.csv", "features.json", "manifest.json"});
    m.add_input(checkpoint);
    m.add_input(fs::path(dataset).has_extension()
                    ? fs::path(dataset)
                    : fs::path(dataset) / "dataset.json");
    write_manifest(out, m);
  }
  std::cout << split << ": " << fx.ids.size() << " rows, fisher ratio "
            << fisher << ", pca eigenvalues [" << fx.pca_eigenvalues[0]
            << ", " << fx.pca_eigenvalues[1] << "]\n";
}

struct AblationOpts {
  std::string checkpoint, dataset, strategy = "clipfit";
  std::vector<std::string> selectors{"none", "bottom3", "top3", "all"};
  std::size_t shots = 4;
  double beta = 0.0;
  std::string regularizer;
  std::size_t epochs = 0;
  double lr = 0.0;
  CLI::Option *beta_opt = nullptr, *epochs_opt = nullptr, *lr_opt = nullptr;
};

void cmd_analyze_ablation(const CommonOpts& c, const AblationOpts& a) {
  FullConfig fc = load_config(c.config);
  if (c.seed_opt->count() > 0) fc.train.seed = c.seed;
  if (a.beta_opt->count() > 0) fc.train.beta = a.beta;
  if (!a.regularizer.empty()) {
    fc.train.regularizer = regularizer_parse(a.regularizer);
  }
  if (a.epochs_opt->count() > 0) fc.train.epochs = a.epochs;
  if (a.lr_opt->count() > 0) fc.train.lr = a.lr;
  fc.train.validate();
  if (a.shots == 0) throw ConfigError("--shots must be >= 1");

  std::vector<AblationSelector> selectors;
  for (const std::string& s : a.selectors) {
    selectors.push_back(AblationSelector::parse(s));
  }

  const DualEncoder pretrained = load_checkpoint(a.checkpoint);
  const Dataset ds = load_dataset(a.dataset);
  const std::vector<Example> shots =
      sample_shots(ds.train, a.shots, fc.train.seed);
  const AblationOutcome outcome =
      freeze_ablation(pretrained, ds, shots, Strategy::parse(a.strategy),
                      selectors, fc.train);

  fs::create_directories(c.out);
  write_json(fs::path(c.out) / "ablation.json", ablation_to_json(outcome));
  RunManifest m = make_manifest(
      json{{"strategy", a.strategy},
           {"shots", a.shots},
           {"train", fc.train.to_json()}},
      {"ablation.json", "manifest.json"});
  if (!c.config.empty()) m.add_input(c.config);
  m.add_input(a.checkpoint);
  m.add_input(fs::path(a.dataset).has_extension()
                  ? fs::path(a.dataset)
                  : fs::path(a.dataset) / "dataset.json");
  write_manifest(c.out, m);

  std::cout << "unrestricted: base " << pct(outcome.unrestricted_eval.base_acc)
            << "  new " << pct(outcome.unrestricted_eval.new_acc) << "  hm "
            << pct(outcome.unrestricted_eval.hm) << "\n";
  for (const AblationRow& r : outcome.rows) {
    std::cout << std::setw(10) << r.selector << ": kept "
              << r.kept_groups.size() << " groups, "
              << r.trainable_scalars << " scalars, base "
              << pct(r.eval.base_acc) << "  new " << pct(r.eval.new_acc)
              << "  hm " << pct(r.eval.hm) << "\n";
  }
}

// ---------------------------------------------------------------- bench

void cmd_bench(const std::string& out, std::vector<std::uint64_t> seeds,
               bool no_ablation, bool features) {
  if (seeds.empty()) {
    seeds.assign(std::begin(bench::kSeeds), std::end(bench::kSeeds));
  }
  fs::create_directories(out);

  std::vector<bench::SeedOutcome> outcomes;
  json per_seed = json::array();
  for (const std::uint64_t seed : seeds) {
    const fs::path tmp = fs::path(out) / ("s" + std::to_string(seed));
    fs::remove_all(tmp);
    bench::RunOptions opt;
    opt.ablation = !no_ablation;
    opt.features = features;
    opt.artifacts = tmp;
    bench::SeedOutcome r = bench::run_seed(seed, opt);

    // Final directory name carries seed and dataset identity.
    const std::string hash8 =
        hex64(fnv1a64_file(tmp / "dataset" / "dataset.json")).substr(0, 8);
    const fs::path final_dir =
        fs::path(out) / ("s" + std::to_string(seed) + "_" + hash8);
    fs::remove_all(final_dir);
    fs::rename(tmp, final_dir);

    auto strat = [](const bench::StrategyOutcome& s) {
      return json{{"base_acc", s.eval.base_acc},
                  {"new_acc", s.eval.new_acc},
                  {"hm", s.eval.hm},
                  {"final_ref_cosine", s.report.final_ref_cosine},
                  {"initial_reg", s.report.initial_reg}};
    };
    json entry{{"seed", seed},
               {"run_dir", final_dir.filename().string()},
               {"zero_shot",
                json{{"base_acc", r.zero_shot.base_acc},
                     {"new_acc", r.zero_shot.new_acc},
                     {"hm", r.zero_shot.hm}}},
               {"clipfit_kd", strat(r.clipfit_kd)},
               {"clipfit_plain", strat(r.clipfit_plain)},
               {"layer_norm_image", strat(r.layer_norm_image)},
               {"proj_bias_text", strat(r.proj_bias_text)},
               {"spearman_grad_change", r.spearman_grad_change}};
    if (r.has_ablation) {
      json ab = json::object();
      for (const AblationRow& row : r.ablation.rows) {
        ab[row.selector] = json{{"hm", row.eval.hm},
                                {"base_acc", row.eval.base_acc},
                                {"new_acc", row.eval.new_acc}};
      }
      entry["ablation"] = std::move(ab);
    }
    if (r.has_features) {
      entry["fisher"] = json{{"zero_shot", r.fisher_zero_shot},
                             {"clipfit_kd", r.fisher_clipfit}};
    }
    per_seed.push_back(std::move(entry));
    outcomes.push_back(std::move(r));

    const bench::SeedOutcome& o = outcomes.back();
    std::cout << "seed " << seed << ": zero-shot base "
              << pct(o.zero_shot.base_acc) << " hm " << pct(o.zero_shot.hm)
              << " | clipfit+kd base " << pct(o.clipfit_kd.eval.base_acc)
              << " hm " << pct(o.clipfit_kd.eval.hm) << " | clipfit base "
              << pct(o.clipfit_plain.eval.base_acc) << " hm "
              << pct(o.clipfit_plain.eval.hm) << " | ln-image hm "
              << pct(o.layer_norm_image.eval.hm) << " | proj-bias hm "
              << pct(o.proj_bias_text.eval.hm) << "\n";
  }

  auto med = [&](auto&& f) {
    std::vector<double> v;
    for (const bench::SeedOutcome& o : outcomes) v.push_back(f(o));
    return bench::median(v);
  };
  json medians{
      {"clipfit_kd_base_minus_zero_shot_base",
       med([](const auto& o) {
         return o.clipfit_kd.eval.base_acc - o.zero_shot.base_acc;
       })},
      {"clipfit_kd_hm_minus_plain_hm",
       med([](const auto& o) {
         return o.clipfit_kd.eval.hm - o.clipfit_plain.eval.hm;
       })},
      {"layer_norm_hm_minus_proj_bias_hm",
       med([](const auto& o) {
         return o.layer_norm_image.eval.hm - o.proj_bias_text.eval.hm;
       })},
      {"spearman_grad_change",
       med([](const auto& o) { return o.spearman_grad_change; })},
      {"ref_cosine_kd_minus_plain",
       med([](const auto& o) {
         return o.clipfit_kd.report.final_ref_cosine -
                o.clipfit_plain.report.final_ref_cosine;
       })}};
  if (!no_ablation) {
    medians["top3_hm_minus_bottom3_hm"] = med([](const auto& o) {
      double top = 0.0, bottom = 0.0;
      for (const AblationRow& row : o.ablation.rows) {
        if (row.selector == "top3") top = row.eval.hm;
        if (row.selector == "bottom3") bottom = row.eval.hm;
      }
      return top - bottom;
    });
  }

  const json summary{{"tool", kToolName},
                     {"version", kToolVersion},
                     {"shots", bench::kShots},
                     {"seeds", seeds},
                     {"runs", std::move(per_seed)},
                     {"medians", medians}};
  write_json(fs::path(out) / "summary.json", summary);
  std::cout << "medians: " << medians.dump() << "\n"
            << "wrote " << (fs::path(out) / "summary.json").string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  g_command_line = join_args(argc, argv);

  CLI::App app{
      "clipfit: selective fine-tuning laboratory for a miniature dual-encoder "
      "vision-language model"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads,
                 "kernel thread cap (0 = library default)")
      ->each([](const std::string& v) {
        const unsigned long n = std::stoul(v);
        if (n > 0) kern::set_max_threads(n);
      });

  // gen
  CommonOpts gen_c;
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--config", gen_c.config, "JSON config (dataset section)");
  gen_c.seed_opt = gen->add_option("--seed", gen_c.seed, "dataset seed");
  gen->add_option("--out", gen_c.out, "output directory")->required();
  gen->callback([&] { cmd_gen(gen_c); });

  // pretrain
  CommonOpts pre_c;
  std::string pre_dataset;
  auto* pre = app.add_subcommand("pretrain",
                                 "contrastively pretrain a dual encoder");
  pre->add_option("--dataset", pre_dataset, "dataset directory or manifest")
      ->required();
  pre->add_option("--config", pre_c.config, "JSON config (model + train)");
  pre_c.seed_opt = pre->add_option("--seed", pre_c.seed, "training seed");
  pre->add_option("--out", pre_c.out, "output directory")->required();
  pre->callback([&] { cmd_pretrain(pre_c, pre_dataset); });

  // finetune
  CommonOpts ft_c;
  FinetuneOpts ft;
  auto* fin = app.add_subcommand("finetune",
                                 "selectively fine-tune a checkpoint");
  fin->add_option("--checkpoint", ft.checkpoint, "pretrained checkpoint")
      ->required();
  fin->add_option("--dataset", ft.dataset, "dataset directory or manifest")
      ->required();
  fin->add_option("--strategy", ft.strategy,
                  "preset name or glob patterns over parameter names");
  fin->add_option("--shots", ft.shots, "examples per base class");
  ft.beta_opt = fin->add_option("--beta", ft.beta, "regularizer weight");
  fin->add_option("--regularizer", ft.regularizer, "none|kd|mse");
  ft.epochs_opt = fin->add_option("--epochs", ft.epochs, "training epochs");
  ft.lr_opt = fin->add_option("--lr", ft.lr, "peak learning rate");
  fin->add_option("--config", ft_c.config, "JSON config (train section)");
  ft_c.seed_opt = fin->add_option("--seed", ft_c.seed, "training seed");
  fin->add_option("--out", ft_c.out, "output directory")->required();
  fin->callback([&] { cmd_finetune(ft_c, ft); });

  // eval
  CommonOpts ev_c;
  std::string ev_checkpoint, ev_dataset;
  auto* ev = app.add_subcommand("eval", "base-to-new evaluation");
  ev->add_option("--checkpoint", ev_checkpoint, "checkpoint")->required();
  ev->add_option("--dataset", ev_dataset, "dataset directory or manifest")
      ->required();
  ev->add_option("--out", ev_c.out, "optional output directory");
  ev->callback([&] { cmd_eval(ev_c, ev_checkpoint, ev_dataset); });

  // count
  std::string ct_model = "vit_b16_clip", ct_strategy;
  auto* ct = app.add_subcommand("count", "trainable-scalar count");
  ct->add_option("model", ct_model, "preset (toy, vit_b16_clip) or file");
  ct->add_option("strategy", ct_strategy, "strategy name or patterns")
      ->required();
  ct->callback([&] { cmd_count(ct_model, ct_strategy); });

  // analyze
  auto* an = app.add_subcommand("analyze", "fine-tuning forensics");
  an->require_subcommand(1);

  CommonOpts ch_c;
  std::string ch_pre, ch_post, ch_by = "parameter";
  auto* ch = an->add_subcommand("changes",
                                "squared parameter change between checkpoints");
  ch->add_option("--pre", ch_pre, "checkpoint before")->required();
  ch->add_option("--post", ch_post, "checkpoint after")->required();
  ch->add_option("--group-by", ch_by, "parameter|layer");
  ch->add_option("--out", ch_c.out, "optional output directory");
  ch->callback([&] { cmd_analyze_changes(ch_c, ch_pre, ch_post, ch_by); });

  CommonOpts gr_c;
  std::string gr_run;
  auto* gr = an->add_subcommand("gradients",
                                "gradient-mass ranking of a finetune run");
  gr->add_option("--run", gr_run, "run directory with train_report.json")
      ->required();
  gr->add_option("--out", gr_c.out, "optional output directory");
  gr->callback([&] { cmd_analyze_gradients(gr_c, gr_run); });

  CommonOpts fx_c;
  std::string fx_checkpoint, fx_dataset, fx_split = "base_test";
  auto* fx = an->add_subcommand("features",
                                "image-feature export with 2-D PCA");
  fx->add_option("--checkpoint", fx_checkpoint, "checkpoint")->required();
  fx->add_option("--dataset", fx_dataset, "dataset directory or manifest")
      ->required();
  fx->add_option("--split", fx_split, "pretrain|train|base_test|new_test");
  fx->add_option("--out", fx_c.out, "optional output directory");
  fx->callback(
      [&] { cmd_analyze_features(fx_c, fx_checkpoint, fx_dataset, fx_split); });

  CommonOpts ab_c;
  AblationOpts ab;
  auto* abl = an->add_subcommand("ablation",
                                 "freeze-subset importance protocol");
  abl->add_option("--checkpoint", ab.checkpoint, "pretrained checkpoint")
      ->required();
  abl->add_option("--dataset", ab.dataset, "dataset directory or manifest")
      ->required();
  abl->add_option("--strategy", ab.strategy, "base strategy");
  abl->add_option("--selectors", ab.selectors,
                  "all|none|first|last|top<k>|bottom<k>")
      ->delimiter(',');
  abl->add_option("--shots", ab.shots, "examples per base class");
  ab.beta_opt = abl->add_option("--beta", ab.beta, "regularizer weight");
  abl->add_option("--regularizer", ab.regularizer, "none|kd|mse");
  ab.epochs_opt = abl->add_option("--epochs", ab.epochs, "training epochs");
  ab.lr_opt = abl->add_option("--lr", ab.lr, "peak learning rate");
  abl->add_option("--config", ab_c.config, "JSON config (train section)");
  ab_c.seed_opt = abl->add_option("--seed", ab_c.seed, "training seed");
  abl->add_option("--out", ab_c.out, "output directory")->required();
  abl->callback([&] { cmd_analyze_ablation(ab_c, ab); });

  // bench
  std::string bench_out;
  std::vector<std::uint64_t> bench_seeds;
  bool bench_no_ablation = false, bench_features = false;
  auto* bn = app.add_subcommand(
      "bench", "full committed pipeline: gen, pretrain, finetune, eval, "
               "analyze");
  bn->add_option("--out", bench_out, "output directory")->required();
  bn->add_option("--seeds", bench_seeds, "seeds (default 1,2,3)")
      ->delimiter(',');
  bn->add_flag("--no-ablation", bench_no_ablation, "skip the freeze ablation");
  bn->add_flag("--features", bench_features,
               "export features and Fisher ratios");
  bn->callback([&] {
    cmd_bench(bench_out, bench_seeds, bench_no_ablation, bench_features);
  });

  try {
    app.parse(argc, argv);
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
