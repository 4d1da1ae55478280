#include "clipfit/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "clipfit/errors.hpp"
#include "clipfit/kernels.hpp"
#include "clipfit/ops.hpp"
#include "clipfit/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace clipfit {

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("train.lr must be > 0");
  if (batch_size == 0) throw ConfigError("train.batch_size must be > 0");
  if (epochs == 0) throw ConfigError("train.epochs must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ConfigError("train.momentum must be in [0, 1)");
  }
  if (beta < 0.0) throw ConfigError("train.beta must be >= 0");
  if (log_every == 0) throw ConfigError("train.log_every must be > 0");
}

std::string schedule_name(Schedule s) {
  return s == Schedule::Cosine ? "cosine" : "constant";
}

Schedule schedule_parse(const std::string& s) {
  if (s == "cosine") return Schedule::Cosine;
  if (s == "constant") return Schedule::Constant;
  throw ConfigError("unknown schedule \"" + s + "\"");
}

std::string regularizer_name(Regularizer r) {
  switch (r) {
    case Regularizer::None: return "none";
    case Regularizer::Kd: return "kd";
    case Regularizer::MseBias: return "mse_bias";
  }
  return "?";
}

Regularizer regularizer_parse(const std::string& s) {
  if (s == "none") return Regularizer::None;
  if (s == "kd") return Regularizer::Kd;
  if (s == "mse" || s == "mse_bias") return Regularizer::MseBias;
  throw ConfigError("unknown regularizer \"" + s + "\"");
}

json TrainConfig::to_json() const {
  return json{{"lr", lr},
              {"batch_size", batch_size},
              {"epochs", epochs},
              {"momentum", momentum},
              {"schedule", schedule_name(schedule)},
              {"beta", beta},
              {"regularizer", regularizer_name(regularizer)},
              {"kd_raw_cosine", kd_raw_cosine},
              {"seed", seed},
              {"log_every", log_every}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  strict_keys(j, "train",
              {"lr", "batch_size", "epochs", "momentum", "schedule", "beta",
               "regularizer", "kd_raw_cosine", "seed", "log_every"});
  TrainConfig c;
  c.lr = json_get<double>(j, "train", "lr", c.lr);
  c.batch_size = json_get<std::size_t>(j, "train", "batch_size", c.batch_size);
  c.epochs = json_get<std::size_t>(j, "train", "epochs", c.epochs);
  c.momentum = json_get<double>(j, "train", "momentum", c.momentum);
  if (j.contains("schedule")) {
    c.schedule = schedule_parse(j.at("schedule").get<std::string>());
  }
  c.beta = json_get<double>(j, "train", "beta", c.beta);
  if (j.contains("regularizer")) {
    c.regularizer = regularizer_parse(j.at("regularizer").get<std::string>());
  }
  c.kd_raw_cosine = json_get<bool>(j, "train", "kd_raw_cosine", c.kd_raw_cosine);
  c.seed = json_get<std::uint64_t>(j, "train", "seed", c.seed);
  c.log_every = json_get<std::size_t>(j, "train", "log_every", c.log_every);
  c.validate();
  return c;
}

double schedule_lr(const TrainConfig& cfg, std::size_t step,
                   std::size_t total_steps) {
  if (cfg.schedule == Schedule::Constant || total_steps == 0) return cfg.lr;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

SgdOptimizer::SgdOptimizer(DualEncoder& model, const FreezeMask& mask,
                           double momentum)
    : momentum_(momentum) {
  for (const std::string& name : model.param_names()) {
    Tensor p = model.param(name);
    if (mask.trainable(name)) {
      trainable_.push_back(p);
      trainable_names_.push_back(name);
      velocity_.emplace_back(p.numel(), 0.0);
    } else {
      frozen_.push_back(p);
      frozen_names_.push_back(name);
    }
  }
}

void SgdOptimizer::step(double lr) {
  for (std::size_t i = 0; i < frozen_.size(); ++i) {
    if (frozen_[i].has_grad()) {
      throw MaskViolationError("frozen parameter \"" + frozen_names_[i] +
                               "\" carries a gradient");
    }
  }
  for (std::size_t i = 0; i < trainable_.size(); ++i) {
    Tensor& p = trainable_[i];
    std::vector<double>& v = velocity_[i];
    const double* g = p.has_grad() ? p.grad().data() : nullptr;
    double* pd = p.data();
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = momentum_ * v[j] + (g ? g[j] : 0.0);
      pd[j] -= lr * v[j];
    }
  }
}

namespace {

void zero_all_grads(DualEncoder& model) {
  for (const std::string& name : model.param_names()) {
    model.param(name).zero_grad();
  }
}

void check_finite(double v, const char* what, std::size_t step) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string(what) + " is not finite at step " +
                       std::to_string(step));
  }
}

// Batch image embeddings, L2-normalized rows [b x embed].
Tensor encode_image_batch(const DualEncoder& model,
                          std::span<const Example> batch, Tape* tape) {
  std::vector<Tensor> rows;
  rows.reserve(batch.size());
  for (const Example& e : batch) {
    Tensor f = model.encode_image(e.image, tape);
    rows.push_back(ops::reshape(f, {1, model.config().embed_dim}, tape));
  }
  return ops::l2_normalize_rows(ops::concat_rows(rows, tape), tape);
}

double mean_ref_cosine(const DualEncoder& model, const Dataset& ds,
                       const ClassWeights& reference) {
  ClassWeights live = build_class_weights(
      model, ds.prompts_for(ds.base_class_ids), nullptr, false);
  double acc = 0.0;
  for (std::size_t i = 0; i < reference.k(); ++i) {
    acc += ops::cosine_similarity(ops::select_row(live.rows, i),
                                  ops::select_row(reference.rows, i))
               .item();
  }
  return acc / static_cast<double>(reference.k());
}

}  // namespace

Tensor ce_loss(const DualEncoder& model, const ClassWeights& weights,
               std::span<const Example> batch, const std::vector<int>& labels,
               Tape* tape) {
  if (batch.empty()) throw EmptyDatasetError("ce_loss: empty batch");
  if (labels.size() != batch.size()) {
    throw DimensionError("ce_loss: " + std::to_string(batch.size()) +
                         " examples but " + std::to_string(labels.size()) +
                         " labels");
  }
  Tensor fn = encode_image_batch(model, batch, tape);
  Tensor logits = ops::matmul(fn, ops::transpose(weights.rows, tape), tape);
  logits = ops::scale_add(logits, 1.0 / model.temperature(), 0.0, tape);
  return ops::softmax_cross_entropy(logits, labels, tape);
}

Tensor kd_loss(const ClassWeights& live, const ClassWeights& reference,
               bool raw_cosine, Tape* tape) {
  if (live.k() == 0) throw EmptyClassError("kd_loss: no live weights");
  if (live.k() != reference.k() ||
      live.rows.dim(1) != reference.rows.dim(1)) {
    throw DimensionError("kd_loss: live " + shape_str(live.rows.shape()) +
                         " vs reference " +
                         shape_str(reference.rows.shape()));
  }
  std::vector<Tensor> cos;
  cos.reserve(live.k());
  for (std::size_t i = 0; i < live.k(); ++i) {
    Tensor c = ops::cosine_similarity(ops::select_row(live.rows, i, tape),
                                      ops::select_row(reference.rows, i, tape),
                                      tape);
    cos.push_back(ops::reshape(c, {1, 1}, tape));
  }
  Tensor mean_cos = ops::mean(ops::concat_rows(cos, tape), tape);
  if (raw_cosine) return mean_cos;  // Eq. as printed; see TrainConfig
  return ops::scale_add(mean_cos, -1.0, 1.0, tape);
}

Tensor mse_bias_loss(const DualEncoder& model, const FreezeMask& mask,
                     const Snapshot& reference, Tape* tape) {
  std::vector<std::string> layers;
  for (const ParamInfo& p : mask.params()) {
    const std::string& n = p.name;
    if (mask.trainable(n) && n.rfind("text.", 0) == 0 &&
        n.size() >= 5 && n.compare(n.size() - 5, 5, ".bias") == 0) {
      layers.push_back(n);
    }
  }
  if (layers.empty()) return Tensor::scalar(0.0);

  Tensor total = Tensor::scalar(0.0);
  for (const std::string& name : layers) {
    Tensor live = model.param(name);
    auto it = std::find(reference.names.begin(), reference.names.end(), name);
    if (it == reference.names.end()) {
      throw IncompatibleSnapshotError("mse_bias_loss: reference lacks " + name);
    }
    Tensor ref(live.shape(),
               reference.values[static_cast<std::size_t>(
                   it - reference.names.begin())]);
    Tensor d = ops::sub(ref, live, tape);
    total = ops::add(total, ops::sum(ops::mul(d, d, tape), tape), tape);
  }
  return ops::scale_add(total, 1.0 / static_cast<double>(layers.size()), 0.0,
                        tape);
}

PretrainReport pretrain(DualEncoder& model, const std::vector<Example>& corpus,
                        const TrainConfig& cfg) {
  cfg.validate();
  if (corpus.size() < 2) {
    throw ContrastiveDegenerateError(
        "pretrain: contrastive training needs at least two pairs");
  }
  const std::size_t batch = std::min(cfg.batch_size, corpus.size());
  if (batch < 2) {
    throw ContrastiveDegenerateError("pretrain: batch of one has no negatives");
  }

  FreezeMask mask = apply_strategy(model, Strategy::custom("*"));
  SgdOptimizer opt(model, mask, cfg.momentum);
  Tensor logit_scale = model.logit_scale();

  // Batches of at least two pairs; a trailing singleton is folded into the
  // previous batch rather than trained degenerately.
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // per epoch layout
  for (std::size_t start = 0; start < corpus.size(); start += batch) {
    std::size_t len = std::min(batch, corpus.size() - start);
    if (len == 1 && !spans.empty()) {
      spans.back().second += 1;
      break;
    }
    spans.emplace_back(start, len);
  }
  const std::size_t total_steps = cfg.epochs * spans.size();

  PretrainReport report;
  report.seed = cfg.seed;
  Rng rng(cfg.seed);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (const auto& [start, len] : spans) {
      Tape tape;
      std::vector<Tensor> img_rows, txt_rows;
      img_rows.reserve(len);
      txt_rows.reserve(len);
      const std::size_t e = model.config().embed_dim;
      for (std::size_t i = 0; i < len; ++i) {
        const Example& ex = corpus[order[start + i]];
        img_rows.push_back(
            ops::reshape(model.encode_image(ex.image, &tape), {1, e}, &tape));
        txt_rows.push_back(
            ops::reshape(model.encode_text(ex.caption, &tape), {1, e}, &tape));
      }
      Tensor fn = ops::l2_normalize_rows(ops::concat_rows(img_rows, &tape), &tape);
      Tensor gn = ops::l2_normalize_rows(ops::concat_rows(txt_rows, &tape), &tape);
      Tensor sim = ops::matmul(fn, ops::transpose(gn, &tape), &tape);
      Tensor logits =
          ops::mul_scalar(sim, ops::exp(logit_scale, &tape), &tape);

      std::vector<int> labels(len);
      std::iota(labels.begin(), labels.end(), 0);
      Tensor ce_i2t = ops::softmax_cross_entropy(logits, labels, &tape);
      Tensor ce_t2i = ops::softmax_cross_entropy(
          ops::transpose(logits, &tape), labels, &tape);
      Tensor loss =
          ops::scale_add(ops::add(ce_i2t, ce_t2i, &tape), 0.5, 0.0, &tape);
      check_finite(loss.item(), "pretrain loss", step);

      zero_all_grads(model);
      tape.backward(loss);
      opt.step(schedule_lr(cfg, step, total_steps));
      // Clamp the inverse temperature like the original recipe: tau stays in
      // [1/100, 1]. The lower bound stops the model from flattening every
      // logit through this single scalar, which is the cheapest way to fake
      // progress on the contrastive loss without aligning the towers.
      double& ls = logit_scale.data()[0];
      ls = std::clamp(ls, kMinLogitScale, kMaxLogitScale);

      report.loss.push_back(loss.item());
      ++step;
    }
  }
  report.steps = step;
  report.final_tau = model.temperature();
  return report;
}

TrainReport finetune(DualEncoder& model, const Dataset& ds,
                     const std::vector<Example>& shots,
                     const Strategy& strategy, const TrainConfig& cfg) {
  cfg.validate();
  if (shots.empty()) throw EmptyDatasetError("finetune: no training examples");

  const std::vector<std::vector<std::uint16_t>> base_prompts =
      ds.prompts_for(ds.base_class_ids);
  std::vector<int> label_to_row(ds.spec.num_classes, -1);
  for (std::size_t i = 0; i < ds.base_class_ids.size(); ++i) {
    label_to_row[static_cast<std::size_t>(ds.base_class_ids[i])] =
        static_cast<int>(i);
  }
  std::vector<int> shot_rows(shots.size());
  for (std::size_t i = 0; i < shots.size(); ++i) {
    const int label = shots[i].label;
    if (label < 0 || static_cast<std::size_t>(label) >= label_to_row.size() ||
        label_to_row[static_cast<std::size_t>(label)] < 0) {
      throw IndexError("finetune: example " + std::to_string(shots[i].id) +
                       " has non-base label " + std::to_string(label));
    }
    shot_rows[i] = label_to_row[static_cast<std::size_t>(label)];
  }

  TrainReport report;
  report.strategy = strategy.name();
  report.seed = cfg.seed;

  // Reference weights and pre snapshot come from the untouched model.
  const ClassWeights reference =
      build_class_weights(model, base_prompts, nullptr, true);
  report.pre = take_snapshot(model, 0);

  FreezeMask mask = apply_strategy(model, strategy);
  report.trainable_scalars = mask.trainable_scalars();
  report.tracked_groups = mask.trainable_names();
  report.gradient_sums.assign(report.tracked_groups.size(), 0.0);
  report.change_curves.assign(report.tracked_groups.size(), {});

  std::vector<Tensor> tracked;
  std::vector<std::vector<double>> tracked_pre;
  for (const std::string& name : report.tracked_groups) {
    tracked.push_back(model.param(name));
    tracked_pre.push_back(model.param(name).vec());
  }

  auto log_changes = [&](std::size_t step) {
    report.logged_steps.push_back(step);
    for (std::size_t i = 0; i < tracked.size(); ++i) {
      const std::vector<double>& now = tracked[i].vec();
      const std::vector<double>& was = tracked_pre[i];
      double sq = 0.0;
      for (std::size_t j = 0; j < now.size(); ++j) {
        const double d = now[j] - was[j];
        sq += d * d;
      }
      report.change_curves[i].push_back(sq);
    }
  };

  const std::size_t n = shots.size();
  const std::size_t batch = std::min(cfg.batch_size, n);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;
  report.initial_reg = 0.0;
  if (cfg.regularizer == Regularizer::Kd) {
    ClassWeights live0 =
        build_class_weights(model, base_prompts, nullptr, false);
    report.initial_reg = kd_loss(live0, reference, cfg.kd_raw_cosine, nullptr).item();
  } else if (cfg.regularizer == Regularizer::MseBias) {
    report.initial_reg =
        mse_bias_loss(model, mask, report.pre, nullptr).item();
  }
  log_changes(0);

  SgdOptimizer opt(model, mask, cfg.momentum);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  const bool trains = !report.tracked_groups.empty();
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs && trains; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t len = std::min(batch, n - start);
      std::vector<Example> batch_ex;
      std::vector<int> batch_labels;
      batch_ex.reserve(len);
      for (std::size_t i = 0; i < len; ++i) {
        batch_ex.push_back(shots[order[start + i]]);
        batch_labels.push_back(shot_rows[order[start + i]]);
      }

      Tape tape;
      ClassWeights live = build_class_weights(model, base_prompts, &tape);
      Tensor ce = ce_loss(model, live, batch_ex, batch_labels, &tape);
      Tensor total = ce;
      double reg_value = 0.0;
      if (cfg.regularizer == Regularizer::Kd) {
        Tensor reg = kd_loss(live, reference, cfg.kd_raw_cosine, &tape);
        reg_value = reg.item();
        total = ops::add(ce, ops::scale_add(reg, cfg.beta, 0.0, &tape), &tape);
      } else if (cfg.regularizer == Regularizer::MseBias) {
        Tensor reg = mse_bias_loss(model, mask, report.pre, &tape);
        reg_value = reg.item();
        total = ops::add(ce, ops::scale_add(reg, cfg.beta, 0.0, &tape), &tape);
      }
      check_finite(total.item(), "finetune loss", step);

      zero_all_grads(model);
      tape.backward(total);
      for (std::size_t i = 0; i < tracked.size(); ++i) {
        if (!tracked[i].has_grad()) continue;
        const std::vector<double>& g = tracked[i].grad();
        double sq = 0.0;
        for (double v : g) sq += v * v;
        report.gradient_sums[i] += sq;
      }
      opt.step(schedule_lr(cfg, step, total_steps));

      report.loss.push_back(total.item());
      report.ce.push_back(ce.item());
      report.reg.push_back(reg_value);
      report.lr.push_back(schedule_lr(cfg, step, total_steps));
      ++step;
      if (step % cfg.log_every == 0 || step == total_steps) log_changes(step);
    }
  }

  report.steps = step;
  report.post = take_snapshot(model, static_cast<std::int64_t>(step));
  report.final_ref_cosine = mean_ref_cosine(model, ds, reference);
  return report;
}

double harmonic_mean(double a, double b) {
  if (a <= 0.0 || b <= 0.0) return 0.0;
  return 2.0 * a * b / (a + b);
}

namespace {

void eval_split(const DualEncoder& model, const std::vector<Example>& split,
                const ClassWeights& weights, const std::vector<int>& class_ids,
                const char* split_name, double* acc_out,
                std::vector<ClassAccuracy>* per_class) {
  if (split.empty()) {
    throw EmptyDatasetError(std::string("evaluate: empty ") + split_name +
                            " split");
  }
  const double tau = model.temperature();
  std::vector<int> row_of_label;
  for (std::size_t i = 0; i < class_ids.size(); ++i) {
    const std::size_t c = static_cast<std::size_t>(class_ids[i]);
    if (c >= row_of_label.size()) row_of_label.resize(c + 1, -1);
    row_of_label[c] = static_cast<int>(i);
  }

  std::vector<int> pred(split.size());
  const long long count = static_cast<long long>(split.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(kern::max_threads()) \
    if (kern::max_threads() > 1)
#endif
  for (long long i = 0; i < count; ++i) {
    Tensor f = model.encode_image(split[static_cast<std::size_t>(i)].image);
    pred[static_cast<std::size_t>(i)] =
        static_cast<int>(argmax_class(classify(f, weights, tau)));
  }

  std::vector<std::size_t> n(class_ids.size(), 0), ok(class_ids.size(), 0);
  for (std::size_t i = 0; i < split.size(); ++i) {
    const std::size_t label = static_cast<std::size_t>(split[i].label);
    if (label >= row_of_label.size() || row_of_label[label] < 0) {
      throw IndexError("evaluate: label " + std::to_string(split[i].label) +
                       " not in the " + split_name + " class list");
    }
    const std::size_t row = static_cast<std::size_t>(row_of_label[label]);
    n[row] += 1;
    ok[row] += pred[i] == row_of_label[label] ? 1 : 0;
  }

  std::size_t total = 0, correct = 0;
  for (std::size_t i = 0; i < class_ids.size(); ++i) {
    total += n[i];
    correct += ok[i];
    ClassAccuracy ca;
    ca.class_id = class_ids[i];
    ca.split = split_name;
    ca.count = n[i];
    ca.correct = ok[i];
    ca.accuracy = n[i] ? static_cast<double>(ok[i]) / static_cast<double>(n[i])
                       : 0.0;
    per_class->push_back(ca);
  }
  *acc_out = static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace

EvalResult evaluate(const DualEncoder& model, const Dataset& ds) {
  EvalResult r;
  const ClassWeights base_w =
      build_class_weights(model, ds.prompts_for(ds.base_class_ids));
  const ClassWeights new_w =
      build_class_weights(model, ds.prompts_for(ds.new_class_ids));
  eval_split(model, ds.base_test, base_w, ds.base_class_ids, "base",
             &r.base_acc, &r.per_class);
  eval_split(model, ds.new_test, new_w, ds.new_class_ids, "new", &r.new_acc,
             &r.per_class);
  r.hm = harmonic_mean(r.base_acc, r.new_acc);
  return r;
}

}  // namespace clipfit
