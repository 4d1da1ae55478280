#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "clipfit/jsonutil.hpp"
#include "clipfit/model.hpp"
#include "clipfit/params.hpp"
#include "clipfit/synthdata.hpp"

namespace clipfit {

enum class Schedule { Constant, Cosine };
enum class Regularizer { None, Kd, MseBias };

struct TrainConfig {
  double lr = 0.002;
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  double momentum = 0.9;
  Schedule schedule = Schedule::Cosine;
  // KD weight: 8.0 suits base-to-new runs, 2.0 plain few-shot runs.
  double beta = 8.0;
  Regularizer regularizer = Regularizer::None;
  // When set, the KD term is the mean cosine itself instead of mean
  // (1 - cosine) — the distillation objective exactly as Eq. 4 prints it,
  // which *rewards* drifting away from the reference. Off by default.
  bool kd_raw_cosine = false;
  std::uint64_t seed = 0;
  std::size_t log_every = 1;

  void validate() const;
  json to_json() const;
  static TrainConfig from_json(const json& j);  // strict keys
};

std::string schedule_name(Schedule s);
Schedule schedule_parse(const std::string& s);
std::string regularizer_name(Regularizer r);
Regularizer regularizer_parse(const std::string& s);

// Cosine: lr * 0.5 * (1 + cos(pi * step / total)); Constant: lr.
double schedule_lr(const TrainConfig& cfg, std::size_t step,
                   std::size_t total_steps);

// Plain SGD with momentum: v <- mu*v + g; p <- p - lr*v. step() throws
// MaskViolationError if any frozen parameter carries a gradient, naming it.
class SgdOptimizer {
 public:
  SgdOptimizer(DualEncoder& model, const FreezeMask& mask, double momentum);
  void step(double lr);

 private:
  std::vector<Tensor> trainable_;
  std::vector<std::string> trainable_names_;
  std::vector<Tensor> frozen_;
  std::vector<std::string> frozen_names_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
};

// Cross-entropy over cosine/temperature logits for a batch of images against
// live class weights. labels are row indices into `weights`.
Tensor ce_loss(const DualEncoder& model, const ClassWeights& weights,
               std::span<const Example> batch, const std::vector<int>& labels,
               Tape* tape);

// Mean over classes of (1 - cos(w_ref_i, w_live_i)); with raw_cosine, the
// mean cosine itself. Both weight sets must have matching shapes.
Tensor kd_loss(const ClassWeights& live, const ClassWeights& reference,
               bool raw_cosine, Tape* tape);

// (1/L) * sum over unfrozen text-bias layers of ||b_ref - b||^2. L counts
// those layers; zero matching layers yields a constant 0.
Tensor mse_bias_loss(const DualEncoder& model, const FreezeMask& mask,
                     const Snapshot& reference, Tape* tape);

struct PretrainReport {
  std::size_t steps = 0;
  std::vector<double> loss;  // per step
  double final_tau = 0.0;
  std::uint64_t seed = 0;
};

// Symmetric InfoNCE over image-caption pairs; trains every parameter
// including logit_scale (clamped to [kMinLogitScale, kMaxLogitScale]).
// Batches of one have no negatives: ContrastiveDegenerateError.
PretrainReport pretrain(DualEncoder& model, const std::vector<Example>& corpus,
                        const TrainConfig& cfg);

struct TrainReport {
  std::string strategy;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  std::uint64_t trainable_scalars = 0;
  std::vector<double> loss;  // total, per step
  std::vector<double> ce;    // cross-entropy component
  std::vector<double> reg;   // regularizer component (0 when none)
  std::vector<double> lr;
  // Forensics: squared change ||p_t - p_0||^2 per trainable group at the
  // logged steps (step 0 included), and cumulative squared gradient sums
  // accumulated at every step regardless of logging frequency.
  std::vector<std::string> tracked_groups;
  std::vector<std::size_t> logged_steps;
  std::vector<std::vector<double>> change_curves;  // [group][logged step]
  std::vector<double> gradient_sums;               // [group]
  double initial_reg = 0.0;    // regularizer value before the first step
  double final_ref_cosine = 1.0;  // mean cos(live, reference) after training
  Snapshot pre, post;
};

// Fine-tunes in place on the given shots (base classes only). Class weights
// are recomputed from the text encoder every step; the KD/MSE reference is
// captured before the first update. ZeroShot leaves the model untouched and
// reports zero drift.
TrainReport finetune(DualEncoder& model, const Dataset& ds,
                     const std::vector<Example>& shots,
                     const Strategy& strategy, const TrainConfig& cfg);

struct ClassAccuracy {
  int class_id = 0;
  std::string split;  // "base" or "new"
  std::size_t count = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
};

struct EvalResult {
  double base_acc = 0.0;  // fraction in [0, 1]
  double new_acc = 0.0;
  double hm = 0.0;
  std::vector<ClassAccuracy> per_class;
};

// 2ab/(a+b), 0 when either accuracy is 0.
double harmonic_mean(double a, double b);

// Zero-shot style evaluation of the current model: class weights from its own
// text encoder, argmax of classify() per image, ties to the lowest index.
EvalResult evaluate(const DualEncoder& model, const Dataset& ds);

}  // namespace clipfit
