#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "clipfit/jsonutil.hpp"
#include "clipfit/tensor.hpp"

namespace clipfit {

// Captions and prompts share one fixed template: four template tokens, the
// class token, then EOT. Class c uses token kFirstClassToken + c.
inline constexpr std::uint16_t kTemplateTokens[4] = {2, 3, 4, 5};
inline constexpr std::uint16_t kFirstClassToken = 6;

// Synthetic benchmark: one random prototype image per class, examples are
// prototype + Gaussian pixel noise, and the downstream splits see a covariate
// shift x -> shift_scale * x + shift_offset applied after the noise. The
// pretraining corpus covers every class unshifted; "new" classes are new to
// fine-tuning, not to pretraining.
struct DatasetSpec {
  std::size_t num_classes = 12;
  std::size_t base_classes = 6;  // first base_classes ids; the rest are "new"
  std::size_t pretrain_per_class = 64;
  std::size_t train_per_class = 32;
  std::size_t test_per_class = 200;
  double noise_sigma = 0.3;
  double shift_offset = 0.5;
  double shift_scale = 1.5;
  std::size_t image_size = 16;
  std::size_t channels = 1;
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const DatasetSpec&) const = default;

  json to_json() const;
  static DatasetSpec from_json(const json& j);  // strict keys
};

struct Example {
  std::uint64_t id = 0;
  int label = 0;  // global class id
  Tensor image;   // [channels x S x S], never mutated after generation
  std::vector<std::uint16_t> caption;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<int> base_class_ids;
  std::vector<int> new_class_ids;
  std::vector<std::vector<std::uint16_t>> prompts;  // one per class, global id
  std::vector<Example> pretrain;   // all classes, unshifted
  std::vector<Example> train;      // base classes, shifted
  std::vector<Example> base_test;  // base classes, shifted
  std::vector<Example> new_test;   // new classes, shifted

  std::vector<std::vector<std::uint16_t>> prompts_for(
      const std::vector<int>& class_ids) const;
};

std::vector<std::uint16_t> make_caption(int class_id);

// Deterministic generation: every (class, split) pair draws from its own
// substream of the spec seed, so the same spec always produces the same
// dataset down to the last bit.
Dataset generate(const DatasetSpec& spec);

// Stratified N-shot subset of a training split: exactly `shots` examples per
// class present in `train`, chosen by a per-class substream of `seed`.
// ShotError names the first class with too few examples.
std::vector<Example> sample_shots(const std::vector<Example>& train,
                                  std::size_t shots, std::uint64_t seed);

// On-disk form: <dir>/dataset.json (manifest) + <dir>/dataset.bin (blob of
// f64-LE images and u16-LE captions at manifest offsets). Same seed, same
// bytes.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
// Accepts the directory or the manifest path itself.
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace clipfit
