#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "clipfit/model.hpp"

namespace clipfit {

// Parameter paths follow a fixed grammar:
//
//   text.token_embedding            text.pos_embedding
//   text.block<i>.ln1.{gain,bias}   text.block<i>.ln2.{gain,bias}
//   text.block<i>.attn.{qkv,out}.{weight,bias}
//   text.block<i>.ffn.{fc,proj}.{weight,bias}
//   text.final_ln.{gain,bias}       text.projection
//   image.patch_embed.{weight,bias} image.class_token
//   image.pos_embedding             image.pre_ln.{gain,bias}
//   image.block<i>.(same as text blocks)
//   image.post_ln.{gain,bias}       image.projection
//   logit_scale
//
// Fine-tuning strategies select parameters purely by name, so the same
// strategy applies to any architecture built from this grammar.

struct ParamInfo {
  std::string name;
  Shape shape;
  std::size_t numel() const { return shape_numel(shape); }
};

// The full parameter table derived from config arithmetic alone — no tensors
// are allocated. Order and names match DualEncoder construction exactly.
std::vector<ParamInfo> param_table(const ModelConfig& cfg);

enum class StrategyKind {
  ZeroShot,       // nothing trains
  FullFinetune,   // everything except logit_scale
  BitFitAll,      // every block-level bias in both encoders + patch-embed bias
  BitFitText,     // every block-level bias in the text encoder
  FfnBiasText,    // text FFN biases (both layers)
  ProjBiasText,   // text FFN projection biases only
  LayerNormImage, // image-encoder LayerNorm gains and biases (pre/blocks/post)
  ClipFit,        // ProjBiasText + LayerNormImage
  Custom,         // comma-separated glob patterns over parameter names
};

class Strategy {
 public:
  static Strategy preset(StrategyKind kind);
  static Strategy custom(std::string patterns);
  // CLI spelling: zero_shot, full_finetune, bitfit_all, bitfit_text,
  // ffn_bias_text, proj_bias_text, layer_norm_image, clipfit, or any string
  // containing '*'/','/'.' which is taken as a custom pattern list.
  static Strategy parse(const std::string& text);

  StrategyKind kind() const { return kind_; }
  const std::string& patterns() const { return patterns_; }
  std::string name() const;
  bool selects(std::string_view param_name) const;

  static const std::vector<StrategyKind>& preset_kinds();

 private:
  StrategyKind kind_ = StrategyKind::ZeroShot;
  std::string patterns_;
};

// Glob match with '*' (any run, dots included) and '?' (single char).
bool glob_match(std::string_view pattern, std::string_view name);

// Trainable/frozen verdict for every parameter; covers the tree exactly once
// in canonical order.
class FreezeMask {
 public:
  FreezeMask() = default;
  FreezeMask(std::vector<ParamInfo> params, std::vector<bool> trainable);

  const std::vector<ParamInfo>& params() const { return params_; }
  bool trainable(std::string_view name) const;
  std::vector<std::string> trainable_names() const;
  std::size_t trainable_tensors() const;
  std::uint64_t trainable_scalars() const;

 private:
  std::vector<ParamInfo> params_;
  std::vector<bool> trainable_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Pure mask computation over a parameter table. A Custom strategy matching
// nothing raises EmptyMaskError.
FreezeMask compute_mask(const std::vector<ParamInfo>& params,
                        const Strategy& strategy);

// Sets requires_grad on the model's parameters to match the strategy and
// returns the mask. Idempotent.
FreezeMask apply_strategy(DualEncoder& model, const Strategy& strategy);

// Exact trainable-scalar count from config arithmetic. Preset strategies use
// closed-form expressions; Custom enumerates the parameter table. Never
// allocates tensor storage.
std::uint64_t count_trainable(const ModelConfig& cfg, const Strategy& strategy);

// Point-in-time copy of every parameter value, in canonical order.
struct Snapshot {
  std::vector<std::string> names;
  std::vector<std::vector<double>> values;
  std::int64_t step = 0;
};

Snapshot take_snapshot(const DualEncoder& model, std::int64_t step = 0);

enum class GroupBy {
  Parameter,  // one group per parameter tensor
  Layer,      // LayerNorm gain+bias merged into one group per LN layer
};

// "image.pre_ln.gain" -> "image.pre_ln"; non-LN names map to themselves.
std::string layer_group_of(std::string_view param_name);

struct GroupChange {
  std::string group;
  double squared_change = 0.0;  // sum over the group of (pre - post)^2
};

// Squared parameter change per group, in canonical order. Snapshots must come
// from identical parameter trees (IncompatibleSnapshotError).
std::vector<GroupChange> diff(const Snapshot& pre, const Snapshot& post,
                              GroupBy by = GroupBy::Parameter);

}  // namespace clipfit
