#include "clipfit/params.hpp"

#include <algorithm>

#include "clipfit/errors.hpp"

namespace clipfit {

namespace {

bool starts_with(std::string_view s, std::string_view p) {
  return s.substr(0, p.size()) == p;
}

bool ends_with(std::string_view s, std::string_view p) {
  return s.size() >= p.size() && s.substr(s.size() - p.size()) == p;
}

bool is_block_bias(std::string_view name, std::string_view encoder) {
  // "<encoder>.block<i>....bias" — biases inside transformer blocks only;
  // the pre/post/final LayerNorms sit outside the block stack.
  return starts_with(name, std::string(encoder) + ".block") &&
         ends_with(name, ".bias");
}

bool is_image_ln(std::string_view name) {
  if (!starts_with(name, "image.")) return false;
  return name.find(".ln1.") != std::string_view::npos ||
         name.find(".ln2.") != std::string_view::npos ||
         starts_with(name, "image.pre_ln.") ||
         starts_with(name, "image.post_ln.");
}

bool preset_selects(StrategyKind kind, std::string_view name) {
  switch (kind) {
    case StrategyKind::ZeroShot:
      return false;
    case StrategyKind::FullFinetune:
      return name != "logit_scale";
    case StrategyKind::BitFitText:
      return is_block_bias(name, "text");
    case StrategyKind::BitFitAll:
      return is_block_bias(name, "text") || is_block_bias(name, "image") ||
             name == "image.patch_embed.bias";
    case StrategyKind::FfnBiasText:
      return starts_with(name, "text.block") &&
             (ends_with(name, ".ffn.fc.bias") ||
              ends_with(name, ".ffn.proj.bias"));
    case StrategyKind::ProjBiasText:
      return starts_with(name, "text.block") &&
             ends_with(name, ".ffn.proj.bias");
    case StrategyKind::LayerNormImage:
      return is_image_ln(name);
    case StrategyKind::ClipFit:
      return preset_selects(StrategyKind::ProjBiasText, name) ||
             preset_selects(StrategyKind::LayerNormImage, name);
    case StrategyKind::Custom:
      break;
  }
  throw NameError("preset_selects: not a preset strategy");
}

const char* kind_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::ZeroShot: return "zero_shot";
    case StrategyKind::FullFinetune: return "full_finetune";
    case StrategyKind::BitFitAll: return "bitfit_all";
    case StrategyKind::BitFitText: return "bitfit_text";
    case StrategyKind::FfnBiasText: return "ffn_bias_text";
    case StrategyKind::ProjBiasText: return "proj_bias_text";
    case StrategyKind::LayerNormImage: return "layer_norm_image";
    case StrategyKind::ClipFit: return "clipfit";
    case StrategyKind::Custom: return "custom";
  }
  return "?";
}

}  // namespace

std::vector<ParamInfo> param_table(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParamInfo> out;
  auto push = [&out](std::string name, Shape shape) {
    out.push_back(ParamInfo{std::move(name), std::move(shape)});
  };
  auto push_block = [&push](const std::string& prefix, std::size_t w,
                            std::size_t f) {
    push(prefix + ".ln1.gain", {w});
    push(prefix + ".ln1.bias", {w});
    push(prefix + ".attn.qkv.weight", {w, 3 * w});
    push(prefix + ".attn.qkv.bias", {3 * w});
    push(prefix + ".attn.out.weight", {w, w});
    push(prefix + ".attn.out.bias", {w});
    push(prefix + ".ln2.gain", {w});
    push(prefix + ".ln2.bias", {w});
    push(prefix + ".ffn.fc.weight", {w, f});
    push(prefix + ".ffn.fc.bias", {f});
    push(prefix + ".ffn.proj.weight", {f, w});
    push(prefix + ".ffn.proj.bias", {w});
  };

  const auto& tc = cfg.text;
  const auto& ic = cfg.image;
  push("text.token_embedding", {tc.vocab_size, tc.width});
  push("text.pos_embedding", {tc.context_len, tc.width});
  for (std::size_t i = 0; i < tc.layers; ++i) {
    push_block("text.block" + std::to_string(i), tc.width, tc.ffn_hidden);
  }
  push("text.final_ln.gain", {tc.width});
  push("text.final_ln.bias", {tc.width});
  push("text.projection", {tc.width, cfg.embed_dim});

  push("image.patch_embed.weight", {cfg.patch_dim(), ic.width});
  push("image.patch_embed.bias", {ic.width});
  push("image.class_token", {ic.width});
  push("image.pos_embedding", {cfg.patches() + 1, ic.width});
  if (cfg.pre_ln) {
    push("image.pre_ln.gain", {ic.width});
    push("image.pre_ln.bias", {ic.width});
  }
  for (std::size_t i = 0; i < ic.layers; ++i) {
    push_block("image.block" + std::to_string(i), ic.width, ic.ffn_hidden);
  }
  if (cfg.post_ln) {
    push("image.post_ln.gain", {ic.width});
    push("image.post_ln.bias", {ic.width});
  }
  push("image.projection", {ic.width, cfg.embed_dim});
  push("logit_scale", {1});
  return out;
}

Strategy Strategy::preset(StrategyKind kind) {
  if (kind == StrategyKind::Custom) {
    throw NameError("Strategy::preset: custom strategies need patterns");
  }
  Strategy s;
  s.kind_ = kind;
  return s;
}

Strategy Strategy::custom(std::string patterns) {
  if (patterns.empty()) {
    throw EmptyMaskError("custom strategy with empty pattern list");
  }
  Strategy s;
  s.kind_ = StrategyKind::Custom;
  s.patterns_ = std::move(patterns);
  return s;
}

Strategy Strategy::parse(const std::string& text) {
  for (StrategyKind k : preset_kinds()) {
    if (text == kind_name(k)) return preset(k);
  }
  if (text.find('*') != std::string::npos ||
      text.find('?') != std::string::npos ||
      text.find('.') != std::string::npos ||
      text.find(',') != std::string::npos) {
    return custom(text);
  }
  throw NameError("unknown strategy \"" + text + "\"");
}

std::string Strategy::name() const {
  if (kind_ == StrategyKind::Custom) return "custom:" + patterns_;
  return kind_name(kind_);
}

bool Strategy::selects(std::string_view param_name) const {
  if (kind_ != StrategyKind::Custom) return preset_selects(kind_, param_name);
  std::size_t start = 0;
  while (start <= patterns_.size()) {
    std::size_t end = patterns_.find(',', start);
    if (end == std::string::npos) end = patterns_.size();
    std::string_view pat(patterns_.data() + start, end - start);
    if (!pat.empty() && glob_match(pat, param_name)) return true;
    start = end + 1;
  }
  return false;
}

const std::vector<StrategyKind>& Strategy::preset_kinds() {
  static const std::vector<StrategyKind> kinds = {
      StrategyKind::ZeroShot,      StrategyKind::FullFinetune,
      StrategyKind::BitFitAll,     StrategyKind::BitFitText,
      StrategyKind::FfnBiasText,   StrategyKind::ProjBiasText,
      StrategyKind::LayerNormImage, StrategyKind::ClipFit};
  return kinds;
}

bool glob_match(std::string_view pattern, std::string_view name) {
  // Iterative '*'/'?' matcher with backtracking to the last star.
  std::size_t p = 0, n = 0;
  std::size_t star = std::string_view::npos, mark = 0;
  while (n < name.size()) {
    if (p < pattern.size() &&
        (pattern[p] == '?' || pattern[p] == name[n])) {
      ++p;
      ++n;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = n;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      n = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

FreezeMask::FreezeMask(std::vector<ParamInfo> params,
                       std::vector<bool> trainable)
    : params_(std::move(params)), trainable_(std::move(trainable)) {
  if (params_.size() != trainable_.size()) {
    throw DimensionError("FreezeMask: params/trainable size mismatch");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    index_.emplace(params_[i].name, i);
  }
}

bool FreezeMask::trainable(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    throw NameError("FreezeMask: unknown parameter \"" + std::string(name) +
                    "\"");
  }
  return trainable_[it->second];
}

std::vector<std::string> FreezeMask::trainable_names() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (trainable_[i]) out.push_back(params_[i].name);
  }
  return out;
}

std::size_t FreezeMask::trainable_tensors() const {
  return static_cast<std::size_t>(
      std::count(trainable_.begin(), trainable_.end(), true));
}

std::uint64_t FreezeMask::trainable_scalars() const {
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (trainable_[i]) n += params_[i].numel();
  }
  return n;
}

FreezeMask compute_mask(const std::vector<ParamInfo>& params,
                        const Strategy& strategy) {
  std::vector<bool> trainable(params.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    trainable[i] = strategy.selects(params[i].name);
    hits += trainable[i] ? 1 : 0;
  }
  if (strategy.kind() == StrategyKind::Custom && hits == 0) {
    throw EmptyMaskError("custom strategy \"" + strategy.patterns() +
                         "\" matches no parameters");
  }
  return FreezeMask(params, std::move(trainable));
}

FreezeMask apply_strategy(DualEncoder& model, const Strategy& strategy) {
  std::vector<ParamInfo> params;
  params.reserve(model.param_names().size());
  for (const std::string& name : model.param_names()) {
    params.push_back(ParamInfo{name, model.param(name).shape()});
  }
  FreezeMask mask = compute_mask(params, strategy);
  for (const ParamInfo& p : params) {
    model.param(p.name).set_requires_grad(mask.trainable(p.name));
  }
  return mask;
}

std::uint64_t count_trainable(const ModelConfig& cfg,
                              const Strategy& strategy) {
  cfg.validate();
  const auto& tc = cfg.text;
  const auto& ic = cfg.image;
  const std::uint64_t wt = tc.width, ft = tc.ffn_hidden, lt = tc.layers;
  const std::uint64_t wi = ic.width, fi = ic.ffn_hidden, li = ic.layers;

  switch (strategy.kind()) {
    case StrategyKind::ZeroShot:
      return 0;
    case StrategyKind::FullFinetune: {
      std::uint64_t total = 0;
      for (const ParamInfo& p : param_table(cfg)) total += p.numel();
      return total - 1;  // logit_scale stays frozen
    }
    case StrategyKind::BitFitText:
      // per block: qkv 3w + attn out w + ln1 w + ln2 w + fc f + proj w
      return lt * (7 * wt + ft);
    case StrategyKind::BitFitAll:
      return lt * (7 * wt + ft) + li * (7 * wi + fi) + wi;
    case StrategyKind::FfnBiasText:
      return lt * (wt + ft);
    case StrategyKind::ProjBiasText:
      return lt * wt;
    case StrategyKind::LayerNormImage:
      return (2 * li + (cfg.pre_ln ? 1 : 0) + (cfg.post_ln ? 1 : 0)) * 2 * wi;
    case StrategyKind::ClipFit:
      return count_trainable(cfg, Strategy::preset(StrategyKind::ProjBiasText)) +
             count_trainable(cfg,
                             Strategy::preset(StrategyKind::LayerNormImage));
    case StrategyKind::Custom:
      return compute_mask(param_table(cfg), strategy).trainable_scalars();
  }
  throw NameError("count_trainable: unknown strategy kind");
}

Snapshot take_snapshot(const DualEncoder& model, std::int64_t step) {
  Snapshot s;
  s.step = step;
  for (const std::string& name : model.param_names()) {
    s.names.push_back(name);
    s.values.push_back(model.param(name).vec());
  }
  return s;
}

std::string layer_group_of(std::string_view param_name) {
  for (std::string_view ln : {"pre_ln", "post_ln", "final_ln", "ln1", "ln2"}) {
    const std::string mid = "." + std::string(ln) + ".";
    const std::size_t pos = param_name.find(mid);
    if (pos != std::string_view::npos) {
      return std::string(param_name.substr(0, pos + mid.size() - 1));
    }
  }
  return std::string(param_name);
}

std::vector<GroupChange> diff(const Snapshot& pre, const Snapshot& post,
                              GroupBy by) {
  if (pre.names != post.names) {
    throw IncompatibleSnapshotError(
        "diff: snapshots come from different parameter trees");
  }
  std::vector<GroupChange> out;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < pre.names.size(); ++i) {
    if (pre.values[i].size() != post.values[i].size()) {
      throw IncompatibleSnapshotError("diff: size mismatch for " +
                                      pre.names[i]);
    }
    double sq = 0.0;
    for (std::size_t j = 0; j < pre.values[i].size(); ++j) {
      const double d = pre.values[i][j] - post.values[i][j];
      sq += d * d;
    }
    const std::string group = by == GroupBy::Parameter
                                  ? pre.names[i]
                                  : layer_group_of(pre.names[i]);
    auto it = index.find(group);
    if (it == index.end()) {
      index.emplace(group, out.size());
      out.push_back(GroupChange{group, sq});
    } else {
      out[it->second].squared_change += sq;
    }
  }
  return out;
}

}  // namespace clipfit
