#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "clipfit/jsonutil.hpp"
#include "clipfit/tensor.hpp"

namespace clipfit {

// Token id 0 is reserved as padding, id 1 ends every caption. Text pooling
// reads the hidden state at the last non-pad position.
inline constexpr std::uint16_t kPadToken = 0;
inline constexpr std::uint16_t kEotToken = 1;

inline constexpr double kLayerNormEps = 1e-5;
// log(1/0.07): the usual init for the learned inverse temperature.
inline constexpr double kInitLogitScale = 2.6592600369327783;
inline constexpr double kMinLogitScale = 0.0;                // log(1)
inline constexpr double kMaxLogitScale = 4.605170185988091;  // log(100)

struct TextConfig {
  std::size_t vocab_size = 64;
  std::size_t context_len = 16;
  std::size_t width = 32;
  std::size_t heads = 4;
  std::size_t layers = 4;
  std::size_t ffn_hidden = 128;
};

struct ImageConfig {
  std::size_t image_size = 16;
  std::size_t patch_size = 4;
  std::size_t channels = 1;
  std::size_t width = 32;
  std::size_t heads = 4;
  std::size_t layers = 4;
  std::size_t ffn_hidden = 128;
};

struct ModelConfig {
  TextConfig text;
  ImageConfig image;
  std::size_t embed_dim = 16;
  bool pre_ln = true;   // image encoder LN before the first block
  bool post_ln = true;  // image encoder LN on the pooled class token

  // Desk-scale default: everything above.
  static ModelConfig toy();
  // ViT-B/16 CLIP dimensions; used for parameter accounting, far too big to
  // train here.
  static ModelConfig vit_b16_clip();

  std::size_t patches() const {
    return (image.image_size / image.patch_size) *
           (image.image_size / image.patch_size);
  }
  std::size_t patch_dim() const {
    return image.channels * image.patch_size * image.patch_size;
  }

  void validate() const;  // ConfigError on inconsistent dimensions
  bool operator==(const ModelConfig&) const = default;

  json to_json() const;
  static ModelConfig from_json(const json& j);  // strict keys
};

// L2-normalized class embedding rows [K x embed_dim]. `reference` marks
// weights captured from the frozen pretrained encoder (the KD target) as
// opposed to live weights recomputed from the current parameters.
struct ClassWeights {
  Tensor rows;
  bool reference = false;
  std::size_t k() const { return rows.defined() ? rows.dim(0) : 0; }
};

// CLIP-style dual encoder at miniature scale: a pre-norm text transformer
// with EOT-position pooling and a pre-norm ViT with class-token pooling, each
// followed by a linear projection into the shared embedding space, plus a
// learned inverse-temperature scale.
class DualEncoder {
 public:
  DualEncoder(const ModelConfig& cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }

  // Canonical parameter order; names follow the documented path grammar (see
  // params.hpp).
  const std::vector<std::string>& param_names() const { return names_; }
  bool has_param(std::string_view name) const;
  Tensor param(std::string_view name) const;  // shared handle; NameError

  Tensor logit_scale() const { return logit_scale_; }
  double temperature() const;  // tau = exp(-logit_scale), always positive

  // Raw caption tokens; padded/truncated to context_len internally.
  // Returns the [embed_dim] text embedding (not normalized).
  Tensor encode_text(std::span<const std::uint16_t> tokens,
                     Tape* tape = nullptr) const;

  // Image of shape [channels x S x S]; returns [embed_dim] (not normalized).
  Tensor encode_image(const Tensor& image, Tape* tape = nullptr) const;

  // Deep copy with fresh storage; requires_grad cleared on every parameter.
  DualEncoder clone() const;

 private:
  struct Ln {
    Tensor gain, bias;
  };
  struct Block {
    Ln ln1;
    Tensor qkv_w, qkv_b, out_w, out_b;
    Ln ln2;
    Tensor fc_w, fc_b, proj_w, proj_b;
  };

  DualEncoder() = default;

  Tensor register_param(const std::string& name, Tensor t);
  Tensor run_blocks(Tensor h, const std::vector<Block>& blocks,
                    std::size_t heads, Tape* tape) const;

  ModelConfig cfg_;
  Tensor text_token_emb_, text_pos_emb_;
  std::vector<Block> text_blocks_;
  Ln text_final_ln_;
  Tensor text_proj_;
  Tensor img_patch_w_, img_patch_b_, img_class_token_, img_pos_emb_;
  Ln img_pre_ln_;
  std::vector<Block> img_blocks_;
  Ln img_post_ln_;
  Tensor img_proj_;
  Tensor logit_scale_;

  std::vector<std::string> names_;
  std::unordered_map<std::string, Tensor> by_name_;
};

// Encodes one prompt per class and L2-normalizes the rows. K must be >= 1
// (EmptyClassError). Pass a tape to keep the weights differentiable.
ClassWeights build_class_weights(
    const DualEncoder& model,
    const std::vector<std::vector<std::uint16_t>>& prompts,
    Tape* tape = nullptr, bool reference = false);

// p(y = i | x) = softmax_i(cos(w_i, f) / tau). Forward-only.
std::vector<double> classify(const Tensor& f, const ClassWeights& weights,
                             double tau);

// argmax with deterministic tie-break toward the lowest class index.
std::size_t argmax_class(const std::vector<double>& probs);

}  // namespace clipfit
