#include "clipfit/model.hpp"

#include <cmath>

#include "clipfit/errors.hpp"
#include "clipfit/ops.hpp"
#include "clipfit/rng.hpp"

namespace clipfit {

namespace {

constexpr double kInitStd = 0.02;

Tensor normal_init(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  rng.fill_normal(t.data(), t.numel(), 0.0, kInitStd);
  return t;
}

}  // namespace

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ModelConfig ModelConfig::vit_b16_clip() {
  ModelConfig cfg;
  cfg.text = TextConfig{49408, 77, 512, 8, 12, 2048};
  cfg.image = ImageConfig{224, 16, 3, 768, 12, 12, 3072};
  cfg.embed_dim = 512;
  cfg.pre_ln = true;
  cfg.post_ln = true;
  return cfg;
}

void ModelConfig::validate() const {
  if (text.vocab_size < 2) {
    throw ConfigError("model.text.vocab_size must hold at least pad and eot");
  }
  if (text.context_len == 0) throw ConfigError("model.text.context_len is 0");
  if (text.width == 0 || text.heads == 0 || text.width % text.heads != 0) {
    throw ConfigError("model.text.width must be a positive multiple of heads");
  }
  if (text.layers == 0 || text.ffn_hidden == 0) {
    throw ConfigError("model.text.layers/ffn_hidden must be positive");
  }
  if (image.width == 0 || image.heads == 0 || image.width % image.heads != 0) {
    throw ConfigError("model.image.width must be a positive multiple of heads");
  }
  if (image.layers == 0 || image.ffn_hidden == 0) {
    throw ConfigError("model.image.layers/ffn_hidden must be positive");
  }
  if (image.channels == 0) throw ConfigError("model.image.channels is 0");
  if (image.patch_size == 0 || image.image_size == 0 ||
      image.image_size % image.patch_size != 0) {
    throw ConfigError("model.image.image_size must be a positive multiple of patch_size");
  }
  if (embed_dim == 0) throw ConfigError("model.embed_dim is 0");
}

json ModelConfig::to_json() const {
  json j;
  j["text"] = {{"vocab_size", text.vocab_size},
               {"context_len", text.context_len},
               {"width", text.width},
               {"heads", text.heads},
               {"layers", text.layers},
               {"ffn_hidden", text.ffn_hidden}};
  j["image"] = {{"image_size", image.image_size},
                {"patch_size", image.patch_size},
                {"channels", image.channels},
                {"width", image.width},
                {"heads", image.heads},
                {"layers", image.layers},
                {"ffn_hidden", image.ffn_hidden}};
  j["embed_dim"] = embed_dim;
  j["pre_ln"] = pre_ln;
  j["post_ln"] = post_ln;
  return j;
}

ModelConfig ModelConfig::from_json(const json& j) {
  strict_keys(j, "model", {"text", "image", "embed_dim", "pre_ln", "post_ln"});
  ModelConfig cfg;
  if (j.contains("text")) {
    const json& t = j.at("text");
    strict_keys(t, "model.text",
                {"vocab_size", "context_len", "width", "heads", "layers",
                 "ffn_hidden"});
    cfg.text.vocab_size = json_get<std::size_t>(t, "model.text", "vocab_size",
                                                cfg.text.vocab_size);
    cfg.text.context_len = json_get<std::size_t>(t, "model.text", "context_len",
                                                 cfg.text.context_len);
    cfg.text.width = json_get<std::size_t>(t, "model.text", "width", cfg.text.width);
    cfg.text.heads = json_get<std::size_t>(t, "model.text", "heads", cfg.text.heads);
    cfg.text.layers = json_get<std::size_t>(t, "model.text", "layers", cfg.text.layers);
    cfg.text.ffn_hidden = json_get<std::size_t>(t, "model.text", "ffn_hidden",
                                                cfg.text.ffn_hidden);
  }
  if (j.contains("image")) {
    const json& i = j.at("image");
    strict_keys(i, "model.image",
                {"image_size", "patch_size", "channels", "width", "heads",
                 "layers", "ffn_hidden"});
    cfg.image.image_size = json_get<std::size_t>(i, "model.image", "image_size",
                                                 cfg.image.image_size);
    cfg.image.patch_size = json_get<std::size_t>(i, "model.image", "patch_size",
                                                 cfg.image.patch_size);
    cfg.image.channels = json_get<std::size_t>(i, "model.image", "channels",
                                               cfg.image.channels);
    cfg.image.width = json_get<std::size_t>(i, "model.image", "width", cfg.image.width);
    cfg.image.heads = json_get<std::size_t>(i, "model.image", "heads", cfg.image.heads);
    cfg.image.layers = json_get<std::size_t>(i, "model.image", "layers",
                                             cfg.image.layers);
    cfg.image.ffn_hidden = json_get<std::size_t>(i, "model.image", "ffn_hidden",
                                                 cfg.image.ffn_hidden);
  }
  cfg.embed_dim = json_get<std::size_t>(j, "model", "embed_dim", cfg.embed_dim);
  cfg.pre_ln = json_get<bool>(j, "model", "pre_ln", cfg.pre_ln);
  cfg.post_ln = json_get<bool>(j, "model", "post_ln", cfg.post_ln);
  cfg.validate();
  return cfg;
}

Tensor DualEncoder::register_param(const std::string& name, Tensor t) {
  names_.push_back(name);
  by_name_.emplace(name, t);
  return t;
}

DualEncoder::DualEncoder(const ModelConfig& cfg, std::uint64_t init_seed)
    : cfg_(cfg) {
  cfg_.validate();
  Rng rng(init_seed);
  const auto& tc = cfg_.text;
  const auto& ic = cfg_.image;

  auto make_block = [&](const std::string& prefix, std::size_t width,
                        std::size_t ffn_hidden) {
    Block b;
    b.ln1.gain = register_param(prefix + ".ln1.gain", Tensor::full({width}, 1.0));
    b.ln1.bias = register_param(prefix + ".ln1.bias", Tensor::zeros({width}));
    b.qkv_w = register_param(prefix + ".attn.qkv.weight",
                             normal_init({width, 3 * width}, rng));
    b.qkv_b = register_param(prefix + ".attn.qkv.bias", Tensor::zeros({3 * width}));
    b.out_w = register_param(prefix + ".attn.out.weight",
                             normal_init({width, width}, rng));
    b.out_b = register_param(prefix + ".attn.out.bias", Tensor::zeros({width}));
    b.ln2.gain = register_param(prefix + ".ln2.gain", Tensor::full({width}, 1.0));
    b.ln2.bias = register_param(prefix + ".ln2.bias", Tensor::zeros({width}));
    b.fc_w = register_param(prefix + ".ffn.fc.weight",
                            normal_init({width, ffn_hidden}, rng));
    b.fc_b = register_param(prefix + ".ffn.fc.bias", Tensor::zeros({ffn_hidden}));
    b.proj_w = register_param(prefix + ".ffn.proj.weight",
                              normal_init({ffn_hidden, width}, rng));
    b.proj_b = register_param(prefix + ".ffn.proj.bias", Tensor::zeros({width}));
    return b;
  };

  text_token_emb_ = register_param(
      "text.token_embedding", normal_init({tc.vocab_size, tc.width}, rng));
  text_pos_emb_ = register_param("text.pos_embedding",
                                 normal_init({tc.context_len, tc.width}, rng));
  for (std::size_t i = 0; i < tc.layers; ++i) {
    text_blocks_.push_back(
        make_block("text.block" + std::to_string(i), tc.width, tc.ffn_hidden));
  }
  text_final_ln_.gain =
      register_param("text.final_ln.gain", Tensor::full({tc.width}, 1.0));
  text_final_ln_.bias =
      register_param("text.final_ln.bias", Tensor::zeros({tc.width}));
  text_proj_ = register_param("text.projection",
                              normal_init({tc.width, cfg_.embed_dim}, rng));

  img_patch_w_ = register_param(
      "image.patch_embed.weight", normal_init({cfg_.patch_dim(), ic.width}, rng));
  img_patch_b_ =
      register_param("image.patch_embed.bias", Tensor::zeros({ic.width}));
  img_class_token_ =
      register_param("image.class_token", normal_init({ic.width}, rng));
  img_pos_emb_ = register_param(
      "image.pos_embedding", normal_init({cfg_.patches() + 1, ic.width}, rng));
  if (cfg_.pre_ln) {
    img_pre_ln_.gain =
        register_param("image.pre_ln.gain", Tensor::full({ic.width}, 1.0));
    img_pre_ln_.bias =
        register_param("image.pre_ln.bias", Tensor::zeros({ic.width}));
  }
  for (std::size_t i = 0; i < ic.layers; ++i) {
    img_blocks_.push_back(
        make_block("image.block" + std::to_string(i), ic.width, ic.ffn_hidden));
  }
  if (cfg_.post_ln) {
    img_post_ln_.gain =
        register_param("image.post_ln.gain", Tensor::full({ic.width}, 1.0));
    img_post_ln_.bias =
        register_param("image.post_ln.bias", Tensor::zeros({ic.width}));
  }
  img_proj_ = register_param("image.projection",
                             normal_init({ic.width, cfg_.embed_dim}, rng));

  logit_scale_ =
      register_param("logit_scale", Tensor::full({1}, kInitLogitScale));
}

bool DualEncoder::has_param(std::string_view name) const {
  return by_name_.find(std::string(name)) != by_name_.end();
}

Tensor DualEncoder::param(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) {
    throw NameError("unknown parameter \"" + std::string(name) + "\"");
  }
  return it->second;
}

double DualEncoder::temperature() const {
  return std::exp(-logit_scale_.item());
}

Tensor DualEncoder::run_blocks(Tensor h, const std::vector<Block>& blocks,
                               std::size_t heads, Tape* tape) const {
  for (const Block& b : blocks) {
    Tensor a = ops::layer_norm(h, b.ln1.gain, b.ln1.bias, kLayerNormEps, tape);
    a = ops::multi_head_attention(a, b.qkv_w, b.qkv_b, b.out_w, b.out_b, heads,
                                  tape);
    h = ops::add(h, a, tape);
    Tensor f = ops::layer_norm(h, b.ln2.gain, b.ln2.bias, kLayerNormEps, tape);
    f = ops::bias_add(ops::matmul(f, b.fc_w, tape), b.fc_b, tape);
    f = ops::gelu(f, tape);
    f = ops::bias_add(ops::matmul(f, b.proj_w, tape), b.proj_b, tape);
    h = ops::add(h, f, tape);
  }
  return h;
}

Tensor DualEncoder::encode_text(std::span<const std::uint16_t> tokens,
                                Tape* tape) const {
  const auto& tc = cfg_.text;
  std::vector<std::uint16_t> padded(tc.context_len, kPadToken);
  const std::size_t n = std::min(tokens.size(), tc.context_len);
  for (std::size_t i = 0; i < n; ++i) padded[i] = tokens[i];

  std::size_t pool_pos = tc.context_len;  // last non-pad position
  for (std::size_t i = tc.context_len; i > 0; --i) {
    if (padded[i - 1] != kPadToken) {
      pool_pos = i - 1;
      break;
    }
  }
  if (pool_pos == tc.context_len) {
    throw DegenerateInputError("encode_text: no non-pad token to pool");
  }

  Tensor h = ops::embedding_lookup(text_token_emb_, padded, tape);
  h = ops::add(h, text_pos_emb_, tape);
  h = run_blocks(h, text_blocks_, tc.heads, tape);
  h = ops::layer_norm(h, text_final_ln_.gain, text_final_ln_.bias,
                      kLayerNormEps, tape);
  Tensor pooled = ops::select_row(h, pool_pos, tape);
  Tensor proj = ops::matmul(ops::reshape(pooled, {1, tc.width}, tape),
                            text_proj_, tape);
  return ops::reshape(proj, {cfg_.embed_dim}, tape);
}

Tensor DualEncoder::encode_image(const Tensor& image, Tape* tape) const {
  const auto& ic = cfg_.image;
  const Shape expect{ic.channels, ic.image_size, ic.image_size};
  if (!image.defined() || image.shape() != expect) {
    throw DimensionError("encode_image: expected image of shape " +
                         shape_str(expect) + ", got " +
                         (image.defined() ? shape_str(image.shape()) : "none"));
  }

  // Patchify (pure data movement, outside the tape): patches scan the grid
  // row-major; each patch vector is channel-major, then pixel rows.
  const std::size_t g = ic.image_size / ic.patch_size;
  const std::size_t pd = cfg_.patch_dim();
  Tensor patches(Shape{g * g, pd});
  const double* src = image.data();
  double* dst = patches.data();
  for (std::size_t gy = 0; gy < g; ++gy) {
    for (std::size_t gx = 0; gx < g; ++gx) {
      double* prow = dst + (gy * g + gx) * pd;
      std::size_t w = 0;
      for (std::size_t c = 0; c < ic.channels; ++c) {
        for (std::size_t py = 0; py < ic.patch_size; ++py) {
          const std::size_t y = gy * ic.patch_size + py;
          for (std::size_t px = 0; px < ic.patch_size; ++px) {
            const std::size_t x = gx * ic.patch_size + px;
            prow[w++] = src[(c * ic.image_size + y) * ic.image_size + x];
          }
        }
      }
    }
  }

  Tensor tok = ops::bias_add(ops::matmul(patches, img_patch_w_, tape),
                             img_patch_b_, tape);
  Tensor cls = ops::reshape(img_class_token_, {1, ic.width}, tape);
  Tensor h = ops::concat_rows({cls, tok}, tape);
  h = ops::add(h, img_pos_emb_, tape);
  if (cfg_.pre_ln) {
    h = ops::layer_norm(h, img_pre_ln_.gain, img_pre_ln_.bias, kLayerNormEps,
                        tape);
  }
  h = run_blocks(h, img_blocks_, ic.heads, tape);
  Tensor pooled = ops::reshape(ops::select_row(h, 0, tape), {1, ic.width}, tape);
  if (cfg_.post_ln) {
    pooled = ops::layer_norm(pooled, img_post_ln_.gain, img_post_ln_.bias,
                             kLayerNormEps, tape);
  }
  Tensor proj = ops::matmul(pooled, img_proj_, tape);
  return ops::reshape(proj, {cfg_.embed_dim}, tape);
}

DualEncoder DualEncoder::clone() const {
  DualEncoder out(cfg_, 0);
  for (const std::string& name : names_) {
    Tensor dst = out.by_name_.at(name);
    const Tensor src = by_name_.at(name);
    dst.vec() = src.vec();
    dst.set_requires_grad(false);
  }
  return out;
}

ClassWeights build_class_weights(
    const DualEncoder& model,
    const std::vector<std::vector<std::uint16_t>>& prompts, Tape* tape,
    bool reference) {
  if (prompts.empty()) {
    throw EmptyClassError("build_class_weights: no prompts given");
  }
  std::vector<Tensor> rows;
  rows.reserve(prompts.size());
  for (const auto& p : prompts) {
    Tensor e = model.encode_text(p, tape);
    rows.push_back(ops::reshape(e, {1, model.config().embed_dim}, tape));
  }
  ClassWeights w;
  w.rows = ops::l2_normalize_rows(ops::concat_rows(rows, tape), tape);
  w.reference = reference;
  return w;
}

std::vector<double> classify(const Tensor& f, const ClassWeights& weights,
                             double tau) {
  if (weights.k() == 0) throw EmptyClassError("classify: no class weights");
  if (tau <= 0.0) throw ConfigError("classify: temperature must be positive");
  if (f.ndim() != 1 || f.dim(0) != weights.rows.dim(1)) {
    throw DimensionError("classify: feature " + shape_str(f.shape()) +
                         " does not match weights " +
                         shape_str(weights.rows.shape()));
  }
  const std::size_t k = weights.k(), d = f.dim(0);
  const double* pf = f.data();
  double nf = 0.0;
  for (std::size_t j = 0; j < d; ++j) nf += pf[j] * pf[j];
  if (nf == 0.0) throw DegenerateInputError("classify: zero feature vector");
  nf = std::sqrt(nf);

  std::vector<double> logits(k);
  const double* pw = weights.rows.data();
  for (std::size_t i = 0; i < k; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) dot += pw[i * d + j] * pf[j];
    logits[i] = dot / nf / tau;
  }
  double mx = logits[0];
  for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, logits[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    logits[i] = std::exp(logits[i] - mx);
    z += logits[i];
  }
  for (std::size_t i = 0; i < k; ++i) logits[i] /= z;
  return logits;
}

std::size_t argmax_class(const std::vector<double>& probs) {
  if (probs.empty()) throw EmptyClassError("argmax_class: empty distribution");
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best]) best = i;  // strict: ties keep lowest index
  }
  return best;
}

}  // namespace clipfit
