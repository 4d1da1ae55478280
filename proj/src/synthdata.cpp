#include "clipfit/synthdata.hpp"

#include <algorithm>
#include <fstream>

#include "clipfit/errors.hpp"
#include "clipfit/model.hpp"
#include "clipfit/rng.hpp"

namespace clipfit {

namespace {

// Substream salts: class c, purpose p -> c * kStreams + p.
enum StreamPurpose : std::uint64_t {
  kProtoStream = 0,
  kPretrainStream = 1,
  kTrainStream = 2,
  kTestStream = 3,
  kStreams = 4,
};

Rng class_stream(std::uint64_t seed, int class_id, StreamPurpose purpose) {
  return Rng(seed).derive(static_cast<std::uint64_t>(class_id) * kStreams +
                          purpose);
}

}  // namespace

void DatasetSpec::validate() const {
  if (num_classes < 2) throw ConfigError("dataset.num_classes must be >= 2");
  if (base_classes == 0 || base_classes >= num_classes) {
    throw ConfigError(
        "dataset.base_classes must leave at least one base and one new class");
  }
  if (pretrain_per_class == 0 || train_per_class == 0 || test_per_class == 0) {
    throw ConfigError("dataset per-class counts must be positive");
  }
  if (noise_sigma < 0.0) throw ConfigError("dataset.noise_sigma must be >= 0");
  if (shift_scale <= 0.0) throw ConfigError("dataset.shift_scale must be > 0");
  if (image_size == 0 || channels == 0) {
    throw ConfigError("dataset.image_size/channels must be positive");
  }
}

json DatasetSpec::to_json() const {
  return json{{"num_classes", num_classes},
              {"base_classes", base_classes},
              {"pretrain_per_class", pretrain_per_class},
              {"train_per_class", train_per_class},
              {"test_per_class", test_per_class},
              {"noise_sigma", noise_sigma},
              {"shift_offset", shift_offset},
              {"shift_scale", shift_scale},
              {"image_size", image_size},
              {"channels", channels},
              {"seed", seed}};
}

DatasetSpec DatasetSpec::from_json(const json& j) {
  strict_keys(j, "dataset",
              {"num_classes", "base_classes", "pretrain_per_class",
               "train_per_class", "test_per_class", "noise_sigma",
               "shift_offset", "shift_scale", "image_size", "channels",
               "seed"});
  DatasetSpec s;
  s.num_classes = json_get<std::size_t>(j, "dataset", "num_classes", s.num_classes);
  s.base_classes =
      json_get<std::size_t>(j, "dataset", "base_classes", s.base_classes);
  s.pretrain_per_class = json_get<std::size_t>(j, "dataset", "pretrain_per_class",
                                               s.pretrain_per_class);
  s.train_per_class =
      json_get<std::size_t>(j, "dataset", "train_per_class", s.train_per_class);
  s.test_per_class =
      json_get<std::size_t>(j, "dataset", "test_per_class", s.test_per_class);
  s.noise_sigma = json_get<double>(j, "dataset", "noise_sigma", s.noise_sigma);
  s.shift_offset = json_get<double>(j, "dataset", "shift_offset", s.shift_offset);
  s.shift_scale = json_get<double>(j, "dataset", "shift_scale", s.shift_scale);
  s.image_size = json_get<std::size_t>(j, "dataset", "image_size", s.image_size);
  s.channels = json_get<std::size_t>(j, "dataset", "channels", s.channels);
  s.seed = json_get<std::uint64_t>(j, "dataset", "seed", s.seed);
  s.validate();
  return s;
}

std::vector<std::uint16_t> make_caption(int class_id) {
  if (class_id < 0) throw IndexError("make_caption: negative class id");
  std::vector<std::uint16_t> c(kTemplateTokens, kTemplateTokens + 4);
  c.push_back(static_cast<std::uint16_t>(kFirstClassToken + class_id));
  c.push_back(kEotToken);
  return c;
}

std::vector<std::vector<std::uint16_t>> Dataset::prompts_for(
    const std::vector<int>& class_ids) const {
  std::vector<std::vector<std::uint16_t>> out;
  out.reserve(class_ids.size());
  for (int c : class_ids) {
    if (c < 0 || static_cast<std::size_t>(c) >= prompts.size()) {
      throw IndexError("prompts_for: class " + std::to_string(c) +
                       " out of range");
    }
    out.push_back(prompts[static_cast<std::size_t>(c)]);
  }
  return out;
}

Dataset generate(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  const std::size_t k = spec.num_classes;
  const Shape img_shape{spec.channels, spec.image_size, spec.image_size};
  const std::size_t px = shape_numel(img_shape);

  for (std::size_t c = 0; c < k; ++c) {
    const int id = static_cast<int>(c);
    if (c < spec.base_classes) {
      ds.base_class_ids.push_back(id);
    } else {
      ds.new_class_ids.push_back(id);
    }
    ds.prompts.push_back(make_caption(id));
  }

  // Each class owns a seed-fixed prototype built from a small patch pattern
  // tiled across the image plus low-amplitude per-pixel detail. Tiling
  // repeats the class signature in every patch, so the signal survives
  // spatial pooling instead of averaging away. Prototypes are zero-centered
  // so the pretraining pixel distribution has no built-in offset; the
  // downstream covariate shift then introduces one on purpose.
  constexpr std::size_t kTile = 4;
  constexpr double kTileAmp = 2.0;
  constexpr double kDetailAmp = 0.25;
  std::vector<Tensor> protos(k);
  for (std::size_t c = 0; c < k; ++c) {
    Rng rng = class_stream(spec.seed, static_cast<int>(c), kProtoStream);
    std::vector<double> tile(spec.channels * kTile * kTile);
    for (double& t : tile) t = kTileAmp * (2.0 * rng.uniform() - 1.0);
    protos[c] = Tensor(img_shape);
    double* p = protos[c].data();
    std::size_t i = 0;
    for (std::size_t ch = 0; ch < spec.channels; ++ch) {
      for (std::size_t y = 0; y < spec.image_size; ++y) {
        for (std::size_t x = 0; x < spec.image_size; ++x, ++i) {
          const double base = tile[(ch * kTile + y % kTile) * kTile + x % kTile];
          p[i] = base + kDetailAmp * (2.0 * rng.uniform() - 1.0);
        }
      }
    }
  }

  auto make_example = [&](int label, Rng& rng, bool shifted) {
    Example e;
    e.label = label;
    e.caption = make_caption(label);
    e.image = Tensor(img_shape);
    const double* proto = protos[static_cast<std::size_t>(label)].data();
    double* out = e.image.data();
    for (std::size_t i = 0; i < px; ++i) {
      double v = proto[i] + spec.noise_sigma * rng.normal();
      if (shifted) v = spec.shift_scale * v + spec.shift_offset;
      out[i] = v;
    }
    return e;
  };

  for (std::size_t c = 0; c < k; ++c) {
    Rng rng = class_stream(spec.seed, static_cast<int>(c), kPretrainStream);
    for (std::size_t i = 0; i < spec.pretrain_per_class; ++i) {
      ds.pretrain.push_back(make_example(static_cast<int>(c), rng, false));
    }
  }
  for (int c : ds.base_class_ids) {
    Rng rng = class_stream(spec.seed, c, kTrainStream);
    for (std::size_t i = 0; i < spec.train_per_class; ++i) {
      ds.train.push_back(make_example(c, rng, true));
    }
  }
  for (int c : ds.base_class_ids) {
    Rng rng = class_stream(spec.seed, c, kTestStream);
    for (std::size_t i = 0; i < spec.test_per_class; ++i) {
      ds.base_test.push_back(make_example(c, rng, true));
    }
  }
  for (int c : ds.new_class_ids) {
    Rng rng = class_stream(spec.seed, c, kTestStream);
    for (std::size_t i = 0; i < spec.test_per_class; ++i) {
      ds.new_test.push_back(make_example(c, rng, true));
    }
  }

  std::uint64_t next_id = 0;
  for (auto* split : {&ds.pretrain, &ds.train, &ds.base_test, &ds.new_test}) {
    for (Example& e : *split) e.id = next_id++;
  }
  return ds;
}

std::vector<Example> sample_shots(const std::vector<Example>& train,
                                  std::size_t shots, std::uint64_t seed) {
  if (shots == 0) throw ConfigError("sample_shots: shots must be positive");
  if (train.empty()) throw EmptyDatasetError("sample_shots: empty split");

  std::vector<int> class_ids;
  for (const Example& e : train) {
    bool seen = false;
    for (int c : class_ids) seen = seen || c == e.label;
    if (!seen) class_ids.push_back(e.label);
  }
  std::sort(class_ids.begin(), class_ids.end());

  Rng root(seed);
  std::vector<Example> out;
  for (int c : class_ids) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (train[i].label == c) idx.push_back(i);
    }
    if (idx.size() < shots) {
      throw ShotError("class " + std::to_string(c) + " has only " +
                      std::to_string(idx.size()) + " training examples, " +
                      std::to_string(shots) + " shots requested");
    }
    Rng rng = root.derive(static_cast<std::uint64_t>(c));
    rng.shuffle(idx);
    for (std::size_t i = 0; i < shots; ++i) out.push_back(train[idx[i]]);
  }
  return out;
}

namespace {

struct BlobWriter {
  std::ofstream out;
  std::uint64_t offset = 0;

  explicit BlobWriter(const std::filesystem::path& p)
      : out(p, std::ios::binary | std::ios::trunc) {
    if (!out) throw IoError("cannot open " + p.string() + " for writing");
  }

  std::uint64_t write(const void* data, std::size_t bytes) {
    const std::uint64_t at = offset;
    out.write(static_cast<const char*>(data),
              static_cast<std::streamsize>(bytes));
    offset += bytes;
    return at;
  }
};

json split_to_json(const std::vector<Example>& split, BlobWriter& blob) {
  json arr = json::array();
  for (const Example& e : split) {
    const std::uint64_t img_off =
        blob.write(e.image.data(), e.image.numel() * sizeof(double));
    const std::uint64_t cap_off =
        blob.write(e.caption.data(), e.caption.size() * sizeof(std::uint16_t));
    arr.push_back(json{{"id", e.id},
                       {"label", e.label},
                       {"image_offset", img_off},
                       {"caption_offset", cap_off},
                       {"caption_len", e.caption.size()}});
  }
  return arr;
}

std::vector<Example> split_from_json(const json& arr, const Shape& img_shape,
                                     std::ifstream& blob,
                                     const std::string& ctx) {
  std::vector<Example> out;
  const std::size_t px = shape_numel(img_shape);
  for (const json& j : arr) {
    Example e;
    e.id = j.at("id").get<std::uint64_t>();
    e.label = j.at("label").get<int>();
    e.image = Tensor(img_shape);
    blob.seekg(static_cast<std::streamoff>(j.at("image_offset").get<std::uint64_t>()));
    blob.read(reinterpret_cast<char*>(e.image.data()),
              static_cast<std::streamsize>(px * sizeof(double)));
    const std::size_t cap_len = j.at("caption_len").get<std::size_t>();
    e.caption.resize(cap_len);
    blob.seekg(static_cast<std::streamoff>(j.at("caption_offset").get<std::uint64_t>()));
    blob.read(reinterpret_cast<char*>(e.caption.data()),
              static_cast<std::streamsize>(cap_len * sizeof(std::uint16_t)));
    if (!blob) throw IoError("truncated dataset blob while reading " + ctx);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  BlobWriter blob(dir / "dataset.bin");

  json manifest;
  manifest["format"] = "clipfit-dataset";
  manifest["version"] = 1;
  manifest["blob"] = "dataset.bin";
  manifest["spec"] = ds.spec.to_json();
  manifest["base_classes"] = ds.base_class_ids;
  manifest["new_classes"] = ds.new_class_ids;
  manifest["prompts"] = ds.prompts;
  manifest["image_shape"] =
      Shape{ds.spec.channels, ds.spec.image_size, ds.spec.image_size};
  json splits;
  splits["pretrain"] = split_to_json(ds.pretrain, blob);
  splits["train"] = split_to_json(ds.train, blob);
  splits["base_test"] = split_to_json(ds.base_test, blob);
  splits["new_test"] = split_to_json(ds.new_test, blob);
  manifest["examples"] = std::move(splits);

  std::ofstream mf(dir / "dataset.json", std::ios::trunc);
  if (!mf) throw IoError("cannot write dataset manifest in " + dir.string());
  mf << manifest.dump(1) << "\n";
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::filesystem::path manifest_path = path;
  if (std::filesystem::is_directory(path)) manifest_path = path / "dataset.json";

  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("cannot open " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw IoError(manifest_path.string() + ": bad manifest JSON: " + e.what());
  }
  if (manifest.value("format", "") != "clipfit-dataset") {
    throw IoError(manifest_path.string() + ": not a dataset manifest");
  }
  if (manifest.value("version", 0) != 1) {
    throw IoError(manifest_path.string() + ": unsupported dataset version");
  }

  Dataset ds;
  ds.spec = DatasetSpec::from_json(manifest.at("spec"));
  ds.base_class_ids = manifest.at("base_classes").get<std::vector<int>>();
  ds.new_class_ids = manifest.at("new_classes").get<std::vector<int>>();
  ds.prompts =
      manifest.at("prompts").get<std::vector<std::vector<std::uint16_t>>>();
  const Shape img_shape = manifest.at("image_shape").get<Shape>();

  const std::filesystem::path blob_path =
      manifest_path.parent_path() / manifest.at("blob").get<std::string>();
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw IoError("cannot open dataset blob " + blob_path.string());

  const json& splits = manifest.at("examples");
  ds.pretrain = split_from_json(splits.at("pretrain"), img_shape, blob, "pretrain");
  ds.train = split_from_json(splits.at("train"), img_shape, blob, "train");
  ds.base_test = split_from_json(splits.at("base_test"), img_shape, blob, "base_test");
  ds.new_test = split_from_json(splits.at("new_test"), img_shape, blob, "new_test");
  return ds;
}

}  // namespace clipfit
