#include "clipfit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "clipfit/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace clipfit {

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), 8);
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const DualEncoder& model) {
  json header;
  header["config"] = model.config().to_json();
  json params = json::array();
  std::uint64_t offset = 0;
  for (const std::string& name : model.param_names()) {
    const Tensor t = model.param(name);
    json p;
    p["name"] = name;
    p["shape"] = t.shape();
    p["offset"] = offset;
    params.push_back(std::move(p));
    offset += t.numel() * sizeof(double);
  }
  header["params"] = std::move(params);
  const std::string header_bytes = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, 4);
  write_u32(out, kCheckpointVersion);
  write_u64(out, header_bytes.size());
  out.write(header_bytes.data(),
            static_cast<std::streamsize>(header_bytes.size()));
  for (const std::string& name : model.param_names()) {
    const Tensor t = model.param(name);
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!out) throw IoError("short write to " + path.string());
}

DualEncoder load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());

  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw IoError(path.string() + ": not a checkpoint (bad magic)");
  }
  const std::uint32_t version = read_u32(in);
  if (version != kCheckpointVersion) {
    throw IoError(path.string() + ": unsupported checkpoint version " +
                  std::to_string(version));
  }
  const std::uint64_t header_len = read_u64(in);
  std::string header_bytes(header_len, '\0');
  in.read(header_bytes.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw IoError(path.string() + ": truncated header");

  json header;
  try {
    header = json::parse(header_bytes);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": bad header JSON: " + e.what());
  }
  if (!header.contains("config") || !header.contains("params")) {
    throw IoError(path.string() + ": header missing config/params");
  }

  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_json(header.at("config"));
  } catch (const ConfigError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  DualEncoder model(cfg, 0);

  const std::streampos payload_start = in.tellg();
  for (const json& p : header.at("params")) {
    const std::string name = p.at("name").get<std::string>();
    const Shape shape = p.at("shape").get<Shape>();
    const std::uint64_t offset = p.at("offset").get<std::uint64_t>();
    if (!model.has_param(name)) {
      throw IoError(path.string() + ": unknown parameter \"" + name +
                    "\" in header");
    }
    Tensor t = model.param(name);
    if (t.shape() != shape) {
      throw IoError(path.string() + ": shape mismatch for " + name + ": " +
                    shape_str(shape) + " in file, " + shape_str(t.shape()) +
                    " from config");
    }
    in.seekg(payload_start + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw IoError(path.string() + ": truncated payload at " + name);
    t.set_requires_grad(false);
  }
  return model;
}

}  // namespace clipfit
