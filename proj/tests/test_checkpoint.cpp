// Checkpoint container: bit-exact round-trips, header validation, error
// paths.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "clipfit/checkpoint.hpp"
#include "clipfit/errors.hpp"
#include "clipfit/model.hpp"
#include "doctest.h"

using namespace clipfit;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.text = {16, 8, 8, 2, 1, 16};
  c.image = {8, 4, 1, 8, 2, 1, 16};
  c.embed_dim = 8;
  return c;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct TempDir {
  fs::path path;
  TempDir()
      : path(fs::temp_directory_path() /
             ("clipfit_ckpt_test_" +
              std::to_string(std::chrono::steady_clock::now()
                                 .time_since_epoch()
                                 .count()))) {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("save/load round-trips values bit-exactly and bytes identically") {
  TempDir tmp;
  DualEncoder m(tiny(), 42);
  m.param("text.projection").data()[3] = 0.1234567890123456789;
  m.param("logit_scale").data()[0] = 2.345;

  const fs::path a = tmp.path / "a.cfit";
  save_checkpoint(a, m);

  DualEncoder loaded = load_checkpoint(a);
  CHECK(loaded.config().to_json() == m.config().to_json());
  for (const auto& name : m.param_names()) {
    INFO(name);
    CHECK(loaded.param(name).vec() == m.param(name).vec());
    CHECK(!loaded.param(name).requires_grad());
  }

  // Byte-identical second generation: save(load(f)) == f.
  const fs::path b = tmp.path / "b.cfit";
  save_checkpoint(b, loaded);
  CHECK(slurp(a) == slurp(b));
}

TEST_CASE("checkpoint magic and version are enforced") {
  TempDir tmp;
  const fs::path p = tmp.path / "bad.cfit";

  {
    std::ofstream out(p, std::ios::binary);
    out << "NOPE, not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(p), IoError);

  CHECK_THROWS_AS(load_checkpoint(tmp.path / "missing.cfit"), IoError);

  // Corrupting the version field of a valid file must fail cleanly.
  DualEncoder m(tiny(), 1);
  save_checkpoint(p, m);
  {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const std::uint32_t bogus = 999;
    f.write(reinterpret_cast<const char*>(&bogus), sizeof bogus);
  }
  CHECK_THROWS_AS(load_checkpoint(p), IoError);

  // Truncated payload.
  save_checkpoint(p, m);
  const auto bytes = slurp(p);
  {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint(p), IoError);
}

TEST_CASE("round-trip preserves a trained-looking state") {
  TempDir tmp;
  DualEncoder m(tiny(), 7);
  // Perturb every parameter deterministically so nothing is at init.
  double v = -1.0;
  for (const auto& name : m.param_names()) {
    Tensor t = m.param(name);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      t.data()[i] += 1e-3 * v;
      v = -v;
    }
  }
  const fs::path p = tmp.path / "m.cfit";
  save_checkpoint(p, m);
  DualEncoder r = load_checkpoint(p);
  for (const auto& name : m.param_names()) {
    CHECK(r.param(name).vec() == m.param(name).vec());
  }
}
