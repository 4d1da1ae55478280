#pragma once

#include <cstdint>
#include <filesystem>

#include "clipfit/model.hpp"

namespace clipfit {

// Checkpoint container:
//
//   bytes 0..3   magic "CFIT"
//   bytes 4..7   format version, u32 little-endian
//   bytes 8..15  header length H, u64 little-endian
//   H bytes      JSON header: {"config": <model config>,
//                              "params": [{"name", "shape", "offset"}, ...]}
//   payload      all parameter values, raw IEEE-754 f64 little-endian,
//                at the byte offsets given in the header
//
// Offsets are relative to the payload start. Values round-trip bit-exactly:
// save(load(f)) reproduces f byte for byte.

inline constexpr char kCheckpointMagic[4] = {'C', 'F', 'I', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path,
                     const DualEncoder& model);

// Rebuilds the model from the stored config and values. All parameters come
// back frozen (requires_grad = false). IoError on malformed files.
DualEncoder load_checkpoint(const std::filesystem::path& path);

}  // namespace clipfit
