#pragma once

// Binary parameter checkpoints.
//
//   magic   4 bytes  "DTRT"
//   version u32      kCheckpointVersion
//   then, until end of file, one record per parameter:
//     name length u32, name bytes (UTF-8),
//     rank u32, extents u64 x rank,
//     payload f64 x product(extents)
//
// All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dtr/nn.hpp"

namespace dtr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

void SaveCheckpoint(const std::filesystem::path& path, const ParameterList& params);

// Throws ParseError on a malformed or truncated file.
std::vector<CheckpointRecord> ReadCheckpoint(const std::filesystem::path& path);

// Loads values into `params`, matched by name. Every parameter must be
// present with the same shape.
void LoadCheckpoint(const std::filesystem::path& path, ParameterList& params);

}  // namespace dtr
