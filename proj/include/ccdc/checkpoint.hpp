#pragma once

#include <filesystem>

#include "ccdc/tensor.hpp"

namespace ccdc {

// Adam moment buffers, ordered like the ParameterStore they belong to.
struct AdamState {
  std::vector<Array> m;
  std::vector<Array> v;
  std::int64_t step = 0;

  static AdamState zeros_like(const ParameterStore& store);
};

struct CheckpointMeta {
  std::uint64_t config_digest = 0;
  std::uint32_t epoch = 0;
};

// Container: magic "CCDCKPT1", config digest (u64), epoch (u32), parameter
// count (u32), then per parameter: name length (u32) + UTF-8 name, rank (u32),
// extents (u32 each), values (f64 each); then the Adam step (u64) and per
// parameter the m and v buffers (f64 each). All little-endian. Round-trips
// bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store,
                     const AdamState& adam, const CheckpointMeta& meta);

// Loads into an existing store with identical parameter names and shapes;
// digest mismatch or layout mismatch is a configuration error.
CheckpointMeta load_checkpoint(const std::filesystem::path& path, ParameterStore& store,
                               AdamState& adam, std::uint64_t expected_digest);

// Digest of the serialized parameter values alone (no optimizer state); the
// determinism checks compare these.
std::uint64_t parameter_digest(const ParameterStore& store);

}  // namespace ccdc
