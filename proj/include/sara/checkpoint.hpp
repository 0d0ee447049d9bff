#pragma once

// Checkpoint container:
//   8 bytes  magic "SARACKPT"
//   8 bytes  header length L, little-endian
//   L bytes  JSON header: format version, step, optimizer step counts, config
//            snapshot, tensor names and shapes, payload size, FNV-1a checksum
//   payload  little-endian float32 tensors in header order (column-major)
// Tensors: generator parameters, critic parameters, then Adam first and
// second moments of both optimizers.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "sara/trainer.hpp"

namespace sara {

constexpr int kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Trainer& t);
/// Builds a fresh trainer from the snapshot; nothing is returned unless the
/// whole container validates.
std::unique_ptr<Trainer> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Trainer& t, const std::filesystem::path& path);
std::unique_ptr<Trainer> load_checkpoint(const std::filesystem::path& path);

}  // namespace sara
