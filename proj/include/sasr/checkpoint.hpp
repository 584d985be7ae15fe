#pragma once

#include "sasr/model.hpp"

#include <cstdint>
#include <string>

namespace sasr {

/// Model snapshot loaded from disk.
struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  int64_t step = 0;
  int64_t epoch = 0;
  uint64_t seed = 0;
};

/// Writes a little-endian container: u32 JSON-header length, the header
/// (config, vocab sizes, step/epoch/seed, tensor count), then one record
/// per named tensor {u16 name length, name, u8 rank, u32 dims, f64 values}.
void save_checkpoint(const std::string& path, const ModelParams& params, const ModelConfig& config,
                     int64_t step, int64_t epoch, uint64_t seed);

/// Rebuilds the parameter set from a saved container. The tensor records
/// must cover exactly the named set for the stored config, with matching
/// shapes; anything else raises FormatError or CorruptionError.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace sasr
