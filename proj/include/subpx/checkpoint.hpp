#pragma once

#include <cstdint>
#include <string>

#include "subpx/refine_net.hpp"
#include "subpx/tensor.hpp"
#include "subpx/trainer.hpp"

namespace subpx {

// On disk a checkpoint is two files:
//   <path>      JSON manifest: refine config, layer shapes with byte offsets,
//               Adam hyper-parameters, step counter, FNV-1a-64 checksum
//   <path>.bin  little-endian float32 buffer: parameters in declaration
//               order, then Adam first moments, then second moments
std::string checkpoint_buffer_path(const std::string& manifest_path);

void checkpoint_save(const TrainState& state, const std::string& path);

/// Throws CorruptCheckpoint on checksum or size mismatch and ConfigError if
/// `expected` is given and differs from the stored refine config.
TrainState checkpoint_load(const std::string& path, const RefineConfig* expected = nullptr);

}  // namespace subpx
