#pragma once

#include <filesystem>
#include <optional>

#include "volcnn/model.hpp"

namespace volcnn {

/// Binary layout, all integers little-endian:
///   8-byte magic "VCNNCKPT", u32 version (1),
///   u64 length + model config text (model_config_to_text),
///   f64 validation loss, u64 tensor count,
///   per tensor: u64 length + name, u8 rank, rank x u64 extents, f32 payload.
/// Tensors are the parameters, then buffers ("buffer/<name>"), then optimizer
/// velocity ("velocity/<name>"), each group in name order.
inline constexpr char kCheckpointMagic[8] = {'V', 'C', 'N', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Network<float> net;
  ParamMap<float> velocity;  // empty when saved without optimizer state
  double val_loss = 0.0;
};

/// Writes to a sibling temporary file and renames it over `path`.
void save_checkpoint(const std::filesystem::path& path, const Network<float>& net,
                     const ParamMap<float>& velocity = {}, double val_loss = 0.0);

/// When `expected` is given, a checkpoint built from a different model
/// configuration is rejected with ConfigError.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const ModelConfig* expected = nullptr);

}  // namespace volcnn
