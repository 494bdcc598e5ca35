#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "eri/run_config.hpp"

namespace eri {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Extractor plus head, built from (and carrying) one RunConfig.
struct ModelSet {
  RunConfig config;
  MtlDan<float> extractor;
  EriHead<float> head;

  /// Extractor entries first, then head entries; the checkpoint table order.
  ParamList<float> parameters() const;
};

/// Builds freshly initialized models from the config's seed and applies its
/// freeze setting.
ModelSet make_models(const RunConfig& config);

/// Checkpoint layout (all integers u32 little-endian):
///   "ERIC" version
///   config_len config_bytes
///   n_entries { name_len name rank extents... frozen:u8 }
///   payloads: f32 LE values of every entry in table order
///   crc32 of every preceding byte
std::string checkpoint_bytes(const ModelSet& models);
void checkpoint_save(const ModelSet& models, const std::filesystem::path& path);

/// Rebuilds models from the embedded config, then restores every entry.
ModelSet checkpoint_load(const std::filesystem::path& path);
ModelSet checkpoint_from_bytes(const std::string& bytes);

/// Restores into existing models; NameTableMismatch names the first entry
/// whose name or shape disagrees.
void checkpoint_load_into(const std::filesystem::path& path, ModelSet& models);

}  // namespace eri
