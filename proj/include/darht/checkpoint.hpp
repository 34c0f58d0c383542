#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "darht/model.hpp"

namespace darht {

// Model spec <-> JSON. Unknown layer kinds or missing fields raise
// FormatError.
nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

// Checkpoint layout, all integers little-endian:
//   "DARHTCKP"  u32 version  u64 spec length  spec JSON
//   u64 parameter count  float32 parameters in layer order
//   u32 CRC-32 of every preceding byte
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Model& model);
// FormatError on bad magic, unknown version or an unparsable spec;
// CorruptionError on checksum failure, truncation or a blob whose length
// disagrees with the spec.
Model decode_checkpoint(const std::string& bytes);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace darht
