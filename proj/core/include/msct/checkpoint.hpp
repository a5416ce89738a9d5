#pragma once

#include <filesystem>

#include "msct/model.hpp"

namespace msct {

/// Binary checkpoint: magic "MSCTCKPT", a format version, the model config
/// as a JSON header, then every named parameter as a shape-tagged array of
/// little-endian doubles, in canonical order.
void save_checkpoint(const std::filesystem::path& path, const Model& model);

/// Rebuilds the model from the stored config and restores every parameter
/// bit for bit. Throws std::runtime_error on format or name-set mismatches.
Model load_checkpoint(const std::filesystem::path& path);

// JSON round-trip of the model configuration (shared with run configs).
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& json_text);

}  // namespace msct
