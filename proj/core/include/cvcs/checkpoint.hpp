#pragma once

// Model checkpoints:
//   "CVCK"  u32 json_len  json(config)  u32 count
//   count x { u32 name_len  name  u64 blob_len  CVT1 blob }
// All integers little-endian.

#include <filesystem>
#include <string>

#include "cvcs/model.hpp"
#include "json.hpp"

namespace cvcs::net {

nlohmann::json config_to_json(const ModelConfig& config);
/// Missing keys keep their defaults; unknown keys are an error.
ModelConfig config_from_json(const nlohmann::json& j);

std::string serialize_model(const Model& model);
Model deserialize_model(const std::string& bytes, const std::string& source = "<memory>");

void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

}  // namespace cvcs::net
