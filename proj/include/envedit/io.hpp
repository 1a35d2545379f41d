#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "envedit/world.hpp"

namespace envedit::io {

using Json = nlohmann::ordered_json;

std::string read_file(const std::filesystem::path& path);
// Writes atomically through a temporary sibling file.
void write_file(const std::filesystem::path& path, const std::string& content);
std::string sha256_hex(const std::string& content);

Json to_json(const WorldSpec& spec);
WorldSpec world_spec_from_json(const Json& j);

Json to_json(const Environment& env);
Environment environment_from_json(const Json& j);
void save_environment(const std::filesystem::path& path, const Environment& env);
Environment load_environment(const std::filesystem::path& path);

Json to_json(const Episode& ep);
Episode episode_from_json(const Json& j);
// One episode per line.
std::string episodes_to_jsonl(const std::vector<Episode>& episodes);
std::vector<Episode> episodes_from_jsonl(const std::string& text);

// Binary little-endian float32 records keyed by (env_id, viewpoint_id, view_index),
// with a JSON sidecar listing byte offsets.
struct FeatureRecord {
  std::string env_id;
  NodeId viewpoint = 0;
  int view_index = 0;
  std::vector<float> values;
};

void write_feature_cache(const std::filesystem::path& bin_path, const std::filesystem::path& manifest_path,
                         const std::vector<const Environment*>& envs);
std::vector<FeatureRecord> read_feature_cache(const std::filesystem::path& bin_path,
                                              const std::filesystem::path& manifest_path);

}  // namespace envedit::io
