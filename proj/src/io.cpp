#include "envedit/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace envedit::io {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("missing_artifact", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io_error", "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("io_error", "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string sha256_hex(const std::string& content) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(content.data(), content.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("hash_error", "sha256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

Json to_json(const WorldSpec& s) {
  Json j;
  j["num_envs"] = s.num_envs;
  j["nodes_per_env"] = s.nodes_per_env;
  j["grid_h"] = s.grid_h;
  j["grid_w"] = s.grid_w;
  j["num_classes"] = s.num_classes;
  j["feature_dim"] = s.feature_dim;
  j["style_dim"] = s.style_dim;
  j["class_vocab"] = s.class_vocab;
  j["edge_len_range"] = {s.edge_len_min, s.edge_len_max};
  j["extra_edge_prob"] = s.extra_edge_prob;
  j["stair_prob"] = s.stair_prob;
  j["dominant_fraction"] = s.dominant_fraction;
  j["jitter"] = s.jitter;
  j["appearance_noise"] = s.appearance_noise;
  j["modulator_scale"] = s.modulator_scale;
  j["base_style_scale"] = s.base_style_scale;
  j["holdout_fraction"] = s.holdout_fraction;
  j["unseen_style_shift"] = s.unseen_style_shift;
  j["unseen_appearance_scale"] = s.unseen_appearance_scale;
  j["seed"] = s.seed;
  return j;
}

WorldSpec world_spec_from_json(const Json& j) {
  WorldSpec s;
  try {
    s.num_envs = j.value("num_envs", s.num_envs);
    s.nodes_per_env = j.value("nodes_per_env", s.nodes_per_env);
    s.grid_h = j.value("grid_h", s.grid_h);
    s.grid_w = j.value("grid_w", s.grid_w);
    s.num_classes = j.value("num_classes", s.num_classes);
    s.feature_dim = j.value("feature_dim", s.feature_dim);
    s.style_dim = j.value("style_dim", s.style_dim);
    s.class_vocab = j.value("class_vocab", s.class_vocab);
    if (j.contains("edge_len_range")) {
      s.edge_len_min = j["edge_len_range"].at(0).get<double>();
      s.edge_len_max = j["edge_len_range"].at(1).get<double>();
    }
    s.extra_edge_prob = j.value("extra_edge_prob", s.extra_edge_prob);
    s.stair_prob = j.value("stair_prob", s.stair_prob);
    s.dominant_fraction = j.value("dominant_fraction", s.dominant_fraction);
    s.jitter = j.value("jitter", s.jitter);
    s.appearance_noise = j.value("appearance_noise", s.appearance_noise);
    s.modulator_scale = j.value("modulator_scale", s.modulator_scale);
    s.base_style_scale = j.value("base_style_scale", s.base_style_scale);
    s.holdout_fraction = j.value("holdout_fraction", s.holdout_fraction);
    s.unseen_style_shift = j.value("unseen_style_shift", s.unseen_style_shift);
    s.unseen_appearance_scale = j.value("unseen_appearance_scale", s.unseen_appearance_scale);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed_config", std::string("world spec: ") + e.what());
  }
  return s;
}

Json to_json(const Environment& env) {
  Json j;
  j["env_id"] = env.env_id;
  j["num_classes"] = env.num_classes;
  j["grid_h"] = env.grid_h;
  j["grid_w"] = env.grid_w;
  j["feature_dim"] = env.feature_dim;
  j["class_names"] = env.class_names;
  j["nodes"] = Json::array();
  for (const auto& n : env.nodes) j["nodes"].push_back({{"id", n.id}, {"xyz", n.position}});
  j["edges"] = Json::array();
  for (const auto& e : env.edges) j["edges"].push_back({{"a", e.a}, {"b", e.b}, {"len", e.length}});
  Json panos = Json::object();
  for (const auto& p : env.panoramas) {
    Json views = Json::array();
    for (const auto& v : p.views) {
      Json vj;
      vj["theta"] = v.heading;
      vj["phi"] = v.elevation;
      vj["grid"] = v.grid;
      vj["feature"] = v.feature;
      vj["style"] = v.style;
      vj["jitter_seed"] = v.jitter_seed;
      views.push_back(std::move(vj));
    }
    panos[std::to_string(p.viewpoint)] = std::move(views);
  }
  j["panoramas"] = std::move(panos);
  Json table = Json::object();
  for (const auto& [c, a] : env.appearance_table) table[std::to_string(c)] = a;
  j["appearance_table"] = std::move(table);
  j["base_style"] = env.base_style;
  j["provenance"] = to_string(env.provenance);
  if (env.edit) {
    j["edit_config"] = {{"variant", to_string(env.edit->variant)},
                        {"style_scope", to_string(env.edit->style_scope)},
                        {"mask_count", env.edit->mask_count},
                        {"seed", env.edit->seed},
                        {"masked_class_ids", env.edit->masked_class_ids}};
  }
  return j;
}

Environment environment_from_json(const Json& j) {
  Environment env;
  try {
    env.env_id = j.at("env_id").get<std::string>();
    env.num_classes = j.at("num_classes").get<int>();
    env.grid_h = j.at("grid_h").get<int>();
    env.grid_w = j.at("grid_w").get<int>();
    env.feature_dim = j.at("feature_dim").get<int>();
    env.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const auto& n : j.at("nodes")) env.nodes.push_back({n.at("id").get<int>(), n.at("xyz").get<std::array<double, 3>>()});
    for (const auto& e : j.at("edges")) env.edges.push_back({e.at("a").get<int>(), e.at("b").get<int>(), e.at("len").get<double>()});
    env.panoramas.resize(env.nodes.size());
    for (const auto& [key, views] : j.at("panoramas").items()) {
      const auto id = static_cast<std::size_t>(std::stoi(key));
      if (id >= env.panoramas.size()) throw Error("malformed_environment", "panorama for unknown node " + key);
      Panorama& p = env.panoramas[id];
      p.viewpoint = static_cast<NodeId>(id);
      for (const auto& vj : views) {
        DiscretizedView v;
        v.heading = vj.at("theta").get<double>();
        v.elevation = vj.at("phi").get<double>();
        v.grid = vj.at("grid").get<std::vector<int>>();
        v.feature = vj.at("feature").get<Vec>();
        v.style = vj.value("style", Vec{});
        v.jitter_seed = vj.value("jitter_seed", std::uint64_t{0});
        v.orientation = {std::cos(v.heading), std::sin(v.heading), std::cos(v.elevation), std::sin(v.elevation)};
        p.views.push_back(std::move(v));
      }
    }
    for (const auto& [key, a] : j.at("appearance_table").items()) env.appearance_table[std::stoi(key)] = a.get<Vec>();
    env.base_style = j.value("base_style", Vec{});
    env.provenance = variant_from_string(j.at("provenance").get<std::string>());
    if (j.contains("edit_config")) {
      const auto& ec = j["edit_config"];
      EditRecord r;
      r.variant = variant_from_string(ec.at("variant").get<std::string>());
      r.style_scope = style_scope_from_string(ec.at("style_scope").get<std::string>());
      r.mask_count = ec.at("mask_count").get<int>();
      r.seed = ec.at("seed").get<std::uint64_t>();
      r.masked_class_ids = ec.at("masked_class_ids").get<std::vector<int>>();
      env.edit = r;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed_environment", e.what());
  }
  for (const auto& p : env.panoramas) {
    if (p.views.size() != static_cast<std::size_t>(kViewsPerPanorama)) {
      throw Error("malformed_environment", "every panorama needs 36 views");
    }
  }
  return env;
}

void save_environment(const fs::path& path, const Environment& env) { write_file(path, to_json(env).dump() + "\n"); }

Environment load_environment(const fs::path& path) {
  try {
    return environment_from_json(Json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("malformed_environment", path.string() + ": " + e.what());
  }
}

Json to_json(const Episode& ep) {
  Json j;
  j["episode_id"] = ep.episode_id;
  j["env_id"] = ep.env_id;
  j["path"] = ep.path;
  j["instruction"] = ep.instruction;
  j["synthetic"] = ep.synthetic;
  return j;
}

Episode episode_from_json(const Json& j) {
  Episode ep;
  try {
    ep.episode_id = j.at("episode_id").get<std::string>();
    ep.env_id = j.at("env_id").get<std::string>();
    ep.path = j.at("path").get<std::vector<NodeId>>();
    ep.instruction = j.at("instruction").get<std::vector<std::string>>();
    ep.synthetic = j.value("synthetic", false);
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed_dataset", e.what());
  }
  if (ep.path.empty()) throw Error("malformed_dataset", "episode with empty path");
  return ep;
}

std::string episodes_to_jsonl(const std::vector<Episode>& episodes) {
  std::string out;
  for (const auto& ep : episodes) out += to_json(ep).dump() + "\n";
  return out;
}

std::vector<Episode> episodes_from_jsonl(const std::string& text) {
  std::vector<Episode> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(episode_from_json(Json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error("malformed_dataset", e.what());
    }
  }
  return out;
}

namespace {

void append_le_float(std::string& out, float value) {
  auto bits = std::bit_cast<std::uint32_t>(value);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

float read_le_float(const std::string& in, std::size_t pos) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(b)])) << (8 * b);
  return std::bit_cast<float>(bits);
}

}  // namespace

void write_feature_cache(const fs::path& bin_path, const fs::path& manifest_path,
                         const std::vector<const Environment*>& envs) {
  std::string blob;
  Json manifest;
  int dim = envs.empty() ? 0 : envs.front()->feature_dim;
  manifest["D"] = dim;
  manifest["dtype"] = "float32-le";
  manifest["records"] = Json::array();
  for (const auto* env : envs) {
    if (env->feature_dim != dim) throw Error("invalid_argument", "feature cache requires a single feature dim");
    for (const auto& p : env->panoramas) {
      for (std::size_t k = 0; k < p.views.size(); ++k) {
        manifest["records"].push_back(
            {{"env_id", env->env_id}, {"viewpoint_id", p.viewpoint}, {"view_index", k}, {"offset", blob.size()}});
        for (double x : p.views[k].feature) append_le_float(blob, static_cast<float>(x));
      }
    }
  }
  write_file(bin_path, blob);
  write_file(manifest_path, manifest.dump(2) + "\n");
}

std::vector<FeatureRecord> read_feature_cache(const fs::path& bin_path, const fs::path& manifest_path) {
  const std::string blob = read_file(bin_path);
  const Json manifest = Json::parse(read_file(manifest_path));
  const auto dim = manifest.at("D").get<std::size_t>();
  std::vector<FeatureRecord> out;
  for (const auto& r : manifest.at("records")) {
    FeatureRecord rec;
    rec.env_id = r.at("env_id").get<std::string>();
    rec.viewpoint = r.at("viewpoint_id").get<NodeId>();
    rec.view_index = r.at("view_index").get<int>();
    const auto offset = r.at("offset").get<std::size_t>();
    if (offset + 4 * dim > blob.size()) throw Error("corrupt_feature_cache", "record past end of feature file");
    for (std::size_t i = 0; i < dim; ++i) rec.values.push_back(read_le_float(blob, offset + 4 * i));
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace envedit::io
