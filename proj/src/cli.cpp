#include "envedit/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

namespace envedit::cli {

using io::Json;

namespace {

void check_keys(const Json& j, const std::string& section, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw Error("malformed_config", "section '" + section + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw Error("malformed_config", "unknown key '" + key + "' in section '" + section + "'");
  }
}

template <typename T>
void read(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string baseline_name(RlBaseline b) {
  switch (b) {
    case RlBaseline::kBatchMean: return "batch_mean";
    case RlBaseline::kTrajectoryMean: return "trajectory_mean";
    case RlBaseline::kConstant: return "constant";
  }
  return "batch_mean";
}

RlBaseline baseline_from(const std::string& s) {
  if (s == "batch_mean") return RlBaseline::kBatchMean;
  if (s == "trajectory_mean") return RlBaseline::kTrajectoryMean;
  if (s == "constant") return RlBaseline::kConstant;
  throw Error("malformed_config", "unknown RL baseline '" + s + "'");
}

Json world_json(const WorldSection& w) {
  Json j = io::to_json(w.spec);
  j["episodes"] = w.episodes;
  j["hops"] = {w.hops.first, w.hops.second};
  j["val_seen_fraction"] = w.val_seen_fraction;
  return j;
}

WorldSection world_from(const Json& j) {
  std::set<std::string> allowed{"episodes", "hops", "val_seen_fraction"};
  const Json defaults = io::to_json(WorldSpec{});
  for (const auto& [key, _] : defaults.items()) allowed.insert(key);
  check_keys(j, "world", allowed);
  WorldSection w;
  w.spec = io::world_spec_from_json(j);
  read(j, "episodes", w.episodes);
  if (j.contains("hops")) {
    auto h = j.at("hops").get<std::vector<int>>();
    if (h.size() != 2) throw Error("malformed_config", "world.hops must be [min, max]");
    w.hops = {h[0], h[1]};
  }
  read(j, "val_seen_fraction", w.val_seen_fraction);
  return w;
}

Json speaker_json(const SpeakerConfig& c) {
  return Json{{"word_dim", c.word_dim},           {"hidden", c.hidden},
              {"style_aware", c.style_aware},     {"learning_rate", c.learning_rate},
              {"iterations", c.iterations},       {"batch_size", c.batch_size},
              {"grad_clip", c.grad_clip},         {"max_len_per_hop", c.max_len_per_hop},
              {"max_len_extra", c.max_len_extra}, {"seed", c.seed}};
}

SpeakerConfig speaker_from(const Json& j) {
  check_keys(j, "speaker", {"word_dim", "hidden", "style_aware", "learning_rate", "iterations", "batch_size",
                            "grad_clip", "max_len_per_hop", "max_len_extra", "seed"});
  SpeakerConfig c;
  read(j, "word_dim", c.word_dim);
  read(j, "hidden", c.hidden);
  read(j, "style_aware", c.style_aware);
  read(j, "learning_rate", c.learning_rate);
  read(j, "iterations", c.iterations);
  read(j, "batch_size", c.batch_size);
  read(j, "grad_clip", c.grad_clip);
  read(j, "max_len_per_hop", c.max_len_per_hop);
  read(j, "max_len_extra", c.max_len_extra);
  read(j, "seed", c.seed);
  return c;
}

Json train_json(const TrainConfig& c) {
  Json rl{{"success_radius", c.rl.success_radius}, {"success_reward", c.rl.success_reward},
          {"failure_reward", c.rl.failure_reward}, {"progress_weight", c.rl.progress_weight},
          {"discount", c.rl.discount},             {"baseline", baseline_name(c.rl.baseline)},
          {"baseline_value", c.rl.baseline_value}, {"mean_over_steps", c.rl.mean_over_steps}};
  return Json{{"batch_size", c.batch_size},
              {"stage2_iterations", c.stage2_iterations},
              {"stage3_iterations", c.stage3_iterations},
              {"edits", c.edited_sources},
              {"style_aware_bt", c.style_aware_bt},
              {"schedule", c.schedule == Schedule::kMixed ? "mixed" : "curriculum"},
              {"curriculum", c.curriculum},
              {"mix_edits_in_stage3", c.mix_edits_in_stage3},
              {"bt_paths", c.bt_paths},
              {"lambda_il", c.lambda_il},
              {"learning_rate", c.learning_rate},
              {"grad_clip", c.grad_clip},
              {"val_every", c.val_every},
              {"max_steps", c.max_steps},
              {"seed", c.seed},
              {"rl", rl}};
}

TrainConfig train_from(const Json& j) {
  check_keys(j, "train", {"batch_size", "stage2_iterations", "stage3_iterations", "edits", "style_aware_bt",
                          "schedule", "curriculum", "mix_edits_in_stage3", "bt_paths", "lambda_il", "learning_rate",
                          "grad_clip", "val_every", "max_steps", "seed", "rl"});
  TrainConfig c;
  read(j, "batch_size", c.batch_size);
  read(j, "stage2_iterations", c.stage2_iterations);
  read(j, "stage3_iterations", c.stage3_iterations);
  read(j, "edits", c.edited_sources);
  read(j, "style_aware_bt", c.style_aware_bt);
  if (j.contains("schedule")) {
    const auto s = j.at("schedule").get<std::string>();
    if (s != "mixed" && s != "curriculum") throw Error("malformed_config", "train.schedule must be mixed or curriculum");
    c.schedule = s == "mixed" ? Schedule::kMixed : Schedule::kCurriculum;
  }
  read(j, "curriculum", c.curriculum);
  read(j, "mix_edits_in_stage3", c.mix_edits_in_stage3);
  read(j, "bt_paths", c.bt_paths);
  read(j, "lambda_il", c.lambda_il);
  read(j, "learning_rate", c.learning_rate);
  read(j, "grad_clip", c.grad_clip);
  read(j, "val_every", c.val_every);
  read(j, "max_steps", c.max_steps);
  read(j, "seed", c.seed);
  if (j.contains("rl")) {
    const Json& r = j.at("rl");
    check_keys(r, "train.rl", {"success_radius", "success_reward", "failure_reward", "progress_weight", "discount",
                               "baseline", "baseline_value", "mean_over_steps"});
    read(r, "success_radius", c.rl.success_radius);
    read(r, "success_reward", c.rl.success_reward);
    read(r, "failure_reward", c.rl.failure_reward);
    read(r, "progress_weight", c.rl.progress_weight);
    read(r, "discount", c.rl.discount);
    if (r.contains("baseline")) c.rl.baseline = baseline_from(r.at("baseline").get<std::string>());
    read(r, "baseline_value", c.rl.baseline_value);
    read(r, "mean_over_steps", c.rl.mean_over_steps);
  }
  return c;
}

}  // namespace

ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig c;
  try {
    check_keys(j, "root", {"world", "edits", "speaker", "agent", "train", "eval"});
    if (j.contains("world")) c.world = world_from(j.at("world"));
    if (j.contains("edits")) {
      const Json& e = j.at("edits");
      check_keys(e, "edits", {"variants", "style_scope", "mask_count", "seed", "style_library_size",
                              "style_library_seed"});
      read(e, "variants", c.edits.variants);
      if (e.contains("style_scope")) c.edits.style_scope = style_scope_from_string(e.at("style_scope").get<std::string>());
      read(e, "mask_count", c.edits.mask_count);
      read(e, "seed", c.edits.seed);
      read(e, "style_library_size", c.edits.style_library_size);
      read(e, "style_library_seed", c.edits.style_library_seed);
    }
    if (j.contains("speaker")) c.speaker = speaker_from(j.at("speaker"));
    if (j.contains("agent")) {
      const Json& a = j.at("agent");
      check_keys(a, "agent", {"word_dim", "hidden", "seed"});
      read(a, "word_dim", c.agent.word_dim);
      read(a, "hidden", c.agent.hidden);
      read(a, "seed", c.agent.seed);
    }
    if (j.contains("train")) c.train = train_from(j.at("train"));
    if (j.contains("eval")) {
      const Json& e = j.at("eval");
      check_keys(e, "eval", {"success_radius", "max_steps", "split"});
      read(e, "success_radius", c.eval.success_radius);
      read(e, "max_steps", c.eval.max_steps);
      read(e, "split", c.eval.split);
    }
  } catch (const Json::exception& e) {
    throw Error("malformed_config", e.what());
  } catch (const Error& e) {
    if (e.code() == "malformed_config") throw;
    throw Error("malformed_config", e.what());
  }
  c.world.spec.validate();
  c.train.validate();
  return c;
}

Json to_json(const ExperimentConfig& c) {
  Json j;
  j["world"] = world_json(c.world);
  j["edits"] = Json{{"variants", c.edits.variants},
                    {"style_scope", to_string(c.edits.style_scope)},
                    {"mask_count", c.edits.mask_count},
                    {"seed", c.edits.seed},
                    {"style_library_size", c.edits.style_library_size},
                    {"style_library_seed", c.edits.style_library_seed}};
  j["speaker"] = speaker_json(c.speaker);
  j["agent"] = Json{{"word_dim", c.agent.word_dim}, {"hidden", c.agent.hidden}, {"seed", c.agent.seed}};
  j["train"] = train_json(c.train);
  j["eval"] = Json{{"success_radius", c.eval.success_radius}, {"max_steps", c.eval.max_steps}, {"split", c.eval.split}};
  return j;
}

ExperimentConfig load_config(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(io::read_file(path));
  } catch (const Json::exception& e) {
    throw Error("malformed_config", path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::string edit_source_name(Variant variant, StyleScope scope, int mask_count) {
  std::string name = to_string(variant);
  if (variant == Variant::kStyleTransfer && scope != StyleScope::kPerPanorama) name += "_" + to_string(scope);
  if (is_masked(variant) && mask_count != 1) name += "_k" + std::to_string(mask_count);
  return name;
}

// ---------------------------------------------------------------------------
// Workspace

Workspace::Workspace(fs::path root) : root_(std::move(root)) {
  const auto path = root_ / "manifest.json";
  if (fs::exists(path)) {
    try {
      manifest_ = Json::parse(io::read_file(path));
    } catch (const Json::exception& e) {
      throw Error("corrupt_manifest", e.what());
    }
  } else {
    manifest_ = Json{{"format_version", 1}, {"artifacts", Json::object()}};
  }
}

fs::path Workspace::default_root() {
  const char* env = std::getenv("ENVEDIT_WORKSPACE");
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("workspace");
}

bool Workspace::initialized() const { return manifest_.contains("config"); }

void Workspace::write(const std::string& rel, const std::string& content) {
  io::write_file(root_ / rel, content);
  manifest_["artifacts"][rel] = Json{{"sha256", io::sha256_hex(content)}, {"bytes", content.size()}};
}

std::string Workspace::read(const std::string& rel) const {
  if (!has(rel)) throw Error("missing_artifact", "artifact '" + rel + "' is not registered in " + root_.string());
  if (!fs::exists(root_ / rel)) throw Error("missing_artifact", "artifact file '" + rel + "' is missing");
  std::string content = io::read_file(root_ / rel);
  if (io::sha256_hex(content) != manifest_.at("artifacts").at(rel).at("sha256").get<std::string>()) {
    throw Error("hash_mismatch", "artifact '" + rel + "' does not match its recorded hash");
  }
  return content;
}

bool Workspace::has(const std::string& rel) const { return manifest_.at("artifacts").contains(rel); }

std::vector<std::string> Workspace::artifacts_under(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [rel, _] : manifest_.at("artifacts").items()) {
    if (rel.rfind(prefix, 0) == 0) out.push_back(rel);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void Workspace::save_manifest() const {
  Json sorted = manifest_;
  Json artifacts = Json::object();
  std::vector<std::string> keys;
  for (const auto& [k, _] : manifest_.at("artifacts").items()) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  for (const auto& k : keys) artifacts[k] = manifest_.at("artifacts").at(k);
  sorted["artifacts"] = artifacts;
  io::write_file(root_ / "manifest.json", sorted.dump(2) + "\n");
}

void Workspace::verify_all() const {
  for (const auto& [rel, _] : manifest_.at("artifacts").items()) read(rel);
}

// ---------------------------------------------------------------------------
// World loading

namespace {

const char* kSplits[] = {"train", "val_seen", "val_unseen"};

std::vector<Episode>& split_member(DatasetSplit& split, const std::string& name) {
  if (name == "train") return split.train;
  if (name == "val_seen") return split.val_seen;
  if (name == "val_unseen") return split.val_unseen;
  throw Error("invalid_split", "unknown split '" + name + "'");
}

Workspace open_workspace(const fs::path& out) {
  Workspace ws(out);
  if (!ws.initialized()) throw Error("missing_artifact", "no world in workspace " + out.string() + "; run worldgen first");
  return ws;
}

// The world section a workspace was generated with must not change afterwards; the seed
// may come from --seed and is taken from the stored spec.
void check_world_config(const Workspace& ws, const ExperimentConfig& config) {
  Json recorded = ws.manifest().at("config").at("world");
  Json requested = world_json(config.world);
  recorded.erase("seed");
  requested.erase("seed");
  if (recorded != requested) {
    throw Error("config_mismatch", "world configuration differs from the one this workspace was generated with");
  }
}

RenderContext render_context(const WorldSpec& spec) { return make_render_context(spec, spec.seed); }

Vocabulary vocabulary(const WorldSpec& spec) {
  std::vector<std::string> names;
  for (int c = 1; c <= spec.num_classes; ++c) names.push_back(spec.class_name(c));
  return Vocabulary::for_classes(names);
}

// Writes a checkpoint through a module saver, then records its files in the manifest.
template <typename Save>
void save_checkpoint(Workspace& ws, const std::string& stem, Save save) {
  fs::create_directories((ws.root() / stem).parent_path());
  save((ws.root() / stem).string());
  for (const char* ext : {".bin", ".json"}) {
    const std::string rel = stem + ext;
    ws.write(rel, io::read_file(ws.root() / rel));
  }
}

void verify_checkpoint(const Workspace& ws, const std::string& stem) {
  ws.read(stem + ".json");
  ws.read(stem + ".bin");
}

std::string stem_label(std::string stem) {
  if (stem.rfind("agents/", 0) == 0) stem = stem.substr(7);
  std::replace(stem.begin(), stem.end(), '/', '_');
  return stem;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

WorldData load_world(const Workspace& ws) {
  WorldData w;
  w.spec = io::world_spec_from_json(Json::parse(ws.read("world/spec.json")));
  for (const auto& rel : ws.artifacts_under("world/envs/")) {
    w.environments.push_back(io::environment_from_json(Json::parse(ws.read(rel))));
  }
  if (w.environments.empty()) throw Error("missing_artifact", "world has no environments");
  for (const char* name : kSplits) {
    split_member(w.split, name) = io::episodes_from_jsonl(ws.read(std::string("world/episodes/") + name + ".jsonl"));
  }
  const Json ids = Json::parse(ws.read("world/split.json"));
  w.split.seen_envs = ids.at("seen_envs").get<std::vector<std::string>>();
  w.split.unseen_envs = ids.at("unseen_envs").get<std::vector<std::string>>();
  return w;
}

EnvironmentBank& fill_bank(EnvironmentBank& bank, const Workspace& ws, const WorldData& world,
                           const std::vector<std::string>& edit_sources) {
  for (const auto& e : world.environments) bank.add(kOriginalSource, e);
  for (const auto& source : edit_sources) {
    if (source == kOriginalSource || bank.has_source(source)) continue;
    const auto files = ws.artifacts_under("edits/" + source + "/env");
    if (files.empty()) throw Error("missing_edit", "no edited environments for source '" + source + "'; run edit first");
    for (const auto& rel : files) bank.add(source, io::environment_from_json(Json::parse(ws.read(rel))));
  }
  return bank;
}

// ---------------------------------------------------------------------------
// Commands

Json cmd_worldgen(const ExperimentConfig& config_in, const fs::path& out, std::optional<std::uint64_t> seed) {
  ExperimentConfig config = config_in;
  if (seed) config.world.spec.seed = *seed;
  const WorldSpec& spec = config.world.spec;
  Workspace ws(out);
  if (ws.initialized()) check_world_config(ws, config);

  World world = generate_world(spec, spec.seed);
  std::vector<const Environment*> envs;
  for (const auto& e : world.environments) envs.push_back(&e);
  auto episodes = sample_episodes(envs, config.world.episodes, config.world.hops, derive_seed(spec.seed, hash_tag("episodes")));
  auto split = split_dataset(episodes, spec.holdout_fraction, spec.seed, config.world.val_seen_fraction);

  ws.write("world/spec.json", io::to_json(spec).dump(2) + "\n");
  for (const auto& e : world.environments) ws.write("world/envs/" + e.env_id + ".json", io::to_json(e).dump() + "\n");
  for (const char* name : kSplits) {
    ws.write(std::string("world/episodes/") + name + ".jsonl", io::episodes_to_jsonl(split_member(split, name)));
  }
  ws.write("world/split.json", Json{{"seen_envs", split.seen_envs}, {"unseen_envs", split.unseen_envs}}.dump(2) + "\n");
  io::write_feature_cache(ws.root() / "world/features.bin", ws.root() / "world/features.json", envs);
  for (const char* rel : {"world/features.bin", "world/features.json"}) ws.write(rel, io::read_file(ws.root() / rel));
  ws.write("agents/teacher.json", Json{{"format_version", 1}, {"kind", "agent"}, {"policy", "teacher"}}.dump(2) + "\n");

  ws.manifest()["config"] = to_json(config);
  ws.write("config.json", to_json(config).dump(2) + "\n");
  ws.save_manifest();
  return Json{{"command", "worldgen"},
              {"workspace", ws.root().string()},
              {"environments", world.environments.size()},
              {"episodes", {{"train", split.train.size()}, {"val_seen", split.val_seen.size()}, {"val_unseen", split.val_unseen.size()}}},
              {"seen_envs", split.seen_envs},
              {"unseen_envs", split.unseen_envs}};
}

Json cmd_edit(const ExperimentConfig& config, const fs::path& out) {
  Workspace ws = open_workspace(out);
  check_world_config(ws, config);
  WorldData world = load_world(ws);
  const RenderContext ctx = render_context(world.spec);
  const StylePrior prior = fit_style_prior(
      synthetic_style_library(world.spec.style_dim, config.edits.style_library_size, config.edits.style_library_seed));
  Json sources = Json::array();
  for (const auto& name : config.edits.variants) {
    EditConfig ec;
    ec.variant = variant_from_string(name);
    if (ec.variant == Variant::kOriginal) throw Error("invalid_variant", "the original is not an edit");
    ec.style_scope = config.edits.style_scope;
    ec.mask_count = config.edits.mask_count;
    ec.seed = config.edits.seed;
    ec.validate(world.spec.num_classes);
    const std::string source = edit_source_name(ec.variant, ec.style_scope, ec.mask_count);
    for (const auto& e : world.environments) {
      ws.write("edits/" + source + "/" + e.env_id + ".json", io::to_json(apply_edit(e, ec, prior, ctx)).dump() + "\n");
    }
    ws.write("edits/" + source + "/edit.json",
             Json{{"variant", to_string(ec.variant)},
                  {"style_scope", to_string(ec.style_scope)},
                  {"mask_count", ec.mask_count},
                  {"seed", ec.seed},
                  {"style_library_size", config.edits.style_library_size},
                  {"style_library_seed", config.edits.style_library_seed}}
                     .dump(2) + "\n");
    sources.push_back(source);
  }
  ws.save_manifest();
  return Json{{"command", "edit"}, {"sources", sources}};
}

Json cmd_train_speaker(const ExperimentConfig& config, const fs::path& out) {
  Workspace ws = open_workspace(out);
  check_world_config(ws, config);
  WorldData world = load_world(ws);
  const RenderContext ctx = render_context(world.spec);
  EnvLookup envs = make_lookup(world.environments);
  Speaker init(vocabulary(world.spec), world.spec.feature_dim, ctx.encoder, config.speaker);
  auto result = train_speaker(std::move(init), world.split.train, envs);
  const std::string stem = std::string("speakers/speaker_") + (config.speaker.style_aware ? "aware" : "baseline");
  save_checkpoint(ws, stem, [&](const std::string& path) { save_speaker(result.speaker, path); });
  std::string losses;
  for (std::size_t i = 0; i < result.losses.size(); ++i) {
    losses += Json{{"iteration", i}, {"loss", result.losses[i]}}.dump() + "\n";
  }
  ws.write(stem + "_log.jsonl", losses);
  ws.save_manifest();
  return Json{{"command", "train-speaker"}, {"checkpoint", stem}, {"final_loss", result.losses.empty() ? 0.0 : result.losses.back()}};
}

Json cmd_train(const ExperimentConfig& config, const fs::path& out, const std::string& name_in) {
  Workspace ws = open_workspace(out);
  check_world_config(ws, config);
  WorldData world = load_world(ws);
  std::vector<std::string> sources = config.train.edited_sources;
  for (const auto& s : config.train.curriculum) sources.push_back(s);
  EnvironmentBank bank;
  fill_bank(bank, ws, world, sources);

  std::optional<Speaker> speaker;
  if (config.train.stage3_iterations > 0) {
    const std::string stem = std::string("speakers/speaker_") + (config.train.style_aware_bt ? "aware" : "baseline");
    verify_checkpoint(ws, stem);
    speaker = load_speaker((ws.root() / stem).string());
  }

  std::string name = name_in;
  if (name.empty()) {
    std::string tag = "base";
    if (!config.train.edited_sources.empty()) {
      tag.clear();
      for (const auto& s : config.train.edited_sources) tag += (tag.empty() ? "" : "+") + s;
    }
    if (config.train.schedule == Schedule::kCurriculum) {
      tag = "curriculum";
      for (const auto& s : config.train.curriculum) tag += "+" + s;
    }
    name = "agent_" + tag + "_s" + std::to_string(config.train.seed);
  }
  const std::string dir = "agents/" + name + "/";

  Agent init(vocabulary(world.spec), world.spec.feature_dim, config.agent);
  TrainData data{&bank, &world.split, speaker ? &*speaker : nullptr};
  TrainResult result = train(init, data, config.train);

  for (const auto& stage : result.stages) {
    std::string label = stage.stage;
    std::replace(label.begin(), label.end(), ':', '_');
    save_checkpoint(ws, dir + label, [&](const std::string& p) { save_agent(stage.agent, p, stage.stage); });
  }
  const std::string last = result.stages.empty() ? "init" : result.stages.back().stage;
  save_checkpoint(ws, dir + "final", [&](const std::string& p) { save_agent(result.final_agent, p, last); });
  save_checkpoint(ws, dir + "best", [&](const std::string& p) { save_agent(result.best_agent, p, last); });
  ws.write(dir + "log.jsonl", result.log_jsonl());
  ws.write(dir + "config.json", to_json(config).dump(2) + "\n");
  ws.save_manifest();
  if (result.aborted) throw Error(result.abort_reason, "training aborted; partial log written to " + dir + "log.jsonl");
  Json summary{{"command", "train"}, {"checkpoint", dir + "final"}, {"best", dir + "best"}, {"stages", Json::array()}};
  for (const auto& s : result.stages) summary["stages"].push_back(s.stage);
  if (result.best_unseen_sr) {
    summary["best_val_unseen_sr"] = *result.best_unseen_sr;
    summary["best_iteration"] = result.best_iteration;
  }
  return summary;
}

std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<std::pair<std::string, std::vector<double>>>& series, double y_max) {
  static const char* colors[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3"};
  const int left = 60, top = 40, plot_h = 240, bar_w = 22, gap = 28;
  const int group_w = static_cast<int>(series.size()) * bar_w + gap;
  const int width = left + std::max(1, static_cast<int>(labels.size())) * group_w + 140;
  const int height = top + plot_h + 110;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left << "\" y=\"22\" font-size=\"14\">" << title << "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = y_max * t / 4.0;
    const int y = top + plot_h - static_cast<int>(plot_h * t / 4.0);
    os << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << width - 130 << "\" y2=\"" << y
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fixed(v, 1) << "</text>\n";
  }
  for (std::size_t g = 0; g < labels.size(); ++g) {
    const int gx = left + static_cast<int>(g) * group_w + gap / 2;
    for (std::size_t s = 0; s < series.size(); ++s) {
      const double v = std::clamp(series[s].second[g], 0.0, y_max);
      const int h = static_cast<int>(plot_h * v / y_max);
      const int x = gx + static_cast<int>(s) * bar_w;
      os << "<rect x=\"" << x << "\" y=\"" << top + plot_h - h << "\" width=\"" << bar_w - 2 << "\" height=\"" << h
         << "\" fill=\"" << colors[s % 5] << "\"><title>" << series[s].first << " " << fixed(series[s].second[g], 1)
         << "</title></rect>\n";
    }
    os << "<text transform=\"translate(" << gx + 4 << "," << top + plot_h + 12 << ") rotate(35)\">" << labels[g]
       << "</text>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const int y = top + 10 + static_cast<int>(s) * 18;
    os << "<rect x=\"" << width - 120 << "\" y=\"" << y - 9 << "\" width=\"12\" height=\"12\" fill=\"" << colors[s % 5]
       << "\"/>\n";
    os << "<text x=\"" << width - 102 << "\" y=\"" << y + 1 << "\">" << series[s].first << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

Json cmd_eval(const ExperimentConfig& config, const fs::path& out, const EvalRequest& request) {
  if (request.checkpoints.empty()) throw Error("invalid_argument", "eval needs at least one --checkpoint");
  Workspace ws = open_workspace(out);
  check_world_config(ws, config);
  WorldData world = load_world(ws);
  EnvironmentBank bank;
  fill_bank(bank, ws, world, {request.source});
  const auto& episodes = split_member(world.split, request.split);
  if (episodes.empty()) throw Error("empty_split", "split '" + request.split + "' has no episodes");

  struct Loaded {
    std::string label;
    bool teacher = false;
    std::optional<Agent> agent;
  };
  std::vector<Loaded> members;
  for (const auto& stem : request.checkpoints) {
    const Json meta = Json::parse(ws.read(stem + ".json"));
    Loaded m;
    m.label = stem_label(stem);
    if (meta.value("policy", "") == "teacher") {
      m.teacher = true;
    } else {
      verify_checkpoint(ws, stem);
      m.agent = load_agent((ws.root() / stem).string());
    }
    members.push_back(std::move(m));
  }

  auto policy_of = [](const Loaded& m) { return m.teacher ? Policy::make_teacher() : Policy::single(*m.agent); };
  std::vector<std::pair<std::string, Policy>> runs;
  if (request.ensemble) {
    std::vector<const Agent*> agents;
    std::string label;
    for (const auto& m : members) {
      if (m.teacher) throw Error("invalid_argument", "the teacher cannot be an ensemble member");
      agents.push_back(&*m.agent);
      label += (label.empty() ? "" : "+") + m.label;
    }
    runs.emplace_back(request.name.empty() ? "ensemble_" + label : request.name, Policy::ensemble(agents));
  } else {
    for (const auto& m : members) runs.emplace_back(m.label, policy_of(m));
    if (runs.size() == 1 && !request.name.empty()) runs[0].first = request.name;
  }

  const std::string suffix = "_" + request.split + (request.source == kOriginalSource ? "" : "_" + request.source);
  Json summary{{"command", request.ensemble ? "ensemble" : "eval"}, {"split", request.split},
               {"source", request.source}, {"reports", Json::array()}};
  std::vector<std::string> labels;
  std::vector<double> sr, spl, ndtw;
  for (const auto& [label, policy] : runs) {
    MetricsReport report = evaluate(policy, episodes, bank, config.eval.success_radius, config.eval.max_steps, request.source);
    const std::string base = "reports/" + label + suffix;
    ws.write(base + ".csv", report.to_csv());
    ws.write(base + ".json", report.to_json());
    ws.write(base + ".txt", report.to_table());
    summary["reports"].push_back(Json{{"name", label},
                                      {"path", base},
                                      {"SR", report.overall.sr},
                                      {"SPL", report.overall.spl},
                                      {"nDTW", report.overall.ndtw},
                                      {"sDTW", report.overall.sdtw},
                                      {"NE", report.overall.ne},
                                      {"TL", report.overall.tl}});
    labels.push_back(label);
    sr.push_back(report.overall.sr);
    spl.push_back(report.overall.spl);
    ndtw.push_back(100.0 * report.overall.ndtw);
  }
  if (request.plot) {
    const std::string plot_name = runs.size() == 1 ? runs[0].first : (request.name.empty() ? "summary" : request.name);
    const std::string rel = "reports/" + plot_name + suffix + ".svg";
    ws.write(rel, svg_bar_chart(plot_name + " (" + request.split + ")", labels,
                                {{"SR", sr}, {"SPL", spl}, {"nDTW x100", ndtw}}, 100.0));
    summary["plot"] = rel;
  }
  ws.save_manifest();
  return summary;
}

// ---------------------------------------------------------------------------
// Argument parsing

namespace {

std::vector<std::string> split_list(const std::vector<std::string>& raw) {
  std::vector<std::string> out;
  for (const auto& item : raw) {
    std::stringstream ss(item);
    std::string part;
    while (std::getline(ss, part, ',')) {
      if (!part.empty()) out.push_back(part);
    }
  }
  return out;
}

int fail(const std::string& code, const std::string& message, int exit_code) {
  std::cerr << Json{{"error", {{"code", code}, {"message", message}}}}.dump() << std::endl;
  return exit_code;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Environment-editing toolkit for instruction-following navigation agents"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> variants;
  std::string scope;
  std::optional<int> mask_count;
  std::string style_aware;
  bool ensemble = false;
  std::string split;
  bool plot = false;
  std::vector<std::string> checkpoints;
  std::string source = kOriginalSource;
  std::string name;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Experiment config JSON (sections world, edits, speaker, agent, train, eval)")
        ->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Workspace directory (default: $ENVEDIT_WORKSPACE or ./workspace)");
  };
  auto* worldgen = app.add_subcommand("worldgen", "Generate environments, episodes and the seen/unseen split");
  common(worldgen);
  worldgen->add_option("--seed", seed, "World seed");

  auto* edit = app.add_subcommand("edit", "Write edited copies of every environment, one directory per variant");
  common(edit);
  edit->add_option("--variant", variants, "Edit variants: E_st, E_is1, E_is2, E_is1_m, E_is2_m (comma separated)");
  edit->add_option("--style-scope", scope, "Style sharing for E_st")->check(CLI::IsMember({"view", "panorama", "environment"}));
  edit->add_option("--mask-count", mask_count, "Classes removed by masked variants")->check(CLI::PositiveNumber);
  edit->add_option("--seed", seed, "Edit seed");

  auto* train_speaker_cmd = app.add_subcommand("train-speaker", "Train the instruction generator on the training split");
  common(train_speaker_cmd);
  train_speaker_cmd->add_option("--style-aware-speaker", style_aware, "Initialize the decoder from panorama style")
      ->check(CLI::IsMember({"on", "off"}));
  train_speaker_cmd->add_option("--seed", seed, "Speaker seed");

  auto* train_cmd = app.add_subcommand("train", "Train a follower agent (mixed batches, optional back translation)");
  common(train_cmd);
  train_cmd->add_option("--variant", variants, "Edited sources mixed into training, or 'none' (comma separated)");
  train_cmd->add_option("--style-scope", scope, "Style scope of E_st sources")->check(CLI::IsMember({"view", "panorama", "environment"}));
  train_cmd->add_option("--mask-count", mask_count, "Mask count of masked sources")->check(CLI::PositiveNumber);
  train_cmd->add_option("--style-aware-speaker", style_aware, "Which speaker produces back-translated data")
      ->check(CLI::IsMember({"on", "off"}));
  train_cmd->add_option("--seed", seed, "Training and agent initialization seed");
  train_cmd->add_option("--name", name, "Run name under agents/");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate checkpoints and write metric reports");
  common(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoints, "Checkpoint stem relative to the workspace, e.g. agents/run/final")
      ->required();
  eval_cmd->add_option("--split", split, "Episode split")->check(CLI::IsMember({"train", "val_seen", "val_unseen"}));
  eval_cmd->add_flag("--ensemble", ensemble, "Average the checkpoints' logits at every step");
  eval_cmd->add_flag("--plot", plot, "Also write an SVG bar chart");
  eval_cmd->add_option("--source", source, "Environment source to evaluate in (original or an edit)");
  eval_cmd->add_option("--name", name, "Report name");

  auto* ensemble_cmd = app.add_subcommand("ensemble", "Evaluate a logit-averaging ensemble of checkpoints");
  common(ensemble_cmd);
  ensemble_cmd->add_option("--checkpoint", checkpoints, "Member checkpoint stems")->required();
  ensemble_cmd->add_option("--split", split, "Episode split")->check(CLI::IsMember({"train", "val_seen", "val_unseen"}));
  ensemble_cmd->add_flag("--plot", plot, "Also write an SVG bar chart");
  ensemble_cmd->add_option("--name", name, "Report name");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    const fs::path root = out.empty() ? Workspace::default_root() : fs::path(out);
    ExperimentConfig config;
    if (!config_path.empty()) {
      config = load_config(config_path);
    } else if (fs::exists(root / "manifest.json")) {
      Workspace ws(root);
      if (ws.initialized()) config = config_from_json(ws.manifest().at("config"));
    }
    const std::vector<std::string> listed = split_list(variants);
    if (!scope.empty()) config.edits.style_scope = style_scope_from_string(scope);
    if (mask_count) config.edits.mask_count = *mask_count;

    Json result;
    if (worldgen->parsed()) {
      result = cmd_worldgen(config, root, seed);
    } else if (edit->parsed()) {
      if (!listed.empty()) config.edits.variants = listed;
      if (seed) config.edits.seed = *seed;
      result = cmd_edit(config, root);
    } else if (train_speaker_cmd->parsed()) {
      if (!style_aware.empty()) config.speaker.style_aware = style_aware == "on";
      if (seed) config.speaker.seed = *seed;
      result = cmd_train_speaker(config, root);
    } else if (train_cmd->parsed()) {
      if (!listed.empty()) {
        config.train.edited_sources.clear();
        for (const auto& v : listed) {
          if (v == "none" || v == kOriginalSource) continue;
          Variant parsed;
          try {
            parsed = variant_from_string(v);
          } catch (const Error&) {
            config.train.edited_sources.push_back(v);
            continue;
          }
          config.train.edited_sources.push_back(edit_source_name(parsed, config.edits.style_scope, config.edits.mask_count));
        }
      }
      if (!style_aware.empty()) config.train.style_aware_bt = style_aware == "on";
      if (seed) {
        config.train.seed = *seed;
        config.agent.seed = *seed;
      }
      result = cmd_train(config, root, name);
    } else {
      EvalRequest req;
      req.checkpoints = checkpoints;
      req.split = split.empty() ? config.eval.split : split;
      req.source = source;
      req.ensemble = ensemble || ensemble_cmd->parsed();
      req.plot = plot;
      req.name = name;
      result = cmd_eval(config, root, req);
    }
    std::cout << result.dump() << std::endl;
    return 0;
  } catch (const Error& e) {
    return fail(e.code(), e.what(), 1);
  } catch (const Json::exception& e) {
    return fail("malformed_artifact", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal_error", e.what(), 1);
  }
}

}  // namespace envedit::cli
