#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "envedit/editor.hpp"
#include "envedit/io.hpp"
#include "envedit/speaker.hpp"
#include "envedit/trainer.hpp"

namespace envedit::cli {

namespace fs = std::filesystem;

struct WorldSection {
  WorldSpec spec;
  int episodes = 600;
  std::pair<int, int> hops{2, 4};
  double val_seen_fraction = 0.15;
};

struct EditsSection {
  std::vector<std::string> variants{"E_st"};
  StyleScope style_scope = StyleScope::kPerPanorama;
  int mask_count = 1;
  std::uint64_t seed = 5;
  int style_library_size = 256;
  std::uint64_t style_library_seed = 3;
};

struct EvalSection {
  double success_radius = kDefaultSuccessRadius;
  int max_steps = 0;
  std::string split = "val_unseen";
};

struct ExperimentConfig {
  WorldSection world;
  EditsSection edits;
  SpeakerConfig speaker;
  AgentConfig agent;
  TrainConfig train;
  EvalSection eval;
};

// Missing keys keep their defaults; unknown keys are rejected as malformed_config.
ExperimentConfig config_from_json(const io::Json& j);
io::Json to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const fs::path& path);

// "E_st" for the default scope, "E_st_view" / "E_st_environment" otherwise; masked
// variants gain "_k<n>" when more than one class is removed.
std::string edit_source_name(Variant variant, StyleScope scope, int mask_count);

// Workspace root holding manifest.json plus every artifact. Artifacts are registered
// by workspace-relative path with their sha256; reads verify the recorded hash.
class Workspace {
 public:
  explicit Workspace(fs::path root);
  static fs::path default_root();

  const fs::path& root() const { return root_; }
  bool initialized() const;
  void write(const std::string& rel, const std::string& content);
  std::string read(const std::string& rel) const;
  bool has(const std::string& rel) const;
  std::vector<std::string> artifacts_under(const std::string& prefix) const;
  io::Json& manifest() { return manifest_; }
  const io::Json& manifest() const { return manifest_; }
  void save_manifest() const;
  // Rewrites every artifact hash check; throws hash_mismatch on the first difference.
  void verify_all() const;

 private:
  fs::path root_;
  io::Json manifest_;
};

// Loaded world directory: spec, environments, dataset split and render context.
struct WorldData {
  WorldSpec spec;
  std::vector<Environment> environments;
  DatasetSplit split;
};
WorldData load_world(const Workspace& ws);
EnvironmentBank& fill_bank(EnvironmentBank& bank, const Workspace& ws, const WorldData& world,
                           const std::vector<std::string>& edit_sources);

io::Json cmd_worldgen(const ExperimentConfig& config, const fs::path& out, std::optional<std::uint64_t> seed);
io::Json cmd_edit(const ExperimentConfig& config, const fs::path& out);
io::Json cmd_train_speaker(const ExperimentConfig& config, const fs::path& out);
io::Json cmd_train(const ExperimentConfig& config, const fs::path& out, const std::string& name);

struct EvalRequest {
  std::vector<std::string> checkpoints;  // workspace-relative stems
  std::string split = "val_unseen";
  std::string source = kOriginalSource;
  bool ensemble = false;
  bool plot = false;
  std::string name;  // report name; derived from the checkpoints when empty
};
io::Json cmd_eval(const ExperimentConfig& config, const fs::path& out, const EvalRequest& request);

std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<std::pair<std::string, std::vector<double>>>& series, double y_max);

// Parses arguments, runs a subcommand and returns the process exit code. Failures are
// reported as a JSON object on stderr.
int run(int argc, char** argv);

}  // namespace envedit::cli
