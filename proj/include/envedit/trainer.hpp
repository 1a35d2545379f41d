#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "envedit/agent.hpp"
#include "envedit/metrics.hpp"
#include "envedit/speaker.hpp"
#include "envedit/world.hpp"

namespace envedit {

inline const std::string kOriginalSource = "original";

// Environments keyed by source ("original", "E_st", ...) and env id, with the
// navigation tables each rollout needs. Edited variants reuse the original's distances.
class EnvironmentBank {
 public:
  EnvironmentBank() = default;
  EnvironmentBank(const EnvironmentBank&) = delete;
  EnvironmentBank& operator=(const EnvironmentBank&) = delete;

  void add(const std::string& source, Environment env);
  bool has(const std::string& source, const std::string& env_id) const;
  bool has_source(const std::string& source) const { return sources_.count(source) > 0; }
  const Environment& env(const std::string& source, const std::string& env_id) const;
  const NavEnvironment& nav(const std::string& source, const std::string& env_id) const;
  std::vector<std::string> sources() const;
  std::vector<const Environment*> environments(const std::string& source) const;

 private:
  struct Entry {
    std::unique_ptr<Environment> env;
    std::unique_ptr<NavEnvironment> nav;
  };
  std::map<std::string, std::map<std::string, Entry>> sources_;
};

struct BatchItem {
  const Episode* episode = nullptr;
  std::string source;  // environment source the episode is observed in
};

// N episodes drawn with replacement; ceil(N/2) observe the original environment and
// floor(N/2) an edited variant (chosen uniformly among `edited_sources`).
std::vector<BatchItem> mixed_batch(const std::vector<Episode>& train_set, const EnvironmentBank& bank,
                                   const std::vector<std::string>& edited_sources, int n, std::uint64_t seed);
// N episodes drawn exactly as mixed_batch draws them, all observed in `source`.
std::vector<BatchItem> single_source_batch(const std::vector<Episode>& train_set, const EnvironmentBank& bank,
                                           const std::string& source, int n, std::uint64_t seed);

enum class Schedule { kMixed, kCurriculum };

struct TrainConfig {
  int batch_size = 32;
  int stage2_iterations = 300;
  int stage3_iterations = 0;
  std::vector<std::string> edited_sources;
  bool style_aware_bt = true;
  Schedule schedule = Schedule::kMixed;
  std::vector<std::string> curriculum;
  bool mix_edits_in_stage3 = true;
  int bt_paths = 200;
  double lambda_il = 0.2;
  double learning_rate = 1e-3;
  double grad_clip = 5.0;
  RlOptions rl;
  int val_every = 500;
  int max_steps = 0;  // 0: derived from the longest training path
  std::uint64_t seed = 0;

  void validate() const;
};

struct LogEntry {
  std::string json;  // one JSON object, no trailing newline
};

struct StageCheckpoint {
  std::string stage;
  Agent agent;
};

struct TrainResult {
  Agent final_agent;
  Agent best_agent;  // best val_unseen SR among validations (final if none ran)
  std::optional<double> best_unseen_sr;
  int best_iteration = -1;
  std::vector<StageCheckpoint> stages;
  std::vector<LogEntry> log;
  bool aborted = false;
  std::string abort_reason;

  std::string log_jsonl() const;
};

struct TrainData {
  const EnvironmentBank* bank = nullptr;
  const DatasetSplit* split = nullptr;
  const Speaker* speaker = nullptr;  // required when stage 3 runs
};

// One optimizer step on a batch: loss = RL + lambda_il * IL, averaged over items.
struct StepStats {
  double loss = 0.0;
  double il = 0.0;
  double rl = 0.0;
};

TrainResult train(const Agent& init, const TrainData& data, const TrainConfig& config);
TrainResult curriculum_train(const Agent& init, const std::vector<std::string>& stages, const TrainData& data,
                             const TrainConfig& config);

struct CurriculumPlan {
  int stages = 0;
  long long iterations_per_stage = 0;
  long long batch_size = 0;
  long long total_examples() const { return stages * iterations_per_stage * batch_size; }
};
CurriculumPlan curriculum_plan(const std::vector<std::string>& stages, long long iterations_per_stage,
                               long long batch_size);

// Elementwise mean then argmax; ties go to the lowest index.
int ensemble_decide(const std::vector<Vec>& logits);

// Navigation policy under evaluation: shortest-path teacher, one agent, or a logit-averaging ensemble.
struct Policy {
  bool teacher = false;
  std::vector<const Agent*> agents;

  static Policy make_teacher() { return {true, {}}; }
  static Policy single(const Agent& a) { return {false, {&a}}; }
  static Policy ensemble(std::vector<const Agent*> members) { return {false, std::move(members)}; }
};

std::vector<NodeId> navigate(const Policy& policy, const NavEnvironment& nav, const Episode& episode, int max_steps);

MetricsReport evaluate(const Policy& policy, const std::vector<Episode>& episodes, const EnvironmentBank& bank,
                       double success_radius = kDefaultSuccessRadius, int max_steps = 0,
                       const std::string& source = kOriginalSource);

}  // namespace envedit
