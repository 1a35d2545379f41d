#include "envedit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "envedit/io.hpp"

namespace envedit {

using nn::Tape;
using nn::Var;

void EnvironmentBank::add(const std::string& source, Environment env) {
  const std::string id = env.env_id;
  auto& slot = sources_[source];
  if (slot.count(id)) throw Error("duplicate_environment", source + "/" + id + " already registered");
  std::shared_ptr<const GraphDistances> distances;
  if (source != kOriginalSource && has(kOriginalSource, id)) distances = nav(kOriginalSource, id).distances;
  Entry entry;
  entry.env = std::make_unique<Environment>(std::move(env));
  entry.nav = std::make_unique<NavEnvironment>(NavEnvironment::build(*entry.env, distances));
  slot.emplace(id, std::move(entry));
}

bool EnvironmentBank::has(const std::string& source, const std::string& env_id) const {
  auto it = sources_.find(source);
  return it != sources_.end() && it->second.count(env_id) > 0;
}

const Environment& EnvironmentBank::env(const std::string& source, const std::string& env_id) const {
  if (!has(source, env_id)) throw Error("missing_environment", "no environment " + source + "/" + env_id);
  return *sources_.at(source).at(env_id).env;
}

const NavEnvironment& EnvironmentBank::nav(const std::string& source, const std::string& env_id) const {
  if (!has(source, env_id)) throw Error("missing_environment", "no environment " + source + "/" + env_id);
  return *sources_.at(source).at(env_id).nav;
}

std::vector<std::string> EnvironmentBank::sources() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : sources_) out.push_back(name);
  return out;
}

std::vector<const Environment*> EnvironmentBank::environments(const std::string& source) const {
  std::vector<const Environment*> out;
  auto it = sources_.find(source);
  if (it == sources_.end()) return out;
  for (const auto& [_, entry] : it->second) out.push_back(entry.env.get());
  return out;
}

namespace {

std::vector<std::size_t> draw_indices(std::size_t size, int n, std::uint64_t seed) {
  if (size == 0) throw Error("empty_dataset", "cannot draw a batch from an empty training set");
  if (n < 1) throw Error("invalid_batch_size", "batch size must be positive");
  Rng rng(derive_seed(seed, hash_tag("batch_indices")));
  std::uniform_int_distribution<std::size_t> pick(0, size - 1);
  std::vector<std::size_t> out(static_cast<std::size_t>(n));
  for (auto& i : out) i = pick(rng);
  return out;
}

void require_env(const EnvironmentBank& bank, const std::string& source, const std::string& env_id) {
  if (!bank.has(source, env_id)) {
    throw Error(source == kOriginalSource ? "missing_environment" : "missing_edit",
                "no " + source + " counterpart for " + env_id);
  }
}

}  // namespace

std::vector<BatchItem> mixed_batch(const std::vector<Episode>& train_set, const EnvironmentBank& bank,
                                   const std::vector<std::string>& edited_sources, int n, std::uint64_t seed) {
  if (n < 2) throw Error("invalid_batch_size", "mixed batches need N >= 2");
  if (edited_sources.empty()) throw Error("missing_edit", "mixed batches need at least one edited source");
  auto indices = draw_indices(train_set.size(), n, seed);
  std::vector<std::size_t> order(indices.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, hash_tag("batch_assignment")));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_original = (static_cast<std::size_t>(n) + 1) / 2;

  std::vector<BatchItem> batch(indices.size());
  std::uniform_int_distribution<std::size_t> pick_source(0, edited_sources.size() - 1);
  for (std::size_t r = 0; r < order.size(); ++r) {
    const std::size_t pos = order[r];
    BatchItem& item = batch[pos];
    item.episode = &train_set[indices[pos]];
    item.source = r < n_original ? kOriginalSource : edited_sources[pick_source(rng)];
    require_env(bank, item.source, item.episode->env_id);
  }
  return batch;
}

std::vector<BatchItem> single_source_batch(const std::vector<Episode>& train_set, const EnvironmentBank& bank,
                                           const std::string& source, int n, std::uint64_t seed) {
  auto indices = draw_indices(train_set.size(), n, seed);
  std::vector<BatchItem> batch;
  batch.reserve(indices.size());
  for (auto i : indices) {
    batch.push_back({&train_set[i], source});
    require_env(bank, source, train_set[i].env_id);
  }
  return batch;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error("invalid_config", "batch_size must be positive");
  if (schedule == Schedule::kMixed && !edited_sources.empty() && batch_size < 2) {
    throw Error("invalid_config", "mixed schedule needs batch_size >= 2");
  }
  if (schedule == Schedule::kCurriculum && curriculum.empty()) {
    throw Error("invalid_config", "curriculum needs at least one stage");
  }
  if (stage2_iterations < 0 || stage3_iterations < 0) throw Error("invalid_config", "iterations must be >= 0");
  if (val_every < 1) throw Error("invalid_config", "val_every must be positive");
  if (!(learning_rate > 0.0)) throw Error("invalid_config", "learning_rate must be positive");
}

std::string TrainResult::log_jsonl() const {
  std::string out;
  for (const auto& e : log) out += e.json + "\n";
  return out;
}

namespace {

struct ItemGraphs {
  std::unique_ptr<Tape> tape;
  RolloutGraph teacher;
  RolloutGraph sampled;
  std::vector<double> returns;
  const Episode* episode = nullptr;
  const NavEnvironment* nav = nullptr;
};

class Loop {
 public:
  Loop(const Agent& init, const TrainData& data, const TrainConfig& cfg)
      : agent_(init), best_(init), data_(data), cfg_(cfg), adam_(agent_.params(), cfg.learning_rate) {
    max_steps_ = cfg.max_steps > 0 ? cfg.max_steps : default_max_steps(data.split->train);
  }

  // Returns false when training aborted.
  bool run_stage(const std::string& stage, int iterations, const std::vector<Episode>& train_set,
                 const std::function<std::vector<BatchItem>(const std::vector<Episode>&, std::uint64_t)>& make_batch) {
    for (int i = 0; i < iterations; ++i) {
      auto batch = make_batch(train_set, derive_seed(cfg_.seed, hash_tag("batch"), static_cast<std::uint64_t>(iteration_)));
      StepStats stats;
      bool finite = true;
      try {
        finite = step(batch, stats);
      } catch (const Error& e) {
        if (e.code() != "divergent_loss") throw;
        finite = false;
      }
      if (!finite) {
        aborted_ = true;
        io::Json j;
        j["event"] = "abort";
        j["stage"] = stage;
        j["iteration"] = iteration_;
        j["reason"] = "divergent_loss";
        log_.push_back({j.dump()});
        return false;
      }
      io::Json j;
      j["stage"] = stage;
      j["iteration"] = iteration_;
      j["loss"] = stats.loss;
      j["il"] = stats.il;
      j["rl"] = stats.rl;
      log_.push_back({j.dump()});
      ++iteration_;
      if (iteration_ % cfg_.val_every == 0) validate(stage);
    }
    return true;
  }

  void validate(const std::string& stage) {
    if (last_validated_ == iteration_ || data_.split->val_seen.empty() || data_.split->val_unseen.empty()) return;
    last_validated_ = iteration_;
    auto seen = evaluate(Policy::single(agent_), data_.split->val_seen, *data_.bank, cfg_.rl.success_radius, max_steps_);
    auto unseen = evaluate(Policy::single(agent_), data_.split->val_unseen, *data_.bank, cfg_.rl.success_radius, max_steps_);
    io::Json j;
    j["event"] = "validation";
    j["stage"] = stage;
    j["iteration"] = iteration_;
    j["val_seen_sr"] = seen.overall.sr;
    j["val_seen_spl"] = seen.overall.spl;
    j["val_unseen_sr"] = unseen.overall.sr;
    j["val_unseen_spl"] = unseen.overall.spl;
    log_.push_back({j.dump()});
    if (!best_sr_ || unseen.overall.sr > *best_sr_) {
      best_sr_ = unseen.overall.sr;
      best_iteration_ = iteration_;
      best_ = agent_;
    }
  }

  TrainResult finish(std::vector<StageCheckpoint> stages) {
    TrainResult r{agent_, best_, best_sr_, best_iteration_, std::move(stages), std::move(log_), aborted_, ""};
    if (aborted_) r.abort_reason = "divergent_loss";
    return r;
  }

  Agent& agent() { return agent_; }
  int max_steps() const { return max_steps_; }
  int iteration() const { return iteration_; }

 private:
  bool step(const std::vector<BatchItem>& batch, StepStats& stats) {
    std::vector<ItemGraphs> items(batch.size());
    double baseline = 0.0;
    std::size_t steps = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto& g = items[i];
      g.tape = std::make_unique<Tape>();
      g.episode = batch[i].episode;
      const NavEnvironment& nav = data_.bank->nav(batch[i].source, g.episode->env_id);
      g.nav = &nav;
      g.teacher = rollout_on_tape(*g.tape, agent_, nav, *g.episode, RolloutMode::kTeacher, nullptr, max_steps_);
      Rng rng(derive_seed(cfg_.seed, hash_tag("explore"), static_cast<std::uint64_t>(iteration_), i));
      g.sampled = rollout_on_tape(*g.tape, agent_, nav, *g.episode, RolloutMode::kSample, &rng, max_steps_);
      g.returns = rewards_to_go(step_rewards(g.sampled.trajectory, nav, *g.episode, cfg_.rl), cfg_.rl.discount);
      for (double r : g.returns) baseline += r;
      steps += g.returns.size();
    }
    if (steps > 0) baseline /= static_cast<double>(steps);

    agent_.params().zero_grad();
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    std::vector<Var> roots(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
      auto& g = items[i];
      Tape& t = *g.tape;
      std::vector<double> adv = g.returns;
      if (cfg_.rl.baseline == RlBaseline::kBatchMean) {
        for (double& a : adv) a -= baseline;
      } else {
        adv = advantages(g.sampled.trajectory, *g.nav, *g.episode, cfg_.rl);
      }
      Var il = imitation_loss(t, g.teacher);
      Var rl = rl_loss(t, g.sampled, adv, cfg_.rl.mean_over_steps);
      roots[i] = t.scale(t.add(rl, t.scale(il, cfg_.lambda_il)), inv_n);
      stats.il += t.scalar(il) * inv_n;
      stats.rl += t.scalar(rl) * inv_n;
      stats.loss += t.scalar(roots[i]);
    }
    if (!std::isfinite(stats.loss)) return false;
    for (std::size_t i = 0; i < items.size(); ++i) items[i].tape->backward(roots[i]);
    if (!std::isfinite(adam_.clip_grad_norm(cfg_.grad_clip))) return false;
    adam_.step();
    return true;
  }

  Agent agent_;
  Agent best_;
  const TrainData& data_;
  const TrainConfig& cfg_;
  nn::Adam adam_;
  int max_steps_ = 0;
  int iteration_ = 0;
  int last_validated_ = -1;
  bool aborted_ = false;
  std::optional<double> best_sr_;
  int best_iteration_ = -1;
  std::vector<LogEntry> log_;
};

void check_sources(const EnvironmentBank& bank, const std::vector<std::string>& sources) {
  for (const auto& s : sources) {
    if (!bank.has_source(s)) throw Error("unknown_source", "unknown environment source '" + s + "'");
  }
}

}  // namespace

TrainResult train(const Agent& init, const TrainData& data, const TrainConfig& config) {
  config.validate();
  if (data.bank == nullptr || data.split == nullptr) throw Error("invalid_argument", "training data is incomplete");
  check_sources(*data.bank, {kOriginalSource});
  check_sources(*data.bank, config.edited_sources);
  if (config.schedule == Schedule::kCurriculum) check_sources(*data.bank, config.curriculum);
  if (config.stage3_iterations > 0) {
    if (data.speaker == nullptr) throw Error("missing_speaker", "back translation needs a speaker");
    if (data.speaker->config().style_aware != config.style_aware_bt) {
      throw Error("speaker_mismatch", "speaker style awareness does not match the training config");
    }
  }

  Loop loop(init, data, config);
  std::vector<StageCheckpoint> stages;
  const auto& train_set = data.split->train;
  const int n = config.batch_size;
  const auto& edits = config.edited_sources;
  auto mixed = [&](const std::vector<Episode>& set, std::uint64_t seed) {
    return edits.empty() ? single_source_batch(set, *data.bank, kOriginalSource, n, seed)
                         : mixed_batch(set, *data.bank, edits, n, seed);
  };

  if (config.schedule == Schedule::kCurriculum) {
    for (std::size_t s = 0; s < config.curriculum.size(); ++s) {
      const std::string source = config.curriculum[s];
      const std::string label = "curriculum_" + std::to_string(s) + ":" + source;
      bool ok = loop.run_stage(label, config.stage2_iterations, train_set,
                               [&](const std::vector<Episode>& set, std::uint64_t seed) {
                                 return single_source_batch(set, *data.bank, source, n, seed);
                               });
      if (!ok) return loop.finish(std::move(stages));
      stages.push_back({label, loop.agent()});
    }
  } else {
    if (!loop.run_stage("stage2", config.stage2_iterations, train_set, mixed)) return loop.finish(std::move(stages));
    stages.push_back({"stage2", loop.agent()});
  }

  if (config.stage3_iterations > 0) {
    std::vector<const Environment*> seen;
    for (const auto* e : data.bank->environments(kOriginalSource)) {
      const auto& ids = data.split->seen_envs;
      if (std::find(ids.begin(), ids.end(), e->env_id) != ids.end()) seen.push_back(e);
    }
    auto synthetic = back_translate(*data.speaker, seen, train_set, config.bt_paths,
                                    derive_seed(config.seed, hash_tag("back_translation")));
    std::vector<Episode> augmented = train_set;
    augmented.insert(augmented.end(), synthetic.begin(), synthetic.end());
    auto original_only = [&](const std::vector<Episode>& set, std::uint64_t seed) {
      return single_source_batch(set, *data.bank, kOriginalSource, n, seed);
    };
    bool ok = config.mix_edits_in_stage3 ? loop.run_stage("stage3", config.stage3_iterations, augmented, mixed)
                                         : loop.run_stage("stage3", config.stage3_iterations, augmented, original_only);
    if (!ok) return loop.finish(std::move(stages));
    stages.push_back({"stage3", loop.agent()});
  }
  loop.validate(stages.empty() ? "init" : stages.back().stage);
  return loop.finish(std::move(stages));
}

TrainResult curriculum_train(const Agent& init, const std::vector<std::string>& stages, const TrainData& data,
                             const TrainConfig& config) {
  TrainConfig cfg = config;
  cfg.schedule = Schedule::kCurriculum;
  cfg.curriculum = stages;
  return train(init, data, cfg);
}

CurriculumPlan curriculum_plan(const std::vector<std::string>& stages, long long iterations_per_stage,
                               long long batch_size) {
  if (stages.empty()) throw Error("invalid_config", "curriculum needs at least one stage");
  return {static_cast<int>(stages.size()), iterations_per_stage, batch_size};
}

int ensemble_decide(const std::vector<Vec>& logits) {
  if (logits.empty()) throw Error("invalid_argument", "ensemble needs at least one member");
  const std::size_t k = logits.front().size();
  if (k == 0) throw Error("invalid_argument", "empty logit list");
  Vec mean(k, 0.0);
  for (const auto& l : logits) {
    if (l.size() != k) throw Error("length_mismatch", "ensemble members disagree on the number of actions");
    for (std::size_t i = 0; i < k; ++i) mean[i] += l[i];
  }
  for (double& m : mean) m /= static_cast<double>(logits.size());
  return static_cast<int>(std::max_element(mean.begin(), mean.end()) - mean.begin());
}

std::vector<NodeId> navigate(const Policy& policy, const NavEnvironment& nav, const Episode& episode, int max_steps) {
  NodeId node = episode.start();
  std::vector<NodeId> path{node};
  if (policy.teacher) {
    for (int s = 0; s < max_steps; ++s) {
      const int a = nav.teacher_action(node, episode.goal());
      const auto& cands = nav.candidates[static_cast<std::size_t>(node)];
      if (a == static_cast<int>(cands.size())) break;
      node = cands[static_cast<std::size_t>(a)].target;
      path.push_back(node);
    }
    return path;
  }
  if (policy.agents.empty()) throw Error("invalid_argument", "policy has no agents");
  const std::size_t m = policy.agents.size();
  std::vector<Tape> tapes(m);
  std::vector<InstructionContext> contexts;
  std::vector<AgentState> states;
  for (std::size_t i = 0; i < m; ++i) {
    contexts.push_back(policy.agents[i]->encode_instruction(tapes[i], episode.instruction));
    states.push_back(policy.agents[i]->initial_state(tapes[i], contexts[i]));
  }
  for (int s = 0; s < max_steps; ++s) {
    const auto& cands = nav.candidates[static_cast<std::size_t>(node)];
    std::vector<Vec> logits;
    for (std::size_t i = 0; i < m; ++i) {
      Var l = policy.agents[i]->step(tapes[i], states[i], contexts[i], nav.panorama[static_cast<std::size_t>(node)], cands);
      logits.push_back(tapes[i].value(l));
    }
    const int a = ensemble_decide(logits);
    if (a == static_cast<int>(cands.size())) break;
    for (std::size_t i = 0; i < m; ++i) policy.agents[i]->commit_action(tapes[i], states[i], cands, a);
    node = cands[static_cast<std::size_t>(a)].target;
    path.push_back(node);
  }
  return path;
}

MetricsReport evaluate(const Policy& policy, const std::vector<Episode>& episodes, const EnvironmentBank& bank,
                       double success_radius, int max_steps, const std::string& source) {
  const int cap = max_steps > 0 ? max_steps : default_max_steps(episodes);
  std::vector<MetricsRow> rows;
  rows.reserve(episodes.size());
  for (const auto& ep : episodes) {
    const NavEnvironment& nav = bank.nav(source, ep.env_id);
    rows.push_back(score_episode(*nav.distances, ep, navigate(policy, nav, ep, cap), success_radius));
  }
  return MetricsReport::from_rows(std::move(rows));
}

}  // namespace envedit
