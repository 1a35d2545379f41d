#include "envedit/agent.hpp"

#include <algorithm>
#include <cmath>

#include "envedit/io.hpp"

namespace envedit {

using nn::Tape;
using nn::Var;

NavEnvironment NavEnvironment::build(const Environment& env, std::shared_ptr<const GraphDistances> distances) {
  NavEnvironment nav;
  nav.env = &env;
  nav.distances = distances ? std::move(distances) : std::make_shared<const GraphDistances>(env);
  const auto width = static_cast<std::size_t>(env.feature_dim + kOrientationDim);
  for (const auto& pano : env.panoramas) {
    Vec m;
    m.reserve(width * pano.views.size());
    for (const auto& view : pano.views) {
      m.insert(m.end(), view.feature.begin(), view.feature.end());
      m.insert(m.end(), view.orientation.begin(), view.orientation.end());
    }
    nav.panorama.push_back(std::move(m));
  }
  for (NodeId n = 0; n < env.num_nodes(); ++n) nav.candidates.push_back(envedit::candidates(env, n));
  return nav;
}

int NavEnvironment::teacher_action(NodeId node, NodeId goal) const {
  const auto& cands = candidates[static_cast<std::size_t>(node)];
  if (node == goal) return static_cast<int>(cands.size());
  const NodeId next = distances->next_hop(node, goal);
  for (std::size_t k = 0; k < cands.size(); ++k) {
    if (cands[k].target == next) return static_cast<int>(k);
  }
  throw Error("unreachable", "teacher next hop is not a candidate");
}

Agent::Agent(Vocabulary vocab, int feature_dim, AgentConfig config)
    : vocab_(std::move(vocab)), feature_dim_(feature_dim), config_(config) {
  build();
}

Agent::Agent(const Agent& other) : vocab_(other.vocab_), feature_dim_(other.feature_dim_), config_(other.config_) {
  build();
  auto dst = params_.all();
  auto src = other.params_.all();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
}

Agent& Agent::operator=(const Agent& other) {
  if (this != &other) {
    Agent copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void Agent::build() {
  params_ = nn::ParameterSet();
  Rng rng(derive_seed(config_.seed, hash_tag("agent_init")));
  const int f = feature_dim_ + kOrientationDim;
  const int h = config_.hidden;
  layers_.embedding = &params_.add("embedding", vocab_.size(), config_.word_dim);
  nn::init_uniform(*layers_.embedding, rng, 0.5);
  layers_.encoder = nn::Lstm::create(params_, "encoder", config_.word_dim, h, rng);
  layers_.state = nn::Lstm::create(params_, "state", 2 * f, h, rng);
  layers_.pano_query = &params_.add("pano_query", f, h);
  nn::init_uniform(*layers_.pano_query, rng);
  layers_.instr_query = &params_.add("instr_query", h, h);
  nn::init_uniform(*layers_.instr_query, rng);
  layers_.combine = nn::Linear::create(params_, "combine", 2 * h, h, rng);
  layers_.candidate_key = &params_.add("candidate_key", f, h);
  nn::init_uniform(*layers_.candidate_key, rng);
  layers_.stop = nn::Linear::create(params_, "stop", h, 1, rng);
}

InstructionContext Agent::encode_instruction(Tape& t, const std::vector<std::string>& tokens) const {
  if (tokens.empty()) throw Error("empty_instruction", "instruction must contain at least one token");
  Var table = t.param(*layers_.embedding);
  std::vector<Var> inputs;
  inputs.reserve(tokens.size());
  for (const auto& tok : tokens) inputs.push_back(t.slice(table, vocab_.id(tok) * config_.word_dim, config_.word_dim));
  auto states = layers_.encoder.run(t, inputs, false);
  return {t.stack_rows(states), states.back(), static_cast<int>(tokens.size())};
}

AgentState Agent::initial_state(Tape& t, const InstructionContext& instruction) const {
  AgentState s;
  s.h = instruction.last;
  s.c = t.constant(Vec(static_cast<std::size_t>(config_.hidden), 0.0));
  Vec start(static_cast<std::size_t>(feature_dim_), 0.0);
  auto o = orientation_feature(0.0, 0.0);
  start.insert(start.end(), o.begin(), o.end());
  s.previous_action = t.constant(std::move(start));
  return s;
}

Var Agent::step(Tape& t, AgentState& state, const InstructionContext& instruction, const Vec& panorama,
                const std::vector<Candidate>& cands) const {
  const int f = feature_dim_ + kOrientationDim;
  Var pano = t.constant(panorama, kViewsPerPanorama, f);
  Var pano_weights = t.softmax(t.matvec(pano, t.matvec(t.param(*layers_.pano_query), state.h)));
  Var attended_view = t.matvec_t(pano, pano_weights);
  std::tie(state.h, state.c) = layers_.state.step(t, t.concat({state.previous_action, attended_view}), state.h, state.c);

  Var instr_weights = t.softmax(t.matvec(instruction.context, t.matvec(t.param(*layers_.instr_query), state.h)));
  Var attended_instr = t.matvec_t(instruction.context, instr_weights);
  Var fused = t.tanh(layers_.combine(t, t.concat({attended_instr, state.h})));

  Var stop = layers_.stop(t, fused);
  if (cands.empty()) return stop;
  Vec feats;
  feats.reserve(cands.size() * static_cast<std::size_t>(f));
  for (const auto& c : cands) feats.insert(feats.end(), c.f.f.begin(), c.f.f.end());
  Var key = t.matvec(t.param(*layers_.candidate_key), fused);
  Var scores = t.matvec(t.constant(std::move(feats), static_cast<int>(cands.size()), f), key);
  return t.concat({scores, stop});
}

void Agent::commit_action(Tape& t, AgentState& state, const std::vector<Candidate>& cands, int action) const {
  if (action < static_cast<int>(cands.size())) state.previous_action = t.constant(cands[static_cast<std::size_t>(action)].f.f);
}

namespace {

int argmax(const Vec& v) { return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin()); }

}  // namespace

RolloutGraph rollout_on_tape(Tape& t, const Agent& agent, const NavEnvironment& nav, const Episode& episode,
                             RolloutMode mode, Rng* rng, int max_steps) {
  if (mode == RolloutMode::kSample && rng == nullptr) throw Error("invalid_argument", "sample rollouts need an rng");
  if (!nav.env->has_node(episode.start()) || !nav.env->has_node(episode.goal())) {
    throw Error("invalid_episode", "episode nodes not in environment " + nav.env->env_id);
  }
  RolloutGraph g;
  Trajectory& traj = g.trajectory;
  traj.episode_id = episode.episode_id;
  InstructionContext instr = agent.encode_instruction(t, episode.instruction);
  AgentState state = agent.initial_state(t, instr);
  NodeId node = episode.start();
  traj.nodes.push_back(node);
  for (int step = 0; step < max_steps; ++step) {
    const auto& cands = nav.candidates[static_cast<std::size_t>(node)];
    Var logits = agent.step(t, state, instr, nav.panorama[static_cast<std::size_t>(node)], cands);
    const Vec& lv = t.value(logits);
    for (double x : lv) {
      if (!std::isfinite(x)) throw Error("divergent_loss", "non-finite action scores");
    }
    const int teacher = nav.teacher_action(node, episode.goal());
    int action = teacher;
    Vec logp = lv;
    {
      const double mx = *std::max_element(logp.begin(), logp.end());
      double sum = 0.0;
      for (double x : logp) sum += std::exp(x - mx);
      const double lse = mx + std::log(sum);
      for (double& x : logp) x -= lse;
    }
    if (mode == RolloutMode::kArgmax) {
      action = argmax(lv);
    } else if (mode == RolloutMode::kSample) {
      Vec p(logp.size());
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(logp[i]);
      std::discrete_distribution<int> dist(p.begin(), p.end());
      action = dist(*rng);
    }
    g.logits.push_back(logits);
    traj.logits.push_back(lv);
    traj.actions.push_back(action);
    traj.teacher_actions.push_back(teacher);
    traj.log_probs.push_back(logp[static_cast<std::size_t>(action)]);
    if (action == static_cast<int>(cands.size())) {
      traj.terminated_by = Termination::kStop;
      return g;
    }
    agent.commit_action(t, state, cands, action);
    node = cands[static_cast<std::size_t>(action)].target;
    traj.nodes.push_back(node);
  }
  traj.terminated_by = Termination::kMaxSteps;
  return g;
}

Trajectory rollout(const Agent& agent, const NavEnvironment& nav, const Episode& episode, RolloutMode mode,
                   std::uint64_t seed, int max_steps) {
  Tape t;
  Rng rng(derive_seed(seed, hash_tag("rollout"), hash_tag(episode.episode_id)));
  return rollout_on_tape(t, agent, nav, episode, mode, &rng, max_steps).trajectory;
}

int default_max_steps(const std::vector<Episode>& episodes) {
  int longest = 0;
  for (const auto& ep : episodes) longest = std::max(longest, ep.hops());
  return 2 * longest + 2;
}

double imitation_loss(const Trajectory& trajectory) {
  if (trajectory.logits.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t s = 0; s < trajectory.logits.size(); ++s) {
    const Vec& l = trajectory.logits[s];
    const double mx = *std::max_element(l.begin(), l.end());
    double sum = 0.0;
    for (double x : l) sum += std::exp(x - mx);
    total += mx + std::log(sum) - l[static_cast<std::size_t>(trajectory.teacher_actions[s])];
  }
  return total / static_cast<double>(trajectory.logits.size());
}

Var imitation_loss(Tape& t, const RolloutGraph& graph) {
  const auto& traj = graph.trajectory;
  if (graph.logits.empty()) return t.constant(Vec{0.0});
  std::vector<Var> terms;
  for (std::size_t s = 0; s < graph.logits.size(); ++s) {
    terms.push_back(t.pick(t.log_softmax(graph.logits[s]), traj.teacher_actions[s]));
  }
  return t.scale(t.mean_n(terms), -1.0);
}

std::vector<double> step_rewards(const Trajectory& trajectory, const NavEnvironment& nav, const Episode& episode,
                                 const RlOptions& options) {
  std::vector<double> rewards;
  const NodeId goal = episode.goal();
  for (std::size_t s = 0; s < trajectory.actions.size(); ++s) {
    const NodeId node = trajectory.nodes[s];
    const double here = nav.distances->distance(node, goal);
    const auto k = static_cast<int>(nav.candidates[static_cast<std::size_t>(node)].size());
    if (trajectory.actions[s] == k) {
      rewards.push_back(here <= options.success_radius ? options.success_reward : options.failure_reward);
    } else {
      const double there = nav.distances->distance(trajectory.nodes[s + 1], goal);
      rewards.push_back(options.progress_weight * (here - there));
    }
  }
  return rewards;
}

std::vector<double> rewards_to_go(const std::vector<double>& rewards, double discount) {
  std::vector<double> out(rewards.size());
  double running = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    running = rewards[i] + discount * running;
    out[i] = running;
  }
  return out;
}

std::vector<double> advantages(const Trajectory& trajectory, const NavEnvironment& nav, const Episode& episode,
                               const RlOptions& options) {
  auto returns = rewards_to_go(step_rewards(trajectory, nav, episode, options), options.discount);
  double baseline = options.baseline_value;
  if (options.baseline != RlBaseline::kConstant && !returns.empty()) {
    baseline = 0.0;
    for (double g : returns) baseline += g;
    baseline /= static_cast<double>(returns.size());
  }
  for (double& g : returns) g -= baseline;
  return returns;
}

double rl_loss(const Trajectory& trajectory, const NavEnvironment& nav, const Episode& episode,
               const RlOptions& options) {
  auto adv = advantages(trajectory, nav, episode, options);
  if (adv.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t s = 0; s < adv.size(); ++s) total -= adv[s] * trajectory.log_probs[s];
  return options.mean_over_steps ? total / static_cast<double>(adv.size()) : total;
}

Var rl_loss(Tape& t, const RolloutGraph& graph, const std::vector<double>& adv, bool mean_over_steps) {
  const auto& traj = graph.trajectory;
  if (adv.size() != graph.logits.size()) throw Error("invalid_argument", "one advantage per step is required");
  if (adv.empty()) return t.constant(Vec{0.0});
  std::vector<Var> terms;
  for (std::size_t s = 0; s < adv.size(); ++s) {
    terms.push_back(t.scale(t.pick(t.log_softmax(graph.logits[s]), traj.actions[s]), -adv[s]));
  }
  Var total = t.add_n(terms);
  return mean_over_steps ? t.scale(total, 1.0 / static_cast<double>(adv.size())) : total;
}

void save_agent(const Agent& agent, const std::string& stem, const std::string& stage) {
  const std::string blob = agent.params().serialize();
  io::write_file(stem + ".bin", blob);
  io::Json j;
  j["format_version"] = 1;
  j["kind"] = "agent";
  j["policy"] = "neural";
  j["dims"] = {{"feature_dim", agent.feature_dim()}, {"word_dim", agent.config().word_dim}, {"hidden", agent.config().hidden}};
  j["vocab"] = agent.vocab().tokens();
  j["vocab_hash"] = agent.vocab().hash();
  j["training_stage"] = stage;
  j["seed"] = agent.config().seed;
  j["params_sha256"] = io::sha256_hex(blob);
  io::write_file(stem + ".json", j.dump(2) + "\n");
}

Agent load_agent(const std::string& stem) {
  io::Json j;
  try {
    j = io::Json::parse(io::read_file(stem + ".json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("corrupt_checkpoint", e.what());
  }
  if (j.value("kind", "") != "agent" || j.value("policy", "") != "neural") {
    throw Error("corrupt_checkpoint", stem + " is not a neural agent checkpoint");
  }
  AgentConfig cfg;
  cfg.word_dim = j.at("dims").at("word_dim").get<int>();
  cfg.hidden = j.at("dims").at("hidden").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  Vocabulary vocab(j.at("vocab").get<std::vector<std::string>>());
  if (vocab.hash() != j.at("vocab_hash").get<std::uint64_t>()) throw Error("hash_mismatch", "vocabulary hash mismatch");
  Agent agent(std::move(vocab), j.at("dims").at("feature_dim").get<int>(), cfg);
  const std::string blob = io::read_file(stem + ".bin");
  if (io::sha256_hex(blob) != j.at("params_sha256").get<std::string>()) {
    throw Error("hash_mismatch", "agent parameters do not match their descriptor");
  }
  agent.params().deserialize(blob);
  return agent;
}

}  // namespace envedit
