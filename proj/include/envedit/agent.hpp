#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "envedit/nn.hpp"
#include "envedit/render.hpp"
#include "envedit/vocab.hpp"
#include "envedit/world.hpp"

namespace envedit {

// Per-environment navigation data precomputed for rollouts. Edited variants share
// geometry with their original, so they may share its distance table.
struct NavEnvironment {
  const Environment* env = nullptr;
  std::shared_ptr<const GraphDistances> distances;
  std::vector<Vec> panorama;  // per node: 36 x (D + 4), row-major
  std::vector<std::vector<Candidate>> candidates;

  static NavEnvironment build(const Environment& env, std::shared_ptr<const GraphDistances> distances = nullptr);
  int feature_dim() const { return env->feature_dim; }
  // Candidate index of the shortest-path next hop, or K (STOP) at the goal.
  int teacher_action(NodeId node, NodeId goal) const;
};

struct AgentConfig {
  int word_dim = 16;
  int hidden = 32;
  std::uint64_t seed = 0;
};

struct InstructionContext {
  nn::Var context;  // tokens x hidden
  nn::Var last;
  int length = 0;
};

struct AgentState {
  nn::Var h;
  nn::Var c;
  nn::Var previous_action;  // representation of the last chosen candidate
};

// Attention-based follower: instruction LSTM, panoramic attention, recurrent state,
// and a per-candidate bilinear scorer with a learned STOP score appended last.
class Agent {
 public:
  Agent(Vocabulary vocab, int feature_dim, AgentConfig config);
  Agent(const Agent& other);
  Agent& operator=(const Agent& other);
  Agent(Agent&&) noexcept = default;
  Agent& operator=(Agent&&) noexcept = default;

  const AgentConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  int feature_dim() const { return feature_dim_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }

  InstructionContext encode_instruction(nn::Tape& t, const std::vector<std::string>& tokens) const;
  AgentState initial_state(nn::Tape& t, const InstructionContext& instruction) const;
  // Scores K candidates plus STOP (last index) and advances the recurrent state.
  nn::Var step(nn::Tape& t, AgentState& state, const InstructionContext& instruction, const Vec& panorama,
               const std::vector<Candidate>& candidates) const;
  // Records the chosen action as the next step's previous-action input.
  void commit_action(nn::Tape& t, AgentState& state, const std::vector<Candidate>& candidates, int action) const;

 private:
  void build();

  Vocabulary vocab_;
  int feature_dim_ = 0;
  AgentConfig config_;
  nn::ParameterSet params_;
  struct Layers {
    nn::Parameter* embedding = nullptr;
    nn::Lstm encoder, state;
    nn::Parameter* pano_query = nullptr;     // (D+4) x H
    nn::Parameter* instr_query = nullptr;    // H x H
    nn::Linear combine;                      // 2H -> H
    nn::Parameter* candidate_key = nullptr;  // (D+4) x H
    nn::Linear stop;                         // H -> 1
  } layers_;
};

enum class RolloutMode { kTeacher, kSample, kArgmax };
enum class Termination { kStop, kMaxSteps };

struct Trajectory {
  std::string episode_id;
  std::vector<NodeId> nodes;
  std::vector<int> actions;
  std::vector<int> teacher_actions;
  std::vector<Vec> logits;
  std::vector<double> log_probs;  // of the chosen action
  Termination terminated_by = Termination::kMaxSteps;
};

struct RolloutGraph {
  Trajectory trajectory;
  std::vector<nn::Var> logits;
};

RolloutGraph rollout_on_tape(nn::Tape& t, const Agent& agent, const NavEnvironment& nav, const Episode& episode,
                             RolloutMode mode, Rng* rng, int max_steps);
Trajectory rollout(const Agent& agent, const NavEnvironment& nav, const Episode& episode, RolloutMode mode,
                   std::uint64_t seed, int max_steps);

int default_max_steps(const std::vector<Episode>& episodes);

// Mean per-step cross-entropy against the teacher actions.
double imitation_loss(const Trajectory& trajectory);
nn::Var imitation_loss(nn::Tape& t, const RolloutGraph& graph);

// kBatchMean is applied by the trainer across a whole batch; on a single trajectory it
// behaves like kTrajectoryMean.
enum class RlBaseline { kBatchMean, kTrajectoryMean, kConstant };

struct RlOptions {
  double success_radius = 3.0;
  double success_reward = 2.0;
  double failure_reward = -2.0;
  double progress_weight = 0.5;  // per meter of geodesic progress toward the goal
  double discount = 0.9;
  RlBaseline baseline = RlBaseline::kBatchMean;
  double baseline_value = 0.0;  // used with kConstant
  bool mean_over_steps = true;
};

std::vector<double> step_rewards(const Trajectory& trajectory, const NavEnvironment& nav, const Episode& episode,
                                 const RlOptions& options);
std::vector<double> rewards_to_go(const std::vector<double>& rewards, double discount);
std::vector<double> advantages(const Trajectory& trajectory, const NavEnvironment& nav, const Episode& episode,
                               const RlOptions& options);

// Advantage-weighted negative log-probability of the taken actions.
double rl_loss(const Trajectory& trajectory, const NavEnvironment& nav, const Episode& episode,
               const RlOptions& options = {});
nn::Var rl_loss(nn::Tape& t, const RolloutGraph& graph, const std::vector<double>& advantages,
                bool mean_over_steps = true);

void save_agent(const Agent& agent, const std::string& stem, const std::string& stage);
Agent load_agent(const std::string& stem);

}  // namespace envedit
