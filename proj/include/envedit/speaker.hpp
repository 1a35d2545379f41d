#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "envedit/nn.hpp"
#include "envedit/render.hpp"
#include "envedit/vocab.hpp"
#include "envedit/world.hpp"

namespace envedit {

using EnvLookup = std::map<std::string, const Environment*>;
EnvLookup make_lookup(const std::vector<Environment>& envs);
const Environment& lookup_env(const EnvLookup& envs, const std::string& env_id);

struct SpeakerConfig {
  int word_dim = 16;
  int hidden = 32;  // decoder size; each encoder direction uses hidden / 2
  bool style_aware = true;
  double learning_rate = 3e-3;
  int iterations = 400;
  int batch_size = 16;
  double grad_clip = 5.0;
  int max_len_per_hop = 4;
  int max_len_extra = 4;
  std::uint64_t seed = 0;
};

enum class DecodeMode { kGreedy, kSample };

struct GeneratedInstruction {
  std::vector<std::string> tokens;
  bool truncated = false;
};

// Encoder-decoder instruction generator. With style_aware set, the decoder state starts
// from an affine map of the mean style encoding over the start panorama's 36 views.
class Speaker {
 public:
  Speaker(Vocabulary vocab, int feature_dim, const StyleEncoder& style_init, SpeakerConfig config);
  Speaker(const Speaker& other);
  Speaker& operator=(const Speaker& other);
  Speaker(Speaker&&) noexcept = default;
  Speaker& operator=(Speaker&&) noexcept = default;

  const SpeakerConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  int feature_dim() const { return feature_dim_; }
  int style_dim() const { return style_dim_; }
  int style_groups() const { return groups_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }

  // Mean of the per-view style encodings over the panorama.
  nn::Var mean_style(nn::Tape& t, const Panorama& panorama) const;
  Vec mean_style(const Panorama& panorama) const;
  // (h_style, c_style) from the start panorama.
  std::pair<Vec, Vec> init_decoder_state(const Panorama& panorama) const;

  // Teacher-forced mean per-token negative log-likelihood.
  nn::Var loss(nn::Tape& t, const Environment& env, const std::vector<NodeId>& path,
               const std::vector<std::string>& target) const;

  GeneratedInstruction generate(const Environment& env, const std::vector<NodeId>& path, DecodeMode mode,
                                std::uint64_t seed = 0) const;
  int max_length(int hops) const { return config_.max_len_per_hop * hops + config_.max_len_extra; }

 private:
  struct Encoded {
    nn::Var context;  // (L+1) x hidden
    nn::Var h0;
    nn::Var c0;
  };

  void build(const StyleEncoder* style_init);
  Encoded encode(nn::Tape& t, const Environment& env, const std::vector<NodeId>& path) const;
  nn::Var style_encode(nn::Tape& t, nn::Var v) const;
  // Returns (logits, h, c) for one decoder step.
  std::tuple<nn::Var, nn::Var, nn::Var> decode_step(nn::Tape& t, const Encoded& enc, int prev_token, nn::Var h,
                                                    nn::Var c) const;

  Vocabulary vocab_;
  int feature_dim_ = 0;
  int style_dim_ = 0;
  int groups_ = 0;
  SpeakerConfig config_;
  nn::ParameterSet params_;
  struct Layers {
    nn::Lstm route_fwd, route_bwd, ctx_fwd, ctx_bwd, decoder;
    nn::Parameter* embedding = nullptr;
    nn::Linear style_encoder, style_fc, attention, combine, output;
  } layers_;
};

struct SpeakerTrainResult {
  Speaker speaker;
  std::vector<double> losses;  // per iteration batch loss
};

SpeakerTrainResult train_speaker(Speaker speaker, const std::vector<Episode>& dataset, const EnvLookup& envs);

// Synthetic instructions for unannotated seen-environment paths.
std::vector<Episode> back_translate(const Speaker& speaker, const std::vector<const Environment*>& env_set,
                                    const std::vector<Episode>& annotated, int n_paths, std::uint64_t seed,
                                    std::pair<int, int> len_range = {2, 4}, DecodeMode mode = DecodeMode::kGreedy);

struct SpeakerDescriptor {
  int format_version = 1;
  int feature_dim = 0;
  int style_dim = 0;
  SpeakerConfig config;
  std::vector<std::string> vocab;
};

// Writes <stem>.bin and <stem>.json.
void save_speaker(const Speaker& speaker, const std::string& stem);
Speaker load_speaker(const std::string& stem);

}  // namespace envedit
