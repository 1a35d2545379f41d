#include "envedit/speaker.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include "envedit/io.hpp"

namespace envedit {

using nn::Tape;
using nn::Var;

EnvLookup make_lookup(const std::vector<Environment>& envs) {
  EnvLookup out;
  for (const auto& e : envs) out[e.env_id] = &e;
  return out;
}

const Environment& lookup_env(const EnvLookup& envs, const std::string& env_id) {
  auto it = envs.find(env_id);
  if (it == envs.end()) throw Error("unknown_env", "no environment '" + env_id + "'");
  return *it->second;
}

Speaker::Speaker(Vocabulary vocab, int feature_dim, const StyleEncoder& style_init, SpeakerConfig config)
    : vocab_(std::move(vocab)),
      feature_dim_(feature_dim),
      style_dim_(style_init.style_dim),
      groups_(style_init.groups),
      config_(config) {
  if (config_.hidden % 2 != 0) throw Error("invalid_config", "speaker hidden size must be even");
  build(&style_init);
}

Speaker::Speaker(const Speaker& other)
    : vocab_(other.vocab_),
      feature_dim_(other.feature_dim_),
      style_dim_(other.style_dim_),
      groups_(other.groups_),
      config_(other.config_) {
  build(nullptr);
  auto dst = params_.all();
  auto src = other.params_.all();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
}

Speaker& Speaker::operator=(const Speaker& other) {
  if (this != &other) {
    Speaker copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void Speaker::build(const StyleEncoder* style_init) {
  params_ = nn::ParameterSet();
  Rng rng(derive_seed(config_.seed, hash_tag("speaker_init")));
  const int half = config_.hidden / 2;
  const int route_in = feature_dim_ + kOrientationDim;
  constexpr int kContextDim = 2 * kOrientationDim + 1;
  layers_.embedding = &params_.add("embedding", vocab_.size(), config_.word_dim);
  nn::init_uniform(*layers_.embedding, rng, 0.5);
  layers_.route_fwd = nn::Lstm::create(params_, "route_fwd", route_in, half, rng);
  layers_.route_bwd = nn::Lstm::create(params_, "route_bwd", route_in, half, rng);
  layers_.ctx_fwd = nn::Lstm::create(params_, "ctx_fwd", config_.hidden + kContextDim, half, rng);
  layers_.ctx_bwd = nn::Lstm::create(params_, "ctx_bwd", config_.hidden + kContextDim, half, rng);
  layers_.decoder = nn::Lstm::create(params_, "decoder", config_.word_dim, config_.hidden, rng);
  layers_.style_encoder = nn::Linear::create(params_, "style_encoder", 2 * groups_, style_dim_, rng);
  if (style_init != nullptr) {
    layers_.style_encoder.weight->value = style_init->weight;
    layers_.style_encoder.bias->value = style_init->bias;
  }
  layers_.style_fc = nn::Linear::create(params_, "style_fc", style_dim_, 2 * config_.hidden, rng);
  layers_.attention = nn::Linear::create(params_, "attention", config_.hidden, config_.hidden, rng);
  layers_.combine = nn::Linear::create(params_, "combine", 2 * config_.hidden, config_.hidden, rng);
  layers_.output = nn::Linear::create(params_, "output", config_.hidden, vocab_.size(), rng);
  // Near-uniform output distribution at initialization.
  for (double& w : layers_.output.weight->value) w *= 0.01;
  std::fill(layers_.output.bias->value.begin(), layers_.output.bias->value.end(), 0.0);
}

Var Speaker::style_encode(Tape& t, Var v) const {
  Var stats = t.group_stats(v, groups_, kInstanceNormEpsilon);
  return layers_.style_encoder(t, stats);
}

Var Speaker::mean_style(Tape& t, const Panorama& panorama) const {
  std::vector<Var> styles;
  styles.reserve(panorama.views.size());
  for (const auto& view : panorama.views) styles.push_back(style_encode(t, t.constant(view.feature)));
  return t.mean_n(styles);
}

Vec Speaker::mean_style(const Panorama& panorama) const {
  Tape t;
  return t.value(mean_style(t, panorama));
}

std::pair<Vec, Vec> Speaker::init_decoder_state(const Panorama& panorama) const {
  if (panorama.views.size() != static_cast<std::size_t>(kViewsPerPanorama)) {
    throw Error("invalid_panorama", "panorama must have 36 views");
  }
  Tape t;
  Var hc = layers_.style_fc(t, mean_style(t, panorama));
  const Vec& v = t.value(hc);
  const auto h = static_cast<std::ptrdiff_t>(config_.hidden);
  return {Vec(v.begin(), v.begin() + h), Vec(v.begin() + h, v.end())};
}

Speaker::Encoded Speaker::encode(Tape& t, const Environment& env, const std::vector<NodeId>& path) const {
  if (path.empty()) throw Error("invalid_path", "empty path");
  std::vector<Var> route, context;
  double heading = 0.0;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    auto [theta, phi] = direction_between(env, path[i], path[i + 1]);
    const int view = nearest_view_index(theta, phi);
    route.push_back(t.constant(ViewRepresentation::of(env.panoramas[static_cast<std::size_t>(path[i])].views[static_cast<std::size_t>(view)]).f));
    auto hop = orientation_feature(theta, phi);
    auto prev = orientation_feature(heading, 0.0);
    Vec c(hop.begin(), hop.end());
    c.insert(c.end(), prev.begin(), prev.end());
    c.push_back(0.0);
    context.push_back(t.constant(std::move(c)));
    heading = theta;
  }
  route.push_back(t.constant(Vec(static_cast<std::size_t>(feature_dim_ + kOrientationDim), 0.0)));
  auto prev = orientation_feature(heading, 0.0);
  Vec terminal(kOrientationDim, 0.0);
  terminal.insert(terminal.end(), prev.begin(), prev.end());
  terminal.push_back(1.0);
  context.push_back(t.constant(std::move(terminal)));

  auto rf = layers_.route_fwd.run(t, route, false);
  auto rb = layers_.route_bwd.run(t, route, true);
  std::vector<Var> second;
  for (std::size_t i = 0; i < route.size(); ++i) second.push_back(t.concat({rf[i], rb[i], context[i]}));
  auto cf = layers_.ctx_fwd.run(t, second, false);
  auto cb = layers_.ctx_bwd.run(t, second, true);
  std::vector<Var> rows;
  for (std::size_t i = 0; i < route.size(); ++i) rows.push_back(t.concat({cf[i], cb[i]}));

  Encoded enc;
  enc.context = t.stack_rows(rows);
  if (config_.style_aware) {
    Var hc = layers_.style_fc(t, mean_style(t, env.panoramas[static_cast<std::size_t>(path.front())]));
    enc.h0 = t.slice(hc, 0, config_.hidden);
    enc.c0 = t.slice(hc, config_.hidden, config_.hidden);
  } else {
    enc.h0 = t.constant(Vec(static_cast<std::size_t>(config_.hidden), 0.0));
    enc.c0 = t.constant(Vec(static_cast<std::size_t>(config_.hidden), 0.0));
  }
  return enc;
}

std::tuple<Var, Var, Var> Speaker::decode_step(Tape& t, const Encoded& enc, int prev_token, Var h, Var c) const {
  Var emb = t.slice(t.param(*layers_.embedding), prev_token * config_.word_dim, config_.word_dim);
  std::tie(h, c) = layers_.decoder.step(t, emb, h, c);
  Var query = layers_.attention(t, h);
  Var weights = t.softmax(t.matvec(enc.context, query));
  Var attended = t.matvec_t(enc.context, weights);
  Var out = t.tanh(layers_.combine(t, t.concat({h, attended})));
  return {layers_.output(t, out), h, c};
}

Var Speaker::loss(Tape& t, const Environment& env, const std::vector<NodeId>& path,
                  const std::vector<std::string>& target) const {
  if (target.empty()) throw Error("invalid_argument", "empty target instruction");
  Encoded enc = encode(t, env, path);
  Var h = enc.h0, c = enc.c0;
  int prev = vocab_.bos_id();
  std::vector<Var> nll;
  for (const auto& tok : target) {
    const int id = vocab_.id(tok);
    auto [logits, nh, nc] = decode_step(t, enc, prev, h, c);
    h = nh;
    c = nc;
    nll.push_back(t.scale(t.pick(t.log_softmax(logits), id), -1.0));
    prev = id;
  }
  return t.mean_n(nll);
}

GeneratedInstruction Speaker::generate(const Environment& env, const std::vector<NodeId>& path, DecodeMode mode,
                                       std::uint64_t seed) const {
  Tape t;
  Encoded enc = encode(t, env, path);
  Var h = enc.h0, c = enc.c0;
  int prev = vocab_.bos_id();
  Rng rng(derive_seed(seed, hash_tag("speaker_decode")));
  GeneratedInstruction out;
  const int limit = max_length(static_cast<int>(path.size()) - 1);
  for (int step = 0; step < limit; ++step) {
    auto [logits, nh, nc] = decode_step(t, enc, prev, h, c);
    h = nh;
    c = nc;
    const Vec& lv = t.value(logits);
    int choice = 0;
    if (mode == DecodeMode::kGreedy) {
      choice = static_cast<int>(std::max_element(lv.begin(), lv.end()) - lv.begin());
    } else {
      const Vec& p = t.value(t.softmax(logits));
      std::discrete_distribution<int> dist(p.begin(), p.end());
      choice = dist(rng);
    }
    out.tokens.push_back(vocab_.token(choice));
    if (choice == vocab_.stop_id()) return out;
    prev = choice;
  }
  out.truncated = true;
  return out;
}

SpeakerTrainResult train_speaker(Speaker speaker, const std::vector<Episode>& dataset, const EnvLookup& envs) {
  if (dataset.empty()) throw Error("empty_dataset", "speaker training needs at least one episode");
  const SpeakerConfig& cfg = speaker.config();
  nn::Adam adam(speaker.params(), cfg.learning_rate);
  Rng rng(derive_seed(cfg.seed, hash_tag("speaker_batches")));
  std::vector<double> losses;
  for (int it = 0; it < cfg.iterations; ++it) {
    speaker.params().zero_grad();
    double batch_loss = 0.0;
    const int n = std::max(1, cfg.batch_size);
    for (int b = 0; b < n; ++b) {
      const Episode& ep = dataset[static_cast<std::size_t>(rng() % dataset.size())];
      Tape t;
      Var l = speaker.loss(t, lookup_env(envs, ep.env_id), ep.path, ep.instruction);
      Var scaled = t.scale(l, 1.0 / n);
      batch_loss += t.scalar(l) / n;
      t.backward(scaled);
    }
    if (!std::isfinite(batch_loss)) {
      throw Error("divergent_loss", "speaker loss became non-finite at iteration " + std::to_string(it));
    }
    adam.clip_grad_norm(cfg.grad_clip);
    adam.step();
    losses.push_back(batch_loss);
  }
  return {std::move(speaker), std::move(losses)};
}

std::vector<Episode> back_translate(const Speaker& speaker, const std::vector<const Environment*>& env_set,
                                    const std::vector<Episode>& annotated, int n_paths, std::uint64_t seed,
                                    std::pair<int, int> len_range, DecodeMode mode) {
  std::vector<Episode> out;
  if (n_paths <= 0) return out;
  std::set<std::tuple<std::string, NodeId, NodeId>> excluded;
  for (const auto& ep : annotated) excluded.emplace(ep.env_id, ep.start(), ep.goal());

  constexpr int kMaxRounds = 64;
  for (int round = 0; round < kMaxRounds && static_cast<int>(out.size()) < n_paths; ++round) {
    auto sampled = sample_episodes(env_set, n_paths, len_range, derive_seed(seed, static_cast<std::uint64_t>(round)));
    for (auto& ep : sampled) {
      if (static_cast<int>(out.size()) >= n_paths) break;
      if (excluded.count({ep.env_id, ep.start(), ep.goal()})) continue;
      out.push_back(std::move(ep));
    }
  }
  std::map<std::string, const Environment*> by_id;
  for (const auto* e : env_set) by_id[e->env_id] = e;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& ep = out[i];
    char buf[32];
    std::snprintf(buf, sizeof(buf), "bt_%06zu", i);
    ep.episode_id = buf;
    ep.instruction = speaker.generate(*by_id.at(ep.env_id), ep.path, mode, derive_seed(seed, hash_tag(ep.episode_id))).tokens;
    ep.synthetic = true;
  }
  return out;
}

void save_speaker(const Speaker& speaker, const std::string& stem) {
  const std::string blob = speaker.params().serialize();
  io::write_file(stem + ".bin", blob);
  const auto& cfg = speaker.config();
  io::Json j;
  j["format_version"] = 1;
  j["kind"] = "speaker";
  j["dims"] = {{"feature_dim", speaker.feature_dim()},
               {"style_dim", speaker.style_dim()},
               {"style_groups", speaker.style_groups()},
               {"word_dim", cfg.word_dim},
               {"hidden", cfg.hidden}};
  j["vocab"] = speaker.vocab().tokens();
  j["style_aware"] = cfg.style_aware;
  j["seed"] = cfg.seed;
  j["config"] = {{"learning_rate", cfg.learning_rate}, {"iterations", cfg.iterations}, {"batch_size", cfg.batch_size},
                 {"grad_clip", cfg.grad_clip}, {"max_len_per_hop", cfg.max_len_per_hop},
                 {"max_len_extra", cfg.max_len_extra}};
  j["params_sha256"] = io::sha256_hex(blob);
  io::write_file(stem + ".json", j.dump(2) + "\n");
}

Speaker load_speaker(const std::string& stem) {
  io::Json j;
  try {
    j = io::Json::parse(io::read_file(stem + ".json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("corrupt_checkpoint", e.what());
  }
  if (j.value("kind", "") != "speaker") throw Error("corrupt_checkpoint", stem + " is not a speaker checkpoint");
  SpeakerConfig cfg;
  const auto& dims = j.at("dims");
  cfg.word_dim = dims.at("word_dim").get<int>();
  cfg.hidden = dims.at("hidden").get<int>();
  cfg.style_aware = j.at("style_aware").get<bool>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  const auto& c = j.at("config");
  cfg.learning_rate = c.at("learning_rate").get<double>();
  cfg.iterations = c.at("iterations").get<int>();
  cfg.batch_size = c.at("batch_size").get<int>();
  cfg.grad_clip = c.at("grad_clip").get<double>();
  cfg.max_len_per_hop = c.at("max_len_per_hop").get<int>();
  cfg.max_len_extra = c.at("max_len_extra").get<int>();
  StyleEncoder placeholder;
  placeholder.feature_dim = dims.at("feature_dim").get<int>();
  placeholder.style_dim = dims.at("style_dim").get<int>();
  placeholder.groups = dims.at("style_groups").get<int>();
  placeholder.weight.assign(static_cast<std::size_t>(placeholder.style_dim * 2 * placeholder.groups), 0.0);
  placeholder.bias.assign(static_cast<std::size_t>(placeholder.style_dim), 0.0);
  Speaker speaker(Vocabulary(j.at("vocab").get<std::vector<std::string>>()), placeholder.feature_dim, placeholder, cfg);
  const std::string blob = io::read_file(stem + ".bin");
  if (io::sha256_hex(blob) != j.at("params_sha256").get<std::string>()) {
    throw Error("hash_mismatch", "speaker parameters do not match their descriptor");
  }
  speaker.params().deserialize(blob);
  return speaker;
}

}  // namespace envedit
