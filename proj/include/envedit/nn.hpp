#pragma once

// Minimal reverse-mode automatic differentiation over dense float64 vectors and
// matrices, sized for the toy speaker and agent networks.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "envedit/common.hpp"

namespace envedit::nn {

struct Parameter {
  std::string name;
  int rows = 0;
  int cols = 0;
  Vec value;
  Vec grad;

  std::size_t size() const { return value.size(); }
};

class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other);
  ParameterSet& operator=(const ParameterSet& other);
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter& add(const std::string& name, int rows, int cols);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  void zero_grad();
  std::size_t num_scalars() const;

  // Little-endian blob: magic, count, then (name, rows, cols, values) per parameter.
  std::string serialize() const;
  // Overwrites values of existing parameters; shapes and names must match.
  void deserialize(const std::string& blob);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
void init_uniform(Parameter& p, Rng& rng, double scale = -1.0);

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  Var constant(Vec value);
  Var constant(Vec value, int rows, int cols);
  Var param(Parameter& p);

  const Vec& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  double scalar(Var v) const { return value(v).front(); }
  int rows(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].rows; }
  int cols(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].cols; }
  std::size_t size() const { return nodes_.size(); }

  Var matvec(Var m, Var x);    // m (r x c) * x (c)
  Var matvec_t(Var m, Var x);  // m^T (c x r) * x (r)
  Var linear(Var w, Var x, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_n(const std::vector<Var>& xs);
  Var mean_n(const std::vector<Var>& xs);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var concat(const std::vector<Var>& xs);
  Var slice(Var a, int offset, int len);
  Var stack_rows(const std::vector<Var>& rows);
  Var dot(Var a, Var b);
  Var softmax(Var a);
  Var log_softmax(Var a);
  Var pick(Var a, int index);
  // gates (4H: i, f, g, o) and previous cell c (H) -> [h ; c] (2H)
  Var lstm_cell(Var gates, Var c);
  // [group means ; group stds] with std = sqrt(var + eps)
  Var group_stats(Var v, int groups, double eps);

  void backward(Var root);

 private:
  struct Node {
    int rows = 0;
    int cols = 1;
    Vec value;
    Vec grad;
    std::function<void()> back;
    Parameter* param = nullptr;
  };

  Var push(Vec value, int rows, int cols);
  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_ids_;
};

struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  static Linear create(ParameterSet& ps, const std::string& name, int in, int out, Rng& rng);
  Var operator()(Tape& t, Var x) const { return t.linear(t.param(*weight), x, t.param(*bias)); }
};

struct Lstm {
  Parameter* weight = nullptr;  // 4H x (I + H)
  Parameter* bias = nullptr;
  int input = 0;
  int hidden = 0;

  static Lstm create(ParameterSet& ps, const std::string& name, int input, int hidden, Rng& rng);
  // Returns (h', c').
  std::pair<Var, Var> step(Tape& t, Var x, Var h, Var c) const;
  // Runs over xs, forward or reversed, returning hidden states in input order.
  std::vector<Var> run(Tape& t, const std::vector<Var>& xs, bool reverse) const;
};

class Adam {
 public:
  Adam(ParameterSet& params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  // Scales gradients down to max_norm; returns the pre-clip norm.
  double clip_grad_norm(double max_norm);
  void step();
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  ParameterSet* params_;
  double lr_, beta1_, beta2_, eps_;
  long step_count_ = 0;
  std::vector<Vec> m_, v_;
};

}  // namespace envedit::nn
