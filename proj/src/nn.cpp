#include "envedit/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace envedit::nn {

namespace {

constexpr char kBlobMagic[8] = {'E', 'N', 'V', 'E', 'D', 'P', '0', '1'};

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw Error("corrupt_checkpoint", "parameter blob truncated");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

ParameterSet::ParameterSet(const ParameterSet& other) {
  for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
}

ParameterSet& ParameterSet::operator=(const ParameterSet& other) {
  if (this != &other) {
    params_.clear();
    for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
  }
  return *this;
}

Parameter& ParameterSet::add(const std::string& name, int rows, int cols) {
  if (contains(name)) throw Error("duplicate_parameter", "parameter '" + name + "' already exists");
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->rows = rows;
  p->cols = cols;
  p->value.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), 0.0);
  p->grad.assign(p->value.size(), 0.0);
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterSet::get(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return *p;
  }
  throw Error("unknown_parameter", "no parameter '" + name + "'");
}

const Parameter& ParameterSet::get(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return *p;
  }
  throw Error("unknown_parameter", "no parameter '" + name + "'");
}

bool ParameterSet::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const auto& p) { return p->name == name; });
}

std::vector<Parameter*> ParameterSet::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterSet::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

std::size_t ParameterSet::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->size();
  return n;
}

std::string ParameterSet::serialize() const {
  std::string out(kBlobMagic, sizeof(kBlobMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params_.size()));
  for (const auto& p : params_) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.append(p->name);
    put<std::int32_t>(out, p->rows);
    put<std::int32_t>(out, p->cols);
    for (double x : p->value) put<double>(out, x);
  }
  return out;
}

void ParameterSet::deserialize(const std::string& blob) {
  if (blob.size() < sizeof(kBlobMagic) || std::memcmp(blob.data(), kBlobMagic, sizeof(kBlobMagic)) != 0) {
    throw Error("corrupt_checkpoint", "bad parameter blob header");
  }
  std::size_t pos = sizeof(kBlobMagic);
  auto count = take<std::uint32_t>(blob, pos);
  if (count != params_.size()) throw Error("corrupt_checkpoint", "parameter count mismatch");
  for (std::uint32_t i = 0; i < count; ++i) {
    auto len = take<std::uint32_t>(blob, pos);
    if (pos + len > blob.size()) throw Error("corrupt_checkpoint", "parameter blob truncated");
    std::string name = blob.substr(pos, len);
    pos += len;
    auto rows = take<std::int32_t>(blob, pos);
    auto cols = take<std::int32_t>(blob, pos);
    Parameter& p = get(name);
    if (p.rows != rows || p.cols != cols) throw Error("corrupt_checkpoint", "shape mismatch for '" + name + "'");
    for (double& x : p.value) x = take<double>(blob, pos);
  }
}

void init_uniform(Parameter& p, Rng& rng, double scale) {
  if (scale < 0.0) scale = 1.0 / std::sqrt(static_cast<double>(std::max(p.cols, 1)));
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (double& x : p.value) x = dist(rng);
}

Var Tape::push(Vec value, int rows, int cols) {
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.grad.assign(value.size(), 0.0);
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Vec value) {
  int n = static_cast<int>(value.size());
  return push(std::move(value), n, 1);
}

Var Tape::constant(Vec value, int rows, int cols) { return push(std::move(value), rows, cols); }

Var Tape::param(Parameter& p) {
  auto it = param_ids_.find(&p);
  if (it != param_ids_.end()) return Var{it->second};
  Var v = push(p.value, p.rows, p.cols);
  node(v).param = &p;
  param_ids_[&p] = v.id;
  return v;
}

Var Tape::matvec(Var m, Var x) {
  const int r = rows(m), c = cols(m);
  if (static_cast<int>(value(x).size()) != c) throw Error("shape_mismatch", "matvec dimension mismatch");
  Vec out(static_cast<std::size_t>(r), 0.0);
  const Vec& mv = value(m);
  const Vec& xv = value(x);
  for (int i = 0; i < r; ++i) {
    const double* row = mv.data() + static_cast<std::ptrdiff_t>(i) * c;
    double acc = 0.0;
    for (int j = 0; j < c; ++j) acc += row[j] * xv[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = acc;
  }
  Var y = push(std::move(out), r, 1);
  node(y).back = [this, m, x, y, r, c] {
    const Vec& gy = nodes_[static_cast<std::size_t>(y.id)].grad;
    const Vec& mv = nodes_[static_cast<std::size_t>(m.id)].value;
    const Vec& xv = nodes_[static_cast<std::size_t>(x.id)].value;
    Vec& gm = nodes_[static_cast<std::size_t>(m.id)].grad;
    Vec& gx = nodes_[static_cast<std::size_t>(x.id)].grad;
    for (int i = 0; i < r; ++i) {
      const double g = gy[static_cast<std::size_t>(i)];
      if (g == 0.0) continue;
      const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(i) * c;
      for (int j = 0; j < c; ++j) {
        gm[static_cast<std::size_t>(off + j)] += g * xv[static_cast<std::size_t>(j)];
        gx[static_cast<std::size_t>(j)] += g * mv[static_cast<std::size_t>(off + j)];
      }
    }
  };
  return y;
}

Var Tape::matvec_t(Var m, Var x) {
  const int r = rows(m), c = cols(m);
  if (static_cast<int>(value(x).size()) != r) throw Error("shape_mismatch", "matvec_t dimension mismatch");
  Vec out(static_cast<std::size_t>(c), 0.0);
  const Vec& mv = value(m);
  const Vec& xv = value(x);
  for (int i = 0; i < r; ++i) {
    const double xi = xv[static_cast<std::size_t>(i)];
    const double* row = mv.data() + static_cast<std::ptrdiff_t>(i) * c;
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j)] += row[j] * xi;
  }
  Var y = push(std::move(out), c, 1);
  node(y).back = [this, m, x, y, r, c] {
    const Vec& gy = nodes_[static_cast<std::size_t>(y.id)].grad;
    const Vec& mv = nodes_[static_cast<std::size_t>(m.id)].value;
    const Vec& xv = nodes_[static_cast<std::size_t>(x.id)].value;
    Vec& gm = nodes_[static_cast<std::size_t>(m.id)].grad;
    Vec& gx = nodes_[static_cast<std::size_t>(x.id)].grad;
    for (int i = 0; i < r; ++i) {
      const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(i) * c;
      double acc = 0.0;
      const double xi = xv[static_cast<std::size_t>(i)];
      for (int j = 0; j < c; ++j) {
        const double g = gy[static_cast<std::size_t>(j)];
        gm[static_cast<std::size_t>(off + j)] += g * xi;
        acc += g * mv[static_cast<std::size_t>(off + j)];
      }
      gx[static_cast<std::size_t>(i)] += acc;
    }
  };
  return y;
}

Var Tape::linear(Var w, Var x, Var b) { return add(matvec(w, x), b); }

Var Tape::add(Var a, Var b) {
  const Vec& av = value(a);
  const Vec& bv = value(b);
  if (av.size() != bv.size()) throw Error("shape_mismatch", "add size mismatch");
  Vec out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  Var y = push(std::move(out), rows(a), cols(a));
  node(y).back = [this, a, b, y] {
    const Vec& gy = nodes_[static_cast<std::size_t>(y.id)].grad;
    Vec& ga = nodes_[static_cast<std::size_t>(a.id)].grad;
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    Vec& gb = nodes_[static_cast<std::size_t>(b.id)].grad;
    for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
  };
  return y;
}

Var Tape::sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var Tape::mul(Var a, Var b) {
  const Vec& av = value(a);
  const Vec& bv = value(b);
  if (av.size() != bv.size()) throw Error("shape_mismatch", "mul size mismatch");
  Vec out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  Var y = push(std::move(out), rows(a), cols(a));
  node(y).back = [this, a, b, y] {
    const Vec& gy = nodes_[static_cast<std::size_t>(y.id)].grad;
    const Vec& av = nodes_[static_cast<std::size_t>(a.id)].value;
    const Vec& bv = nodes_[static_cast<std::size_t>(b.id)].value;
    Vec& ga = nodes_[static_cast<std::size_t>(a.id)].grad;
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
    Vec& gb = nodes_[static_cast<std::size_t>(b.id)].grad;
    for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
  };
  return y;
}

Var Tape::scale(Var a, double s) {
  Vec out = value(a);
  for (double& x : out) x *= s;
  Var y = push(std::move(out), rows(a), cols(a));
  node(y).back = [this, a, y, s] {
    const Vec& gy = nodes_[static_cast<std::size_t>(y.id)].grad;
    Vec& ga = nodes_[static_cast<std::size_t>(a.id)].grad;
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += s * gy[i];
  };
  return y;
}

Var Tape::add_n(const std::vector<Var>& xs) {
  if (xs.empty()) throw Error("shape_mismatch", "add_n of nothing");
  Vec out(value(xs.front()).size(), 0.0);
  for (Var x : xs) {
    const Vec& xv = value(x);
    if (xv.size() != out.size()) throw Error("shape_mismatch", "add_n size mismatch");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += xv[i];
  }
  Var y = push(std::move(out), rows(xs.front()), cols(xs.front()));
  node(y).back = [this, xs, y] {
    const Vec& gy = nodes_[static_cast<std::size_t>(y.id)].grad;
    for (Var x : xs) {
      Vec& gx = nodes_[static_cast<std::size_t>(x.id)].grad;
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
  };
  return y;
}

Var Tape::mean_n(const std::vector<Var>& xs) {
  return scale(add_n(xs), 1.0 / static_cast<double>(xs.size()));
}

Var Tape::tanh(Var a) {
  Vec out = value(a);
  for (double& x : out) x = std::tanh(x);
  Var y = push(std::move(out), rows(a), cols(a));
  node(y).back = [this, a, y] {
    const Vec& gy = nodes_[static_cast<std::size_t>(y.id)].grad;
    const Vec& yv = nodes_[static_cast<std::size_t>(y.id)].value;
    Vec& ga = nodes_[static_cast<std::size_t>(a.id)].grad;
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * (1.0 - yv[i] * yv[i]);
  };
  return y;
}

Var Tape::sigmoid(Var a) {
  Vec out = value(a);
  for (double& x : out) x = sigmoid_scalar(x);
  Var y = push(std::move(out), rows(a), cols(a));
  node(y).back = [this, a, y] {
    const Vec& gy = nodes_[static_cast<std::size_t>(y.id)].grad;
    const Vec& yv = nodes_[static_cast<std::size_t>(y.id)].value;
    Vec& ga = nodes_[static_cast<std::size_t>(a.id)].grad;
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * yv[i] * (1.0 - yv[i]);
  };
  return y;
}

Var Tape::concat(const std::vector<Var>& xs) {
  Vec out;
  for (Var x : xs) {
    const Vec& xv = value(x);
    out.insert(out.end(), xv.begin(), xv.end());
  }
  const int n = static_cast<int>(out.size());
  Var y = push(std::move(out), n, 1);
  node(y).back = [this, xs, y] {
    const Vec& gy = nodes_[static_cast<std::size_t>(y.id)].grad;
    std::size_t off = 0;
    for (Var x : xs) {
      Vec& gx = nodes_[static_cast<std::size_t>(x.id)].grad;
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[off + i];
      off += gx.size();
    }
  };
  return y;
}

Var Tape::slice(Var a, int offset, int len) {
  const Vec& av = value(a);
  if (offset < 0 || len < 0 || static_cast<std::size_t>(offset + len) > av.size()) {
    throw Error("shape_mismatch", "slice out of range");
  }
  Vec out(av.begin() + offset, av.begin() + offset + len);
  Var y = push(std::move(out), len, 1);
  node(y).back = [this, a, y, offset] {
    const Vec& gy = nodes_[static_cast<std::size_t>(y.id)].grad;
    Vec& ga = nodes_[static_cast<std::size_t>(a.id)].grad;
    for (std::size_t i = 0; i < gy.size(); ++i) ga[static_cast<std::size_t>(offset) + i] += gy[i];
  };
  return y;
}

Var Tape::stack_rows(const std::vector<Var>& row_vars) {
  if (row_vars.empty()) throw Error("shape_mismatch", "stack of nothing");
  const int c = static_cast<int>(value(row_vars.front()).size());
  Vec out;
  out.reserve(row_vars.size() * static_cast<std::size_t>(c));
  for (Var r : row_vars) {
    const Vec& rv = value(r);
    if (static_cast<int>(rv.size()) != c) throw Error("shape_mismatch", "stack_rows width mismatch");
    out.insert(out.end(), rv.begin(), rv.end());
  }
  Var y = push(std::move(out), static_cast<int>(row_vars.size()), c);
  node(y).back = [this, row_vars, y, c] {
    const Vec& gy = nodes_[static_cast<std::size_t>(y.id)].grad;
    for (std::size_t r = 0; r < row_vars.size(); ++r) {
      Vec& gr = nodes_[static_cast<std::size_t>(row_vars[r].id)].grad;
      for (int j = 0; j < c; ++j) gr[static_cast<std::size_t>(j)] += gy[r * static_cast<std::size_t>(c) + static_cast<std::size_t>(j)];
    }
  };
  return y;
}

Var Tape::dot(Var a, Var b) {
  const Vec& av = value(a);
  const Vec& bv = value(b);
  if (av.size() != bv.size()) throw Error("shape_mismatch", "dot size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  Var y = push(Vec{acc}, 1, 1);
  node(y).back = [this, a, b, y] {
    const double g = nodes_[static_cast<std::size_t>(y.id)].grad[0];
    const Vec& av = nodes_[static_cast<std::size_t>(a.id)].value;
    const Vec& bv = nodes_[static_cast<std::size_t>(b.id)].value;
    Vec& ga = nodes_[static_cast<std::size_t>(a.id)].grad;
    for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g * bv[i];
    Vec& gb = nodes_[static_cast<std::size_t>(b.id)].grad;
    for (std::size_t i = 0; i < av.size(); ++i) gb[i] += g * av[i];
  };
  return y;
}

Var Tape::softmax(Var a) {
  Vec out = value(a);
  const double mx = *std::max_element(out.begin(), out.end());
  double sum = 0.0;
  for (double& x : out) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : out) x /= sum;
  Var y = push(std::move(out), rows(a), cols(a));
  node(y).back = [this, a, y] {
    const Vec& gy = nodes_[static_cast<std::size_t>(y.id)].grad;
    const Vec& yv = nodes_[static_cast<std::size_t>(y.id)].value;
    Vec& ga = nodes_[static_cast<std::size_t>(a.id)].grad;
    double inner = 0.0;
    for (std::size_t i = 0; i < gy.size(); ++i) inner += gy[i] * yv[i];
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += yv[i] * (gy[i] - inner);
  };
  return y;
}

Var Tape::log_softmax(Var a) {
  Vec out = value(a);
  const double mx = *std::max_element(out.begin(), out.end());
  double sum = 0.0;
  for (double x : out) sum += std::exp(x - mx);
  const double lse = mx + std::log(sum);
  for (double& x : out) x -= lse;
  Var y = push(std::move(out), rows(a), cols(a));
  node(y).back = [this, a, y] {
    const Vec& gy = nodes_[static_cast<std::size_t>(y.id)].grad;
    const Vec& yv = nodes_[static_cast<std::size_t>(y.id)].value;
    Vec& ga = nodes_[static_cast<std::size_t>(a.id)].grad;
    double total = 0.0;
    for (double g : gy) total += g;
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] - std::exp(yv[i]) * total;
  };
  return y;
}

Var Tape::pick(Var a, int index) { return slice(a, index, 1); }

Var Tape::lstm_cell(Var gates, Var c) {
  const Vec& gv = value(gates);
  const Vec& cv = value(c);
  const std::size_t h = cv.size();
  if (gv.size() != 4 * h) throw Error("shape_mismatch", "lstm gate size mismatch");
  // cache: i, f, g, o activations and tanh(c')
  Vec out(2 * h);
  auto cache = std::make_shared<Vec>(5 * h);
  for (std::size_t k = 0; k < h; ++k) {
    double i = sigmoid_scalar(gv[k]);
    double f = sigmoid_scalar(gv[h + k]);
    double g = std::tanh(gv[2 * h + k]);
    double o = sigmoid_scalar(gv[3 * h + k]);
    double cn = f * cv[k] + i * g;
    double tc = std::tanh(cn);
    out[k] = o * tc;
    out[h + k] = cn;
    (*cache)[k] = i;
    (*cache)[h + k] = f;
    (*cache)[2 * h + k] = g;
    (*cache)[3 * h + k] = o;
    (*cache)[4 * h + k] = tc;
  }
  Var y = push(std::move(out), static_cast<int>(2 * h), 1);
  node(y).back = [this, gates, c, y, h, cache] {
    const Vec& gy = nodes_[static_cast<std::size_t>(y.id)].grad;
    const Vec& cv = nodes_[static_cast<std::size_t>(c.id)].value;
    Vec& gg = nodes_[static_cast<std::size_t>(gates.id)].grad;
    Vec& gc = nodes_[static_cast<std::size_t>(c.id)].grad;
    const Vec& z = *cache;
    for (std::size_t k = 0; k < h; ++k) {
      const double i = z[k], f = z[h + k], g = z[2 * h + k], o = z[3 * h + k], tc = z[4 * h + k];
      const double dh = gy[k];
      const double dc = gy[h + k] + dh * o * (1.0 - tc * tc);
      gg[k] += dc * g * i * (1.0 - i);
      gg[h + k] += dc * cv[k] * f * (1.0 - f);
      gg[2 * h + k] += dc * i * (1.0 - g * g);
      gg[3 * h + k] += dh * tc * o * (1.0 - o);
      gc[k] += dc * f;
    }
  };
  return y;
}

Var Tape::group_stats(Var v, int groups, double eps) {
  const Vec& vv = value(v);
  if (groups <= 0 || vv.size() % static_cast<std::size_t>(groups) != 0) {
    throw Error("shape_mismatch", "group_stats groups must divide the input size");
  }
  const std::size_t gs = vv.size() / static_cast<std::size_t>(groups);
  const auto G = static_cast<std::size_t>(groups);
  Vec out(2 * G);
  for (std::size_t g = 0; g < G; ++g) {
    double mean = 0.0;
    for (std::size_t i = 0; i < gs; ++i) mean += vv[g * gs + i];
    mean /= static_cast<double>(gs);
    double var = 0.0;
    for (std::size_t i = 0; i < gs; ++i) var += (vv[g * gs + i] - mean) * (vv[g * gs + i] - mean);
    var /= static_cast<double>(gs);
    out[g] = mean;
    out[G + g] = std::sqrt(var + eps);
  }
  Var y = push(std::move(out), static_cast<int>(2 * G), 1);
  node(y).back = [this, v, y, G, gs] {
    const Vec& gy = nodes_[static_cast<std::size_t>(y.id)].grad;
    const Vec& yv = nodes_[static_cast<std::size_t>(y.id)].value;
    const Vec& vv = nodes_[static_cast<std::size_t>(v.id)].value;
    Vec& gv = nodes_[static_cast<std::size_t>(v.id)].grad;
    const double n = static_cast<double>(gs);
    for (std::size_t g = 0; g < G; ++g) {
      const double mean = yv[g], sd = yv[G + g];
      for (std::size_t i = 0; i < gs; ++i) {
        // d mean / dv_i = 1/n ; d sd / dv_i = (v_i - mean) / (n * sd)
        gv[g * gs + i] += gy[g] / n + gy[G + g] * (vv[g * gs + i] - mean) / (n * sd);
      }
    }
  };
  return y;
}

void Tape::backward(Var root) {
  if (value(root).size() != 1) throw Error("shape_mismatch", "backward root must be a scalar");
  node(root).grad[0] += 1.0;
  for (int i = root.id; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (n.back) n.back();
  }
  for (auto& n : nodes_) {
    if (n.param != nullptr) {
      for (std::size_t k = 0; k < n.grad.size(); ++k) n.param->grad[k] += n.grad[k];
    }
  }
}

Linear Linear::create(ParameterSet& ps, const std::string& name, int in, int out, Rng& rng) {
  Linear l;
  l.weight = &ps.add(name + ".weight", out, in);
  l.bias = &ps.add(name + ".bias", out, 1);
  init_uniform(*l.weight, rng);
  return l;
}

Lstm Lstm::create(ParameterSet& ps, const std::string& name, int input, int hidden, Rng& rng) {
  Lstm l;
  l.input = input;
  l.hidden = hidden;
  l.weight = &ps.add(name + ".weight", 4 * hidden, input + hidden);
  l.bias = &ps.add(name + ".bias", 4 * hidden, 1);
  init_uniform(*l.weight, rng, 1.0 / std::sqrt(static_cast<double>(hidden)));
  for (int k = hidden; k < 2 * hidden; ++k) l.bias->value[static_cast<std::size_t>(k)] = 1.0;
  return l;
}

std::pair<Var, Var> Lstm::step(Tape& t, Var x, Var h, Var c) const {
  Var gates = t.linear(t.param(*weight), t.concat({x, h}), t.param(*bias));
  Var hc = t.lstm_cell(gates, c);
  return {t.slice(hc, 0, hidden), t.slice(hc, hidden, hidden)};
}

std::vector<Var> Lstm::run(Tape& t, const std::vector<Var>& xs, bool reverse) const {
  std::vector<Var> out(xs.size());
  Var h = t.constant(Vec(static_cast<std::size_t>(hidden), 0.0));
  Var c = t.constant(Vec(static_cast<std::size_t>(hidden), 0.0));
  for (std::size_t s = 0; s < xs.size(); ++s) {
    std::size_t idx = reverse ? xs.size() - 1 - s : s;
    std::tie(h, c) = step(t, xs[idx], h, c);
    out[idx] = h;
  }
  return out;
}

Adam::Adam(ParameterSet& params, double lr, double beta1, double beta2, double eps)
    : params_(&params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto* p : params.all()) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

double Adam::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (const auto* p : params_->all()) {
    for (double g : p->grad) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto* p : params_->all()) {
      for (double& g : p->grad) g *= s;
    }
  }
  return norm;
}

void Adam::step() {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  auto params = params_->all();
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    Vec& m = m_[k];
    Vec& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      p.value[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
}

}  // namespace envedit::nn
