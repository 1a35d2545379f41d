#include <gtest/gtest.h>

#include <cmath>

#include "envedit/nn.hpp"
#include "gradcheck.hpp"

namespace envedit::nn {
namespace {

using testing::grad_check;

TEST(Tape, ForwardValues) {
  Tape t;
  Var m = t.constant({1, 2, 3, 4, 5, 6}, 2, 3);
  Var x = t.constant({1, 0, -1});
  EXPECT_EQ(t.value(t.matvec(m, x)), (Vec{-2, -2}));
  EXPECT_EQ(t.value(t.matvec_t(m, t.constant({1, 1}))), (Vec{5, 7, 9}));
  auto sm = t.value(t.softmax(t.constant({0.0, std::log(3.0)})));
  EXPECT_NEAR(sm[0], 0.25, 1e-15);
  EXPECT_NEAR(sm[1], 0.75, 1e-15);
  auto ls = t.value(t.log_softmax(t.constant({1.0, 1.0, 1.0, 1.0})));
  for (double v : ls) EXPECT_NEAR(v, -std::log(4.0), 1e-15);
  EXPECT_EQ(t.value(t.concat({x, t.constant({9})})), (Vec{1, 0, -1, 9}));
  EXPECT_EQ(t.value(t.slice(m, 2, 3)), (Vec{3, 4, 5}));
  EXPECT_EQ(t.scalar(t.dot(x, x)), 2.0);
  auto st = t.value(t.group_stats(t.constant({1, 3, 2, 2}), 2, 0.0));
  EXPECT_EQ(st, (Vec{2, 2, 1, 0}));
}

TEST(Tape, AllOpsGradientsMatchFiniteDifferences) {
  ParameterSet ps;
  Rng rng(11);
  auto& w = ps.add("w", 4, 6);
  auto& b = ps.add("b", 4, 1);
  auto& x = ps.add("x", 6, 1);
  auto& m = ps.add("m", 3, 4);
  auto& g = ps.add("gates", 8, 1);
  auto& c = ps.add("c", 2, 1);
  for (auto* p : ps.all()) init_uniform(*p, rng, 0.9);

  auto loss = [&](Tape& t) {
    Var h = t.tanh(t.linear(t.param(w), t.param(x), t.param(b)));
    Var s = t.sigmoid(t.matvec(t.param(m), h));
    Var back = t.matvec_t(t.param(m), s);
    Var mixed = t.sub(t.mul(back, h), t.scale(h, 0.3));
    Var cell = t.lstm_cell(t.param(g), t.param(c));
    Var joined = t.concat({mixed, cell, t.slice(t.param(x), 1, 4)});
    Var stacked = t.stack_rows({h, back});
    Var attn = t.softmax(t.matvec(stacked, t.param(b)));
    Var stats = t.group_stats(joined, 3, 1e-8);
    Var lp = t.log_softmax(stats);
    Var terms = t.add_n({t.pick(lp, 2), t.dot(attn, attn), t.mean_n({t.pick(joined, 0), t.pick(joined, 5)})});
    return terms;
  };
  auto r = grad_check(ps, loss, 200, 3);
  EXPECT_EQ(r.failures, 0) << r.worst_name << " rel err " << r.worst;
  EXPECT_GE(r.checked, 50);
}

TEST(Tape, ParameterUsedTwiceAccumulates) {
  ParameterSet ps;
  auto& p = ps.add("p", 2, 1);
  p.value = {3.0, -1.0};
  ps.zero_grad();
  Tape t;
  Var a = t.param(p);
  Var b = t.param(p);
  EXPECT_EQ(a.id, b.id);
  t.backward(t.dot(a, b));
  EXPECT_EQ(p.grad, (Vec{6.0, -2.0}));
}

TEST(Lstm, SequenceGradients) {
  ParameterSet ps;
  Rng rng(5);
  auto lstm = Lstm::create(ps, "lstm", 3, 4, rng);
  auto& xs = ps.add("xs", 5, 3);
  init_uniform(xs, rng, 1.0);
  auto loss = [&](Tape& t) {
    std::vector<Var> in;
    for (int i = 0; i < 5; ++i) in.push_back(t.slice(t.param(xs), 3 * i, 3));
    auto fwd = lstm.run(t, in, false);
    auto bwd = lstm.run(t, in, true);
    return t.add(t.dot(fwd.back(), fwd.front()), t.dot(bwd.front(), t.constant({1, -1, 2, 0.5})));
  };
  auto r = grad_check(ps, loss, 100, 9);
  EXPECT_EQ(r.failures, 0) << r.worst_name << " rel err " << r.worst;
}

TEST(ParameterSet, SerializeRoundTrip) {
  ParameterSet ps;
  Rng rng(1);
  init_uniform(ps.add("a", 2, 3), rng);
  init_uniform(ps.add("b", 4, 1), rng);
  std::string blob = ps.serialize();
  ParameterSet other;
  other.add("a", 2, 3);
  other.add("b", 4, 1);
  other.deserialize(blob);
  EXPECT_EQ(other.get("a").value, ps.get("a").value);
  EXPECT_EQ(other.get("b").value, ps.get("b").value);
  ParameterSet wrong;
  wrong.add("a", 3, 2);
  wrong.add("b", 4, 1);
  EXPECT_THROW(wrong.deserialize(blob), Error);
  EXPECT_THROW(other.deserialize(blob.substr(0, blob.size() - 3)), Error);
  EXPECT_THROW(ps.add("a", 1, 1), Error);
  ParameterSet copy = ps;
  copy.get("a").value[0] += 1.0;
  EXPECT_NE(copy.get("a").value[0], ps.get("a").value[0]);
}

TEST(Adam, MinimizesQuadratic) {
  ParameterSet ps;
  auto& p = ps.add("p", 3, 1);
  p.value = {5.0, -4.0, 2.0};
  Adam opt(ps, 0.1);
  for (int i = 0; i < 500; ++i) {
    ps.zero_grad();
    Tape t;
    Var d = t.sub(t.param(p), t.constant({1.0, 2.0, 3.0}));
    t.backward(t.dot(d, d));
    opt.clip_grad_norm(5.0);
    opt.step();
  }
  EXPECT_NEAR(p.value[0], 1.0, 1e-2);
  EXPECT_NEAR(p.value[1], 2.0, 1e-2);
  EXPECT_NEAR(p.value[2], 3.0, 1e-2);
}

TEST(Adam, ClipScalesToMaxNorm) {
  ParameterSet ps;
  auto& p = ps.add("p", 2, 1);
  p.grad = {3.0, 4.0};
  Adam opt(ps, 0.1);
  EXPECT_DOUBLE_EQ(opt.clip_grad_norm(1.0), 5.0);
  EXPECT_NEAR(p.grad[0], 0.6, 1e-12);
  EXPECT_NEAR(p.grad[1], 0.8, 1e-12);
}

}  // namespace
}  // namespace envedit::nn
