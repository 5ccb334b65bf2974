#include "doctest.h"

#include "cpn/tape.hpp"
#include "oracles.hpp"

using namespace cpn;

namespace {

struct Graph {
  TensorD w, b, w2;
  TensorD r;

  // conv -> leaky -> upsample -> concat(with upsampled input) -> correlate -> warp -> scale -> sigmoid
  TensorD run(Tape<double>& tape, const TensorD& x, VarId* out_x = nullptr, VarId* out = nullptr, VarId* pw = nullptr) const {
    const VarId vx = tape.variable(x);
    const VarId vw = tape.parameter(w), vb = tape.parameter(b), vw2 = tape.parameter(w2);
    const VarId h = tape.leaky_relu(tape.conv2d(vx, vw, vb, 1, 1), 0.1);
    const VarId up = tape.upsample_bilinear(h, 2);
    const VarId upx = tape.upsample_bilinear(vx, 2);
    const VarId parts[] = {up, upx};
    const VarId cat = tape.concat(parts);
    const VarId corr = tape.correlate(cat, cat, 0, 1);
    const VarId flow = tape.scale(tape.conv2d(corr, vw2, VarId{}, 1, 1), 0.3);
    const VarId warped = tape.warp(upx, flow);
    const VarId err = tape.brightness_error(warped, upx);
    const VarId y = tape.sigmoid(err);
    if (out_x) *out_x = vx;
    if (out) *out = y;
    if (pw) *pw = vw;
    return tape.value(y);
  }
};

}  // namespace

TEST_CASE("tape gradients of a composite graph match finite differences") {
  std::mt19937_64 rng(21);
  Graph g;
  g.w = oracle::random_tensor(Shape{2, 2, 3, 3}, rng);
  g.b = oracle::random_tensor(Shape{2}, rng);
  g.w2 = oracle::random_tensor(Shape{2, 9, 3, 3}, rng, -0.3, 0.3);
  const TensorD x = oracle::random_tensor(Shape{1, 2, 3, 4}, rng);

  Tape<double> tape;
  VarId vx, y, vw;
  const TensorD out = g.run(tape, x, &vx, &y, &vw);
  g.r = oracle::random_tensor(out.shape(), rng);
  tape.backward(y, g.r);

  auto loss_x = [&](const TensorD& probe) {
    Tape<double> t;
    return oracle::project(g.run(t, probe), g.r);
  };
  const auto nx = oracle::numeric_gradient(loss_x, x);
  const auto& gx = tape.grad(vx);
  CHECK(oracle::max_relative_error(std::vector<double>(gx.data().begin(), gx.data().end()), nx) < 1e-4);

  auto loss_w = [&](const TensorD& probe) {
    Graph h = g;
    h.w = probe;
    Tape<double> t;
    return oracle::project(h.run(t, x), g.r);
  };
  const auto nw = oracle::numeric_gradient(loss_w, g.w);
  const auto& gw = tape.grad(vw);
  CHECK(oracle::max_relative_error(std::vector<double>(gw.data().begin(), gw.data().end()), nw) < 1e-4);
}

TEST_CASE("backward twice gives the same gradients and replay recomputes values") {
  std::mt19937_64 rng(22);
  Graph g;
  g.w = oracle::random_tensor(Shape{2, 2, 3, 3}, rng);
  g.b = oracle::random_tensor(Shape{2}, rng);
  g.w2 = oracle::random_tensor(Shape{2, 9, 3, 3}, rng, -0.3, 0.3);
  const TensorD x = oracle::random_tensor(Shape{1, 2, 3, 4}, rng);
  Tape<double> tape;
  VarId vx, y;
  const TensorD out = g.run(tape, x, &vx, &y);
  const TensorD seed(out.shape(), 1.0);
  tape.backward(y, seed);
  const TensorD first = tape.grad(vx);
  tape.backward(y, seed);
  CHECK(tape.grad(vx).data().size() == first.size());
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(tape.grad(vx)[i] == first[i]);
  tape.replay();
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(tape.value(y)[i] == out[i]);
  CHECK(tape.records().size() == 11);
}

TEST_CASE("constants receive no gradient") {
  Tape<double> tape;
  const VarId c = tape.constant(TensorD(Shape{1, 1, 2, 2}, 1.0));
  const VarId v = tape.variable(TensorD(Shape{1, 1, 2, 2}, 2.0));
  const VarId parts[] = {c, v};
  const VarId y = tape.concat(parts);
  tape.backward(y, TensorD(Shape{1, 2, 2, 2}, 1.0));
  CHECK(tape.grad(c).empty());
  CHECK_FALSE(tape.grad(v).empty());
  CHECK_FALSE(tape.requires_grad(c));
}
