#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "searnn/autodiff.hpp"
#include "searnn/harness.hpp"
#include "searnn/tensor.hpp"

using namespace searnn;

namespace {

void fill_uniform(Tensor& t, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (int i = 0; i < t.numel(); ++i) t[i] = dist(rng);
}

// Max relative error between analytic and central-difference gradients of
// sum(w * op(p0, p1, ...)) with respect to every input coordinate.
double primitive_max_rel_err(
    const std::function<Tape::NodeId(Tape&, const std::vector<Tape::NodeId>&)>& op,
    const std::vector<std::vector<int>>& shapes, std::uint64_t seed) {
  ParameterStore store;
  std::mt19937_64 rng(seed);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    names.push_back("p" + std::to_string(i));
    fill_uniform(store.create(names.back(), shapes[i]), rng);
  }

  Tensor weight;  // fixed random projection to a scalar, sized on first build
  auto build = [&](Tape& tape) {
    std::vector<Tape::NodeId> params;
    for (const auto& n : names) params.push_back(tape.param(store, n));
    Tape::NodeId y = op(tape, params);
    if (weight.empty()) {
      weight = Tensor(tape.value(y).shape());
      std::mt19937_64 wrng(seed ^ 0x5eedULL);
      fill_uniform(weight, wrng, -1.0, 1.0);
    }
    return tape.sum(tape.mul(tape.constant(weight), y));
  };

  store.zero_grads();
  {
    Tape tape;
    tape.backward(build(tape));
  }
  auto fd = finite_diff_param_grads(store, [&]() {
    Tape tape;
    return tape.value(build(tape))[0];
  });

  double worst = 0.0;
  for (auto& [name, g] : fd) {
    const Tensor& ga = store.grad(name);
    for (int i = 0; i < g.numel(); ++i)
      worst = std::max(worst, relative_error(ga[i], g[i]));
  }
  return worst;
}

}  // namespace

TEST(Tensor, ShapeChecks) {
  EXPECT_THROW(Tensor({0}), DimensionError);
  EXPECT_THROW(Tensor({2, 3}, {1.0}), DimensionError);
  Tensor t({2, 3});
  EXPECT_EQ(t.numel(), 6);
  EXPECT_EQ(t.dim(1), 3);
}

TEST(Matmul, IdentityInput) {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor out;
  kernels::matmul(eye, a, out);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(out[i], a[i]);
}

TEST(Matmul, HandComputedProduct) {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 1}, {5, 6});
  Tensor out;
  kernels::matmul(a, b, out);
  EXPECT_DOUBLE_EQ(out[0], 17.0);
  EXPECT_DOUBLE_EQ(out[1], 39.0);
}

TEST(Matmul, ZeroAnnihilates) {
  Tensor z({2, 3});
  Tensor b({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor out;
  kernels::matmul(z, b, out);
  for (int i = 0; i < out.numel(); ++i) EXPECT_DOUBLE_EQ(out[i], 0.0);
}

TEST(Matmul, ShapeMismatchThrows) {
  Tensor a({2, 3});
  Tensor b({2, 2});
  Tensor out;
  EXPECT_THROW(kernels::matmul(a, b, out), DimensionError);
}

TEST(Softmax, SymmetricInput) {
  Tensor s({2}, {0.0, 0.0});
  Tensor out;
  kernels::softmax(s, out);
  EXPECT_DOUBLE_EQ(out[0], 0.5);
  EXPECT_DOUBLE_EQ(out[1], 0.5);
}

TEST(Softmax, HandComputedValues) {
  Tensor s({3}, {1.0, 2.0, 3.0});
  Tensor out;
  kernels::softmax(s, out);
  EXPECT_NEAR(out[0], 0.09003057317038046, 1e-12);
  EXPECT_NEAR(out[1], 0.24472847105479767, 1e-12);
  EXPECT_NEAR(out[2], 0.66524095577482183, 1e-12);
}

TEST(Softmax, LargeInputStaysFinite) {
  Tensor s({2}, {1000.0, 0.0});
  Tensor out;
  kernels::softmax(s, out);
  EXPECT_TRUE(out.all_finite());
  EXPECT_NEAR(out[0], 1.0, 1e-12);
  EXPECT_NEAR(out[1], 0.0, 1e-12);
}

TEST(Softmax, SumsToOneForRandomInputs) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor s({1 + trial % 40});
    fill_uniform(s, rng, -50.0, 50.0);
    Tensor out;
    kernels::softmax(s, out);
    double total = 0.0;
    for (int i = 0; i < out.numel(); ++i) {
      EXPECT_GT(out[i], 0.0);
      total += out[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Backward, QuadraticGradient) {
  ParameterStore store;
  Tensor& x = store.create("x", {4});
  std::mt19937_64 rng(3);
  fill_uniform(x, rng);
  Tape tape;
  Tape::NodeId xi = tape.param(store, "x");
  tape.backward(tape.sum(tape.mul(xi, xi)));
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(store.grad("x")[i], 2.0 * x[i], 1e-12);
}

TEST(Backward, LogSoftmaxPickGradient) {
  ParameterStore store;
  Tensor& s = store.create("s", {5});
  std::mt19937_64 rng(11);
  fill_uniform(s, rng);
  const int j = 2;
  Tape tape;
  Tape::NodeId si = tape.param(store, "s");
  tape.backward(tape.pick(tape.log_softmax(si), j));
  Tensor probs;
  kernels::softmax(s, probs);
  for (int i = 0; i < 5; ++i) {
    const double expected = (i == j ? 1.0 : 0.0) - probs[i];
    EXPECT_NEAR(store.grad("s")[i], expected, 1e-12);
  }
}

TEST(Backward, UnusedParameterHasExactlyZeroGradient) {
  ParameterStore store;
  std::mt19937_64 rng(5);
  fill_uniform(store.create("used", {3}), rng);
  fill_uniform(store.create("unused", {3}), rng);
  store.zero_grads();
  Tape tape;
  Tape::NodeId u = tape.param(store, "used");
  tape.param(store, "unused");
  tape.backward(tape.sum(tape.mul(u, u)));
  for (int i = 0; i < 3; ++i) EXPECT_EQ(store.grad("unused")[i], 0.0);
}

TEST(Backward, NonScalarRootThrows) {
  Tape tape;
  Tape::NodeId v = tape.constant(Tensor({3}, {1, 2, 3}));
  EXPECT_THROW(tape.backward(v), ContractError);
}

TEST(Backward, RejectsNonFiniteLeaves) {
  Tape tape;
  EXPECT_THROW(tape.constant(Tensor({2}, {1.0, std::nan("")})), ContractError);
}

TEST(Backward, DeterministicGradients) {
  ParameterStore store;
  std::mt19937_64 rng(13);
  fill_uniform(store.create("w", {4, 4}), rng);
  fill_uniform(store.create("x", {4}), rng);
  Tape tape;
  Tape::NodeId w = tape.param(store, "w");
  Tape::NodeId x = tape.param(store, "x");
  Tape::NodeId root = tape.sum(tape.tanh(tape.matmul(w, x)));

  store.zero_grads();
  tape.backward(root);
  const Tensor g1w = store.grad("w");
  const Tensor g1x = store.grad("x");
  store.zero_grads();
  tape.backward(root);
  for (int i = 0; i < g1w.numel(); ++i) EXPECT_EQ(store.grad("w")[i], g1w[i]);
  for (int i = 0; i < g1x.numel(); ++i) EXPECT_EQ(store.grad("x")[i], g1x[i]);
}

TEST(PrimitiveGradients, MatchFiniteDifferences) {
  struct Case {
    const char* name;
    std::function<Tape::NodeId(Tape&, const std::vector<Tape::NodeId>&)> op;
    std::vector<std::vector<int>> shapes;
  };
  const std::vector<Case> cases = {
      {"matmul_2d", [](Tape& t, const auto& p) { return t.matmul(p[0], p[1]); },
       {{3, 4}, {4, 2}}},
      {"matmul_vec", [](Tape& t, const auto& p) { return t.matmul(p[0], p[1]); },
       {{3, 4}, {4}}},
      {"add", [](Tape& t, const auto& p) { return t.add(p[0], p[1]); }, {{5}, {5}}},
      {"add_scalar", [](Tape& t, const auto& p) { return t.add(p[0], p[1]); }, {{5}, {1}}},
      {"mul", [](Tape& t, const auto& p) { return t.mul(p[0], p[1]); }, {{5}, {5}}},
      {"mul_scalar", [](Tape& t, const auto& p) { return t.mul(p[1], p[0]); }, {{1}, {5}}},
      {"sigmoid", [](Tape& t, const auto& p) { return t.sigmoid(p[0]); }, {{6}}},
      {"tanh", [](Tape& t, const auto& p) { return t.tanh(p[0]); }, {{6}}},
      {"softmax", [](Tape& t, const auto& p) { return t.softmax(p[0]); }, {{6}}},
      {"log_softmax", [](Tape& t, const auto& p) { return t.log_softmax(p[0]); }, {{6}}},
      {"embed", [](Tape& t, const auto& p) { return t.embed(p[0], 2); }, {{4, 3}}},
      {"gather", [](Tape& t, const auto& p) { return t.gather(p[0], {4, 1, 1}); }, {{5}}},
      {"concat",
       [](Tape& t, const auto& p) { return t.concat({p[0], p[1], p[0]}); }, {{3}, {2}}},
      {"sum", [](Tape& t, const auto& p) { return t.sum(p[0]); }, {{7}}},
      {"max", [](Tape& t, const auto& p) { return t.max(p[0]); }, {{7}}},
      {"scale_add", [](Tape& t, const auto& p) { return t.scale_add(p[0], -1.7, 0.3); }, {{6}}},
  };
  std::uint64_t seed = 1000;
  for (const Case& c : cases) {
    const double err = primitive_max_rel_err(c.op, c.shapes, seed++);
    EXPECT_LE(err, 1e-6) << "primitive " << c.name;
  }
}

TEST(ParameterStore, DuplicateNameThrows) {
  ParameterStore store;
  store.create("a", {2});
  EXPECT_THROW(store.create("a", {2}), ContractError);
}

TEST(ParameterStore, ChecksumTracksValues) {
  ParameterStore store;
  store.create("a", {3});
  const std::uint64_t before = store.checksum();
  store.value("a")[1] = 0.25;
  EXPECT_NE(store.checksum(), before);
}

TEST(ParameterStore, CheckpointRoundTripIsBitExact) {
  ParameterStore store;
  std::mt19937_64 rng(99);
  fill_uniform(store.create("embed", {5, 3}), rng);
  fill_uniform(store.create("proj.w", {4, 7}), rng);
  store.value("proj.w")[0] = 1e-300;  // denormal-adjacent payload survives
  const std::string path = ::testing::TempDir() + "ckpt_roundtrip.bin";
  store.save(path);
  const ParameterStore loaded = ParameterStore::load(path);
  EXPECT_EQ(loaded.checksum(), store.checksum());
  EXPECT_EQ(loaded.names(), store.names());
}

TEST(ParameterStore, LoadRejectsGarbage) {
  const std::string path = ::testing::TempDir() + "ckpt_garbage.bin";
  std::ofstream(path) << "not a checkpoint";
  EXPECT_THROW(ParameterStore::load(path), ParseError);
}
