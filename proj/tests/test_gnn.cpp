#include <gtest/gtest.h>

#include <algorithm>
#include <memory>
#include <numeric>
#include <random>

#include "meshlearn/gnn.hpp"

using namespace meshlearn;

namespace {

GNConfig config_2d() {
  GNConfig c;
  c.dim = 2;
  return c;
}

std::shared_ptr<const Mesh> small_2d() { return std::make_shared<const Mesh>(build_regular_tri_2d({}, 0.5)); }

Environment small_env() { return build_heat2d_environment(small_2d(), {{{{0.0, 0.0}, 0.1}}, {{3.0, 10.0, {0.4, 0.4}}}}); }

// Every parameter nonzero, biases included, so no path is trivially dead.
GNParams dense_params(const GNConfig& c, std::uint64_t seed) {
  GNParams p = init_params(c, seed);
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> d(-0.3, 0.3);
  p.for_each([&](const std::string& name, Matrix& m) {
    if (name.ends_with(".bias"))
      for (Index j = 0; j < m.cols(); ++j) m(0, j) = d(gen);
  });
  return p;
}

}  // namespace

TEST(InitParams, DeterministicShapesAndRanges) {
  const GNConfig c = config_2d();
  const GNParams a = init_params(c, 1), b = init_params(c, 1), other = init_params(c, 2);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == other);
  EXPECT_EQ(a.decoder.layers.back().weight.cols(), 1);
  EXPECT_EQ(a.encoder_node.layers.front().weight.rows(), 6);
  EXPECT_EQ(a.encoder_edge.layers.front().weight.rows(), 3);
  EXPECT_EQ(a.processor.size(), 1u);
  EXPECT_EQ(a.processor[0].edge.layers.front().weight.rows(), 48);
  EXPECT_EQ(a.processor[0].node.layers.front().weight.rows(), 32);
  // 5 MLPs of 4 layers, weight + bias each
  EXPECT_EQ(a.tensor_count(), 40u);
  a.for_each([](const std::string& name, const Matrix& m) {
    if (name.ends_with(".bias")) {
      EXPECT_EQ(m.cwiseAbs().maxCoeff(), 0.0) << name;
    } else {
      EXPECT_LE(m.cwiseAbs().maxCoeff(), std::sqrt(1.0 / static_cast<double>(m.rows()))) << name;
      EXPECT_GT(m.cwiseAbs().maxCoeff(), 0.0) << name;
    }
  });
}

TEST(InitParams, ProcessorRoundsAndAbsolutePosition) {
  GNConfig c = config_2d();
  c.processor_rounds = 3;
  c.absolute_position = true;
  const GNParams p = init_params(c, 0);
  EXPECT_EQ(p.processor.size(), 3u);
  EXPECT_EQ(p.encoder_node.layers.front().weight.rows(), 8);
}

TEST(Forward, ZeroNetworkGivesZeroUpdate) {
  const Environment env = small_env();
  const GNParams p = zero_params(config_2d());
  const Field u = Field::LinSpaced(env.node_count(), -1, 1);
  EXPECT_EQ(forward(p, make_graph_input(env, u, false)).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(step(p, env, u), u);
}

TEST(Forward, GraphInputLayout) {
  const Environment env = small_env();
  const GraphInput g = make_graph_input(env, env.u0, false);
  EXPECT_EQ(g.node_features.cols(), 6);
  EXPECT_EQ(g.edge_features.cols(), 3);
  EXPECT_EQ(g.src.size(), 2 * env.mesh->edges().size());
  for (Index i = 0; i < g.node_count(); ++i) {
    EXPECT_EQ(g.node_features(i, 0), env.u0[i]);
    EXPECT_EQ(g.node_features.row(i).tail(5).sum(), 1.0);
    EXPECT_EQ(g.node_features(i, 1 + static_cast<int>(env.node_types[static_cast<std::size_t>(i)])), 1.0);
  }
  // reverse edges carry negated displacement
  for (std::size_t k = 0; k < g.src.size(); k += 2) {
    EXPECT_EQ(g.src[k], g.dst[k + 1]);
    EXPECT_EQ(g.edge_features(static_cast<Index>(k), 0), -g.edge_features(static_cast<Index>(k + 1), 0));
    EXPECT_GT(g.edge_features(static_cast<Index>(k), 2), 0.0);
  }
}

TEST(Forward, PermutationEquivariance) {
  GNConfig c = config_2d();
  c.processor_rounds = 2;
  const GNParams p = dense_params(c, 9);
  const Environment env = small_env();
  std::mt19937_64 gen(4);
  Field u(env.node_count());
  for (Index i = 0; i < u.size(); ++i) u[i] = std::uniform_real_distribution<double>(-1, 1)(gen);
  const GraphInput g = make_graph_input(env, u, false);

  std::vector<Index> perm(static_cast<std::size_t>(g.node_count()));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), gen);  // old node i becomes perm[i]
  GraphInput h = g;
  for (Index i = 0; i < g.node_count(); ++i) h.node_features.row(perm[static_cast<std::size_t>(i)]) = g.node_features.row(i);
  for (std::size_t k = 0; k < g.src.size(); ++k) {
    h.src[k] = perm[static_cast<std::size_t>(g.src[k])];
    h.dst[k] = perm[static_cast<std::size_t>(g.dst[k])];
  }
  const Field out_g = forward(p, g), out_h = forward(p, h);
  for (Index i = 0; i < g.node_count(); ++i) EXPECT_EQ(out_h[perm[static_cast<std::size_t>(i)]], out_g[i]);
}

TEST(Forward, IsolatedIdenticalNodesAgree) {
  const GNParams p = dense_params(config_2d(), 3);
  GraphInput g;
  g.node_features = Matrix::Zero(2, 6);
  g.node_features.row(0) << 0.7, 1, 0, 0, 0, 0;
  g.node_features.row(1) = g.node_features.row(0);
  g.edge_features.resize(0, 3);
  const Field out = forward(p, g);
  EXPECT_EQ(out[0], out[1]);
}

TEST(Forward, MeanAggregationIsValenceInvariant) {
  // star graph: identical leaves all sending to node 0 with identical edge
  // features; the centre only sees the mean, so its output ignores valence
  const GNParams p = dense_params(config_2d(), 5);
  auto centre_output = [&](int leaves) {
    GraphInput g;
    g.node_features = Matrix::Zero(leaves + 1, 6);
    g.node_features.row(0) << 0.2, 1, 0, 0, 0, 0;
    for (int k = 1; k <= leaves; ++k) g.node_features.row(k) << -0.5, 0, 1, 0, 0, 0;
    g.edge_features.resize(leaves, 3);
    for (int k = 1; k <= leaves; ++k) {
      g.src.push_back(k);
      g.dst.push_back(0);
      g.edge_features.row(k - 1) << 0.3, -0.4, 0.5;
    }
    return forward(p, g)[0];
  };
  const double three = centre_output(3);
  EXPECT_NEAR(centre_output(1), three, 1e-12);
  EXPECT_NEAR(centre_output(7), three, 1e-12);
}

TEST(Forward, RejectsMalformedInput) {
  const GNParams p = init_params(config_2d(), 0);
  const Environment env = small_env();
  GraphInput g = make_graph_input(env, env.u0, false);
  g.dst[0] = g.node_count();
  EXPECT_THROW(forward(p, g), InvalidArgument);
  GraphInput wide = make_graph_input(env, env.u0, true);
  EXPECT_THROW(forward(p, wide), InvalidArgument);
  auto mesh1d = std::make_shared<const Mesh>(build_regular_1d(-1, 1, 0.5));
  const Environment env1d = build_interval_environment(mesh1d, [](double) { return 0.0; });
  EXPECT_THROW(step(p, env1d, env1d.u0), InvalidArgument);
}

TEST(Forward, ParameterGradientsMatchFiniteDifferences) {
  GNConfig c = config_2d();
  c.processor_rounds = 2;
  const GNParams p = dense_params(c, 21);
  const Environment env = small_env();
  const GraphInput g = make_graph_input(env, Field::LinSpaced(env.node_count(), -1, 1), false);

  auto loss_of = [&](const GNParams& q) {
    const Field out = forward(q, g);
    return out.squaredNorm();
  };
  ad::Tape tape;
  const auto bound = bind_params(tape, p, true);
  tape.backward(ad::sum(ad::square(forward(p, bound, g))));

  std::size_t idx = 0;
  GNParams probe = p;
  std::vector<Matrix*> tensors;
  probe.for_each([&](const std::string&, Matrix& m) { tensors.push_back(&m); });
  std::vector<std::string> names;
  p.for_each([&](const std::string& name, const Matrix&) { names.push_back(name); });
  for (; idx < tensors.size(); ++idx) {
    Matrix& m = *tensors[idx];
    const Matrix ad_grad = tape.grad(bound[idx]);
    Matrix fd(m.rows(), m.cols());
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) {
        const double keep = m(i, j);
        m(i, j) = keep + 1e-5;
        const double lp = loss_of(probe);
        m(i, j) = keep - 1e-5;
        const double lm = loss_of(probe);
        m(i, j) = keep;
        fd(i, j) = (lp - lm) / 2e-5;
      }
    const double rel = (ad_grad - fd).norm() / std::max(fd.norm(), 1e-8);
    EXPECT_LT(rel, 1e-4) << names[idx];
  }
}

TEST(Step, StepperMatchesRepeatedStep) {
  const GNParams p = dense_params(config_2d(), 2);
  const Environment env = small_env();
  Stepper stepper(p, env);
  Field a = env.u0, b = env.u0;
  for (int s = 0; s < 3; ++s) {
    a = step(p, env, a);
    b = stepper(b);
  }
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), env.node_count());
}
