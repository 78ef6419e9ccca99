#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "meshlearn/autodiff.hpp"
#include "meshlearn/error.hpp"
#include "meshlearn/mesh.hpp"
#include "meshlearn/rng.hpp"

namespace meshlearn {

struct GNConfig {
  int dim = 1;
  int latent = 16;
  int mlp_layers = 4;         // linear layers per MLP, ReLU between them
  int processor_rounds = 1;   // message-passing blocks, parameters not shared
  bool absolute_position = false;

  int node_features() const { return 1 + kNodeTypeCount + (absolute_position ? dim : 0); }
  int edge_features() const { return dim + 1; }

  void validate() const {
    if (dim < 1 || dim > 3) throw InvalidArgument("dim must be 1, 2 or 3");
    if (latent < 1) throw InvalidArgument("latent width must be positive");
    if (mlp_layers < 1) throw InvalidArgument("mlp_layers must be positive");
    if (processor_rounds < 0) throw InvalidArgument("processor_rounds must be non-negative");
  }
  bool operator==(const GNConfig&) const = default;
};

struct Linear {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
};

struct Mlp {
  std::vector<Linear> layers;
};

struct ProcessorBlock {
  Mlp edge;
  Mlp node;
};

struct GNParams {
  GNConfig config;
  Mlp encoder_node, encoder_edge;
  std::vector<ProcessorBlock> processor;
  Mlp decoder;

  /// Visits every tensor in a fixed order with a stable dotted name.
  template <class Self, class Fn>
  static void visit(Self& self, Fn&& fn) {
    auto mlp = [&](auto& m, const std::string& prefix) {
      for (std::size_t i = 0; i < m.layers.size(); ++i) {
        fn(prefix + "." + std::to_string(i) + ".weight", m.layers[i].weight);
        fn(prefix + "." + std::to_string(i) + ".bias", m.layers[i].bias);
      }
    };
    mlp(self.encoder_node, "encoder.node");
    mlp(self.encoder_edge, "encoder.edge");
    for (std::size_t r = 0; r < self.processor.size(); ++r) {
      mlp(self.processor[r].edge, "processor." + std::to_string(r) + ".edge");
      mlp(self.processor[r].node, "processor." + std::to_string(r) + ".node");
    }
    mlp(self.decoder, "decoder");
  }
  template <class Fn> void for_each(Fn&& fn) { visit(*this, std::forward<Fn>(fn)); }
  template <class Fn> void for_each(Fn&& fn) const { visit(*this, std::forward<Fn>(fn)); }

  std::size_t tensor_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix&) { ++n; });
    return n;
  }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }
  bool operator==(const GNParams& o) const {
    if (!(config == o.config)) return false;
    std::vector<const Matrix*> a, b;
    for_each([&](const std::string&, const Matrix& m) { a.push_back(&m); });
    o.for_each([&](const std::string&, const Matrix& m) { b.push_back(&m); });
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols() || *a[i] != *b[i]) return false;
    return true;
  }
};

namespace detail {

inline Mlp zero_mlp(int in, int hidden, int out, int layers) {
  Mlp m;
  for (int i = 0; i < layers; ++i) {
    const int fan_in = i == 0 ? in : hidden;
    const int fan_out = i == layers - 1 ? out : hidden;
    m.layers.push_back({Matrix::Zero(fan_in, fan_out), Matrix::Zero(1, fan_out)});
  }
  return m;
}

}  // namespace detail

/// Parameters with the right shapes and every entry zero.
inline GNParams zero_params(const GNConfig& config) {
  config.validate();
  const int h = config.latent, l = config.mlp_layers;
  GNParams p;
  p.config = config;
  p.encoder_node = detail::zero_mlp(config.node_features(), h, h, l);
  p.encoder_edge = detail::zero_mlp(config.edge_features(), h, h, l);
  for (int r = 0; r < config.processor_rounds; ++r) p.processor.push_back({detail::zero_mlp(3 * h, h, h, l), detail::zero_mlp(2 * h, h, h, l)});
  p.decoder = detail::zero_mlp(h, h, 1, l);
  return p;
}

/// Weights ~ U(-sqrt(1/fan_in), sqrt(1/fan_in)) in visiting order; biases 0.
inline GNParams init_params(const GNConfig& config, std::uint64_t seed) {
  GNParams p = zero_params(config);
  Rng rng(seed);
  p.for_each([&](const std::string& name, Matrix& m) {
    if (name.ends_with(".bias")) return;
    const double a = std::sqrt(1.0 / static_cast<double>(m.rows()));
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-a, a);
  });
  return p;
}

/// Network input for one graph. Edges are directed src -> dst; each mesh edge
/// appears in both directions.
struct GraphInput {
  Matrix node_features;  // N x node_features(): [u_t, one-hot type, (x)]
  std::vector<Index> src, dst;
  Matrix edge_features;  // E x (dim + 1): [x_dst - x_src, |x_dst - x_src|]
  Index node_count() const { return node_features.rows(); }
};

inline GraphInput make_graph_input(const Environment& env, const Field& u_t, bool absolute_position) {
  const Mesh& mesh = *env.mesh;
  const int dim = mesh.dim();
  const Index n = mesh.vertex_count();
  if (u_t.size() != n) throw InvalidArgument("field has " + std::to_string(u_t.size()) + " values, mesh has " + std::to_string(n) + " nodes");
  if (static_cast<Index>(env.node_types.size()) != n) throw InvalidArgument("node type count does not match the mesh");
  GraphInput g;
  g.node_features = Matrix::Zero(n, 1 + kNodeTypeCount + (absolute_position ? dim : 0));
  for (Index i = 0; i < n; ++i) {
    g.node_features(i, 0) = u_t[i];
    g.node_features(i, 1 + static_cast<int>(env.node_types[static_cast<std::size_t>(i)])) = 1.0;
    if (absolute_position)
      for (int d = 0; d < dim; ++d) g.node_features(i, 1 + kNodeTypeCount + d) = mesh.position(i)[static_cast<std::size_t>(d)];
  }
  const auto edges = mesh.edges();
  g.src.reserve(2 * edges.size());
  g.dst.reserve(2 * edges.size());
  for (const auto& [a, b] : edges) {
    g.src.push_back(a), g.dst.push_back(b);
    g.src.push_back(b), g.dst.push_back(a);
  }
  g.edge_features.resize(static_cast<Index>(g.src.size()), dim + 1);
  for (std::size_t k = 0; k < g.src.size(); ++k) {
    const auto ps = mesh.position(g.src[k]), pd = mesh.position(g.dst[k]);
    double norm2 = 0;
    for (int d = 0; d < dim; ++d) {
      const double r = pd[static_cast<std::size_t>(d)] - ps[static_cast<std::size_t>(d)];
      g.edge_features(static_cast<Index>(k), d) = r;
      norm2 += r * r;
    }
    g.edge_features(static_cast<Index>(k), dim) = std::sqrt(norm2);
  }
  return g;
}

/// Overwrites the u_t column of an existing input.
inline void set_node_values(GraphInput& g, const Field& u_t) {
  if (u_t.size() != g.node_count()) throw InvalidArgument("field length does not match graph");
  g.node_features.col(0) = u_t;
}

/// Parameters placed on a tape, in GNParams visiting order.
inline std::vector<ad::Var> bind_params(ad::Tape& tape, const GNParams& params, bool requires_grad) {
  std::vector<ad::Var> out;
  out.reserve(params.tensor_count());
  params.for_each([&](const std::string&, const Matrix& m) { out.push_back(tape.leaf(m, requires_grad)); });
  return out;
}

namespace detail {

inline ad::Var apply_mlp(const Mlp& mlp, const std::vector<ad::Var>& bound, std::size_t& cursor, ad::Var x) {
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    const ad::Var& w = bound[cursor++];
    const ad::Var& b = bound[cursor++];
    x = ad::linear(x, w, b);
    if (i + 1 < mlp.layers.size()) x = ad::relu(x);
  }
  return x;
}

inline void check_graph(const GNConfig& c, const GraphInput& g) {
  if (g.node_features.cols() != c.node_features())
    throw InvalidArgument("node features have width " + std::to_string(g.node_features.cols()) + ", network expects " +
                          std::to_string(c.node_features()));
  if (g.edge_features.cols() != c.edge_features())
    throw InvalidArgument("edge features have width " + std::to_string(g.edge_features.cols()) + ", network expects " +
                          std::to_string(c.edge_features()));
  if (g.src.size() != g.dst.size() || static_cast<Index>(g.src.size()) != g.edge_features.rows())
    throw InvalidArgument("edge index and edge features disagree in length");
  const Index n = g.node_count();
  for (std::size_t k = 0; k < g.src.size(); ++k)
    if (g.src[k] < 0 || g.src[k] >= n || g.dst[k] < 0 || g.dst[k] >= n)
      throw InvalidArgument("dangling edge " + std::to_string(k) + " (" + std::to_string(g.src[k]) + " -> " + std::to_string(g.dst[k]) +
                            ") in a graph of " + std::to_string(n) + " nodes");
}

}  // namespace detail

/// Encode, process, decode. Returns the N x 1 update du on the tape of `bound`.
inline ad::Var forward(const GNParams& params, const std::vector<ad::Var>& bound, const GraphInput& g) {
  detail::check_graph(params.config, g);
  if (bound.size() != params.tensor_count()) throw InvalidArgument("bound parameter count does not match the network");
  ad::Tape& tape = bound.front().tape();
  std::size_t cursor = 0;
  ad::Var v = detail::apply_mlp(params.encoder_node, bound, cursor, tape.constant(g.node_features));
  ad::Var e = detail::apply_mlp(params.encoder_edge, bound, cursor, tape.constant(g.edge_features));
  for (const ProcessorBlock& block : params.processor) {
    ad::Var msg = detail::apply_mlp(block.edge, bound, cursor, ad::concat_cols({e, ad::gather_rows(v, g.src), ad::gather_rows(v, g.dst)}));
    e = ad::add(e, msg);
    ad::Var agg = ad::scatter_mean(e, g.dst, g.node_count());
    v = ad::add(v, detail::apply_mlp(block.node, bound, cursor, ad::concat_cols({v, agg})));
  }
  return detail::apply_mlp(params.decoder, bound, cursor, v);
}

/// Inference-only forward.
inline Field forward(const GNParams& params, const GraphInput& g) {
  ad::Tape tape;
  return forward(params, bind_params(tape, params, false), g).value().col(0);
}

/// u_{t+1} = u_t + forward(params, graph(env, u_t)).
inline Field step(const GNParams& params, const Environment& env, const Field& u_t) {
  if (env.mesh->dim() != params.config.dim)
    throw InvalidArgument("network is for " + std::to_string(params.config.dim) + "D meshes, environment is " + std::to_string(env.mesh->dim()) + "D");
  const GraphInput g = make_graph_input(env, u_t, params.config.absolute_position);
  return u_t + forward(params, g);
}

/// Repeated stepping for callers that keep the graph between steps.
class Stepper {
 public:
  Stepper(const GNParams& params, const Environment& env) : params_(&params) {
    if (env.mesh->dim() != params.config.dim)
      throw InvalidArgument("network is for " + std::to_string(params.config.dim) + "D meshes, environment is " + std::to_string(env.mesh->dim()) + "D");
    graph_ = make_graph_input(env, env.u0, params.config.absolute_position);
  }
  Field operator()(const Field& u_t) {
    set_node_values(graph_, u_t);
    return u_t + forward(*params_, graph_);
  }

 private:
  const GNParams* params_;
  GraphInput graph_;
};

}  // namespace meshlearn
