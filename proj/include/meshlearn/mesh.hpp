#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "meshlearn/error.hpp"
#include "meshlearn/rng.hpp"
#include "meshlearn/types.hpp"

namespace meshlearn {

enum class NodeType : std::uint8_t { Normal = 0, Wall = 1, Obstacle = 2, Inflow = 3, Outflow = 4 };

inline constexpr int kNodeTypeCount = 5;

inline std::string_view to_string(NodeType t) {
  switch (t) {
    case NodeType::Normal: return "normal";
    case NodeType::Wall: return "wall";
    case NodeType::Obstacle: return "obstacle";
    case NodeType::Inflow: return "inflow";
    case NodeType::Outflow: return "outflow";
  }
  return "unknown";
}

inline NodeType node_type_from_int(long v) {
  if (v < 0 || v >= kNodeTypeCount) throw InvalidArgument("node type tag out of range: " + std::to_string(v));
  return static_cast<NodeType>(v);
}

/// Simplicial mesh in 1, 2 or 3 dimensions: segments, triangles or tetrahedra.
///
/// Construction validates every element index and rejects elements whose
/// measure is at most 1e-12. Triangles with clockwise winding are flipped so
/// that every stored triangle has positive signed area.
class Mesh {
 public:
  static constexpr double kMinMeasure = 1e-12;

  Mesh(int dim, std::vector<double> coords, std::vector<Index> elements)
      : dim_(dim), coords_(std::move(coords)), elements_(std::move(elements)) {
    if (dim_ < 1 || dim_ > 3) throw InvalidArgument("mesh dimension must be 1, 2 or 3");
    if (coords_.size() % static_cast<std::size_t>(dim_) != 0)
      throw InvalidArgument("coordinate array length is not a multiple of the dimension");
    const auto per = static_cast<std::size_t>(dim_ + 1);
    if (elements_.size() % per != 0)
      throw InvalidArgument("element array length is not a multiple of dim+1");
    const Index n = vertex_count();
    for (Index v : elements_) {
      if (v < 0 || v >= n) throw InvalidArgument("element references vertex " + std::to_string(v) + " of " + std::to_string(n));
    }
    for (Index e = 0; e < element_count(); ++e) {
      double m = signed_measure(e);
      if (dim_ == 2 && m < 0) {
        auto* el = elements_.data() + e * 3;
        std::swap(el[1], el[2]);
        m = -m;
      }
      if (std::abs(m) <= kMinMeasure)
        throw DegenerateMesh(static_cast<std::size_t>(e), "element " + std::to_string(e) + " has measure " + std::to_string(m));
    }
  }

  int dim() const noexcept { return dim_; }
  Index vertex_count() const noexcept { return static_cast<Index>(coords_.size()) / dim_; }
  Index element_count() const noexcept { return static_cast<Index>(elements_.size()) / (dim_ + 1); }
  int vertices_per_element() const noexcept { return dim_ + 1; }

  std::span<const double> position(Index v) const {
    return {coords_.data() + v * dim_, static_cast<std::size_t>(dim_)};
  }
  std::span<const Index> element(Index e) const {
    return {elements_.data() + e * (dim_ + 1), static_cast<std::size_t>(dim_ + 1)};
  }
  const std::vector<double>& coords() const noexcept { return coords_; }
  const std::vector<Index>& elements() const noexcept { return elements_; }

  /// Length, signed area or signed volume of element e.
  double signed_measure(Index e) const {
    const auto el = element(e);
    const auto p0 = position(el[0]);
    if (dim_ == 1) return position(el[1])[0] - p0[0];
    if (dim_ == 2) {
      const auto p1 = position(el[1]), p2 = position(el[2]);
      return 0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]));
    }
    const auto p1 = position(el[1]), p2 = position(el[2]), p3 = position(el[3]);
    const double a[3] = {p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]};
    const double b[3] = {p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]};
    const double c[3] = {p3[0] - p0[0], p3[1] - p0[1], p3[2] - p0[2]};
    return (a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) +
            a[2] * (b[0] * c[1] - b[1] * c[0])) / 6.0;
  }

  /// Unique undirected edges (every vertex pair sharing an element), sorted.
  std::vector<std::pair<Index, Index>> edges() const {
    std::vector<std::pair<Index, Index>> out;
    out.reserve(static_cast<std::size_t>(element_count()) * static_cast<std::size_t>(dim_ * (dim_ + 1) / 2));
    for (Index e = 0; e < element_count(); ++e) {
      const auto el = element(e);
      for (std::size_t a = 0; a < el.size(); ++a)
        for (std::size_t b = a + 1; b < el.size(); ++b) out.emplace_back(std::min(el[a], el[b]), std::max(el[a], el[b]));
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  /// Per-axis [min, max] of the vertex coordinates.
  std::vector<std::pair<double, double>> bounding_box() const {
    std::vector<std::pair<double, double>> box(static_cast<std::size_t>(dim_), {INFINITY, -INFINITY});
    for (Index v = 0; v < vertex_count(); ++v) {
      const auto p = position(v);
      for (int d = 0; d < dim_; ++d) {
        box[static_cast<std::size_t>(d)].first = std::min(box[static_cast<std::size_t>(d)].first, p[static_cast<std::size_t>(d)]);
        box[static_cast<std::size_t>(d)].second = std::max(box[static_cast<std::size_t>(d)].second, p[static_cast<std::size_t>(d)]);
      }
    }
    return box;
  }

  /// Vertices lying on the bounding box (per-axis tolerance 1e-9).
  std::vector<bool> on_bounding_box(double tol = 1e-9) const {
    const auto box = bounding_box();
    std::vector<bool> out(static_cast<std::size_t>(vertex_count()), false);
    for (Index v = 0; v < vertex_count(); ++v) {
      const auto p = position(v);
      for (int d = 0; d < dim_; ++d) {
        const auto& [lo, hi] = box[static_cast<std::size_t>(d)];
        const double x = p[static_cast<std::size_t>(d)];
        if (std::abs(x - lo) <= tol || std::abs(x - hi) <= tol) out[static_cast<std::size_t>(v)] = true;
      }
    }
    return out;
  }

 private:
  int dim_;
  std::vector<double> coords_;
  std::vector<Index> elements_;
};

namespace detail {
inline Index cell_count(double lo, double hi, double dx, const char* axis) {
  if (!(dx > 0) || !std::isfinite(dx)) throw InvalidArgument("dx must be positive, got " + std::to_string(dx));
  if (!(hi > lo)) throw InvalidArgument(std::string("empty interval on axis ") + axis);
  return std::max<Index>(1, std::llround((hi - lo) / dx));
}
}  // namespace detail

/// Uniform segment mesh on [x_min, x_max]; both endpoints are vertices. The
/// spacing is (x_max - x_min) / round((x_max - x_min) / dx).
inline Mesh build_regular_1d(double x_min, double x_max, double dx) {
  const Index cells = detail::cell_count(x_min, x_max, dx, "x");
  std::vector<double> coords(static_cast<std::size_t>(cells + 1));
  for (Index i = 0; i <= cells; ++i)
    coords[static_cast<std::size_t>(i)] = i == cells ? x_max : x_min + (x_max - x_min) * static_cast<double>(i) / static_cast<double>(cells);
  std::vector<Index> elements;
  elements.reserve(static_cast<std::size_t>(2 * cells));
  for (Index i = 0; i < cells; ++i) {
    elements.push_back(i);
    elements.push_back(i + 1);
  }
  return Mesh(1, std::move(coords), std::move(elements));
}

struct Box2 {
  double x_min = -1, x_max = 1, y_min = -1, y_max = 1;
};

/// Structured grid with each cell split along its (lower-left, upper-right)
/// diagonal into two counter-clockwise triangles. Vertex (i, j) has index
/// j * (nx + 1) + i.
inline Mesh build_regular_tri_2d(const Box2& box, double dx) {
  const Index nx = detail::cell_count(box.x_min, box.x_max, dx, "x");
  const Index ny = detail::cell_count(box.y_min, box.y_max, dx, "y");
  std::vector<double> coords;
  coords.reserve(static_cast<std::size_t>(2 * (nx + 1) * (ny + 1)));
  auto lerp = [](double lo, double hi, Index i, Index n) {
    return i == n ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n);
  };
  for (Index j = 0; j <= ny; ++j)
    for (Index i = 0; i <= nx; ++i) {
      coords.push_back(lerp(box.x_min, box.x_max, i, nx));
      coords.push_back(lerp(box.y_min, box.y_max, j, ny));
    }
  std::vector<Index> elements;
  elements.reserve(static_cast<std::size_t>(6 * nx * ny));
  for (Index j = 0; j < ny; ++j)
    for (Index i = 0; i < nx; ++i) {
      const Index v00 = j * (nx + 1) + i, v10 = v00 + 1, v01 = v00 + nx + 1, v11 = v01 + 1;
      elements.insert(elements.end(), {v00, v10, v11, v00, v11, v01});
    }
  return Mesh(2, std::move(coords), std::move(elements));
}

// ---------------------------------------------------------------------------
// Randomized environments

struct Obstacle {
  std::array<double, 2> center{};
  double radius = 0;
  friend bool operator==(const Obstacle&, const Obstacle&) = default;
};

/// Gaussian heat source a * exp(-0.5 * b * |x - c|^2).
struct HeatSource {
  double amplitude = 0;
  double sharpness = 0;
  std::array<double, 2> center{};
  friend bool operator==(const HeatSource&, const HeatSource&) = default;
};

/// Parameter ranges of the randomized 2D heat environments.
struct EnvRanges {
  static constexpr int kMinCount = 1, kMaxCount = 4;
  static constexpr double kCenterMin = -0.8, kCenterMax = 0.8;
  static constexpr double kRadiusMin = 0.1, kRadiusMax = 0.3;
  static constexpr double kAmplitudeMin = 0.0, kAmplitudeMax = 5.0;
  static constexpr double kSharpnessMin = 10.0, kSharpnessMax = 50.0;
};

struct EnvSpec {
  std::vector<Obstacle> obstacles;
  std::vector<HeatSource> sources;
  friend bool operator==(const EnvSpec&, const EnvSpec&) = default;
};

/// Names the first parameter of `spec` outside EnvRanges, or nullopt. Counts
/// may be zero here: a hand-edited environment can drop every obstacle.
inline std::optional<std::string> first_out_of_range(const EnvSpec& spec) {
  using R = EnvRanges;
  auto in = [](double v, double lo, double hi) { return std::isfinite(v) && v >= lo && v <= hi; };
  if (spec.obstacles.size() > static_cast<std::size_t>(R::kMaxCount)) return "obstacles";
  if (spec.sources.size() > static_cast<std::size_t>(R::kMaxCount)) return "sources";
  for (const auto& o : spec.obstacles) {
    if (!in(o.center[0], R::kCenterMin, R::kCenterMax) || !in(o.center[1], R::kCenterMin, R::kCenterMax)) return "center";
    if (!in(o.radius, R::kRadiusMin, R::kRadiusMax)) return "radius";
  }
  for (const auto& s : spec.sources) {
    if (!in(s.center[0], R::kCenterMin, R::kCenterMax) || !in(s.center[1], R::kCenterMin, R::kCenterMax)) return "center";
    if (!in(s.amplitude, R::kAmplitudeMin, R::kAmplitudeMax)) return "amplitude";
    if (!in(s.sharpness, R::kSharpnessMin, R::kSharpnessMax)) return "sharpness";
  }
  return std::nullopt;
}

/// Mesh plus per-node metadata and the initial condition. `spec` is empty for
/// the single-initial-condition 1D problems.
struct Environment {
  std::shared_ptr<const Mesh> mesh;
  std::vector<NodeType> node_types;
  Field u0;
  EnvSpec spec;

  Index node_count() const { return mesh->vertex_count(); }
};

inline double gaussian_sources(const std::vector<HeatSource>& sources, double x, double y) {
  double u = 0;
  for (const auto& s : sources) {
    const double dx = x - s.center[0], dy = y - s.center[1];
    u += s.amplitude * std::exp(-0.5 * s.sharpness * (dx * dx + dy * dy));
  }
  return u;
}

/// Tags and initial condition of a 2D heat environment: bounding-box nodes are
/// Wall, nodes inside or on an obstacle circle (1e-12 slack) are Obstacle,
/// everything else Normal and carries the summed Gaussian sources.
inline Environment build_heat2d_environment(std::shared_ptr<const Mesh> mesh, EnvSpec spec) {
  if (mesh->dim() != 2) throw InvalidArgument("heat2d environments need a 2D mesh");
  const Index n = mesh->vertex_count();
  Environment env{mesh, std::vector<NodeType>(static_cast<std::size_t>(n), NodeType::Normal), Field::Zero(n), std::move(spec)};
  const auto boundary = mesh->on_bounding_box();
  for (Index v = 0; v < n; ++v) {
    const auto p = mesh->position(v);
    auto& tag = env.node_types[static_cast<std::size_t>(v)];
    if (boundary[static_cast<std::size_t>(v)]) {
      tag = NodeType::Wall;
      continue;
    }
    for (const auto& o : env.spec.obstacles) {
      if (std::hypot(p[0] - o.center[0], p[1] - o.center[1]) <= o.radius + 1e-12) {
        tag = NodeType::Obstacle;
        break;
      }
    }
    if (tag == NodeType::Normal) env.u0[v] = gaussian_sources(env.spec.sources, p[0], p[1]);
  }
  return env;
}

/// Draw order: obstacle count, then per obstacle (cx, cy, radius); source
/// count, then per source (a, b, cx, cy).
inline EnvSpec sample_env_spec(Rng& rng) {
  using R = EnvRanges;
  EnvSpec spec;
  const int n_obstacles = rng.uniform_int(R::kMinCount, R::kMaxCount);
  for (int i = 0; i < n_obstacles; ++i) {
    Obstacle o;
    o.center[0] = rng.uniform(R::kCenterMin, R::kCenterMax);
    o.center[1] = rng.uniform(R::kCenterMin, R::kCenterMax);
    o.radius = rng.uniform(R::kRadiusMin, R::kRadiusMax);
    spec.obstacles.push_back(o);
  }
  const int n_sources = rng.uniform_int(R::kMinCount, R::kMaxCount);
  for (int i = 0; i < n_sources; ++i) {
    HeatSource s;
    s.amplitude = rng.uniform(R::kAmplitudeMin, R::kAmplitudeMax);
    s.sharpness = rng.uniform(R::kSharpnessMin, R::kSharpnessMax);
    s.center[0] = rng.uniform(R::kCenterMin, R::kCenterMax);
    s.center[1] = rng.uniform(R::kCenterMin, R::kCenterMax);
    spec.sources.push_back(s);
  }
  return spec;
}

inline Environment sample_env(std::uint64_t seed, std::shared_ptr<const Mesh> mesh) {
  Rng rng(seed);
  return build_heat2d_environment(std::move(mesh), sample_env_spec(rng));
}

/// 1D interval environment: the two extreme vertices are Wall.
template <class InitialCondition>
Environment build_interval_environment(std::shared_ptr<const Mesh> mesh, InitialCondition&& u0) {
  if (mesh->dim() != 1) throw InvalidArgument("interval environments need a 1D mesh");
  const Index n = mesh->vertex_count();
  Environment env{mesh, std::vector<NodeType>(static_cast<std::size_t>(n), NodeType::Normal), Field::Zero(n), {}};
  const auto boundary = mesh->on_bounding_box();
  for (Index v = 0; v < n; ++v) {
    if (boundary[static_cast<std::size_t>(v)]) env.node_types[static_cast<std::size_t>(v)] = NodeType::Wall;
    env.u0[v] = u0(mesh->position(v)[0]);
  }
  return env;
}

inline std::vector<Index> node_type_mask(const Environment& env, NodeType tag) {
  std::vector<Index> out;
  for (std::size_t i = 0; i < env.node_types.size(); ++i)
    if (env.node_types[i] == tag) out.push_back(static_cast<Index>(i));
  return out;
}

}  // namespace meshlearn
