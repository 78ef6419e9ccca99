#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <string_view>

#include "meshlearn/error.hpp"
#include "meshlearn/mesh.hpp"

namespace meshlearn {

enum class ProblemKind { Heat1D, Eikonal1D, Burgers1D, Heat2D };

struct LossWeights {
  double alpha = 1.0;  // PDE residual
  double beta = 0.0;   // boundary condition
};

/// One PDE objective: kind, its coefficient (diffusivity or viscosity; unused
/// for Eikonal), timestep and loss weights. With `steady_state` set the time
/// derivative term is dropped entirely.
struct ProblemSpec {
  ProblemKind kind = ProblemKind::Heat1D;
  double coefficient = 0.4;
  double dt = 0.01;
  bool steady_state = false;
  LossWeights weights;

  int dim() const { return kind == ProblemKind::Heat2D ? 2 : 1; }

  void validate() const {
    if (!(weights.alpha > 0)) throw InvalidArgument("alpha must be positive");
    if (!(weights.beta >= 0)) throw InvalidArgument("beta must be non-negative");
    if (!steady_state && !(dt > 0)) throw InvalidArgument("dt must be positive");
    if (kind != ProblemKind::Eikonal1D && !(coefficient > 0)) throw InvalidArgument("PDE coefficient must be positive");
  }
};

inline std::string_view problem_name(ProblemKind k) {
  switch (k) {
    case ProblemKind::Heat1D: return "heat1d";
    case ProblemKind::Eikonal1D: return "eikonal1d";
    case ProblemKind::Burgers1D: return "burgers1d";
    case ProblemKind::Heat2D: return "heat2d";
  }
  return "?";
}

/// Named presets. `heat1d` uses diffusivity 0.4; `heat1d_small_kappa` uses the
/// 0.04 variant of the same objective.
inline ProblemSpec problem_preset(std::string_view name) {
  ProblemSpec s;
  if (name == "heat1d") {
    s = {ProblemKind::Heat1D, 0.4, 0.01, false, {1.0, 0.0}};
  } else if (name == "heat1d_small_kappa") {
    s = {ProblemKind::Heat1D, 0.04, 0.01, false, {1.0, 0.0}};
  } else if (name == "eikonal1d") {
    s = {ProblemKind::Eikonal1D, 0.0, 0.01, false, {1.0, 100.0}};
  } else if (name == "burgers1d") {
    s = {ProblemKind::Burgers1D, 0.01 / std::numbers::pi, 0.01, false, {1.0, 10.0}};
  } else if (name == "heat2d") {
    s = {ProblemKind::Heat2D, 0.5, 0.01, false, {1.0, 100.0}};
  } else {
    throw InvalidArgument("unknown problem '" + std::string(name) + "' (expected heat1d, heat1d_small_kappa, eikonal1d, burgers1d or heat2d)");
  }
  return s;
}

inline bool is_problem_name(std::string_view name) {
  return name == "heat1d" || name == "heat1d_small_kappa" || name == "eikonal1d" || name == "burgers1d" || name == "heat2d";
}

/// sin(2 pi x) / (2 pi x), continuous at 0.
inline double heat1d_initial(double x) {
  const double a = 2 * std::numbers::pi * x;
  return std::abs(a) < 1e-12 ? 1.0 : std::sin(a) / a;
}

inline double burgers1d_initial(double x) { return -std::sin(std::numbers::pi * x); }

/// The fixed initial condition of a 1D problem on [-1, 1] sampled on `mesh`.
inline Environment interval_problem_environment(ProblemKind kind, std::shared_ptr<const Mesh> mesh) {
  switch (kind) {
    case ProblemKind::Heat1D: return build_interval_environment(std::move(mesh), heat1d_initial);
    case ProblemKind::Eikonal1D: return build_interval_environment(std::move(mesh), [](double) { return 0.0; });
    case ProblemKind::Burgers1D: return build_interval_environment(std::move(mesh), burgers1d_initial);
    case ProblemKind::Heat2D: break;
  }
  throw InvalidArgument("heat2d has no fixed interval initial condition");
}

/// Default training/evaluation mesh for a problem at spacing dx.
inline std::shared_ptr<const Mesh> problem_mesh(ProblemKind kind, double dx) {
  if (kind == ProblemKind::Heat2D) return std::make_shared<const Mesh>(build_regular_tri_2d({}, dx));
  return std::make_shared<const Mesh>(build_regular_1d(-1, 1, dx));
}

/// The same environment on another mesh of the same domain: the 1D initial
/// condition is resampled, the 2D obstacles and sources are re-rasterized.
inline Environment rebuild_environment(ProblemKind kind, const Environment& env, std::shared_ptr<const Mesh> mesh) {
  if (kind == ProblemKind::Heat2D) return build_heat2d_environment(std::move(mesh), env.spec);
  return interval_problem_environment(kind, std::move(mesh));
}

}  // namespace meshlearn
