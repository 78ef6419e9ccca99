#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "meshlearn/autodiff.hpp"
#include "meshlearn/diffops.hpp"
#include "meshlearn/problem.hpp"

namespace meshlearn {

/// Node index sets entering the loss. `bc` holds the nodes carrying a
/// Dirichlet-zero penalty; `pde` is everything else.
struct LossNodes {
  std::vector<Index> pde;
  std::vector<Index> bc;
};

inline LossNodes loss_nodes(const ProblemSpec& spec, const Environment& env) {
  LossNodes out;
  std::vector<char> is_bc(static_cast<std::size_t>(env.node_count()), 0);
  if (spec.kind != ProblemKind::Heat1D) {
    for (Index i = 0; i < env.node_count(); ++i) {
      const NodeType t = env.node_types[static_cast<std::size_t>(i)];
      if (t == NodeType::Wall || (spec.kind == ProblemKind::Heat2D && t == NodeType::Obstacle)) is_bc[static_cast<std::size_t>(i)] = 1;
    }
  }
  for (Index i = 0; i < env.node_count(); ++i) (is_bc[static_cast<std::size_t>(i)] ? out.bc : out.pde).push_back(i);
  return out;
}

namespace detail {

inline void check_problem_mesh(const ProblemSpec& spec, const GradientOperator& op) {
  if (op.dim() != spec.dim())
    throw InvalidArgument(std::string(problem_name(spec.kind)) + " needs a " + std::to_string(spec.dim()) + "D mesh, got " +
                          std::to_string(op.dim()) + "D");
}

inline Matrix as_column(const Field& u) {
  Matrix m(u.size(), 1);
  m.col(0) = u;
  return m;
}

}  // namespace detail

/// Per-node implicit-Euler residual with all spatial terms taken on u_next.
/// `u_next` is an N x 1 tape value; u_t enters as a constant.
inline ad::Var pde_residual(const ProblemSpec& spec, const GradientOperator& op, const Field& u_t, const ad::Var& u_next) {
  detail::check_problem_mesh(spec, op);
  op.check_field(u_t);
  if (u_next.rows() != op.node_count() || u_next.cols() != 1)
    throw InvalidArgument("u_next has shape " + ad::shape_string(u_next.rows(), u_next.cols()) + ", expected " +
                          ad::shape_string(op.node_count(), 1));
  ad::Tape& tape = u_next.tape();
  const double c = spec.coefficient;

  ad::Var spatial;
  if (spec.kind == ProblemKind::Heat2D) {
    for (int axis = 0; axis < 2; ++axis) {
      const SparseMatrix& g = op.node_gradient_matrix(axis);
      ad::Var d2 = ad::sparse_matmul(g, ad::sparse_matmul(g, u_next));
      spatial = axis == 0 ? d2 : ad::add(spatial, d2);
    }
    spatial = ad::scale(-c, spatial);
  } else {
    const SparseMatrix& g = op.node_gradient_matrix(0);
    ad::Var du = ad::sparse_matmul(g, u_next);
    switch (spec.kind) {
      case ProblemKind::Heat1D:
        spatial = ad::scale(-c, ad::sparse_matmul(g, du));
        break;
      case ProblemKind::Eikonal1D:
        spatial = ad::offset(ad::abs(du), -1.0);
        break;
      case ProblemKind::Burgers1D:
        spatial = ad::sub(ad::mul(u_next, du), ad::scale(c, ad::sparse_matmul(g, du)));
        break;
      case ProblemKind::Heat2D:
        break;
    }
  }
  if (spec.steady_state) return spatial;
  ad::Var time = ad::scale(1.0 / spec.dt, ad::sub(u_next, tape.constant(detail::as_column(u_t))));
  return ad::add(time, spatial);
}

inline Field pde_residual(const ProblemSpec& spec, const GradientOperator& op, const Field& u_t, const Field& u_next) {
  op.check_field(u_next);
  ad::Tape tape;
  return pde_residual(spec, op, u_t, tape.constant(detail::as_column(u_next))).value().col(0);
}

inline ad::Var bc_residual(const ProblemSpec& spec, const Environment& env, const ad::Var& u_next) {
  return ad::gather_rows(u_next, loss_nodes(spec, env).bc);
}

inline Field bc_residual(const ProblemSpec& spec, const Environment& env, const Field& u_next) {
  const auto bc = loss_nodes(spec, env).bc;
  Field out(static_cast<Index>(bc.size()));
  for (std::size_t i = 0; i < bc.size(); ++i) out[static_cast<Index>(i)] = u_next[bc[i]];
  return out;
}

/// alpha * mean(pde^2) over `nodes.pde` + beta * mean(bc^2) over `nodes.bc`.
/// An empty set contributes nothing.
inline ad::Var loss(const ProblemSpec& spec, const LossNodes& nodes, const GradientOperator& op, const Field& u_t,
                    const ad::Var& u_next) {
  ad::Var total;
  bool have = false;
  if (!nodes.pde.empty()) {
    ad::Var r = ad::gather_rows(pde_residual(spec, op, u_t, u_next), nodes.pde);
    total = ad::scale(spec.weights.alpha, ad::mean(ad::square(r)));
    have = true;
  }
  if (!nodes.bc.empty() && spec.weights.beta > 0) {
    ad::Var b = ad::scale(spec.weights.beta, ad::mean(ad::square(ad::gather_rows(u_next, nodes.bc))));
    total = have ? ad::add(total, b) : b;
    have = true;
  }
  if (!have) total = ad::scale(0.0, ad::sum(u_next));
  return total;
}

inline ad::Var loss(const ProblemSpec& spec, const Environment& env, const GradientOperator& op, const Field& u_t,
                    const ad::Var& u_next) {
  return loss(spec, loss_nodes(spec, env), op, u_t, u_next);
}

inline double loss(const ProblemSpec& spec, const Environment& env, const GradientOperator& op, const Field& u_t, const Field& u_next) {
  op.check_field(u_next);
  ad::Tape tape;
  return loss(spec, env, op, u_t, tape.constant(detail::as_column(u_next))).value()(0, 0);
}

/// d loss / d u_next by one backward pass.
inline Field loss_gradient(const ProblemSpec& spec, const Environment& env, const GradientOperator& op, const Field& u_t,
                           const Field& u_next) {
  op.check_field(u_next);
  ad::Tape tape;
  ad::Var u = tape.leaf(detail::as_column(u_next));
  tape.backward(loss(spec, env, op, u_t, u));
  return tape.grad(u).col(0);
}

}  // namespace meshlearn
