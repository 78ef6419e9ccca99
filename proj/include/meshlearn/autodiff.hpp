#pragma once

#include <array>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "meshlearn/error.hpp"
#include "meshlearn/types.hpp"

/// Minimal reverse-mode automatic differentiation over dense row-major
/// matrices of doubles.
///
/// Every op computes its value eagerly and records a backward rule on the
/// Tape. Tape::backward walks the records in reverse creation order, which is
/// a reverse topological order because operands always exist before results.
/// The only broadcasting is scalar-times-tensor in mul() and the explicit
/// row-bias add in add_bias().
namespace meshlearn::ad {

struct Tensor {
  Matrix data;
  bool requires_grad = false;

  std::array<Index, 2> shape() const { return {data.rows(), data.cols()}; }
  Index size() const { return data.size(); }
};

inline std::string shape_string(Index r, Index c) { return "(" + std::to_string(r) + "x" + std::to_string(c) + ")"; }

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Receives the gradient of the loss w.r.t. the op's output.
  using BackwardFn = std::function<void(Tape&, const Matrix& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, false, true, {}});
    return Var(this, nodes_.size() - 1);
  }
  Var leaf(const Tensor& t) { return leaf(t.data, t.requires_grad); }
  Var constant(Matrix value) { return leaf(std::move(value), false); }

  /// Records an op result. The backward rule runs only if some parent needs a
  /// gradient.
  Var record(Matrix value, std::initializer_list<Var> parents, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
  }
  Var record(Matrix value, std::span<const Var> parents, BackwardFn fn) {
    bool needs = false;
    for (const Var& p : parents) {
      check_owner(p);
      needs = needs || nodes_[p.id_].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs, false, false, needs ? std::move(fn) : BackwardFn{}});
    return Var(this, nodes_.size() - 1);
  }

  const Matrix& value(const Var& v) const { return nodes_.at(v.id_).value; }
  bool requires_grad(const Var& v) const { return nodes_.at(v.id_).requires_grad; }

  /// Adds g into the gradient of v. No-op for values that need no gradient.
  void accumulate(const Var& v, const Matrix& g) {
    Node& n = nodes_[v.id_];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  /// Propagates d(loss)/d(.) to every recorded value. A tape supports exactly
  /// one backward pass.
  void backward(const Var& loss) {
    check_owner(loss);
    if (consumed_) throw TapeConsumed("backward called twice on the same tape; record the computation again");
    const Matrix& lv = nodes_[loss.id_].value;
    if (lv.rows() != 1 || lv.cols() != 1)
      throw InvalidArgument("backward needs a scalar loss, got shape " + shape_string(lv.rows(), lv.cols()));
    consumed_ = true;
    if (!nodes_[loss.id_].requires_grad) return;
    nodes_[loss.id_].grad = Matrix::Ones(1, 1);
    nodes_[loss.id_].has_grad = true;
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || n.is_leaf) continue;
      if (n.backward) n.backward(*this, n.grad);
      n.backward = {};
      n.grad.resize(0, 0);
      n.has_grad = false;
    }
  }

  /// Gradient of the last backward pass; zeros if v was not reached.
  Matrix grad(const Var& v) const {
    const Node& n = nodes_.at(v.id_);
    if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad;
    bool has_grad;
    bool is_leaf;
    BackwardFn backward;
  };

  void check_owner(const Var& v) const {
    if (v.tape_ != this) throw InvalidArgument("variable belongs to a different tape");
  }

  std::deque<Node> nodes_;
  bool consumed_ = false;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }

namespace detail {
inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_string(a.rows(), a.cols()) + " vs " +
                          shape_string(b.rows(), b.cols()));
}
inline bool is_scalar(const Var& v) { return v.rows() == 1 && v.cols() == 1; }
}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  return a.tape().record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  return a.tape().record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

/// Elementwise product; either operand may be a 1x1 scalar.
inline Var mul(const Var& a, const Var& b) {
  Tape& tape = a.tape();
  if (detail::is_scalar(a) && !detail::is_scalar(b)) {
    return tape.record(a.value()(0, 0) * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
      if (t.requires_grad(a)) t.accumulate(a, Matrix::Constant(1, 1, g.cwiseProduct(b.value()).sum()));
      if (t.requires_grad(b)) t.accumulate(b, a.value()(0, 0) * g);
    });
  }
  if (detail::is_scalar(b) && !detail::is_scalar(a)) return mul(b, a);
  detail::require_same_shape(a, b, "mul");
  return tape.record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

inline Var scale(double s, const Var& a) {
  return a.tape().record(s * a.value(), {a}, [a, s](Tape& t, const Matrix& g) { t.accumulate(a, s * g); });
}

/// a + c elementwise for a constant c.
inline Var offset(const Var& a, double c) {
  return a.tape().record(a.value().array() + c, {a}, [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows())
    throw InvalidArgument("matmul: shape mismatch " + shape_string(a.rows(), a.cols()) + " x " + shape_string(b.rows(), b.cols()));
  Matrix out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) {
      Matrix ga(a.rows(), a.cols());
      ga.noalias() = g * b.value().transpose();
      t.accumulate(a, ga);
    }
    if (t.requires_grad(b)) {
      Matrix gb(b.rows(), b.cols());
      gb.noalias() = a.value().transpose() * g;
      t.accumulate(b, gb);
    }
  });
}

/// m * x for a constant sparse m. The matrix must outlive the backward pass.
inline Var sparse_matmul(const SparseMatrix& m, const Var& x) {
  if (m.cols() != x.rows())
    throw InvalidArgument("sparse_matmul: shape mismatch " + shape_string(m.rows(), m.cols()) + " x " + shape_string(x.rows(), x.cols()));
  Matrix out(m.rows(), x.cols());
  out.noalias() = m * x.value();
  const SparseMatrix* mp = &m;
  return x.tape().record(std::move(out), {x}, [mp, x](Tape& t, const Matrix& g) {
    Matrix gx(x.rows(), x.cols());
    gx.noalias() = mp->transpose() * g;
    t.accumulate(x, gx);
  });
}

inline Var relu(const Var& a) {
  return a.tape().record(a.value().cwiseMax(0.0), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, (a.value().array() > 0.0).select(g, 0.0));
  });
}

/// |a| with subgradient 0 at exactly 0.
inline Var abs(const Var& a) {
  return a.tape().record(a.value().cwiseAbs(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(a.value().unaryExpr([](double v) { return double((v > 0) - (v < 0)); })));
  });
}

inline Var square(const Var& a) {
  return a.tape().record(a.value().cwiseAbs2(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, 2.0 * g.cwiseProduct(a.value()));
  });
}

inline Var sum(const Var& a) {
  return a.tape().record(Matrix::Constant(1, 1, a.value().sum()), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

inline Var mean(const Var& a) {
  if (a.value().size() == 0) throw InvalidArgument("mean of an empty tensor");
  const double n = static_cast<double>(a.value().size());
  return a.tape().record(Matrix::Constant(1, 1, a.value().sum() / n), {a}, [a, n](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / n));
  });
}

/// Row-wise mean of `values` grouped by `groups[row]`. Empty groups yield
/// zero rows with zero gradient.
inline Var scatter_mean(const Var& values, std::span<const Index> groups, Index n_groups) {
  if (static_cast<Index>(groups.size()) != values.rows())
    throw InvalidArgument("scatter_mean: " + std::to_string(groups.size()) + " group ids for " + std::to_string(values.rows()) + " rows");
  std::vector<Index> group_ids(groups.begin(), groups.end());
  std::vector<double> inv_count(static_cast<std::size_t>(n_groups), 0.0);
  for (Index gid : group_ids) {
    if (gid < 0 || gid >= n_groups) throw InvalidArgument("scatter_mean: group id " + std::to_string(gid) + " out of range");
    inv_count[static_cast<std::size_t>(gid)] += 1.0;
  }
  for (double& c : inv_count) c = c > 0 ? 1.0 / c : 0.0;
  Matrix out = Matrix::Zero(n_groups, values.cols());
  const Matrix& v = values.value();
  for (std::size_t r = 0; r < group_ids.size(); ++r) out.row(group_ids[r]) += v.row(static_cast<Index>(r));
  for (Index gidx = 0; gidx < n_groups; ++gidx) out.row(gidx) *= inv_count[static_cast<std::size_t>(gidx)];
  return values.tape().record(std::move(out), {values},
                              [values, ids = std::move(group_ids), inv = std::move(inv_count)](Tape& t, const Matrix& g) {
                                Matrix gv(values.rows(), values.cols());
                                for (std::size_t r = 0; r < ids.size(); ++r)
                                  gv.row(static_cast<Index>(r)) = g.row(ids[r]) * inv[static_cast<std::size_t>(ids[r])];
                                t.accumulate(values, gv);
                              });
}

/// Rows of `a` selected by `index` (repeats allowed).
inline Var gather_rows(const Var& a, std::span<const Index> index) {
  std::vector<Index> idx(index.begin(), index.end());
  Matrix out(static_cast<Index>(idx.size()), a.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= a.rows()) throw InvalidArgument("gather_rows: index " + std::to_string(idx[r]) + " out of range");
    out.row(static_cast<Index>(r)) = a.value().row(idx[r]);
  }
  return a.tape().record(std::move(out), {a}, [a, idx = std::move(idx)](Tape& t, const Matrix& g) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) ga.row(idx[r]) += g.row(static_cast<Index>(r));
    t.accumulate(a, ga);
  });
}

/// Horizontal concatenation; all parts must have the same row count.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_cols of nothing");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows)
      throw InvalidArgument("concat_cols: row mismatch " + shape_string(rows, parts.front().cols()) + " vs " + shape_string(p.rows(), p.cols()));
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().tape().record(std::move(out), std::span<const Var>(parts), [parts](Tape& t, const Matrix& g) {
    Index off = 0;
    for (const Var& p : parts) {
      if (t.requires_grad(p)) t.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

/// x + 1 * bias for a 1 x cols bias row.
inline Var add_bias(const Var& x, const Var& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols())
    throw InvalidArgument("add_bias: bias " + shape_string(bias.rows(), bias.cols()) + " for input " + shape_string(x.rows(), x.cols()));
  Matrix out = x.value();
  out.rowwise() += bias.value().row(0);
  return x.tape().record(std::move(out), {x, bias}, [x, bias](Tape& t, const Matrix& g) {
    t.accumulate(x, g);
    if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
  });
}

/// x * w + bias in one op; same arithmetic as add_bias(matmul(x, w), bias).
inline Var linear(const Var& x, const Var& w, const Var& bias) {
  if (x.cols() != w.rows())
    throw InvalidArgument("linear: shape mismatch " + shape_string(x.rows(), x.cols()) + " x " + shape_string(w.rows(), w.cols()));
  if (bias.rows() != 1 || bias.cols() != w.cols())
    throw InvalidArgument("linear: bias " + shape_string(bias.rows(), bias.cols()) + " for output width " + std::to_string(w.cols()));
  Matrix out(x.rows(), w.cols());
  out.noalias() = x.value() * w.value();
  out.rowwise() += bias.value().row(0);
  return x.tape().record(std::move(out), {x, w, bias}, [x, w, bias](Tape& t, const Matrix& g) {
    if (t.requires_grad(x)) {
      Matrix gx(x.rows(), x.cols());
      gx.noalias() = g * w.value().transpose();
      t.accumulate(x, gx);
    }
    if (t.requires_grad(w)) {
      Matrix gw(w.rows(), w.cols());
      gw.noalias() = x.value().transpose() * g;
      t.accumulate(w, gw);
    }
    if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
  });
}

}  // namespace meshlearn::ad
