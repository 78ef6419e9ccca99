#pragma once

#include <cmath>
#include <vector>

#include "meshlearn/error.hpp"
#include "meshlearn/types.hpp"

namespace meshlearn {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam over a fixed list of parameter tensors.
class Adam {
 public:
  explicit Adam(AdamOptions opt = {}) : opt_(opt) {
    if (!(opt.learning_rate > 0)) throw InvalidArgument("learning rate must be positive");
    if (!(opt.beta1 >= 0 && opt.beta1 < 1 && opt.beta2 >= 0 && opt.beta2 < 1)) throw InvalidArgument("Adam betas must lie in [0, 1)");
  }

  const AdamOptions& options() const noexcept { return opt_; }
  void set_learning_rate(double lr) {
    if (!(lr > 0)) throw InvalidArgument("learning rate must be positive");
    opt_.learning_rate = lr;
  }
  long step_count() const noexcept { return t_; }
  const std::vector<Matrix>& first_moments() const noexcept { return m_; }
  const std::vector<Matrix>& second_moments() const noexcept { return v_; }

  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
    if (params.size() != grads.size()) throw InvalidArgument("parameter and gradient counts differ");
    if (m_.empty()) {
      for (const Matrix* p : params) {
        m_.push_back(Matrix::Zero(p->rows(), p->cols()));
        v_.push_back(Matrix::Zero(p->rows(), p->cols()));
      }
    }
    if (m_.size() != params.size()) throw InvalidArgument("parameter list changed between Adam steps");
    ++t_;
    const double c1 = 1 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Matrix& p = *params[i];
      const Matrix& g = grads[i];
      if (g.rows() != p.rows() || g.cols() != p.cols()) throw InvalidArgument("gradient shape differs from parameter shape");
      m_[i] = opt_.beta1 * m_[i] + (1 - opt_.beta1) * g;
      v_[i] = opt_.beta2 * v_[i] + (1 - opt_.beta2) * g.cwiseAbs2();
      p.array() -= opt_.learning_rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + opt_.epsilon);
    }
  }

 private:
  AdamOptions opt_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

}  // namespace meshlearn
