#pragma once

#include "errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

namespace kvil {

//! Canonical phase running linearly from 1 to 0 over `duration` seconds.
struct CanonicalClock
{
  double duration = 1.0;
  double dt = 1e-3;

  double phase(double time) const
  {
    return std::clamp(1.0 - time / duration, 0.0, 1.0);
  }
};

//! Via-point movement primitive: linear elementary trajectory plus a
//! squared-exponential kernel shape term.
struct VMPModel
{
  int kernels = 20;
  int dim = 1;
  double width = 0.0; // h in exp(-h (x - c)^2)
  Eigen::VectorXd centers;
  Eigen::MatrixXd mean;            // kernels x dim
  std::vector<Eigen::MatrixXd> cov; // per output dimension, kernels x kernels

  //! Kernel activations at phase x.
  Eigen::VectorXd features(double x) const
  {
    return (-width * (centers.array() - x).square()).exp().matrix();
  }

  //! Shape term psi(x)^T mu_w.
  Eigen::VectorXd shape(double x) const { return mean.transpose() * features(x); }
};

//! Centers equally spaced on [-0.05, 1.05]; adjacent kernels cross at 0.8 of
//! their peak.
inline VMPModel
make_vmp(int kernels, int dim)
{
  if (kernels < 2) {
    throw RankDeficient("at least 2 kernels are required");
  }
  VMPModel m;
  m.kernels = kernels;
  m.dim = dim;
  m.centers = Eigen::VectorXd::LinSpaced(kernels, -0.05, 1.05);
  const double half = 0.5 * (m.centers(1) - m.centers(0));
  m.width = -std::log(0.8) / (half * half);
  m.mean = Eigen::MatrixXd::Zero(kernels, dim);
  m.cov.assign(static_cast<std::size_t>(dim), Eigen::MatrixXd::Zero(kernels, kernels));
  return m;
}

//! Phase of sample t out of `steps` (1 at t = 0, 0 at the end).
inline double
sample_phase(std::size_t t, std::size_t steps)
{
  return 1.0 - static_cast<double>(t) / static_cast<double>(steps - 1);
}

//! Each demo is a steps x dim matrix. Weights are ridge-regressed per demo on
//! the residual after removing that demo's own linear elementary trajectory.
inline VMPModel
fit_vmp(const std::vector<Eigen::MatrixXd>& demos, int kernels = 20)
{
  if (demos.empty()) {
    throw RankDeficient("no trajectories");
  }
  const auto steps = static_cast<std::size_t>(demos.front().rows());
  const auto dim = static_cast<int>(demos.front().cols());
  if (steps < static_cast<std::size_t>(kernels) || steps < 2) {
    throw RankDeficient("need at least as many samples as kernels");
  }
  VMPModel m = make_vmp(kernels, dim);
  Eigen::MatrixXd psi(static_cast<Eigen::Index>(steps), kernels);
  Eigen::VectorXd xs(static_cast<Eigen::Index>(steps));
  for (std::size_t t = 0; t < steps; ++t) {
    xs(static_cast<Eigen::Index>(t)) = sample_phase(t, steps);
    psi.row(static_cast<Eigen::Index>(t)) = m.features(xs(static_cast<Eigen::Index>(t))).transpose();
  }
  Eigen::MatrixXd gram = psi.transpose() * psi;
  gram.diagonal().array() += 1e-8;
  const Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success) {
    throw RankDeficient("kernel design matrix is singular");
  }

  const auto n = demos.size();
  std::vector<Eigen::MatrixXd> weights;
  weights.reserve(n);
  for (const auto& y : demos) {
    if (static_cast<std::size_t>(y.rows()) != steps || y.cols() != dim) {
      throw RankDeficient("demos must share length and dimension");
    }
    const Eigen::RowVectorXd y0 = y.row(0);
    const Eigen::RowVectorXd g = y.row(y.rows() - 1);
    Eigen::MatrixXd f = y;
    for (Eigen::Index t = 0; t < y.rows(); ++t) {
      f.row(t) -= g + xs(t) * (y0 - g);
    }
    weights.push_back(llt.solve(psi.transpose() * f));
    if (!weights.back().allFinite()) {
      throw RankDeficient("non-finite weights");
    }
  }
  for (const auto& w : weights) {
    m.mean += w;
  }
  m.mean /= static_cast<double>(n);
  if (n > 1) {
    for (int d = 0; d < dim; ++d) {
      Eigen::MatrixXd& c = m.cov[static_cast<std::size_t>(d)];
      for (const auto& w : weights) {
        const Eigen::VectorXd e = w.col(d) - m.mean.col(d);
        c += e * e.transpose();
      }
      c /= static_cast<double>(n - 1);
    }
  }
  return m;
}

//! Elementary trajectory adapted so that the full trajectory passes exactly
//! through the start, the goal and any via-points. Between consecutive
//! anchors it is linear in the phase.
class VmpPlan
{
public:
  VmpPlan(const VMPModel& model,
          const Eigen::VectorXd& y0,
          const Eigen::VectorXd& goal,
          std::vector<std::pair<double, Eigen::VectorXd>> via = {})
    : model_(&model)
  {
    if (y0.size() != model.dim || goal.size() != model.dim) {
      throw RankDeficient("start/goal dimension mismatch");
    }
    anchors_.emplace_back(0.0, goal - model.shape(0.0));
    for (auto& [x, y] : via) {
      if (x <= 0.0 || x >= 1.0 || y.size() != model.dim) {
        throw RankDeficient("via-point phase must lie in (0, 1)");
      }
      anchors_.emplace_back(x, y - model.shape(x));
    }
    anchors_.emplace_back(1.0, y0 - model.shape(1.0));
    std::stable_sort(anchors_.begin(), anchors_.end(), [](const auto& a, const auto& b) {
      return a.first < b.first;
    });
  }

  Eigen::VectorXd elementary(double x) const
  {
    x = std::clamp(x, 0.0, 1.0);
    std::size_t i = 0;
    while (i + 2 < anchors_.size() && x > anchors_[i + 1].first) {
      ++i;
    }
    const auto& [xa, ya] = anchors_[i];
    const auto& [xb, yb] = anchors_[i + 1];
    if (x == xb) {
      return yb;
    }
    if (x == xa) {
      return ya;
    }
    const double s = (x - xa) / (xb - xa);
    return ya + s * (yb - ya);
  }

  Eigen::VectorXd operator()(double x) const
  {
    return elementary(x) + model_->shape(std::clamp(x, 0.0, 1.0));
  }

private:
  const VMPModel* model_;
  std::vector<std::pair<double, Eigen::VectorXd>> anchors_;
};

//! Evaluates the primitive at `steps` phases from 1 down to 0.
inline Eigen::MatrixXd
rollout(const VMPModel& model,
        const Eigen::VectorXd& y0,
        const Eigen::VectorXd& goal,
        std::size_t steps)
{
  if (steps < 2) {
    throw RankDeficient("rollout needs at least 2 steps");
  }
  const VmpPlan plan(model, y0, goal);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(steps), model.dim);
  for (std::size_t t = 0; t < steps; ++t) {
    out.row(static_cast<Eigen::Index>(t)) = plan(sample_phase(t, steps)).transpose();
  }
  out.row(0) = y0.transpose();
  out.row(static_cast<Eigen::Index>(steps - 1)) = goal.transpose();
  return out;
}

} // namespace kvil
