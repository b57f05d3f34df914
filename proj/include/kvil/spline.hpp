#pragma once

#include "errors.hpp"
#include "geometry.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace kvil {

//! Natural cubic smoothing spline R -> R^3 in value/second-derivative form.
//! Outside the knot range it continues linearly.
struct CubicSmoothingSpline
{
  Eigen::VectorXd knots;  // m, strictly increasing
  Eigen::MatrixXd values; // m x 3
  Eigen::MatrixXd second; // m x 3, first and last rows zero

  std::size_t size() const { return static_cast<std::size_t>(knots.size()); }

  Vec3 eval(double u, Vec3* d1 = nullptr, Vec3* d2 = nullptr) const
  {
    const Eigen::Index m = knots.size();
    if (u <= knots(0) || u >= knots(m - 1)) {
      const bool left = u <= knots(0);
      const Eigen::Index i = left ? 0 : m - 2;
      const double h = knots(i + 1) - knots(i);
      const Vec3 slope = (values.row(i + 1) - values.row(i)).transpose() / h +
                         h / 6.0 *
                           (left ? Vec3(-2.0 * second.row(i).transpose() -
                                        second.row(i + 1).transpose())
                                 : Vec3(second.row(i).transpose() +
                                        2.0 * second.row(i + 1).transpose()));
      const Eigen::Index e = left ? 0 : m - 1;
      if (d1) {
        *d1 = slope;
      }
      if (d2) {
        d2->setZero();
      }
      return values.row(e).transpose() + (u - knots(e)) * slope;
    }
    const auto it = std::upper_bound(knots.data(), knots.data() + m, u);
    const Eigen::Index i = std::clamp<Eigen::Index>(it - knots.data() - 1, 0, m - 2);
    const double h = knots(i + 1) - knots(i);
    const double a = (knots(i + 1) - u) / h;
    const double b = 1.0 - a;
    const Vec3 g0 = values.row(i).transpose();
    const Vec3 g1 = values.row(i + 1).transpose();
    const Vec3 s0 = second.row(i).transpose();
    const Vec3 s1 = second.row(i + 1).transpose();
    if (d1) {
      *d1 = (g1 - g0) / h - (3.0 * a * a - 1.0) / 6.0 * h * s0 +
            (3.0 * b * b - 1.0) / 6.0 * h * s1;
    }
    if (d2) {
      *d2 = a * s0 + b * s1;
    }
    return a * g0 + b * g1 + ((a * a * a - a) * s0 + (b * b * b - b) * s1) * (h * h / 6.0);
  }

  //! Integral of the squared second derivative, summed over coordinates.
  double roughness() const
  {
    double acc = 0.0;
    const Eigen::Index m = knots.size();
    for (Eigen::Index i = 0; i + 1 < m; ++i) {
      const double h = knots(i + 1) - knots(i);
      const Eigen::RowVector3d s0 = second.row(i);
      const Eigen::RowVector3d s1 = second.row(i + 1);
      acc += h / 3.0 * (s0.squaredNorm() + s0.dot(s1) + s1.squaredNorm());
    }
    return acc;
  }
};

struct SplineFit
{
  CubicSmoothingSpline spline;
  double rss = 0.0; // weighted residual sum of squares
  double dof = 0.0; // trace of the smoother matrix
  double gcv = 0.0;
};

//! Minimizes sum_i w_i |y_i - g(u_i)|^2 + lambda * int |g''|^2 over natural
//! cubic splines with knots at the (strictly increasing) u_i.
inline SplineFit
fit_smoothing_spline(const Eigen::VectorXd& u,
                     const Eigen::MatrixXd& y,
                     const Eigen::VectorXd& w,
                     double lambda)
{
  const Eigen::Index m = u.size();
  if (m < 3) {
    throw InsufficientData("a smoothing spline needs at least 3 distinct knots");
  }
  const Eigen::Index r = m - 2;
  Eigen::VectorXd h(m - 1);
  for (Eigen::Index i = 0; i + 1 < m; ++i) {
    h(i) = u(i + 1) - u(i);
    if (!(h(i) > 0.0)) {
      throw DegenerateGeometry("spline knots must be strictly increasing");
    }
  }
  // Q is m x (m-2), R is (m-2) x (m-2); column c corresponds to knot c+1.
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(m, r);
  Eigen::MatrixXd rm = Eigen::MatrixXd::Zero(r, r);
  for (Eigen::Index c = 0; c < r; ++c) {
    q(c, c) = 1.0 / h(c);
    q(c + 1, c) = -1.0 / h(c) - 1.0 / h(c + 1);
    q(c + 2, c) = 1.0 / h(c + 1);
    rm(c, c) = (h(c) + h(c + 1)) / 3.0;
    if (c + 1 < r) {
      rm(c, c + 1) = rm(c + 1, c) = h(c + 1) / 6.0;
    }
  }
  const Eigen::VectorXd winv = w.cwiseInverse();
  const Eigen::MatrixXd wq = winv.asDiagonal() * q;
  const Eigen::MatrixXd mm = q.transpose() * wq;
  const Eigen::MatrixXd a = rm + lambda * mm;
  const Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) {
    throw FitDiverged("spline system is not positive definite");
  }
  const Eigen::MatrixXd gamma = llt.solve(q.transpose() * y);

  SplineFit fit;
  fit.spline.knots = u;
  fit.spline.values = y - lambda * wq * gamma;
  fit.spline.second = Eigen::MatrixXd::Zero(m, 3);
  fit.spline.second.middleRows(1, r) = gamma;

  const Eigen::MatrixXd resid = y - fit.spline.values;
  fit.rss = (w.asDiagonal() * resid.cwiseAbs2()).sum();
  fit.dof = static_cast<double>(m) - lambda * llt.solve(mm).trace();
  const double md = static_cast<double>(m);
  const double denom = md - fit.dof;
  fit.gcv = denom > 1e-12 ? md * fit.rss / (denom * denom)
                          : std::numeric_limits<double>::infinity();
  return fit;
}

//! Thin-plate smoothing surface R^2 -> R^3 with kernel r^2 log r.
struct ThinPlateSpline
{
  Eigen::MatrixXd centers; // m x 2
  Eigen::MatrixXd coef;    // m x 3
  Eigen::Matrix3d affine = Eigen::Matrix3d::Zero(); // rows: 1, u0, u1

  static double kernel(double r2)
  {
    return r2 > 0.0 ? 0.5 * r2 * std::log(r2) : 0.0;
  }

  //! Value, optional 3 x 2 Jacobian and optional per-coordinate Hessians.
  Vec3 eval(const Eigen::Vector2d& u,
            Eigen::Matrix<double, 3, 2>* jac = nullptr,
            std::array<Eigen::Matrix2d, 3>* hess = nullptr) const
  {
    Vec3 out = affine.row(0).transpose() + u(0) * affine.row(1).transpose() +
               u(1) * affine.row(2).transpose();
    Vec3 j0 = Vec3::Zero();
    Vec3 j1 = Vec3::Zero();
    Vec3 h00 = Vec3::Zero();
    Vec3 h01 = Vec3::Zero();
    Vec3 h11 = Vec3::Zero();
    const Eigen::Index m = centers.rows();
    for (Eigen::Index i = 0; i < m; ++i) {
      const double dx = u(0) - centers(i, 0);
      const double dy = u(1) - centers(i, 1);
      const double r2 = dx * dx + dy * dy;
      if (r2 <= 0.0) {
        continue;
      }
      const double lg = std::log(r2);
      const Vec3 c = coef.row(i).transpose();
      out += (0.5 * r2 * lg) * c;
      if (jac || hess) {
        // d/du (r^2 log r) = (2 log r + 1) (u - c_i)
        const double s = lg + 1.0;
        j0 += (s * dx) * c;
        j1 += (s * dy) * c;
        if (hess) {
          // d2/du2 (r^2 log r) = (2 log r + 1) I + 2 d d^T / r^2
          const double q = 2.0 / r2;
          h00 += (s + q * dx * dx) * c;
          h01 += (q * dx * dy) * c;
          h11 += (s + q * dy * dy) * c;
        }
      }
    }
    if (jac) {
      jac->col(0) = affine.row(1).transpose() + j0;
      jac->col(1) = affine.row(2).transpose() + j1;
    }
    if (hess) {
      for (int a = 0; a < 3; ++a) {
        (*hess)[a] << h00(a), h01(a), h01(a), h11(a);
      }
    }
    return out;
  }

  //! Bending energy c^T E c summed over coordinates.
  double bending() const
  {
    const Eigen::Index m = centers.rows();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index k = 0; k < m; ++k) {
        const double e =
          kernel((centers.row(i) - centers.row(k)).squaredNorm());
        acc += e * coef.row(i).dot(coef.row(k));
      }
    }
    return acc;
  }
};

struct SurfaceFit
{
  ThinPlateSpline surface;
  double rss = 0.0;
  double dof = 0.0;
  double gcv = 0.0;
};

inline SurfaceFit
fit_thin_plate(const Eigen::MatrixXd& u,
               const Eigen::MatrixXd& y,
               double lambda,
               bool with_gcv = true)
{
  const Eigen::Index m = u.rows();
  if (m < 4) {
    throw InsufficientData("a thin-plate surface needs at least 4 points");
  }
  // The bordered system is regular iff the affine block has full column
  // rank, i.e. the parameters are not collinear.
  Eigen::MatrixXd t(m, 3);
  t.col(0).setOnes();
  t.rightCols(2) = u;
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(t);
  const auto& sv = svd.singularValues();
  if (!(sv(2) > 1e-10 * sv(0))) {
    throw InsufficientData("thin-plate system is singular (collinear parameters)");
  }
  Eigen::MatrixXd sys = Eigen::MatrixXd::Zero(m + 3, m + 3);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index k = i + 1; k < m; ++k) {
      sys(i, k) = sys(k, i) =
        ThinPlateSpline::kernel((u.row(i) - u.row(k)).squaredNorm());
    }
    sys(i, i) = lambda;
  }
  sys.topRightCorner(m, 3) = t;
  sys.bottomLeftCorner(3, m) = t.transpose();
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(sys);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(m + 3, with_gcv ? 3 + m : 3);
  rhs.topLeftCorner(m, 3) = y;
  if (with_gcv) {
    rhs.block(0, 3, m, m).setIdentity();
  }
  const Eigen::MatrixXd sol = lu.solve(rhs);
  if (!sol.allFinite()) {
    throw InsufficientData("thin-plate system is singular");
  }

  SurfaceFit fit;
  fit.surface.centers = u;
  fit.surface.coef = sol.topLeftCorner(m, 3);
  fit.surface.affine = sol.bottomLeftCorner(3, 3);
  // y - f = lambda * c, so the smoother trace is m - lambda * tr(C).
  fit.rss = (lambda * fit.surface.coef).squaredNorm();
  if (!with_gcv) {
    fit.gcv = std::numeric_limits<double>::quiet_NaN();
    return fit;
  }
  fit.dof = static_cast<double>(m) - lambda * sol.block(0, 3, m, m).trace();
  const double md = static_cast<double>(m);
  const double denom = md - fit.dof;
  fit.gcv = denom > 1e-12 ? md * fit.rss / (denom * denom)
                          : std::numeric_limits<double>::infinity();
  return fit;
}

} // namespace kvil
