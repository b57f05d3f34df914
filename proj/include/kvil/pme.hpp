#pragma once

#include "constraint.hpp"
#include "pce_linear.hpp"
#include "spline.hpp"

#include <array>
#include <optional>
#include <vector>

namespace kvil {

using Chart = Eigen::VectorXd; // manifold coordinates, meters

//! Curvature-penalized principal curve (d = 1) or surface (d = 2).
//! Internally the fit lives in coordinates centered at `center` and divided
//! by `scale`; chart coordinates exposed by the API are in meters.
class PrincipalManifold
{
public:
  int dim = 1;
  Vec3 center = Vec3::Zero();
  double scale = 1.0;
  double lambda = 0.0;
  double residual_rms = 0.0;     // meters
  double curvature_energy = 0.0; // in normalized coordinates
  std::array<double, 2> lo{ 0.0, 0.0 }; // parameter hull, normalized
  std::array<double, 2> hi{ 0.0, 0.0 };
  CubicSmoothingSpline curve;
  ThinPlateSpline surface;

  static constexpr double kMargin = 0.2;
  static constexpr int kCurveSamples = 64;
  static constexpr int kSurfaceGrid = 15;

  double chart_lo(int a) const { return (lo[a] - kMargin * width(a)) * scale; }
  double chart_hi(int a) const { return (hi[a] + kMargin * width(a)) * scale; }

  bool in_chart(const Chart& u, double tol = 1e-9) const
  {
    for (int a = 0; a < dim; ++a) {
      const double slack = tol * (1.0 + std::abs(scale));
      if (u(a) < chart_lo(a) - slack || u(a) > chart_hi(a) + slack) {
        return false;
      }
    }
    return true;
  }

  //! f(u) with no hull check.
  Vec3 evaluate(const Chart& u) const
  {
    if (dim == 1) {
      return center + scale * curve.eval(u(0) / scale);
    }
    return center + scale * surface.eval(Eigen::Vector2d(u(0), u(1)) / scale);
  }

  Vec3 reconstruct(const Chart& u) const
  {
    if (u.size() != dim) {
      throw OutOfChart("chart coordinate has the wrong dimension");
    }
    if (!in_chart(u)) {
      throw OutOfChart("coordinate outside the inflated parameter hull");
    }
    return evaluate(u);
  }

  //! 3 x d differential of f.
  Eigen::MatrixXd jacobian(const Chart& u) const
  {
    if (dim == 1) {
      Vec3 d1;
      curve.eval(u(0) / scale, &d1);
      return d1;
    }
    Eigen::Matrix<double, 3, 2> j;
    surface.eval(Eigen::Vector2d(u(0), u(1)) / scale, &j);
    return j;
  }

  //! Unit surface normal (d = 2 only).
  Vec3 normal(const Chart& u) const
  {
    const Eigen::MatrixXd j = jacobian(u);
    const Vec3 n = Vec3(j.col(0)).cross(Vec3(j.col(1)));
    const double len = n.norm();
    return len > 0.0 ? Vec3(n / len) : Vec3::UnitZ();
  }

  //! Projection index: chart coordinate of the nearest manifold point,
  //! searched over the inflated hull.
  Chart project(const Vec3& x) const
  {
    const Vec3 y = (x - center) / scale;
    Chart u(dim);
    if (dim == 1) {
      if (curve_samples_.empty()) {
        u(0) = project_curve(y, lo[0] - kMargin * width(0), hi[0] + kMargin * width(0));
      } else {
        u(0) = project_curve(y, curve_params_, curve_samples_);
      }
    } else {
      const Eigen::Vector2d v =
        grid_.us.empty() ? project_surface(y, surface_grid()) : project_surface(y, grid_);
      u(0) = v(0);
      u(1) = v(1);
    }
    return u * scale;
  }

  //! Precomputes the dense projection samples. Call after changing the fit.
  void prepare()
  {
    curve_params_.clear();
    curve_samples_.clear();
    grid_ = {};
    if (dim == 1) {
      const double a = lo[0] - kMargin * width(0);
      const double b = hi[0] + kMargin * width(0);
      for (int s = 0; s < kCurveSamples; ++s) {
        curve_params_.push_back(a + (b - a) * s / (kCurveSamples - 1));
        curve_samples_.push_back(curve.eval(curve_params_.back()));
      }
    } else {
      grid_ = surface_grid();
    }
  }

  //! Residual x - f(pi(x)).
  Vec3 stress(const Vec3& x) const { return x - evaluate(project(x)); }

  // Normalized-coordinate helpers shared with the fitting loop.

  double width(int a) const { return hi[a] - lo[a]; }

  double project_curve(const Vec3& y, double a, double b) const
  {
    std::vector<double> us(kCurveSamples);
    std::vector<Vec3> pts(kCurveSamples);
    for (int s = 0; s < kCurveSamples; ++s) {
      us[s] = a + (b - a) * s / (kCurveSamples - 1);
      pts[s] = curve.eval(us[s]);
    }
    return project_curve(y, us, pts);
  }

  double project_curve(const Vec3& y,
                       const std::vector<double>& us,
                       const std::vector<Vec3>& pts) const
  {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < us.size(); ++s) {
      const double d = (pts[s] - y).squaredNorm();
      if (d < bd) {
        bd = d;
        best = s;
      }
    }
    double lo_u = us[best == 0 ? 0 : best - 1];
    double hi_u = us[best + 1 == us.size() ? best : best + 1];
    double u = us[best];
    auto cost = [&](double t) { return (curve.eval(t) - y).squaredNorm(); };
    // Safeguarded Newton on the squared distance, bisection on failure.
    for (int it = 0; it < 30; ++it) {
      Vec3 d1;
      Vec3 d2;
      const Vec3 r = curve.eval(u, &d1, &d2) - y;
      const double g = r.dot(d1);
      const double h = d1.squaredNorm() + r.dot(d2);
      if (g > 0.0) {
        hi_u = u;
      } else {
        lo_u = u;
      }
      double next = h > 0.0 ? u - g / h : 0.5 * (lo_u + hi_u);
      if (!(next > lo_u && next < hi_u)) {
        next = 0.5 * (lo_u + hi_u);
      }
      if (std::abs(next - u) <= 1e-14 * (1.0 + std::abs(u))) {
        u = next;
        break;
      }
      u = next;
    }
    // Never return something worse than the best sample.
    return cost(u) <= bd ? u : us[best];
  }

  struct Grid
  {
    std::vector<Eigen::Vector2d> us;
    std::vector<Vec3> pts;
    Eigen::Vector2d a = Eigen::Vector2d::Zero();
    Eigen::Vector2d b = Eigen::Vector2d::Zero();
  };

  Grid surface_grid() const
  {
    return surface_grid({ lo[0] - kMargin * width(0), lo[1] - kMargin * width(1) },
                        { hi[0] + kMargin * width(0), hi[1] + kMargin * width(1) });
  }

  Grid surface_grid(const Eigen::Vector2d& a, const Eigen::Vector2d& b) const
  {
    Grid g;
    g.a = a;
    g.b = b;
    for (int i = 0; i < kSurfaceGrid; ++i) {
      for (int k = 0; k < kSurfaceGrid; ++k) {
        const Eigen::Vector2d u(a(0) + (b(0) - a(0)) * i / (kSurfaceGrid - 1),
                                a(1) + (b(1) - a(1)) * k / (kSurfaceGrid - 1));
        g.us.push_back(u);
        g.pts.push_back(surface.eval(u));
      }
    }
    return g;
  }

  Eigen::Vector2d project_surface(const Vec3& y, const Grid& g) const
  {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < g.us.size(); ++s) {
      const double d = (g.pts[s] - y).squaredNorm();
      if (d < bd) {
        bd = d;
        best = s;
      }
    }
    return refine_surface(y, g.us[best], g.a, g.b);
  }

  //! Levenberg-Marquardt damped Newton on |f(u) - y|^2, clamped to the box
  //! [a, b]. Derivatives are evaluated together with every trial point.
  Eigen::Vector2d refine_surface(const Vec3& y,
                                 Eigen::Vector2d u,
                                 const Eigen::Vector2d& a,
                                 const Eigen::Vector2d& b) const
  {
    Eigen::Matrix<double, 3, 2> j;
    std::array<Eigen::Matrix2d, 3> hess;
    Vec3 r = surface.eval(u, &j, &hess) - y;
    double cu = r.squaredNorm();
    double mu = 1e-12;
    for (int it = 0; it < 30; ++it) {
      const Eigen::Vector2d grad = j.transpose() * r;
      Eigen::Matrix2d h = j.transpose() * j;
      for (int c = 0; c < 3; ++c) {
        h += r(c) * hess[c];
      }
      const double diag = 1.0 + h.diagonal().cwiseAbs().maxCoeff();
      bool moved = false;
      for (int ls = 0; ls < 8; ++ls) {
        Eigen::Matrix2d hm = h;
        hm.diagonal().array() += mu * diag;
        const Eigen::LDLT<Eigen::Matrix2d> ldlt(hm);
        if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all()) {
          mu = std::max(mu * 10.0, 1e-6);
          continue;
        }
        const Eigen::Vector2d delta = ldlt.solve(grad);
        if (delta.norm() <= 1e-10 * (1.0 + u.norm())) {
          return u;
        }
        const Eigen::Vector2d cand = (u - delta).cwiseMax(a).cwiseMin(b);
        Eigen::Matrix<double, 3, 2> jc;
        std::array<Eigen::Matrix2d, 3> hc;
        const Vec3 rc = surface.eval(cand, &jc, &hc) - y;
        const double cc = rc.squaredNorm();
        if (cc <= cu) {
          const double step = (cand - u).norm();
          u = cand;
          cu = cc;
          r = rc;
          j = jc;
          hess = hc;
          mu = std::max(mu * 0.1, 1e-12);
          moved = step > 1e-10 * (1.0 + u.norm());
          break;
        }
        mu = std::max(mu * 10.0, 1e-6);
      }
      if (!moved) {
        break;
      }
    }
    return u;
  }

private:
  std::vector<double> curve_params_;
  std::vector<Vec3> curve_samples_;
  Grid grid_;
};

inline const std::vector<double>&
default_lambda_grid()
{
  static const std::vector<double> grid{ 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2 };
  return grid;
}

struct PmeOptions
{
  std::vector<double> lambda_grid = default_lambda_grid();
  int max_iterations = 50;
  double tolerance = 1e-6; // mean foot-point shift, fraction of reference_scale
  double reference_scale = 0.0; // meters; 0 uses the extent of the fitted cloud
  int divergence_patience = 10;
  bool reselect_lambda = false; // GCV on every iteration instead of only the first
};

namespace detail {

//! Sorts parameters and merges coincident ones into weighted knots.
struct Knots
{
  Eigen::VectorXd u;
  Eigen::MatrixXd y;
  Eigen::VectorXd w;
};

inline Knots
merge_knots(const std::vector<double>& u, const std::vector<Vec3>& y)
{
  std::vector<std::size_t> order(u.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return u[a] < u[b]; });
  const double span = u[order.back()] - u[order.front()];
  const double tie = 1e-9 * std::max(span, 1e-12);
  std::vector<double> ku;
  std::vector<Vec3> ky;
  std::vector<double> kw;
  for (auto i : order) {
    if (!ku.empty() && u[i] - ku.back() <= tie) {
      const double w = kw.back();
      ky.back() = (ky.back() * w + y[i]) / (w + 1.0);
      kw.back() = w + 1.0;
    } else {
      ku.push_back(u[i]);
      ky.push_back(y[i]);
      kw.push_back(1.0);
    }
  }
  Knots k;
  k.u = Eigen::Map<Eigen::VectorXd>(ku.data(), static_cast<Eigen::Index>(ku.size()));
  k.y.resize(static_cast<Eigen::Index>(ky.size()), 3);
  for (std::size_t i = 0; i < ky.size(); ++i) {
    k.y.row(static_cast<Eigen::Index>(i)) = ky[i].transpose();
  }
  k.w = Eigen::Map<Eigen::VectorXd>(kw.data(), static_cast<Eigen::Index>(kw.size()));
  return k;
}

struct Normalized
{
  Vec3 center;
  double scale;
  std::vector<Vec3> y;
  Mat3 axes; // principal axes, descending variance
};

inline Normalized
normalize_cloud(std::span<const Vec3> points)
{
  Normalized out;
  out.center = centroid(points);
  out.scale = max_pairwise_distance(points);
  if (!(out.scale > 1e-12 * (1.0 + out.center.norm()))) {
    throw InsufficientData("points coincide");
  }
  out.y.reserve(points.size());
  for (const auto& p : points) {
    out.y.push_back((p - out.center) / out.scale);
  }
  out.axes = pca_variability(out.y, 1.0).axes;
  return out;
}

} // namespace detail

//! Iterative projection / smoothing fit of a principal curve or surface. The
//! smoothing weight is picked by generalized cross-validation over
//! `lambda_grid` (values are dimensionless, relative to the cloud scale).
//! Unless `reselect_lambda` is set the choice made on the first iteration is
//! kept.
inline PrincipalManifold
fit_pme(std::span<const Vec3> points, int d, const PmeOptions& opt = {})
{
  if (d != 1 && d != 2) {
    throw InsufficientData("intrinsic dimension must be 1 or 2");
  }
  if (points.size() < 11) {
    throw InsufficientData("principal manifolds need at least 11 points");
  }
  if (opt.lambda_grid.empty()) {
    throw InsufficientData("empty smoothing grid");
  }
  const auto cloud = detail::normalize_cloud(points);
  const auto& y = cloud.y;
  const std::size_t n = y.size();
  const double tolerance =
    opt.tolerance * (opt.reference_scale > 0.0 ? opt.reference_scale / cloud.scale : 1.0);

  PrincipalManifold pm;
  pm.dim = d;
  pm.center = cloud.center;
  pm.scale = cloud.scale;

  std::vector<Eigen::Vector2d> u(n);
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = { y[i].dot(cloud.axes.col(0)), y[i].dot(cloud.axes.col(1)) };
  }
  std::vector<Vec3> foot(n);
  for (std::size_t i = 0; i < n; ++i) {
    foot[i] = u[i](0) * cloud.axes.col(0) + (d == 2 ? u[i](1) : 0.0) * cloud.axes.col(1);
  }

  auto lambda_candidates = [&](int iter) {
    return iter == 0 || opt.reselect_lambda ? opt.lambda_grid
                                            : std::vector<double>{ pm.lambda };
  };

  double prev_shift = std::numeric_limits<double>::infinity();
  int stalled = 0;
  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    // (b) smoothing step over the current parameters
    if (d == 1) {
      std::vector<double> u1(n);
      for (std::size_t i = 0; i < n; ++i) {
        u1[i] = u[i](0);
      }
      const auto k = detail::merge_knots(u1, y);
      std::optional<SplineFit> best;
      for (double lam : lambda_candidates(iter)) {
        auto f = fit_smoothing_spline(k.u, k.y, k.w, lam);
        if (!best || f.gcv < best->gcv) {
          best = std::move(f);
          pm.lambda = lam;
        }
      }
      pm.curve = std::move(best->spline);
      pm.lo[0] = k.u(0);
      pm.hi[0] = k.u(k.u.size() - 1);
    } else {
      Eigen::MatrixXd um(static_cast<Eigen::Index>(n), 2);
      Eigen::MatrixXd ym(static_cast<Eigen::Index>(n), 3);
      for (std::size_t i = 0; i < n; ++i) {
        um.row(static_cast<Eigen::Index>(i)) = u[i].transpose();
        ym.row(static_cast<Eigen::Index>(i)) = y[i].transpose();
      }
      std::optional<SurfaceFit> best;
      const auto grid = lambda_candidates(iter);
      for (double lam : grid) {
        auto f = fit_thin_plate(um, ym, lam, grid.size() > 1);
        if (!best || f.gcv < best->gcv) {
          best = std::move(f);
          pm.lambda = lam;
        }
      }
      pm.surface = std::move(best->surface);
      pm.lo = { um.col(0).minCoeff(), um.col(1).minCoeff() };
      pm.hi = { um.col(0).maxCoeff(), um.col(1).maxCoeff() };
    }

    // (a) projection step onto the refitted manifold
    std::vector<Vec3> new_foot(n);
    if (d == 1) {
      const double a = pm.lo[0] - PrincipalManifold::kMargin * pm.width(0);
      const double b = pm.hi[0] + PrincipalManifold::kMargin * pm.width(0);
      std::vector<double> us(PrincipalManifold::kCurveSamples);
      std::vector<Vec3> pts(us.size());
      for (std::size_t s = 0; s < us.size(); ++s) {
        us[s] = a + (b - a) * static_cast<double>(s) / static_cast<double>(us.size() - 1);
        pts[s] = pm.curve.eval(us[s]);
      }
      // Arc length along the dense samples reparameterizes the curve.
      std::vector<double> arc(us.size(), 0.0);
      for (std::size_t s = 1; s < us.size(); ++s) {
        arc[s] = arc[s - 1] + (pts[s] - pts[s - 1]).norm();
      }
      for (std::size_t i = 0; i < n; ++i) {
        const double ui = pm.project_curve(y[i], us, pts);
        new_foot[i] = pm.curve.eval(ui);
        const auto it = std::upper_bound(us.begin(), us.end(), ui);
        const std::size_t s = std::clamp<std::size_t>(
          static_cast<std::size_t>(it - us.begin()), 1, us.size() - 1);
        const double t = (ui - us[s - 1]) / (us[s] - us[s - 1]);
        u[i](0) = arc[s - 1] + t * (arc[s] - arc[s - 1]);
      }
    } else {
      // Local search from the previous parameters; the dense grid is only
      // used to seed the first projection.
      const Eigen::Vector2d a(pm.lo[0] - PrincipalManifold::kMargin * pm.width(0),
                              pm.lo[1] - PrincipalManifold::kMargin * pm.width(1));
      const Eigen::Vector2d b(pm.hi[0] + PrincipalManifold::kMargin * pm.width(0),
                              pm.hi[1] + PrincipalManifold::kMargin * pm.width(1));
      std::optional<PrincipalManifold::Grid> g;
      if (iter == 0) {
        g = pm.surface_grid(a, b);
      }
      for (std::size_t i = 0; i < n; ++i) {
        u[i] = g ? pm.project_surface(y[i], *g)
                 : pm.refine_surface(y[i], u[i], a, b);
        new_foot[i] = pm.surface.eval(u[i]);
      }
    }

    double shift = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      shift += (new_foot[i] - foot[i]).norm();
    }
    shift /= static_cast<double>(n);
    foot = std::move(new_foot);
    if (!std::isfinite(shift)) {
      throw FitDiverged("non-finite projection shift");
    }
    if (shift < tolerance) {
      break;
    }
    stalled = shift >= prev_shift ? stalled + 1 : 0;
    if (stalled >= opt.divergence_patience) {
      throw FitDiverged("projection shift did not decrease for " +
                        std::to_string(stalled) + " iterations");
    }
    prev_shift = shift;
  }

  // Final smoothing pass so the stored manifold matches the final parameters.
  if (d == 1) {
    std::vector<double> u1(n);
    for (std::size_t i = 0; i < n; ++i) {
      u1[i] = u[i](0);
    }
    const auto k = detail::merge_knots(u1, y);
    auto f = fit_smoothing_spline(k.u, k.y, k.w, pm.lambda);
    pm.curve = std::move(f.spline);
    pm.lo[0] = k.u(0);
    pm.hi[0] = k.u(k.u.size() - 1);
    pm.curvature_energy = pm.curve.roughness();
  } else {
    Eigen::MatrixXd um(static_cast<Eigen::Index>(n), 2);
    Eigen::MatrixXd ym(static_cast<Eigen::Index>(n), 3);
    for (std::size_t i = 0; i < n; ++i) {
      um.row(static_cast<Eigen::Index>(i)) = u[i].transpose();
      ym.row(static_cast<Eigen::Index>(i)) = y[i].transpose();
    }
    auto f = fit_thin_plate(um, ym, pm.lambda, false);
    pm.surface = std::move(f.surface);
    pm.lo = { um.col(0).minCoeff(), um.col(1).minCoeff() };
    pm.hi = { um.col(0).maxCoeff(), um.col(1).maxCoeff() };
    pm.curvature_energy = pm.surface.bending();
  }

  pm.prepare();
  double acc = 0.0;
  for (const auto& p : points) {
    acc += pm.stress(p).squaredNorm();
  }
  pm.residual_rms = std::sqrt(acc / static_cast<double>(n));
  return pm;
}

struct ManifoldVariability
{
  double eta_perp = 0.0;
  double eta_par = 0.0;
};

namespace detail {

inline double
sample_variance(const std::vector<double>& v)
{
  if (v.size() < 2) {
    return 0.0;
  }
  double mean = 0.0;
  for (double x : v) {
    mean += x;
  }
  mean /= static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) {
    acc += (x - mean) * (x - mean);
  }
  return acc / static_cast<double>(v.size() - 1);
}

} // namespace detail

//! Tangential spread uses chart coordinates centered at their mean.
inline ManifoldVariability
nonlinear_variability(const PrincipalManifold& pm, std::span<const Vec3> points, double scale)
{
  const std::size_t n = points.size();
  std::vector<Chart> u(n);
  std::vector<double> stress(n);
  Chart mean = Chart::Zero(pm.dim);
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = pm.project(points[i]);
    stress[i] = (points[i] - pm.evaluate(u[i])).norm();
    mean += u[i];
  }
  mean /= static_cast<double>(n);
  std::vector<double> par(n);
  for (std::size_t i = 0; i < n; ++i) {
    par[i] = (u[i] - mean).norm();
  }
  return { std::sqrt(detail::sample_variance(stress)) / scale,
           std::sqrt(detail::sample_variance(par)) / scale };
}

inline std::optional<ConstraintKind>
classify_nonlinear(const ManifoldVariability& v, const Thresholds& th, int d)
{
  if (v.eta_perp < th.xi1 && v.eta_par > th.xi2) {
    return d == 1 ? ConstraintKind::p2c : ConstraintKind::p2S;
  }
  return std::nullopt;
}

struct NonlinearResult
{
  ConstraintKind kind;
  PrincipalManifold manifold;
  ManifoldVariability variability;
};

//! Tries a curve first and a surface only when the curve leaves too much
//! orthogonal spread (or cannot be fitted).
inline std::optional<NonlinearResult>
fit_and_classify_nonlinear(std::span<const Vec3> points,
                           double scale,
                           const Thresholds& th,
                           const PmeOptions& opt = {})
{
  PmeOptions o = opt;
  if (o.reference_scale <= 0.0) {
    o.reference_scale = scale;
  }
  bool try_surface = true;
  try {
    auto pm = fit_pme(points, 1, o);
    const auto v = nonlinear_variability(pm, points, scale);
    if (auto k = classify_nonlinear(v, th, 1)) {
      return NonlinearResult{ *k, std::move(pm), v };
    }
    try_surface = v.eta_perp >= th.xi1;
  } catch (const FitDiverged&) {
  } catch (const InsufficientData&) {
  }
  if (!try_surface) {
    return std::nullopt;
  }
  try {
    auto pm = fit_pme(points, 2, o);
    const auto v = nonlinear_variability(pm, points, scale);
    if (auto k = classify_nonlinear(v, th, 2)) {
      return NonlinearResult{ *k, std::move(pm), v };
    }
  } catch (const FitDiverged&) {
  } catch (const InsufficientData&) {
  }
  return std::nullopt;
}

} // namespace kvil
