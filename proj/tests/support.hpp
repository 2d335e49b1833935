#pragma once

// Independent reference implementations used as test oracles. Nothing here
// calls the solvers under test; only PanelData / EvalSpec plumbing is shared.

#include "qpanel/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

namespace qtest {

using qpanel::EvalSpec;
using qpanel::PanelData;

inline EvalSpec
spec_1d(double x, double tau, double h, double b, double lo = -2.0, double hi = 2.0)
{
  EvalSpec s;
  s.x = Eigen::VectorXd::Constant(1, x);
  s.tau = tau;
  s.h = h;
  s.b = b;
  s.support_lo = Eigen::VectorXd::Constant(1, lo);
  s.support_hi = Eigen::VectorXd::Constant(1, hi);
  return s;
}

//! Heteroskedastic random panel with X uniform on [-2, 2]^d.
inline PanelData
random_panel(std::mt19937_64& rng, std::size_t n, std::size_t t, std::size_t d = 1, double slope = 1.0)
{
  std::uniform_real_distribution<double> ux(-2.0, 2.0);
  std::normal_distribution<double> nz(0.0, 1.0);
  std::vector<double> y(n * t);
  std::vector<double> x(n * t * d);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = nz(rng);
    for (std::size_t s = 0; s < t; ++s) {
      double lin = a;
      double mag = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double v = ux(rng);
        x[(i * t + s) * d + j] = v;
        lin += slope * v;
        mag += std::abs(v);
      }
      y[i * t + s] = lin + (1.0 + 0.3 * mag) * nz(rng);
    }
  }
  return PanelData(n, t, d, std::move(y), std::move(x));
}

inline double
epan(double u)
{
  return std::abs(u) <= 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
}

inline double
rho(double u, double tau)
{
  return u * (tau - (u <= 0.0 ? 1.0 : 0.0));
}

struct Obs
{
  std::size_t unit;
  double y;
  double z; // X - x, not scaled
  double w;
};

inline std::vector<Obs>
local_obs(const PanelData& p, const EvalSpec& s)
{
  std::vector<Obs> out;
  for (std::size_t i = 0; i < p.n_units(); ++i)
    for (std::size_t t = 0; t < p.n_periods(); ++t) {
      const double z = p.x(i, t)[0] - s.x[0];
      const double w = epan(z / s.h);
      if (w > 0.0)
        out.push_back({ i, p.y(i, t), z, w });
    }
  return out;
}

//! Profile of the check-loss objective at slope beta; each unit's intercept
//! found by evaluating the loss at every candidate value.
inline double
brute_profile(const std::vector<Obs>& obs, std::size_t n_units, double beta, double tau)
{
  double total = 0.0;
  for (std::size_t i = 0; i < n_units; ++i) {
    double best = std::numeric_limits<double>::infinity();
    bool any = false;
    for (const Obs& c : obs) {
      if (c.unit != i)
        continue;
      any = true;
      const double eta = c.y - beta * c.z;
      double f = 0.0;
      for (const Obs& o : obs)
        if (o.unit == i)
          f += o.w * rho(o.y - eta - beta * o.z, tau);
      best = std::min(best, f);
    }
    if (any)
      total += best;
  }
  return total;
}

struct BruteResult
{
  double beta;
  double objective;
};

//! Grid over the slope at resolution `step` (intercepts profiled exactly),
//! then a polish over every within-unit pairwise slope near the best grid
//! point: the convex piecewise-linear profile has its kinks there.
inline BruteResult
brute_llqr(const PanelData& p, const EvalSpec& s, double lo = -8.0, double hi = 8.0, double step = 1e-3)
{
  const auto obs = local_obs(p, s);
  BruteResult best{ 0.0, std::numeric_limits<double>::infinity() };
  const long n = static_cast<long>(std::llround((hi - lo) / step));
  for (long k = 0; k <= n; ++k) {
    const double b = lo + step * static_cast<double>(k);
    const double f = brute_profile(obs, p.n_units(), b, s.tau);
    if (f < best.objective)
      best = { b, f };
  }
  const double center = best.beta;
  for (const Obs& a : obs)
    for (const Obs& c : obs) {
      if (a.unit != c.unit || a.z == c.z)
        continue;
      const double b = (a.y - c.y) / (a.z - c.z);
      if (std::abs(b - center) > 2.0 * step)
        continue;
      const double f = brute_profile(obs, p.n_units(), b, s.tau);
      if (f < best.objective)
        best = { b, f };
    }
  return best;
}

//! 105/64 (1 - 5v^2 + 7v^4 - 3v^6) and its survival function, coded directly.
inline double
g4(double v)
{
  if (std::abs(v) > 1.0)
    return 0.0;
  const double v2 = v * v;
  return 105.0 / 64.0 * (1.0 - 5.0 * v2 + 7.0 * v2 * v2 - 3.0 * v2 * v2 * v2);
}

inline double
dg4(double v)
{
  if (std::abs(v) > 1.0)
    return 0.0;
  return 105.0 / 64.0 * (-10.0 * v + 28.0 * std::pow(v, 3) - 18.0 * std::pow(v, 5));
}

inline double
G4(double z)
{
  if (z <= -1.0)
    return 1.0;
  if (z >= 1.0)
    return 0.0;
  auto prim = [](double v) {
    return 105.0 / 64.0 * (v - 5.0 / 3.0 * std::pow(v, 3) + 7.0 / 5.0 * std::pow(v, 5) - 3.0 / 7.0 * std::pow(v, 7));
  };
  return 1.0 - (prim(z) - prim(-1.0));
}

//! Full-dimensional smoothed objective over theta = (eta_0..eta_{N-1}, beta)
//! with dense gradient and Hessian.
struct DenseSmoothed
{
  std::vector<Obs> obs;
  std::size_t n;
  double tau;
  double b;

  double value(const Eigen::VectorXd& th) const
  {
    double f = 0.0;
    for (const Obs& o : obs) {
      const double u = o.y - th[static_cast<Eigen::Index>(o.unit)] - th[static_cast<Eigen::Index>(n)] * o.z;
      f += o.w * (tau - G4(u / b)) * u;
    }
    return f;
  }

  void derivs(const Eigen::VectorXd& th, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) const
  {
    const auto dim = static_cast<Eigen::Index>(n + 1);
    grad = Eigen::VectorXd::Zero(dim);
    hess = Eigen::MatrixXd::Zero(dim, dim);
    for (const Obs& o : obs) {
      const auto i = static_cast<Eigen::Index>(o.unit);
      const auto bi = static_cast<Eigen::Index>(n);
      const double u = o.y - th[i] - th[bi] * o.z;
      const double v = u / b;
      const double d1 = tau - G4(v) + g4(v) * v;
      const double d2 = (2.0 * g4(v) + dg4(v) * v) / b;
      Eigen::Vector2d a(1.0, o.z);
      grad[i] -= o.w * d1 * a[0];
      grad[bi] -= o.w * d1 * a[1];
      hess(i, i) += o.w * d2;
      hess(i, bi) += o.w * d2 * o.z;
      hess(bi, i) += o.w * d2 * o.z;
      hess(bi, bi) += o.w * d2 * o.z * o.z;
    }
  }
};

//! Damped Newton on the dense system from `th`.
inline Eigen::VectorXd
dense_newton(const DenseSmoothed& f, Eigen::VectorXd th, int max_iter = 500)
{
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  for (int it = 0; it < max_iter; ++it) {
    f.derivs(th, grad, hess);
    const double val = f.value(th);
    if (grad.cwiseAbs().maxCoeff() < 1e-11 * (1.0 + std::abs(val)))
      break;
    Eigen::VectorXd step;
    for (double lam = 0.0;; lam = lam > 0.0 ? lam * 10.0 : 1e-6) {
      Eigen::MatrixXd H = hess;
      H.diagonal().array() += lam * (1.0 + hess.diagonal().cwiseAbs().maxCoeff());
      Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        step = -ldlt.solve(grad);
        if (grad.dot(step) < 0.0)
          break;
      }
      if (lam > 1e12) {
        step = -grad;
        break;
      }
    }
    double alpha = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls, alpha *= 0.5) {
      if (f.value(th + alpha * step) < val) {
        th += alpha * step;
        moved = true;
        break;
      }
    }
    if (!moved)
      break;
  }
  return th;
}

} // namespace qtest
