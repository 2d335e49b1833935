#include "qpanel/inference.hpp"
#include "qpanel/error.hpp"
#include "qpanel/local_design.hpp"
#include "qpanel/sqr_core.hpp"

#include <cmath>

namespace qpanel {

PointGeometry
classify_point(const EvalSpec& spec)
{
  const Eigen::Index d = spec.x.size();
  PointGeometry g;
  g.region = Region::full(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double below = spec.x[j] - spec.support_lo[j];
    const double above = spec.support_hi[j] - spec.x[j];
    if (below < spec.h || above < spec.h)
      g.boundary = true;
    g.region.lo[j] = std::max(-1.0, -below / spec.h);
    g.region.hi[j] = std::min(1.0, above / spec.h);
  }
  return g;
}

DensityEstimates
estimate_densities(const PanelData& p,
                   const EvalSpec& spec,
                   const FitResult& fit,
                   std::optional<double> pilot_bw,
                   const KernelSpec& kernel)
{
  spec.validate(p.dim());
  const LocalSample s = make_local_linear(p, spec.x, spec.h, kernel);

  std::vector<double> resid;
  std::vector<double> weight;
  resid.reserve(s.n_obs());
  weight.reserve(s.n_obs());
  const Eigen::VectorXd phi = fit.beta * spec.h;
  for (std::size_t g = 0; g < s.n_units(); ++g) {
    const std::size_t unit = s.units[g];
    if (unit >= fit.eta.size() || !fit.eta[unit])
      continue;
    for (std::size_t k = s.offsets[g]; k < s.offsets[g + 1]; ++k) {
      double lin = 0.0;
      for (std::size_t j = 0; j < s.p; ++j)
        lin += s.z[k * s.p + j] * phi[static_cast<Eigen::Index>(j)];
      resid.push_back(s.y[k] - *fit.eta[unit] - lin);
      weight.push_back(s.w[k]);
    }
  }
  double wsum = 0.0;
  for (double w : weight)
    wsum += w;
  if (!(wsum > 0.0))
    throw Error(Errc::degenerate_density, "no retained observations near x");

  const double c0 = compute_moments(kernel, classify_point(spec).region).c0;
  const double nt = static_cast<double>(p.n_units() * p.n_periods());
  DensityEstimates out;
  out.fx = s.total_weight() / (nt * std::pow(spec.h, static_cast<double>(p.dim())) * c0);

  double bw = 0.0;
  if (pilot_bw) {
    bw = *pilot_bw;
  } else {
    double mean = 0.0;
    for (std::size_t k = 0; k < resid.size(); ++k)
      mean += weight[k] * resid[k];
    mean /= wsum;
    double var = 0.0;
    for (std::size_t k = 0; k < resid.size(); ++k)
      var += weight[k] * (resid[k] - mean) * (resid[k] - mean);
    bw = 1.06 * std::sqrt(var / wsum) * std::pow(wsum, -0.2);
  }
  if (!(bw > 0.0) || !std::isfinite(bw))
    throw Error(Errc::degenerate_density, "residual pilot bandwidth is not positive");
  out.pilot_bw = bw;

  // the c0 renormalization of the joint and marginal estimates cancels
  double acc = 0.0;
  for (std::size_t k = 0; k < resid.size(); ++k)
    acc += weight[k] * kernel.base_value(resid[k] / bw);
  out.fu0 = acc / (bw * wsum);
  out.fbar = out.fx * out.fu0;
  if (!(out.fx > 1e-12) || !(out.fu0 > 1e-12))
    throw Error(Errc::degenerate_density, "estimated density at x is not positive");
  return out;
}

double
sigma_hat(const DensityEstimates& d)
{
  return 1.0 / (d.fx * d.fu0 * d.fu0);
}

Eigen::VectorXd
standard_errors(const MomentSet& m,
                const DensityEstimates& d,
                const EvalSpec& spec,
                bool boundary,
                std::size_t n_units,
                std::size_t n_periods)
{
  const Eigen::MatrixXd V = boundary ? m.Omega : m.interior_variance();
  if (!V.allFinite() || (V.diagonal().array() <= 0.0).any())
    throw Error(Errc::singular_moment, "variance kernel is not positive");
  const double dim = static_cast<double>(spec.x.size());
  const double rate = static_cast<double>(n_units) * static_cast<double>(n_periods) *
                      std::pow(spec.h, dim + 2.0);
  const double scale = spec.tau * (1.0 - spec.tau) * sigma_hat(d) / rate;
  return (scale * V.diagonal().array()).sqrt().matrix();
}

Eigen::VectorXd
bias_b1(const MomentSet& m, const Eigen::MatrixXd& curvature)
{
  const Eigen::Index d = m.region.dim();
  if (curvature.rows() != d || curvature.cols() != d)
    throw Error(Errc::dimension_mismatch, "curvature must be d x d");
  if (m.region.is_full() || curvature.isZero(0.0))
    return Eigen::VectorXd::Zero(d);
  const QuadratureRule rule = gauss_legendre(m.nodes);
  const Eigen::VectorXd center = m.C1 / m.c0;
  const Eigen::VectorXd integral = integrate_box(
    m.region, rule, Eigen::VectorXd::Zero(d).eval(),
    [&](const Eigen::VectorXd& u) -> Eigen::VectorXd {
      const double k =
        kernel_value(m.kernel, std::span<const double>(u.data(), static_cast<std::size_t>(d)));
      return (u.dot(curvature * u) * k) * (u - center);
    });
  Eigen::FullPivLU<Eigen::MatrixXd> lu(m.C);
  if (!lu.isInvertible())
    throw Error(Errc::singular_c, "C is not invertible");
  return 0.5 * lu.solve(integral);
}

BoundaryBias
bias_b2(const MomentSet& m,
        const DensityEstimates& d,
        double tau,
        std::size_t n_units,
        std::size_t n_periods,
        double h)
{
  const Eigen::Index dim = m.region.dim();
  if (!(d.fbar > 1e-12))
    throw Error(Errc::degenerate_density, "fbar must be positive");
  BoundaryBias out;
  const double n = static_cast<double>(n_units);
  const double t = static_cast<double>(n_periods);
  const double dd = static_cast<double>(dim);
  out.kappa = std::sqrt(n / (t * std::pow(h, dd)));
  if (tau == 0.5 || m.region.is_full()) {
    out.unscaled = Eigen::VectorXd::Zero(dim);
    out.scaled = Eigen::VectorXd::Zero(dim);
    return out;
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(m.C);
  if (!lu.isInvertible())
    throw Error(Errc::singular_c, "C is not invertible");
  const Eigen::VectorXd inner = m.D1 / m.c0 - m.C1 * (m.d0 / (m.c0 * m.c0));
  out.unscaled = -(tau - 0.5) / d.fbar * lu.solve(inner);
  out.scaled = out.unscaled * (out.kappa / std::sqrt(n * t * std::pow(h, dd + 2.0)));
  return out;
}

Eigen::MatrixXd
pilot_curvature(const PanelData& p, const EvalSpec& spec, const SolverOptions& opts)
{
  spec.validate(p.dim());
  const double bw = 1.5 * spec.h;
  const std::size_t d = p.dim();
  LocalSample s = make_local_quadratic(p, spec.x, bw, opts.kernel);
  if (s.n_units() == 0)
    throw Error(Errc::no_local_data, "no observation has positive kernel weight at x");
  check_within_rank(s);

  SolverOptions local = opts;
  local.beta_tol = opts.beta_tol * bw;
  LocalFit start = solve_llqr_local(s, spec.tau, local);
  LocalFit fit = solve_llsqr_local(s, spec.tau, spec.b, opts, start);

  // coefficient on (X_a - x_a)(X_b - x_b) / bw^2 is Q_aa / 2 on the diagonal
  // and Q_ab off it
  Eigen::MatrixXd Q(d, d);
  std::size_t k = d;
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      const double c = fit.coef[static_cast<Eigen::Index>(k++)] / (bw * bw);
      const auto ai = static_cast<Eigen::Index>(a);
      const auto bi = static_cast<Eigen::Index>(b);
      if (a == b) {
        Q(ai, ai) = 2.0 * c;
      } else {
        Q(ai, bi) = c;
        Q(bi, ai) = c;
      }
    }
  }
  return Q;
}

QpeInference
infer(const PanelData& p,
      const EvalSpec& spec,
      const FitResult& fit,
      const SolverOptions& solver,
      const InferenceOptions& opts)
{
  const PointGeometry geo = classify_point(spec);
  const MomentSet m = compute_moments(solver.kernel, geo.region);
  QpeInference out;
  out.beta = fit.beta;
  out.boundary = geo.boundary;
  out.densities = estimate_densities(p, spec, fit, opts.pilot_bw, solver.kernel);
  out.sigma_x = sigma_hat(out.densities);
  out.se = standard_errors(m, out.densities, spec, geo.boundary, p.n_units(), p.n_periods());
  if (geo.boundary) {
    if (opts.smoothed) {
      const BoundaryBias bb =
        bias_b2(m, out.densities, spec.tau, p.n_units(), p.n_periods(), spec.h);
      out.b2 = bb.scaled;
      out.b2_unscaled = bb.unscaled;
    }
    if (opts.curvature)
      out.b1 = spec.h * bias_b1(m, pilot_curvature(p, spec, solver));
  }
  return out;
}

} // namespace qpanel
