#include "qpanel/sqr_core.hpp"
#include "qpanel/error.hpp"

#include <algorithm>
#include <cmath>

namespace qpanel {

namespace {

double
value_only(const LocalSample& s,
           std::span<const double> eta,
           const Eigen::VectorXd& coef,
           double tau,
           double b,
           const SmootherSpec& g)
{
  const std::size_t p = s.p;
  double acc = 0.0;
  for (std::size_t grp = 0; grp < s.n_units(); ++grp) {
    for (std::size_t k = s.offsets[grp]; k < s.offsets[grp + 1]; ++k) {
      const double* z = s.z.data() + k * p;
      double fit = eta[grp];
      for (std::size_t j = 0; j < p; ++j)
        fit += z[j] * coef[static_cast<Eigen::Index>(j)];
      const double r = s.y[k] - fit;
      acc += s.w[k] * (tau - g.G(r / b)) * r;
    }
  }
  return acc;
}

double
max_abs(const Eigen::VectorXd& v)
{
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

} // namespace

SmoothedCheck
smoothed_check(double u, double tau, double b, const SmootherSpec& g)
{
  double gv = 0.0;
  double dg = 0.0;
  double G = 0.0;
  const double v = u / b;
  g.eval(v, gv, dg, G);
  return { (tau - G) * u, tau - G + gv * v, (2.0 * gv + dg * v) / b };
}

SmoothedLossEval
smoothed_local_eval(const LocalSample& s,
                    std::span<const double> eta,
                    const Eigen::VectorXd& coef,
                    double tau,
                    double b,
                    const SmootherSpec& g,
                    Want want)
{
  const std::size_t p = s.p;
  const auto pi = static_cast<Eigen::Index>(p);
  const auto units = static_cast<Eigen::Index>(s.n_units());
  SmoothedLossEval e;
  if (want == Want::value) {
    e.value = value_only(s, eta, coef, tau, b, g);
    return e;
  }
  const bool hess = want == Want::hessian;
  e.grad_eta = Eigen::VectorXd::Zero(units);
  e.grad_beta = Eigen::VectorXd::Zero(pi);
  if (hess) {
    e.hess_eta_diag = Eigen::VectorXd::Zero(units);
    e.hess_cross = Eigen::MatrixXd::Zero(units, pi);
    e.hess_beta = Eigen::MatrixXd::Zero(pi, pi);
  }
  for (std::size_t grp = 0; grp < s.n_units(); ++grp) {
    const auto gi = static_cast<Eigen::Index>(grp);
    for (std::size_t k = s.offsets[grp]; k < s.offsets[grp + 1]; ++k) {
      const double* z = s.z.data() + k * p;
      double fit = eta[grp];
      for (std::size_t j = 0; j < p; ++j)
        fit += z[j] * coef[static_cast<Eigen::Index>(j)];
      const auto c = smoothed_check(s.y[k] - fit, tau, b, g);
      const double w = s.w[k];
      e.value += w * c.value;
      // residual derivative is -1 in eta and -z in the slope
      e.grad_eta[gi] -= w * c.d1;
      for (std::size_t j = 0; j < p; ++j)
        e.grad_beta[static_cast<Eigen::Index>(j)] -= w * c.d1 * z[j];
      if (!hess)
        continue;
      const double h2 = w * c.d2;
      e.hess_eta_diag[gi] += h2;
      for (std::size_t a = 0; a < p; ++a) {
        const auto ai = static_cast<Eigen::Index>(a);
        e.hess_cross(gi, ai) += h2 * z[a];
        for (std::size_t bb = a; bb < p; ++bb)
          e.hess_beta(ai, static_cast<Eigen::Index>(bb)) += h2 * z[a] * z[bb];
      }
    }
  }
  if (hess)
    e.hess_beta = e.hess_beta.selfadjointView<Eigen::Upper>();
  return e;
}

SmoothedLossEval
sqr_eval(std::span<const double> eta,
         const Eigen::VectorXd& beta,
         const PanelData& p,
         const EvalSpec& spec,
         Want want,
         const SolverOptions& opts)
{
  spec.validate(p.dim());
  if (eta.size() != p.n_units())
    throw Error(Errc::dimension_mismatch, "eta must have one entry per unit");
  LocalSample s = make_local_linear(p, spec.x, spec.h, opts.kernel);
  std::vector<double> local_eta(s.n_units());
  for (std::size_t g = 0; g < s.n_units(); ++g)
    local_eta[g] = eta[s.units[g]];
  const double h = spec.h;
  auto local = smoothed_local_eval(s, local_eta, beta * h, spec.tau, spec.b, opts.smoother, want);

  SmoothedLossEval e;
  e.value = local.value;
  if (want == Want::value)
    return e;
  const auto n = static_cast<Eigen::Index>(p.n_units());
  const auto d = static_cast<Eigen::Index>(p.dim());
  e.grad_eta = Eigen::VectorXd::Zero(n);
  e.grad_beta = h * local.grad_beta;
  if (want == Want::hessian) {
    e.hess_eta_diag = Eigen::VectorXd::Zero(n);
    e.hess_cross = Eigen::MatrixXd::Zero(n, d);
    e.hess_beta = h * h * local.hess_beta;
  }
  for (std::size_t g = 0; g < s.n_units(); ++g) {
    const auto gi = static_cast<Eigen::Index>(g);
    const auto ui = static_cast<Eigen::Index>(s.units[g]);
    e.grad_eta[ui] = local.grad_eta[gi];
    if (want == Want::hessian) {
      e.hess_eta_diag[ui] = local.hess_eta_diag[gi];
      e.hess_cross.row(ui) = h * local.hess_cross.row(gi);
    }
  }
  return e;
}

NewtonStep
schur_newton_step(const SmoothedLossEval& e, double ridge, double shift)
{
  const Eigen::Index units = e.grad_eta.size();
  const Eigen::Index p = e.grad_beta.size();
  NewtonStep step;
  step.d_eta = Eigen::VectorXd::Zero(units);
  step.d_coef = Eigen::VectorXd::Zero(p);

  const double eta_scale = units ? e.hess_eta_diag.cwiseAbs().mean() : 0.0;
  Eigen::VectorXd D(units);
  bool pivots_positive = true;
  for (Eigen::Index i = 0; i < units; ++i) {
    D[i] = e.hess_eta_diag[i] + ridge * (1.0 + std::abs(e.hess_eta_diag[i])) +
           shift * (std::abs(e.hess_eta_diag[i]) + eta_scale);
    if (!(D[i] > 0.0))
      pivots_positive = false;
  }
  if (!pivots_positive)
    return step;

  Eigen::MatrixXd S = e.hess_beta;
  if (shift > 0.0) {
    const double beta_scale = p ? S.diagonal().cwiseAbs().mean() : 0.0;
    for (Eigen::Index j = 0; j < p; ++j)
      S(j, j) += shift * (std::abs(S(j, j)) + beta_scale);
  }
  Eigen::VectorXd rhs = -e.grad_beta;
  for (Eigen::Index i = 0; i < units; ++i) {
    const auto row = e.hess_cross.row(i);
    S.noalias() -= row.transpose() * row / D[i];
    rhs.noalias() += row.transpose() * (e.grad_eta[i] / D[i]);
  }
  S = 0.5 * (S + S.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success)
    return step;
  step.d_coef = llt.solve(rhs);
  step.d_eta = (-e.grad_eta - e.hess_cross * step.d_coef).cwiseQuotient(D);
  step.positive_definite = step.d_coef.allFinite() && step.d_eta.allFinite();
  return step;
}

LocalFit
solve_llsqr_local(const LocalSample& s,
                  double tau,
                  double b,
                  const SolverOptions& opts,
                  const LocalFit& start,
                  double slope_scale)
{
  const auto units = static_cast<Eigen::Index>(s.n_units());
  LocalFit out;
  std::vector<double> eta = start.eta;
  Eigen::VectorXd coef = start.coef;
  std::vector<double> trial_eta(eta.size());

  double value = value_only(s, eta, coef, tau, b, opts.smoother);
  out.trace.push_back(value);
  out.status = FitStatus::max_iterations;

  int it = 0;
  for (; it < opts.newton_max_iter; ++it) {
    SmoothedLossEval e =
      smoothed_local_eval(s, eta, coef, tau, b, opts.smoother, Want::hessian);
    value = e.value;
    const double gnorm = std::max(max_abs(e.grad_eta), max_abs(e.grad_beta) * slope_scale);
    if (gnorm < opts.grad_tol * (1.0 + std::abs(value))) {
      out.converged = true;
      out.status = FitStatus::converged;
      break;
    }

    // plain Newton first, then Marquardt-shifted steps for indefinite
    // Hessians; steepest descent only if no shift gives a descent direction
    NewtonStep step;
    double slope = 0.0;
    for (double shift = 0.0; shift <= 1e10; shift = shift > 0.0 ? shift * 10.0 : 1e-4) {
      step = schur_newton_step(e, opts.eta_ridge, shift);
      if (step.positive_definite) {
        slope = e.grad_eta.dot(step.d_eta) + e.grad_beta.dot(step.d_coef);
        if (slope < 0.0)
          break;
      }
    }
    double alpha = 1.0;
    if (!step.positive_definite || !(slope < 0.0)) {
      // steepest descent, first trial moving no residual by more than b
      step.d_eta = -e.grad_eta;
      step.d_coef = -e.grad_beta;
      slope = -(e.grad_eta.squaredNorm() + e.grad_beta.squaredNorm());
      const double big = std::max(max_abs(step.d_eta), max_abs(step.d_coef));
      alpha = big > 0.0 ? std::min(1.0, b / big) : 1.0;
    }

    bool accepted = false;
    Eigen::VectorXd trial_coef;
    double trial_value = value;
    for (int ls = 0; ls < 80; ++ls) {
      for (Eigen::Index i = 0; i < units; ++i)
        trial_eta[static_cast<std::size_t>(i)] = eta[static_cast<std::size_t>(i)] + alpha * step.d_eta[i];
      trial_coef = coef + alpha * step.d_coef;
      trial_value = value_only(s, trial_eta, trial_coef, tau, b, opts.smoother);
      if (trial_value <= value + opts.armijo_slope * alpha * slope && trial_value < value) {
        accepted = true;
        break;
      }
      alpha *= opts.armijo_contraction;
    }
    if (!accepted) {
      out.status = FitStatus::line_search_failed;
      break;
    }
    eta.swap(trial_eta);
    coef = trial_coef;
    value = trial_value;
    out.trace.push_back(value);
  }

  out.eta = eta;
  out.coef = coef;
  out.objective = value;
  out.iterations = it;
  return out;
}

FitResult
fit_llsqr(const PanelData& p, const EvalSpec& spec, const SolverOptions& opts, const FitResult* init)
{
  LocalSample s = detail::prepare_local_linear(p, spec, opts.kernel);
  LocalFit start;
  if (auto warm = detail::warm_from(s, init, spec.h)) {
    start = *warm;
    // intercepts missing from the warm start come from the unit's quantile
    std::vector<double> prof;
    profile_intercepts(s, start.coef, spec.tau, prof);
    for (std::size_t g = 0; g < start.eta.size(); ++g)
      if (!std::isfinite(start.eta[g]))
        start.eta[g] = prof[g];
  } else {
    SolverOptions local = opts;
    local.beta_tol = opts.beta_tol * spec.h;
    start = solve_llqr_local(s, spec.tau, local);
  }
  LocalFit f = solve_llsqr_local(s, spec.tau, spec.b, opts, start, spec.h);
  return detail::to_fit_result(s, f, p.n_units(), spec.h);
}

} // namespace qpanel
