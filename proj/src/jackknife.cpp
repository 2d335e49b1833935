#include "qpanel/jackknife.hpp"
#include "qpanel/error.hpp"
#include "qpanel/sqr_core.hpp"

namespace qpanel {

std::string_view
to_string(Estimator e)
{
  return e == Estimator::llqr ? "llqr" : "llsqr";
}

FitResult
fit(Estimator e, const PanelData& p, const EvalSpec& spec, const SolverOptions& opts, const FitResult* init)
{
  return e == Estimator::llqr ? fit_llqr(p, spec, opts, init) : fit_llsqr(p, spec, opts, init);
}

Eigen::VectorXd
jackknife_combine(const Eigen::VectorXd& full, const Eigen::VectorXd& half1, const Eigen::VectorXd& half2)
{
  if (half1.size() != full.size() || half2.size() != full.size())
    throw Error(Errc::dimension_mismatch, "slope vectors differ in length");
  return 2.0 * full - 0.5 * (half1 + half2);
}

namespace {

FitResult
labelled_fit(std::string_view label,
             Estimator e,
             const PanelData& p,
             const EvalSpec& spec,
             const SolverOptions& opts,
             const FitResult* init)
{
  try {
    return fit(e, p, spec, opts, init);
  } catch (const Error& err) {
    throw Error(err.code(), std::string(label) + " sample: " + err.detail());
  }
}

} // namespace

CorrectedFit
bias_correct(const PanelData& p, const EvalSpec& spec, Estimator e, const SolverOptions& opts, const FitResult* full)
{
  if (p.n_periods() < 2)
    throw Error(Errc::too_few_periods, "the jackknife needs T >= 2");
  auto [first, second] = split_halves(p);
  CorrectedFit out;
  out.full = full ? *full : labelled_fit("full", e, p, spec, opts, nullptr);
  out.half1 = labelled_fit("half1", e, first, spec, opts, &out.full);
  out.half2 = labelled_fit("half2", e, second, spec, opts, &out.full);
  out.beta_bc = jackknife_combine(out.full.beta, out.half1.beta, out.half2.beta);
  return out;
}

} // namespace qpanel
