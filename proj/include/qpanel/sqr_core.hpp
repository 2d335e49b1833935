#pragma once

#include "qpanel/qr_core.hpp"

#include <Eigen/Dense>
#include <span>

namespace qpanel {

enum class Want
{
  value,
  gradient,
  hessian
};

//! Smoothed check loss sum_i sum_t (tau - G(r/b)) r K with derivatives.
//!
//! The Hessian is arrowhead-shaped: a diagonal intercept block, an N x d
//! cross block and a dense d x d slope block.
struct SmoothedLossEval
{
  double value = 0.0;
  Eigen::VectorXd grad_eta;
  Eigen::VectorXd grad_beta;
  Eigen::VectorXd hess_eta_diag;
  Eigen::MatrixXd hess_cross;
  Eigen::MatrixXd hess_beta;
};

//! rho(u) = (tau - G(u/b)) u and its first two derivatives in u.
struct SmoothedCheck
{
  double value;
  double d1;
  double d2;
};
SmoothedCheck smoothed_check(double u, double tau, double b, const SmootherSpec& g);

//! Evaluates on the full panel; slope derivatives are per unit of x.
//! Entries of `eta` for units without kernel weight are never read.
SmoothedLossEval sqr_eval(std::span<const double> eta,
                          const Eigen::VectorXd& beta,
                          const PanelData& p,
                          const EvalSpec& spec,
                          Want want,
                          const SolverOptions& opts = {});

//! Same quantities on a local sample, slope derivatives in feature units.
SmoothedLossEval smoothed_local_eval(const LocalSample& s,
                                     std::span<const double> eta,
                                     const Eigen::VectorXd& coef,
                                     double tau,
                                     double b,
                                     const SmootherSpec& g,
                                     Want want);

struct NewtonStep
{
  Eigen::VectorXd d_eta;
  Eigen::VectorXd d_coef;
  //! False when an intercept pivot or the Schur complement is not positive.
  bool positive_definite = false;
};

//! Solves H step = -grad by eliminating the intercept block first: the slope
//! step comes from S = H_bb - sum_i h_i h_i' / H_ii, intercepts by
//! back-substitution. Each H_ii gets `ridge * (1 + |H_ii|)` added. A positive
//! `shift` adds shift * (|H_jj| + mean |H_jj| of the block) to every diagonal
//! entry, a Marquardt-style damping for indefinite Hessians.
NewtonStep schur_newton_step(const SmoothedLossEval& e, double ridge, double shift = 0.0);

LocalFit solve_llsqr_local(const LocalSample& s,
                           double tau,
                           double b,
                           const SolverOptions& opts,
                           const LocalFit& start,
                           double slope_scale = 1.0);

//! Local linear smoothed quantile regression with unit fixed effects.
//!
//! Starts from `init` when given, otherwise from the LLQR fit. Stops when the
//! max-norm gradient in (eta, beta) units falls below grad_tol (1 + |value|).
FitResult fit_llsqr(const PanelData& p,
                    const EvalSpec& spec,
                    const SolverOptions& opts = {},
                    const FitResult* init = nullptr);

} // namespace qpanel
