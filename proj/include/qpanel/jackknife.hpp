#pragma once

#include "qpanel/qr_core.hpp"

#include <string_view>

namespace qpanel {

enum class Estimator
{
  llqr,
  llsqr
};

std::string_view to_string(Estimator e);

//! Full-panel fit, both time-half fits and the split-panel corrected slope.
struct CorrectedFit
{
  FitResult full;
  FitResult half1;
  FitResult half2;
  Eigen::VectorXd beta_bc;

  bool all_converged() const { return full.converged && half1.converged && half2.converged; }
};

FitResult fit(Estimator e,
              const PanelData& p,
              const EvalSpec& spec,
              const SolverOptions& opts = {},
              const FitResult* init = nullptr);

//! 2 full - (half1 + half2) / 2, componentwise.
Eigen::VectorXd jackknife_combine(const Eigen::VectorXd& full,
                                  const Eigen::VectorXd& half1,
                                  const Eigen::VectorXd& half2);

//! Fits the full panel and both halves of the period split with the same
//! bandwidths. Half fits start from the full fit. A precomputed `full` fit is
//! reused when given. Errors name the sample that failed.
CorrectedFit bias_correct(const PanelData& p,
                          const EvalSpec& spec,
                          Estimator e,
                          const SolverOptions& opts = {},
                          const FitResult* full = nullptr);

} // namespace qpanel
