#pragma once

#include "qpanel/kernels.hpp"
#include "qpanel/local_design.hpp"
#include "qpanel/model.hpp"

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace qpanel {

//! Tuning of both estimators' solvers. Defaults are the documented ones.
struct SolverOptions
{
  KernelSpec kernel{};
  SmootherSpec smoother = SmootherSpec::fourth_order();

  // LLQR: majorize-minimize on the eps-perturbed check loss
  int max_iter = 500;
  double beta_tol = 1e-8;
  double objective_rtol = 1e-12;
  double eps_start = 0.1; // multiple of the local sd of Y
  double eps_decay = 0.5;
  double eps_floor = 1e-10;
  bool polish = true;

  // LLSQR: safeguarded Newton
  int newton_max_iter = 200;
  double grad_tol = 1e-8;
  double armijo_slope = 1e-4;
  double armijo_contraction = 0.5;
  double eta_ridge = 1e-10;
};

enum class FitStatus
{
  converged,
  max_iterations,
  line_search_failed
};

std::string_view to_string(FitStatus s);

//! Estimated slope and unit intercepts at one (x, tau).
struct FitResult
{
  Eigen::VectorXd beta;                   // per unit of x
  std::vector<std::optional<double>> eta; // empty for dropped units
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  FitStatus status = FitStatus::max_iterations;
  std::vector<std::size_t> dropped_units;
  //! Objective of the accepted iterate after each iteration.
  std::vector<double> trace;

  //! Intercepts with NaN for dropped units.
  std::vector<double> eta_or_nan() const;
};

//! Solution in local feature coordinates: eta per retained unit and the
//! coefficient on the scaled design (phi = h * beta for local linear).
struct LocalFit
{
  std::vector<double> eta;
  Eigen::VectorXd coef;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  FitStatus status = FitStatus::max_iterations;
  std::vector<double> trace;
};

double check_loss(double u, double tau);

//! Exact minimizer of sum_t w_t rho_tau(v_t - q): the smallest value whose
//! cumulative weight reaches tau * sum(w). Throws AllWeightsZero.
double weighted_quantile(std::span<const double> values,
                         std::span<const double> weights,
                         double tau);

//! sum_i sum_t rho_tau(Y - eta_i - (X - x)'beta) K((X - x)/h). Observations
//! with zero weight are skipped, so eta of dropped units is never read.
double llqr_objective(std::span<const double> eta,
                      const Eigen::VectorXd& beta,
                      const PanelData& p,
                      const EvalSpec& spec,
                      const KernelSpec& kernel = {});

//! Check-loss objective on a local sample in feature coordinates.
double local_check_objective(const LocalSample& s,
                             std::span<const double> eta,
                             const Eigen::VectorXd& coef,
                             double tau);

//! Exact intercepts given the slope; returns the objective.
double profile_intercepts(const LocalSample& s,
                          const Eigen::VectorXd& coef,
                          double tau,
                          std::vector<double>& eta);

LocalFit solve_llqr_local(const LocalSample& s,
                          double tau,
                          const SolverOptions& opts,
                          const LocalFit* warm = nullptr);

//! Local linear quantile regression with unit fixed effects.
//!
//! Throws NoLocalData when no unit has kernel weight at x and
//! RankDeficientDesign when the within-unit local design is singular.
//! Non-convergence is reported through `converged` / `status`.
FitResult fit_llqr(const PanelData& p,
                   const EvalSpec& spec,
                   const SolverOptions& opts = {},
                   const FitResult* init = nullptr);

//! Shared plumbing for the public fit wrappers.
namespace detail {

LocalSample prepare_local_linear(const PanelData& p,
                                 const EvalSpec& spec,
                                 const KernelSpec& kernel);

std::optional<LocalFit> warm_from(const LocalSample& s, const FitResult* init, double h);

FitResult to_fit_result(const LocalSample& s, const LocalFit& f, std::size_t n_units, double h);

} // namespace detail

} // namespace qpanel
