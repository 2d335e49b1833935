#pragma once

#include "qpanel/kernels.hpp"
#include "qpanel/model.hpp"
#include "qpanel/qr_core.hpp"

#include <Eigen/Dense>
#include <optional>

namespace qpanel {

//! Interior / boundary status of an evaluation point and the clipped
//! integration region {v in [-1,1]^d : x + v h in support}.
struct PointGeometry
{
  bool boundary = false;
  Region region;
};

//! Boundary iff some coordinate lies closer than h to a support edge.
PointGeometry classify_point(const EvalSpec& spec);

//! Pooled density estimates at x under identical-across-units densities.
struct DensityEstimates
{
  double fx = 0.0;   // f_X(x)
  double fu0 = 0.0;  // f_u(0 | x)
  double fbar = 0.0; // f_X(x) f_u(0 | x)
  double pilot_bw = 0.0;
};

//! f_X(x) = sum K / (N T h^d c0) with c0 from the point's clipped region;
//! f_u(0|x) is the K-weighted kernel density of the local residuals at 0.
//! Without `pilot_bw` the residual bandwidth is 1.06 sd (sum K)^{-1/5}.
//! Throws DegenerateDensity when either estimate is <= 1e-12.
DensityEstimates estimate_densities(const PanelData& p,
                                    const EvalSpec& spec,
                                    const FitResult& fit,
                                    std::optional<double> pilot_bw = std::nullopt,
                                    const KernelSpec& kernel = {});

//! sigma(x) = f_X(x)^{-1} f_u(0|x)^{-2}.
double sigma_hat(const DensityEstimates& d);

//! se_k = sqrt(tau (1 - tau) sigma V_kk / (N T h^{d+2})), V = K1^{-1} K2 K1^{-1}
//! inside the support and Omega at the boundary.
Eigen::VectorXd standard_errors(const MomentSet& m,
                                const DensityEstimates& d,
                                const EvalSpec& spec,
                                bool boundary,
                                std::size_t n_units,
                                std::size_t n_periods);

//! 0.5 C^{-1} int_B (u' Q u)(u - C1/c0) K(u) du for curvature Q; multiply by
//! h for the bias in slope units. Exactly zero for Q = 0 or an unclipped
//! region.
Eigen::VectorXd bias_b1(const MomentSet& m, const Eigen::MatrixXd& curvature);

struct BoundaryBias
{
  Eigen::VectorXd unscaled; // B2
  Eigen::VectorXd scaled;   // kappa B2 / sqrt(N T h^{d+2}), slope units
  double kappa = 0.0;       // sqrt(N / (T h^d))
};

//! B2 = -(tau - 1/2) / fbar * C^{-1} (D1/c0 - C1 d0/c0^2). Exactly zero at
//! tau = 1/2 or for an unclipped region.
BoundaryBias bias_b2(const MomentSet& m,
                     const DensityEstimates& d,
                     double tau,
                     std::size_t n_units,
                     std::size_t n_periods,
                     double h);

//! Second-derivative matrix of q_tau at x from a local quadratic smoothed
//! fit at bandwidth 1.5 h.
Eigen::MatrixXd pilot_curvature(const PanelData& p,
                                const EvalSpec& spec,
                                const SolverOptions& opts = {});

struct InferenceOptions
{
  std::optional<double> pilot_bw;
  bool curvature = false;
  bool smoothed = true; // B2 applies to the smoothed estimator only
};

struct QpeInference
{
  Eigen::VectorXd beta;
  Eigen::VectorXd se;
  double sigma_x = 0.0;
  bool boundary = false;
  DensityEstimates densities;
  std::optional<Eigen::VectorXd> b1;
  std::optional<Eigen::VectorXd> b2;
  std::optional<Eigen::VectorXd> b2_unscaled;
};

//! Standard errors and boundary bias terms for a fitted slope.
QpeInference infer(const PanelData& p,
                   const EvalSpec& spec,
                   const FitResult& fit,
                   const SolverOptions& solver = {},
                   const InferenceOptions& opts = {});

} // namespace qpanel
