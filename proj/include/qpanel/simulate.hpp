#pragma once

#include "qpanel/jackknife.hpp"
#include "qpanel/model.hpp"
#include "qpanel/qr_core.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

namespace qpanel {

//! Counter-based generator: output k of stream (seed, replication, stream)
//! is a SplitMix64 finalizer of key + k * golden ratio. Any replication can
//! be drawn independently of the others.
class CounterRng
{
public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, std::uint64_t replication, std::uint64_t stream);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  std::uint64_t key() const { return key_; }

private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

enum class DgpFamily
{
  sec5,
  example1,
  example2,
  example3
};

enum class ErrorDist
{
  normal,
  t3
};

std::string_view to_string(DgpFamily f);
std::string_view to_string(ErrorDist e);
DgpFamily parse_dgp_family(std::string_view name);
ErrorDist parse_error_dist(std::string_view name);

//! Y = beta X + alpha + s(X, alpha) eps with X ~ N(0,1) truncated to
//! [-2, 2], alpha ~ N(0,1).
//!
//! sec5 / example1: s = sqrt(1 + gamma X^2)
//! example2:        s = sqrt(1 + gamma X^2) + sqrt(1 + theta alpha^2)
//! example3:        also adds X alpha to the mean, so the quantile function
//!                  is not additively separable.
//! `noise_scale` multiplies eps; 0 puts every eps at its median.
struct DgpSpec
{
  DgpFamily family = DgpFamily::sec5;
  double beta = 1.0;
  double gamma = 1.0;
  double theta = 0.0;
  ErrorDist error_dist = ErrorDist::normal;
  double noise_scale = 1.0;

  bool model_misspecified() const { return family == DgpFamily::example3; }
};

inline constexpr double kSupportBound = 2.0;

//! tau-quantile of the error distribution.
double error_quantile(ErrorDist e, double tau);

//! beta + gamma Q(tau) x / sqrt(1 + gamma x^2). Throws Unsupported for
//! example3, whose slope depends on the unit effect.
double true_qpe(const DgpSpec& spec, double x, double tau);

//! Deterministic in (spec, n, t, seed, replication).
PanelData gen_panel(const DgpSpec& spec,
                    std::size_t n_units,
                    std::size_t n_periods,
                    std::uint64_t seed,
                    std::uint64_t replication = 0);

struct McConfig
{
  DgpSpec dgp;
  std::size_t n_units = 100;
  std::size_t n_periods = 100;
  std::vector<double> x_grid;
  std::vector<double> tau_grid;
  std::vector<Estimator> estimators{ Estimator::llqr, Estimator::llsqr };
  bool bias_correct = true;
  double h = 0.8;
  double b = 0.5;
  std::size_t reps = 500;
  std::uint64_t seed = 1;
  //! 0 picks the hardware concurrency. Never affects results.
  unsigned threads = 0;
  SolverOptions solver{};
};

//! Runs fn(0..n-1) on up to `threads` workers (0 = hardware concurrency).
//! The exception of the lowest failing index is rethrown after all finish.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

//! Grid of -2, -1.6, ..., 2.
std::vector<double> default_x_grid();

struct McCell
{
  double x = 0.0;
  double tau = 0.0;
  std::string estimator; // llqr, llqr_bc, llsqr, llsqr_bc
  double true_beta = 0.0;
  double mean_bias = 0.0;
  double mse = 0.0;
  //! Monte Carlo standard error of mean_bias.
  double bias_se = 0.0;
  std::size_t n_reps = 0;
  std::size_t n_failed = 0;
  std::size_t n_nonconverged = 0;
};

struct McReport
{
  McConfig config;
  std::vector<McCell> cells; // x outer, tau inner, estimator innermost
};

//! One panel per replication; every cell is fitted on it. Failed fits are
//! counted per cell and left out of the moments.
McReport run_monte_carlo(const McConfig& config);

enum class ReportFormat
{
  csv,
  kv,
  table
};

ReportFormat parse_report_format(std::string_view name);

//! Cell table only; an empty report yields the header alone.
std::string summarize(const McReport& report, ReportFormat format);

//! Configuration echo followed by the cell table.
void write_report(std::ostream& out, const McReport& report, ReportFormat format);

} // namespace qpanel
