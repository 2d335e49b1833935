#include "qpanel/simulate.hpp"
#include "qpanel/error.hpp"
#include "qpanel/sqr_core.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/student_t_distribution.hpp>
#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

namespace qpanel {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

std::uint64_t
mix64(std::uint64_t z)
{
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum Stream : std::uint64_t
{
  stream_alpha = 1,
  stream_x = 2,
  stream_eps = 3
};

} // namespace

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t replication, std::uint64_t stream)
  : key_(mix64(mix64(mix64(seed) + replication * kGolden) + stream * kGolden))
{}

CounterRng::result_type
CounterRng::operator()()
{
  return mix64(key_ + (++counter_) * kGolden);
}

std::string_view
to_string(DgpFamily f)
{
  switch (f) {
    case DgpFamily::sec5:
      return "sec5";
    case DgpFamily::example1:
      return "example1";
    case DgpFamily::example2:
      return "example2";
    case DgpFamily::example3:
      return "example3";
  }
  return "sec5";
}

std::string_view
to_string(ErrorDist e)
{
  return e == ErrorDist::normal ? "normal" : "t3";
}

DgpFamily
parse_dgp_family(std::string_view name)
{
  for (auto f : { DgpFamily::sec5, DgpFamily::example1, DgpFamily::example2, DgpFamily::example3 })
    if (name == to_string(f))
      return f;
  throw Error(Errc::invalid_argument, "unknown dgp '" + std::string(name) + "'");
}

ErrorDist
parse_error_dist(std::string_view name)
{
  if (name == "normal")
    return ErrorDist::normal;
  if (name == "t3")
    return ErrorDist::t3;
  throw Error(Errc::invalid_argument, "unknown error distribution '" + std::string(name) + "'");
}

double
error_quantile(ErrorDist e, double tau)
{
  if (!(tau > 0.0 && tau < 1.0))
    throw Error(Errc::invalid_argument, "tau must lie in (0, 1)");
  if (tau == 0.5)
    return 0.0;
  if (e == ErrorDist::normal)
    return boost::math::quantile(boost::math::normal_distribution<double>(), tau);
  return boost::math::quantile(boost::math::students_t_distribution<double>(3.0), tau);
}

double
true_qpe(const DgpSpec& spec, double x, double tau)
{
  if (spec.family == DgpFamily::example3)
    throw Error(Errc::unsupported, "example3 has a unit-dependent slope");
  const double q = spec.noise_scale * error_quantile(spec.error_dist, tau);
  return spec.beta + spec.gamma * q * x / std::sqrt(1.0 + spec.gamma * x * x);
}

PanelData
gen_panel(const DgpSpec& spec,
          std::size_t n_units,
          std::size_t n_periods,
          std::uint64_t seed,
          std::uint64_t replication)
{
  if (n_units == 0 || n_periods == 0)
    throw Error(Errc::invalid_argument, "N and T must be at least 1");
  CounterRng rng_alpha(seed, replication, stream_alpha);
  CounterRng rng_x(seed, replication, stream_x);
  CounterRng rng_eps(seed, replication, stream_eps);
  boost::random::normal_distribution<double> normal;
  boost::random::student_t_distribution<double> t3(3.0);

  std::vector<double> y(n_units * n_periods);
  std::vector<double> x(n_units * n_periods);
  for (std::size_t i = 0; i < n_units; ++i) {
    const double alpha = normal(rng_alpha);
    for (std::size_t t = 0; t < n_periods; ++t) {
      double xv = normal(rng_x);
      while (std::abs(xv) > kSupportBound)
        xv = normal(rng_x);
      const double eps =
        spec.noise_scale * (spec.error_dist == ErrorDist::normal ? normal(rng_eps) : t3(rng_eps));
      double mean = spec.beta * xv + alpha;
      double scale = std::sqrt(1.0 + spec.gamma * xv * xv);
      if (spec.family == DgpFamily::example2)
        scale += std::sqrt(1.0 + spec.theta * alpha * alpha);
      if (spec.family == DgpFamily::example3)
        mean += xv * alpha;
      x[i * n_periods + t] = xv;
      y[i * n_periods + t] = mean + scale * eps;
    }
  }
  return PanelData(n_units, n_periods, 1, std::move(y), std::move(x));
}

void
parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn)
{
  if (threads == 0)
    threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{ 0 };
  auto worker = [&] {
    for (std::size_t k = next++; k < n; k = next++) {
      try {
        fn(k);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < threads; ++k)
      pool.emplace_back(worker);
    for (auto& t : pool)
      t.join();
  }
  for (const auto& e : errors)
    if (e)
      std::rethrow_exception(e);
}

std::vector<double>
default_x_grid()
{
  std::vector<double> g;
  for (int k = -5; k <= 5; ++k)
    g.push_back(0.4 * k);
  return g;
}

namespace {

void
validate_config(const McConfig& c)
{
  if (c.x_grid.empty() || c.tau_grid.empty())
    throw Error(Errc::invalid_grid, "x and tau grids must be non-empty");
  for (double tau : c.tau_grid)
    if (!(tau > 0.0 && tau < 1.0))
      throw Error(Errc::invalid_grid, "tau must lie in (0, 1)");
  for (double x : c.x_grid)
    if (!(std::abs(x) <= kSupportBound))
      throw Error(Errc::invalid_grid, "x grid must lie within [-2, 2]");
  if (c.estimators.empty())
    throw Error(Errc::invalid_argument, "no estimator requested");
  if (c.reps < 1)
    throw Error(Errc::invalid_argument, "reps must be at least 1");
  if (c.n_units < 1 || c.n_periods < (c.bias_correct ? 2u : 1u))
    throw Error(Errc::invalid_argument, "panel too small for the requested fits");
  if (!(c.h > 0.0) || !(c.b > 0.0))
    throw Error(Errc::invalid_argument, "bandwidths must be positive");
}

struct RepResult
{
  std::vector<double> est; // NaN marks a failed fit
  std::vector<char> converged;
};

// estimates for every (x, tau) pair in cell order on one panel
void
fit_replication(const McConfig& c, std::size_t rep, std::size_t per_point, RepResult& out)
{
  const PanelData p = gen_panel(c.dgp, c.n_units, c.n_periods, c.seed, rep);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  out.est.assign(c.x_grid.size() * c.tau_grid.size() * per_point, nan);
  out.converged.assign(out.est.size(), 0);
  std::size_t k = 0;
  for (double x : c.x_grid) {
    for (double tau : c.tau_grid) {
      EvalSpec spec;
      spec.x = Eigen::VectorXd::Constant(1, x);
      spec.tau = tau;
      spec.h = c.h;
      spec.b = c.b;
      spec.support_lo = Eigen::VectorXd::Constant(1, -kSupportBound);
      spec.support_hi = Eigen::VectorXd::Constant(1, kSupportBound);
      std::optional<FitResult> llqr_full;
      for (Estimator e : c.estimators) {
        const std::size_t slot = k;
        k += c.bias_correct ? 2 : 1;
        std::optional<FitResult> full;
        try {
          const FitResult* init =
            e == Estimator::llsqr && llqr_full ? &*llqr_full : nullptr;
          full = fit(e, p, spec, c.solver, init);
          out.est[slot] = full->beta[0];
          out.converged[slot] = full->converged;
          if (e == Estimator::llqr)
            llqr_full = full;
        } catch (const Error&) {
          continue;
        }
        if (!c.bias_correct)
          continue;
        try {
          const CorrectedFit bc = bias_correct(p, spec, e, c.solver, &*full);
          out.est[slot + 1] = bc.beta_bc[0];
          out.converged[slot + 1] = bc.all_converged();
        } catch (const Error&) {
        }
      }
    }
  }
}

} // namespace

McReport
run_monte_carlo(const McConfig& config)
{
  validate_config(config);
  McReport report;
  report.config = config;

  const std::size_t per_point = config.estimators.size() * (config.bias_correct ? 2 : 1);
  for (double x : config.x_grid) {
    for (double tau : config.tau_grid) {
      double truth = std::numeric_limits<double>::quiet_NaN();
      if (!config.dgp.model_misspecified())
        truth = true_qpe(config.dgp, x, tau);
      for (Estimator e : config.estimators) {
        McCell cell;
        cell.x = x;
        cell.tau = tau;
        cell.true_beta = truth;
        cell.estimator = std::string(to_string(e));
        report.cells.push_back(cell);
        if (config.bias_correct) {
          cell.estimator += "_bc";
          report.cells.push_back(cell);
        }
      }
    }
  }

  std::vector<RepResult> results(config.reps);
  parallel_for(config.reps, config.threads, [&](std::size_t r) {
    fit_replication(config, r, per_point, results[r]);
  });

  // reduction in replication order keeps the sums schedule-independent
  for (std::size_t c = 0; c < report.cells.size(); ++c) {
    McCell& cell = report.cells[c];
    double sum = 0.0;
    double sum_sq = 0.0;
    for (const RepResult& r : results) {
      const double v = r.est[c];
      if (std::isnan(v)) {
        ++cell.n_failed;
        continue;
      }
      const double err = v - cell.true_beta;
      sum += err;
      sum_sq += err * err;
      ++cell.n_reps;
      if (!r.converged[c])
        ++cell.n_nonconverged;
    }
    const double n = static_cast<double>(cell.n_reps);
    if (cell.n_reps == 0) {
      cell.mean_bias = cell.mse = cell.bias_se = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    cell.mean_bias = sum / n;
    cell.mse = sum_sq / n;
    double var = 0.0;
    for (const RepResult& r : results) {
      const double v = r.est[c];
      if (!std::isnan(v)) {
        const double dev = v - cell.true_beta - cell.mean_bias;
        var += dev * dev;
      }
    }
    cell.bias_se = cell.n_reps > 1 ? std::sqrt(var / (n - 1.0) / n) : 0.0;
  }
  return report;
}

ReportFormat
parse_report_format(std::string_view name)
{
  if (name == "csv")
    return ReportFormat::csv;
  if (name == "kv")
    return ReportFormat::kv;
  if (name == "table")
    return ReportFormat::table;
  throw Error(Errc::invalid_argument, "unknown format '" + std::string(name) + "'");
}

namespace {

std::string
num(double v)
{
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

nlohmann::json
json_num(double v)
{
  if (!std::isfinite(v))
    return nullptr;
  return v;
}

nlohmann::json
config_json(const McConfig& c)
{
  nlohmann::json j;
  j["dgp"] = to_string(c.dgp.family);
  j["beta"] = c.dgp.beta;
  j["gamma"] = c.dgp.gamma;
  j["theta"] = c.dgp.theta;
  j["error"] = to_string(c.dgp.error_dist);
  j["noise_scale"] = c.dgp.noise_scale;
  j["model_misspecified"] = c.dgp.model_misspecified();
  j["n"] = c.n_units;
  j["t"] = c.n_periods;
  j["x_grid"] = c.x_grid;
  j["tau_grid"] = c.tau_grid;
  std::vector<std::string> est;
  for (Estimator e : c.estimators)
    est.emplace_back(to_string(e));
  j["estimators"] = est;
  j["bias_correct"] = c.bias_correct;
  j["h"] = c.h;
  j["b"] = c.b;
  j["kernel"] = to_string(c.solver.kernel.base);
  j["reps"] = c.reps;
  j["seed"] = c.seed;
  return j;
}

nlohmann::json
cells_json(const McReport& r)
{
  nlohmann::json cells = nlohmann::json::array();
  for (const McCell& c : r.cells) {
    nlohmann::json j;
    j["x"] = c.x;
    j["tau"] = c.tau;
    j["estimator"] = c.estimator;
    j["true_beta"] = json_num(c.true_beta);
    j["bias"] = json_num(c.mean_bias);
    j["mse"] = json_num(c.mse);
    j["bias_se"] = json_num(c.bias_se);
    j["n_reps"] = c.n_reps;
    j["n_failed"] = c.n_failed;
    j["n_nonconverged"] = c.n_nonconverged;
    cells.push_back(std::move(j));
  }
  return cells;
}

const std::vector<std::string> kColumns{ "x",   "tau",    "estimator", "true_beta",
                                         "bias", "mse", "n_reps",    "n_failed" };

std::vector<std::string>
row_of(const McCell& c)
{
  return { num(c.x),    num(c.tau), c.estimator, num(c.true_beta), num(c.mean_bias),
           num(c.mse), std::to_string(c.n_reps), std::to_string(c.n_failed) };
}

std::string
text_table(const McReport& r)
{
  std::vector<std::vector<std::string>> rows{ kColumns };
  for (const McCell& c : r.cells)
    rows.push_back(row_of(c));
  std::vector<std::size_t> width(kColumns.size(), 0);
  for (const auto& row : rows)
    for (std::size_t k = 0; k < row.size(); ++k)
      width[k] = std::max(width[k], row[k].size());
  std::ostringstream os;
  for (const auto& row : rows) {
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (k)
        os << "  ";
      os << std::string(width[k] - row[k].size(), ' ') << row[k];
    }
    os << '\n';
  }
  return os.str();
}

} // namespace

std::string
summarize(const McReport& report, ReportFormat format)
{
  switch (format) {
    case ReportFormat::kv:
      return nlohmann::json{ { "cells", cells_json(report) } }.dump(2) + "\n";
    case ReportFormat::table:
      return text_table(report);
    case ReportFormat::csv:
      break;
  }
  std::ostringstream os;
  for (std::size_t k = 0; k < kColumns.size(); ++k)
    os << (k ? "," : "") << kColumns[k];
  os << '\n';
  for (const McCell& c : report.cells) {
    const auto row = row_of(c);
    for (std::size_t k = 0; k < row.size(); ++k)
      os << (k ? "," : "") << row[k];
    os << '\n';
  }
  return os.str();
}

void
write_report(std::ostream& out, const McReport& report, ReportFormat format)
{
  const nlohmann::json cfg = config_json(report.config);
  if (format == ReportFormat::kv) {
    out << nlohmann::json{ { "config", cfg }, { "cells", cells_json(report) } }.dump(2) << '\n';
    return;
  }
  for (const auto& [key, value] : cfg.items())
    out << "# " << key << " = " << value.dump() << '\n';
  out << summarize(report, format);
}

} // namespace qpanel
