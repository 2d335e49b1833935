#include "qpanel/cli.hpp"
#include "qpanel/error.hpp"
#include "qpanel/inference.hpp"
#include "qpanel/jackknife.hpp"
#include "qpanel/simulate.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

namespace qpanel::cli {

namespace {

constexpr int kUsage = 2;
constexpr int kFailure = 1;

struct Usage : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

std::vector<std::string>
split(const std::string& s, char sep)
{
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  return parts;
}

double
to_double(const std::string& s, const std::string& flag)
{
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end)
    throw Usage(flag + ": '" + s + "' is not a number");
  return v;
}

std::vector<double>
number_list(const std::string& s, const std::string& flag)
{
  std::vector<double> v;
  for (const auto& part : split(s, ','))
    v.push_back(to_double(part, flag));
  return v;
}

//! "a:b,c:d" -> points (a, b) and (c, d)
std::vector<Eigen::VectorXd>
point_list(const std::string& s)
{
  std::vector<Eigen::VectorXd> pts;
  for (const auto& part : split(s, ',')) {
    const auto coords = split(part, ':');
    Eigen::VectorXd x(static_cast<Eigen::Index>(coords.size()));
    for (std::size_t j = 0; j < coords.size(); ++j)
      x[static_cast<Eigen::Index>(j)] = to_double(coords[j], "--x");
    pts.push_back(std::move(x));
  }
  return pts;
}

//! "lo..hi" per dimension, comma separated
std::pair<Eigen::VectorXd, Eigen::VectorXd>
range_list(const std::string& s, const std::string& flag)
{
  const auto parts = split(s, ',');
  Eigen::VectorXd lo(static_cast<Eigen::Index>(parts.size()));
  Eigen::VectorXd hi(lo.size());
  for (std::size_t j = 0; j < parts.size(); ++j) {
    const auto dots = parts[j].find("..");
    if (dots == std::string::npos)
      throw Usage(flag + ": expected LO..HI, got '" + parts[j] + "'");
    lo[static_cast<Eigen::Index>(j)] = to_double(parts[j].substr(0, dots), flag);
    hi[static_cast<Eigen::Index>(j)] = to_double(parts[j].substr(dots + 2), flag);
  }
  return { lo, hi };
}

std::vector<Estimator>
parse_estimators(const std::string& s)
{
  if (s == "llqr")
    return { Estimator::llqr };
  if (s == "llsqr")
    return { Estimator::llsqr };
  if (s == "both")
    return { Estimator::llqr, Estimator::llsqr };
  throw Usage("--estimator must be llqr, llsqr or both");
}

unsigned
thread_count(const std::optional<unsigned>& flag)
{
  if (flag)
    return *flag;
  if (const char* env = std::getenv("QPANEL_THREADS")) {
    unsigned v = 0;
    const char* end = env + std::char_traits<char>::length(env);
    auto [ptr, ec] = std::from_chars(env, end, v);
    if (ec == std::errc() && ptr == end)
      return v;
  }
  return 0;
}

std::string
num(double v)
{
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string
point_label(const Eigen::VectorXd& x)
{
  std::string s;
  for (Eigen::Index j = 0; j < x.size(); ++j)
    s += (j ? ":" : "") + num(x[j]);
  return s;
}

nlohmann::json
json_num(double v)
{
  if (!std::isfinite(v))
    return nullptr;
  return v;
}

// ---------------------------------------------------------------------------

struct FitArgs
{
  std::string input;
  std::string tau;
  std::string x;
  double h = 0.8;
  double b = 0.5;
  std::string estimator = "both";
  bool bias_correct = false;
  std::string support;
  bool curvature = false;
  std::optional<double> pilot_bw;
  std::string kernel = "epanechnikov";
  std::string format = "csv";
  std::optional<unsigned> threads;
};

struct FitRow
{
  Eigen::VectorXd x;
  double tau = 0.0;
  Estimator estimator = Estimator::llqr;
  QpeInference inf;
  std::optional<Eigen::VectorXd> beta_bc;
  bool converged = false;
};

int
cmd_fit(const FitArgs& a, std::ostream& out)
{
  const auto taus = number_list(a.tau, "--tau");
  const auto points = point_list(a.x);
  const auto estimators = parse_estimators(a.estimator);
  const ReportFormat format = parse_report_format(a.format);
  if (format == ReportFormat::table)
    throw Usage("--format must be csv or kv");
  SolverOptions solver;
  solver.kernel.base = parse_base_kernel(a.kernel);
  std::optional<std::pair<Eigen::VectorXd, Eigen::VectorXd>> support;
  if (!a.support.empty())
    support = range_list(a.support, "--support");

  const PanelData panel = read_panel_file(a.input);
  std::vector<EvalSpec> specs;
  for (const auto& x : points) {
    for (double tau : taus) {
      EvalSpec spec = make_eval_spec(panel, x, tau, a.h, a.b);
      if (support) {
        spec.support_lo = support->first;
        spec.support_hi = support->second;
        spec.support_inferred = false;
      }
      spec.validate(panel.dim());
      specs.push_back(std::move(spec));
    }
  }

  std::vector<FitRow> rows(specs.size() * estimators.size());
  parallel_for(specs.size(), thread_count(a.threads), [&](std::size_t k) {
    const EvalSpec& spec = specs[k];
    std::optional<FitResult> llqr_full;
    for (std::size_t e = 0; e < estimators.size(); ++e) {
      FitRow& row = rows[k * estimators.size() + e];
      row.x = spec.x;
      row.tau = spec.tau;
      row.estimator = estimators[e];
      const FitResult* init =
        estimators[e] == Estimator::llsqr && llqr_full ? &*llqr_full : nullptr;
      const FitResult f = fit(estimators[e], panel, spec, solver, init);
      if (estimators[e] == Estimator::llqr)
        llqr_full = f;
      InferenceOptions io;
      io.pilot_bw = a.pilot_bw;
      io.curvature = a.curvature;
      io.smoothed = estimators[e] == Estimator::llsqr;
      row.inf = infer(panel, spec, f, solver, io);
      row.converged = f.converged;
      if (a.bias_correct) {
        const CorrectedFit bc = bias_correct(panel, spec, estimators[e], solver, &f);
        row.beta_bc = bc.beta_bc;
        row.converged = bc.all_converged();
      }
    }
  });

  auto opt = [](const std::optional<Eigen::VectorXd>& v, Eigen::Index j) {
    return v ? num((*v)[j]) : std::string();
  };
  if (format == ReportFormat::kv) {
    nlohmann::json fits = nlohmann::json::array();
    for (const FitRow& r : rows) {
      auto vec = [](const Eigen::VectorXd& v) {
        nlohmann::json a = nlohmann::json::array();
        for (Eigen::Index j = 0; j < v.size(); ++j)
          a.push_back(json_num(v[j]));
        return a;
      };
      nlohmann::json j;
      j["x"] = vec(r.x);
      j["tau"] = r.tau;
      j["estimator"] = to_string(r.estimator);
      j["beta"] = vec(r.inf.beta);
      j["se"] = vec(r.inf.se);
      j["boundary"] = r.inf.boundary;
      j["fx"] = r.inf.densities.fx;
      j["fu0"] = r.inf.densities.fu0;
      j["pilot_bw"] = r.inf.densities.pilot_bw;
      j["b1"] = r.inf.b1 ? vec(*r.inf.b1) : nlohmann::json(nullptr);
      j["b2"] = r.inf.b2 ? vec(*r.inf.b2) : nlohmann::json(nullptr);
      j["beta_bc"] = r.beta_bc ? vec(*r.beta_bc) : nlohmann::json(nullptr);
      j["converged"] = r.converged;
      fits.push_back(std::move(j));
    }
    out << nlohmann::json{ { "fits", fits } }.dump(2) << '\n';
    return 0;
  }
  out << "x,tau,estimator,coef,beta,se,boundary,b1,b2,beta_bc,converged\n";
  for (const FitRow& r : rows) {
    for (Eigen::Index j = 0; j < r.inf.beta.size(); ++j) {
      out << point_label(r.x) << ',' << num(r.tau) << ',' << to_string(r.estimator) << ','
          << j + 1 << ',' << num(r.inf.beta[j]) << ',' << num(r.inf.se[j]) << ','
          << (r.inf.boundary ? "true" : "false") << ',' << opt(r.inf.b1, j) << ','
          << opt(r.inf.b2, j) << ',' << opt(r.beta_bc, j) << ','
          << (r.converged ? "true" : "false") << '\n';
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct SimArgs
{
  std::string dgp = "sec5";
  std::string error = "normal";
  std::size_t n = 100;
  std::size_t t = 100;
  long long reps = 500;
  std::uint64_t seed = 1;
  std::string tau = "0.25";
  std::string x_grid;
  double h = 0.8;
  double b = 0.5;
  double beta = 1.0;
  double gamma = 1.0;
  double theta = 0.0;
  std::string estimator = "both";
  std::string kernel = "epanechnikov";
  bool no_bias_correct = false;
  std::string out_path;
  std::string format = "csv";
  std::optional<unsigned> threads;
};

int
cmd_simulate(const SimArgs& a, std::ostream& out)
{
  McConfig c;
  c.dgp.family = parse_dgp_family(a.dgp);
  c.dgp.error_dist = parse_error_dist(a.error);
  c.dgp.beta = a.beta;
  c.dgp.gamma = a.gamma;
  c.dgp.theta = a.theta;
  c.n_units = a.n;
  c.n_periods = a.t;
  if (a.reps < 1)
    throw Error(Errc::invalid_argument, "--reps must be at least 1");
  c.reps = static_cast<std::size_t>(a.reps);
  c.seed = a.seed;
  c.tau_grid = number_list(a.tau, "--tau");
  c.x_grid = a.x_grid.empty() ? default_x_grid() : number_list(a.x_grid, "--x-grid");
  c.h = a.h;
  c.b = a.b;
  c.estimators = parse_estimators(a.estimator);
  c.bias_correct = !a.no_bias_correct;
  c.solver.kernel.base = parse_base_kernel(a.kernel);
  c.threads = thread_count(a.threads);
  const ReportFormat format = parse_report_format(a.format);

  const McReport report = run_monte_carlo(c);
  if (a.out_path.empty()) {
    write_report(out, report, format);
    return 0;
  }
  std::ofstream file(a.out_path, std::ios::binary);
  if (!file)
    throw Error(Errc::invalid_argument, "cannot open '" + a.out_path + "' for writing");
  write_report(file, report, format);
  return file ? 0 : kFailure;
}

// ---------------------------------------------------------------------------

struct MomentArgs
{
  std::string kernel = "epanechnikov";
  int dim = 1;
  std::string clip;
  int nodes = 32;
  std::string format = "csv";
};

int
cmd_moments(const MomentArgs& a, std::ostream& out)
{
  KernelSpec k;
  k.base = parse_base_kernel(a.kernel);
  if (a.dim < 1)
    throw Error(Errc::invalid_argument, "--dim must be at least 1");
  Region region = Region::full(a.dim);
  if (!a.clip.empty()) {
    auto [lo, hi] = range_list(a.clip, "--clip");
    if (lo.size() != a.dim)
      throw Error(Errc::dimension_mismatch, "--clip needs one LO..HI per dimension");
    region.lo = lo.cwiseMax(-1.0);
    region.hi = hi.cwiseMin(1.0);
  }
  const MomentSet m = compute_moments(k, region, a.nodes);

  std::vector<std::pair<std::string, Eigen::MatrixXd>> items{
    { "c0", Eigen::MatrixXd::Constant(1, 1, m.c0) },
    { "C1", m.C1 },
    { "C2", m.C2 },
    { "Cbar2", m.Cbar2 },
    { "d0", Eigen::MatrixXd::Constant(1, 1, m.d0) },
    { "D1", m.D1 },
    { "K1", m.K1 },
    { "K2", m.K2 },
    { "C", m.C },
    { "Omega", m.Omega },
  };
  if (a.format == "kv") {
    nlohmann::json j;
    j["kernel"] = to_string(k.base);
    j["dim"] = a.dim;
    j["lo"] = std::vector<double>(region.lo.data(), region.lo.data() + region.lo.size());
    j["hi"] = std::vector<double>(region.hi.data(), region.hi.data() + region.hi.size());
    for (const auto& [name, mat] : items) {
      nlohmann::json rows = nlohmann::json::array();
      for (Eigen::Index r = 0; r < mat.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < mat.cols(); ++c)
          row.push_back(json_num(mat(r, c)));
        rows.push_back(std::move(row));
      }
      if (mat.size() == 1)
        j[name] = json_num(mat(0, 0));
      else
        j[name] = std::move(rows);
    }
    out << j.dump(2) << '\n';
    return 0;
  }
  if (a.format != "csv")
    throw Usage("--format must be csv or kv");
  out << "name,row,col,value\n";
  for (const auto& [name, mat] : items)
    for (Eigen::Index r = 0; r < mat.rows(); ++r)
      for (Eigen::Index c = 0; c < mat.cols(); ++c)
        out << name << ',' << r + 1 << ',' << c + 1 << ',' << num(mat(r, c)) << '\n';
  return 0;
}

} // namespace

int
run(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
  CLI::App app{ "Quantile partial effects for panel data with fixed effects", "qpanel" };
  app.set_help_flag("--help", "Print this help message and exit");
  app.require_subcommand(1);

  FitArgs fa;
  auto* fit_cmd = app.add_subcommand("fit", "Fit LLQR / LLSQR at evaluation points of a panel file");
  fit_cmd->add_option("--input", fa.input, "Panel file with header id,t,y,x1..xd")->required();
  fit_cmd->add_option("--tau", fa.tau, "Quantile levels, comma separated")->required();
  fit_cmd->add_option("--x", fa.x, "Points, comma separated; coordinates joined by ':'")->required();
  fit_cmd->add_option("--h", fa.h, "Localization bandwidth")->capture_default_str();
  fit_cmd->add_option("--b", fa.b, "Smoothing bandwidth")->capture_default_str();
  fit_cmd->add_option("--estimator", fa.estimator, "llqr, llsqr or both")->capture_default_str();
  fit_cmd->add_flag("--bias-correct", fa.bias_correct, "Add the split-panel jackknife slope");
  fit_cmd->add_option("--support", fa.support, "LO..HI per dimension, comma separated");
  fit_cmd->add_flag("--curvature", fa.curvature, "Report b1 from a local quadratic pilot");
  fit_cmd->add_option("--pilot-bw", fa.pilot_bw, "Residual density bandwidth");
  fit_cmd->add_option("--kernel", fa.kernel, "epanechnikov, uniform or biweight")->capture_default_str();
  fit_cmd->add_option("--format", fa.format, "csv or kv")->capture_default_str();
  fit_cmd->add_option("--threads", fa.threads, "Worker threads");

  SimArgs sa;
  auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo bias / MSE tables");
  sim_cmd->add_option("--dgp", sa.dgp, "sec5, example1, example2 or example3")->capture_default_str();
  sim_cmd->add_option("--error", sa.error, "normal or t3")->capture_default_str();
  sim_cmd->add_option("--n", sa.n, "Units")->capture_default_str();
  sim_cmd->add_option("--t", sa.t, "Periods")->capture_default_str();
  sim_cmd->add_option("--reps", sa.reps, "Replications")->capture_default_str();
  sim_cmd->add_option("--seed", sa.seed, "Master seed")->capture_default_str();
  sim_cmd->add_option("--tau", sa.tau, "Quantile levels, comma separated")->capture_default_str();
  sim_cmd->add_option("--x-grid", sa.x_grid, "Evaluation points (default -2,-1.6,...,2)");
  sim_cmd->add_option("--h", sa.h, "Localization bandwidth")->capture_default_str();
  sim_cmd->add_option("--b", sa.b, "Smoothing bandwidth")->capture_default_str();
  sim_cmd->add_option("--beta", sa.beta, "Slope")->capture_default_str();
  sim_cmd->add_option("--gamma", sa.gamma, "Scale heterogeneity")->capture_default_str();
  sim_cmd->add_option("--theta", sa.theta, "Effect-driven scale (example2)")->capture_default_str();
  sim_cmd->add_option("--estimator", sa.estimator, "llqr, llsqr or both")->capture_default_str();
  sim_cmd->add_option("--kernel", sa.kernel, "epanechnikov, uniform or biweight")->capture_default_str();
  sim_cmd->add_flag("--no-bias-correct", sa.no_bias_correct, "Skip the jackknife cells");
  sim_cmd->add_option("--out", sa.out_path, "Report file (default stdout)");
  sim_cmd->add_option("--format", sa.format, "csv, kv or table")->capture_default_str();
  sim_cmd->add_option("--threads", sa.threads, "Worker threads");

  MomentArgs ma;
  auto* mom_cmd = app.add_subcommand("moments", "Kernel integral constants");
  mom_cmd->add_option("--kernel", ma.kernel, "epanechnikov, uniform or biweight")->capture_default_str();
  mom_cmd->add_option("--dim", ma.dim, "Dimension")->capture_default_str();
  mom_cmd->add_option("--clip", ma.clip, "LO..HI per dimension, comma separated");
  mom_cmd->add_option("--nodes", ma.nodes, "Gauss-Legendre nodes per axis")->capture_default_str();
  mom_cmd->add_option("--format", ma.format, "csv or kv")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "qpanel: " << e.what() << '\n';
    return kUsage;
  }

  // results are buffered so a failure never leaves partial output behind
  std::ostringstream buf;
  try {
    int rc = 0;
    if (fit_cmd->parsed())
      rc = cmd_fit(fa, buf);
    else if (sim_cmd->parsed())
      rc = cmd_simulate(sa, buf);
    else
      rc = cmd_moments(ma, buf);
    out << buf.str();
    return rc;
  } catch (const Usage& e) {
    err << "qpanel: " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    err << "qpanel: " << e.what() << '\n';
    return kFailure;
  } catch (const std::exception& e) {
    err << "qpanel: " << e.what() << '\n';
    return kFailure;
  }
}

} // namespace qpanel::cli
