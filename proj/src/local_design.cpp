#include "qpanel/local_design.hpp"
#include "qpanel/error.hpp"

#include <algorithm>

namespace qpanel {

namespace {

template<class Features>
LocalSample
build(const PanelData& panel,
      const Eigen::VectorXd& x,
      double h,
      const KernelSpec& kernel,
      std::size_t p,
      Features&& features)
{
  const std::size_t d = panel.dim();
  if (static_cast<std::size_t>(x.size()) != d)
    throw Error(Errc::dimension_mismatch, "evaluation point dimension differs from panel");
  LocalSample s;
  s.p = p;
  s.offsets.push_back(0);
  std::vector<double> u(d);
  std::vector<double> row(p);
  for (std::size_t i = 0; i < panel.n_units(); ++i) {
    const std::size_t before = s.y.size();
    for (std::size_t t = 0; t < panel.n_periods(); ++t) {
      auto xs = panel.x(i, t);
      for (std::size_t j = 0; j < d; ++j)
        u[j] = (xs[j] - x[static_cast<Eigen::Index>(j)]) / h;
      const double k = kernel_value(kernel, u);
      if (k <= 0.0)
        continue;
      features(u, row);
      s.y.push_back(panel.y(i, t));
      s.w.push_back(k);
      s.z.insert(s.z.end(), row.begin(), row.end());
    }
    if (s.y.size() == before) {
      s.dropped.push_back(i);
    } else {
      s.units.push_back(i);
      s.offsets.push_back(s.y.size());
    }
  }
  return s;
}

} // namespace

double
LocalSample::total_weight() const
{
  double acc = 0.0;
  for (double v : w)
    acc += v;
  return acc;
}

LocalSample
make_local_linear(const PanelData& panel,
                  const Eigen::VectorXd& x,
                  double h,
                  const KernelSpec& kernel)
{
  return build(panel, x, h, kernel, panel.dim(),
               [](const std::vector<double>& u, std::vector<double>& row) {
                 std::copy(u.begin(), u.end(), row.begin());
               });
}

LocalSample
make_local_quadratic(const PanelData& panel,
                     const Eigen::VectorXd& x,
                     double h,
                     const KernelSpec& kernel)
{
  const std::size_t d = panel.dim();
  return build(panel, x, h, kernel, d + d * (d + 1) / 2,
               [d](const std::vector<double>& u, std::vector<double>& row) {
                 std::size_t k = 0;
                 for (; k < d; ++k)
                   row[k] = u[k];
                 for (std::size_t a = 0; a < d; ++a)
                   for (std::size_t b = a; b < d; ++b)
                     row[k++] = u[a] * u[b];
               });
}

void
check_within_rank(const LocalSample& s)
{
  const auto p = static_cast<Eigen::Index>(s.p);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd mean(p);
  Eigen::VectorXd dev(p);
  for (std::size_t g = 0; g < s.n_units(); ++g) {
    double wsum = 0.0;
    mean.setZero();
    for (std::size_t k = s.offsets[g]; k < s.offsets[g + 1]; ++k) {
      wsum += s.w[k];
      for (Eigen::Index j = 0; j < p; ++j)
        mean[j] += s.w[k] * s.z[k * s.p + static_cast<std::size_t>(j)];
    }
    mean /= wsum;
    for (std::size_t k = s.offsets[g]; k < s.offsets[g + 1]; ++k) {
      for (Eigen::Index j = 0; j < p; ++j)
        dev[j] = s.z[k * s.p + static_cast<std::size_t>(j)] - mean[j];
      m.noalias() += s.w[k] * dev * dev.transpose();
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  // z lies in the unit box, so the total weight fixes the scale
  const double top = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), s.total_weight());
  if (!(top > 0.0) || es.eigenvalues().minCoeff() <= 1e-10 * top)
    throw Error(Errc::rank_deficient_design,
                "local design does not span " + std::to_string(s.p) +
                  " dimensions after removing unit effects");
}

} // namespace qpanel
