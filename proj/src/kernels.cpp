#include "qpanel/kernels.hpp"
#include "qpanel/error.hpp"

#include <cmath>
#include <numbers>

namespace qpanel {

namespace {

double
horner(const std::vector<double>& c, double v)
{
  double acc = 0.0;
  for (auto it = c.rbegin(); it != c.rend(); ++it)
    acc = acc * v + *it;
  return acc;
}

std::vector<double>
differentiate(const std::vector<double>& c)
{
  if (c.size() <= 1)
    return { 0.0 };
  std::vector<double> out(c.size() - 1);
  for (std::size_t k = 1; k < c.size(); ++k)
    out[k - 1] = static_cast<double>(k) * c[k];
  return out;
}

std::vector<double>
integrate(const std::vector<double>& c)
{
  std::vector<double> out(c.size() + 1, 0.0);
  for (std::size_t k = 0; k < c.size(); ++k)
    out[k + 1] = c[k] / static_cast<double>(k + 1);
  return out;
}

// smallest eigenvalue relative to largest, for symmetric positive checks
double
relative_min_eigen(const Eigen::MatrixXd& m)
{
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  const double top = ev.cwiseAbs().maxCoeff();
  return top > 0.0 ? ev.minCoeff() / top : 0.0;
}

} // namespace

std::string_view
to_string(BaseKernel k)
{
  switch (k) {
    case BaseKernel::epanechnikov:
      return "epanechnikov";
    case BaseKernel::uniform:
      return "uniform";
    case BaseKernel::biweight:
      return "biweight";
  }
  return "unknown";
}

BaseKernel
parse_base_kernel(std::string_view name)
{
  if (name == "epanechnikov")
    return BaseKernel::epanechnikov;
  if (name == "uniform")
    return BaseKernel::uniform;
  if (name == "biweight")
    return BaseKernel::biweight;
  throw Error(Errc::invalid_argument, "unknown kernel '" + std::string(name) + "'");
}

double
kernel_value(const KernelSpec& spec, std::span<const double> v)
{
  double k = 1.0;
  for (double u : v) {
    k *= spec.base_value(u);
    if (k == 0.0)
      return 0.0;
  }
  return k;
}

SmootherSpec::SmootherSpec(int order, std::vector<double> coefficients)
  : order_(order)
  , g_(std::move(coefficients))
{
  if (order_ < 4)
    throw Error(Errc::invalid_argument, "smoother order must be at least 4");
  if (g_.empty())
    throw Error(Errc::invalid_argument, "smoother needs polynomial coefficients");
  dg_ = differentiate(g_);
  d2g_ = differentiate(dg_);
  antideriv_ = integrate(g_);
  antideriv_at_minus_one_ = horner(antideriv_, -1.0);
}

SmootherSpec
SmootherSpec::fourth_order()
{
  constexpr double s = 105.0 / 64.0;
  return SmootherSpec(4, { s, 0.0, -5.0 * s, 0.0, 7.0 * s, 0.0, -3.0 * s });
}

double
SmootherSpec::g(double v) const
{
  if (v < -1.0 || v > 1.0)
    return 0.0;
  return horner(g_, v);
}

double
SmootherSpec::G(double z) const
{
  if (z <= -1.0)
    return 1.0;
  if (z >= 1.0)
    return 0.0;
  return 1.0 - (horner(antideriv_, z) - antideriv_at_minus_one_);
}

SmootherSpec::Derivs
SmootherSpec::derivs(double v) const
{
  if (v < -1.0 || v > 1.0)
    return {};
  return { horner(g_, v), horner(dg_, v), horner(d2g_, v) };
}

void
SmootherSpec::eval(double v, double& g, double& dg, double& G) const
{
  if (v <= -1.0) {
    g = 0.0;
    dg = 0.0;
    G = 1.0;
    return;
  }
  if (v >= 1.0) {
    g = 0.0;
    dg = 0.0;
    G = 0.0;
    return;
  }
  g = horner(g_, v);
  dg = horner(dg_, v);
  G = 1.0 - (horner(antideriv_, v) - antideriv_at_minus_one_);
}

double
smoother_g(const SmootherSpec& spec, double v)
{
  return spec.g(v);
}

double
smoother_G(const SmootherSpec& spec, double z)
{
  return spec.G(z);
}

SmootherSpec::Derivs
smoother_derivs(const SmootherSpec& spec, double v)
{
  return spec.derivs(v);
}

Region
Region::full(Eigen::Index dim)
{
  return { Eigen::VectorXd::Constant(dim, -1.0), Eigen::VectorXd::Constant(dim, 1.0) };
}

bool
Region::is_full() const
{
  return (lo.array() <= -1.0).all() && (hi.array() >= 1.0).all();
}

QuadratureRule
gauss_legendre(int n)
{
  if (n < 1)
    throw Error(Errc::invalid_argument, "quadrature needs at least one node");
  // P_n(z) and P_n'(z) by the three-term recurrence
  auto legendre = [n](double z, double& p, double& dp) {
    double p0 = 1.0;
    double p1 = z;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    p = n == 0 ? 1.0 : p1;
    dp = n * (p0 - z * p1) / (1.0 - z * z);
  };

  QuadratureRule rule;
  rule.nodes.resize(static_cast<std::size_t>(n));
  rule.weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double p = 0.0;
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      legendre(z, p, dp);
      const double dz = p / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16)
        break;
    }
    legendre(z, p, dp);
    const double w = 2.0 / ((1.0 - z * z) * dp * dp);
    const auto lo = static_cast<std::size_t>(i);
    const auto hi = static_cast<std::size_t>(n - 1 - i);
    rule.nodes[lo] = -z;
    rule.nodes[hi] = z;
    rule.weights[lo] = w;
    rule.weights[hi] = w;
  }
  if (n % 2 == 1)
    rule.nodes[static_cast<std::size_t>(n / 2)] = 0.0;
  return rule;
}

Eigen::MatrixXd
MomentSet::interior_variance() const
{
  const Eigen::MatrixXd k1_inv = K1.inverse();
  return k1_inv * K2 * k1_inv;
}

MomentSet
compute_moments(const KernelSpec& spec, const Region& region, int nodes)
{
  const Eigen::Index d = region.dim();
  if (d == 0 || region.hi.size() != d)
    throw Error(Errc::dimension_mismatch, "region needs matching lo/hi of positive length");
  for (Eigen::Index j = 0; j < d; ++j) {
    if (!(region.lo[j] >= -1.0 && region.hi[j] <= 1.0))
      throw Error(Errc::invalid_argument, "region must lie within [-1, 1]^d");
    if (!(region.hi[j] - region.lo[j] > 1e-12))
      throw Error(Errc::empty_region,
                  "clipped interval for coordinate " + std::to_string(j) + " has no volume");
  }

  const QuadratureRule rule = gauss_legendre(nodes);
  auto kern = [&](const Eigen::VectorXd& u) {
    return kernel_value(spec, std::span<const double>(u.data(), static_cast<std::size_t>(d)));
  };

  MomentSet m;
  m.kernel = spec;
  m.region = region;
  m.nodes = nodes;

  const Eigen::VectorXd zero_v = Eigen::VectorXd::Zero(d);
  const Eigen::MatrixXd zero_m = Eigen::MatrixXd::Zero(d, d);

  m.c0 = integrate_box(region, rule, 0.0, kern);
  if (!(m.c0 > 1e-12))
    throw Error(Errc::empty_region, "kernel mass over the region vanishes");
  m.C1 = integrate_box(region, rule, zero_v,
                       [&](const Eigen::VectorXd& u) -> Eigen::VectorXd { return u * kern(u); });
  m.C2 = integrate_box(region, rule, zero_m, [&](const Eigen::VectorXd& u) -> Eigen::MatrixXd {
    return u * u.transpose() * kern(u);
  });
  m.d0 = integrate_box(region, rule, 0.0, [&](const Eigen::VectorXd& u) {
    const double k = kern(u);
    return k * k;
  });
  m.D1 = integrate_box(region, rule, zero_v, [&](const Eigen::VectorXd& u) -> Eigen::VectorXd {
    const double k = kern(u);
    return u * (k * k);
  });

  const Region all = Region::full(d);
  m.K1 = integrate_box(all, rule, zero_m, [&](const Eigen::VectorXd& u) -> Eigen::MatrixXd {
    return u * u.transpose() * kern(u);
  });
  m.K2 = integrate_box(all, rule, zero_m, [&](const Eigen::VectorXd& u) -> Eigen::MatrixXd {
    const double k = kern(u);
    return u * u.transpose() * (k * k);
  });

  m.C2 = 0.5 * (m.C2 + m.C2.transpose());
  m.C = m.C2 - m.C1 * m.C1.transpose() / m.c0;
  m.C = 0.5 * (m.C + m.C.transpose());

  m.Cbar2.resize(d + 1, d + 1);
  m.Cbar2(0, 0) = m.c0;
  m.Cbar2.block(1, 0, d, 1) = m.C1;
  m.Cbar2.block(0, 1, 1, d) = m.C1.transpose();
  m.Cbar2.block(1, 1, d, d) = m.C2;

  if (relative_min_eigen(m.C) <= 1e-12)
    throw Error(Errc::singular_c, "C = C2 - C1 C1'/c0 is not positive definite");

  const Eigen::VectorXd center = m.C1 / m.c0;
  const Eigen::MatrixXd meat =
    integrate_box(region, rule, zero_m, [&](const Eigen::VectorXd& u) -> Eigen::MatrixXd {
      const double k = kern(u);
      const Eigen::VectorXd c = u - center;
      return c * c.transpose() * (k * k);
    });
  const Eigen::MatrixXd c_inv = m.C.inverse();
  m.Omega = c_inv * meat * c_inv;
  m.Omega = 0.5 * (m.Omega + m.Omega.transpose());
  return m;
}

} // namespace qpanel
