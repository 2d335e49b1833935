#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace qpanel {

enum class BaseKernel
{
  epanechnikov,
  uniform,
  biweight
};

std::string_view to_string(BaseKernel k);
BaseKernel parse_base_kernel(std::string_view name);

//! Product kernel K(v) = prod_j k(v_j) with a symmetric base k on [-1, 1].
struct KernelSpec
{
  BaseKernel base = BaseKernel::epanechnikov;

  double base_value(double u) const
  {
    if (u < -1.0 || u > 1.0)
      return 0.0;
    switch (base) {
      case BaseKernel::epanechnikov:
        return 0.75 * (1.0 - u * u);
      case BaseKernel::uniform:
        return 0.5;
      case BaseKernel::biweight: {
        const double s = 1.0 - u * u;
        return 0.9375 * s * s;
      }
    }
    return 0.0;
  }
};

double kernel_value(const KernelSpec& spec, std::span<const double> v);

//! Symmetric polynomial smoothing kernel g on [-1, 1] and the survival
//! function G(z) = 1 - int_{-inf}^z g.
//!
//! Coefficients are in increasing powers of v. Derivative and antiderivative
//! coefficients are precomputed at construction.
class SmootherSpec
{
public:
  SmootherSpec(int order, std::vector<double> coefficients);

  //! 105/64 (1 - 5v^2 + 7v^4 - 3v^6), a fourth-order kernel.
  static SmootherSpec fourth_order();

  int order() const { return order_; }
  const std::vector<double>& coefficients() const { return g_; }

  double g(double v) const;
  double G(double z) const;

  struct Derivs
  {
    double g = 0.0;
    double dg = 0.0;
    double d2g = 0.0;
  };
  Derivs derivs(double v) const;

  //! g, g' and G in one pass; used by the smoothed-loss hot loop.
  void eval(double v, double& g, double& dg, double& G) const;

private:
  int order_;
  std::vector<double> g_;
  std::vector<double> dg_;
  std::vector<double> d2g_;
  std::vector<double> antideriv_;
  double antideriv_at_minus_one_;
};

double smoother_g(const SmootherSpec& spec, double v);
double smoother_G(const SmootherSpec& spec, double z);
SmootherSpec::Derivs smoother_derivs(const SmootherSpec& spec, double v);

//! Axis-aligned clipping of supp(K) = [-1, 1]^d.
struct Region
{
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  static Region full(Eigen::Index dim);
  Eigen::Index dim() const { return lo.size(); }
  //! True when no coordinate is clipped.
  bool is_full() const;
};

//! Gauss-Legendre nodes and weights on [-1, 1].
struct QuadratureRule
{
  std::vector<double> nodes;
  std::vector<double> weights;
};

QuadratureRule gauss_legendre(int n);

//! Tensor-product Gauss-Legendre integral of f over the box `region`.
//! `f` receives the node as an Eigen vector and returns a scalar, vector or
//! matrix expression; the accumulator type is fixed by `zero`.
template<class T, class F>
T
integrate_box(const Region& region, const QuadratureRule& rule, T zero, F&& f)
{
  const Eigen::Index d = region.dim();
  const std::size_t n = rule.nodes.size();
  std::vector<std::size_t> idx(static_cast<std::size_t>(d), 0);
  Eigen::VectorXd u(d);
  T acc = zero;
  while (true) {
    double w = 1.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double half = 0.5 * (region.hi[j] - region.lo[j]);
      const double mid = 0.5 * (region.hi[j] + region.lo[j]);
      const auto k = idx[static_cast<std::size_t>(j)];
      u[j] = mid + half * rule.nodes[k];
      w *= half * rule.weights[k];
    }
    acc += w * f(u);
    Eigen::Index j = 0;
    for (; j < d; ++j) {
      auto& k = idx[static_cast<std::size_t>(j)];
      if (++k < n)
        break;
      k = 0;
    }
    if (j == d)
      break;
  }
  return acc;
}

//! Kernel integral constants for a (possibly clipped) integration region.
struct MomentSet
{
  KernelSpec kernel;
  Region region;
  int nodes = 32;

  double c0 = 0.0;
  Eigen::VectorXd C1;
  Eigen::MatrixXd C2;
  Eigen::MatrixXd Cbar2;
  double d0 = 0.0;
  Eigen::VectorXd D1;
  Eigen::MatrixXd K1;
  Eigen::MatrixXd K2;
  Eigen::MatrixXd C;
  Eigen::MatrixXd Omega;

  //! K1^{-1} K2 K1^{-1}, the interior variance kernel.
  Eigen::MatrixXd interior_variance() const;
};

//! Computes every constant by quadrature over `region` (K1, K2 over the
//! full support). Throws EmptyRegion when c0 vanishes, SingularC when C is
//! not invertible.
MomentSet compute_moments(const KernelSpec& spec, const Region& region, int nodes = 32);

} // namespace qpanel
