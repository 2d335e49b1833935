#pragma once

#include "qpanel/kernels.hpp"
#include "qpanel/model.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace qpanel {

//! Kernel-weighted observations around an evaluation point, grouped by unit.
//!
//! Only observations with K > 0 are kept; units whose total weight is zero
//! are listed in `dropped`. Regressors are stored row-major with `p` columns.
struct LocalSample
{
  std::size_t p = 0;
  std::vector<std::size_t> units;   // retained unit -> panel unit index
  std::vector<std::size_t> offsets; // size units.size() + 1
  std::vector<double> y;
  std::vector<double> w;
  std::vector<double> z;
  std::vector<std::size_t> dropped;

  std::size_t n_units() const { return units.size(); }
  std::size_t n_obs() const { return y.size(); }
  std::span<const double> row(std::size_t k) const { return { z.data() + k * p, p }; }
  double total_weight() const;
};

//! Local linear design: z = (X - x) / h.
LocalSample
make_local_linear(const PanelData& panel,
                  const Eigen::VectorXd& x,
                  double h,
                  const KernelSpec& kernel);

//! Local quadratic design: (X - x) / h followed by the products
//! (X_j - x_j)(X_k - x_k) / h^2 for j <= k.
LocalSample
make_local_quadratic(const PanelData& panel,
                     const Eigen::VectorXd& x,
                     double h,
                     const KernelSpec& kernel);

//! Throws RankDeficientDesign when the within-unit weighted design
//! sum_i sum_t w (z - zbar_i)(z - zbar_i)' is not positive definite.
void check_within_rank(const LocalSample& s);

} // namespace qpanel
