#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace qpanel {

//! One long-format observation: (unit id, period id, outcome, regressors).
struct Record
{
  std::string unit;
  std::string period;
  double y = 0.0;
  std::vector<double> x;
};

//! Balanced N x T panel of scalar outcomes and d-dimensional regressors.
//!
//! Immutable after construction. Outcomes are stored unit-major, regressors
//! unit-major then period then coordinate.
class PanelData
{
public:
  //! Takes ownership of dense storage; throws on size mismatch or
  //! non-finite entries. Empty label vectors get "1".."N" / "1".."T".
  PanelData(std::size_t n_units,
            std::size_t n_periods,
            std::size_t dim,
            std::vector<double> y,
            std::vector<double> x,
            std::vector<std::string> unit_labels = {},
            std::vector<std::string> period_labels = {});

  std::size_t n_units() const { return n_units_; }
  std::size_t n_periods() const { return n_periods_; }
  std::size_t dim() const { return dim_; }

  double y(std::size_t i, std::size_t t) const { return y_[i * n_periods_ + t]; }
  std::span<const double> x(std::size_t i, std::size_t t) const
  {
    return { x_.data() + (i * n_periods_ + t) * dim_, dim_ };
  }

  const std::vector<double>& y_data() const { return y_; }
  const std::vector<double>& x_data() const { return x_; }
  const std::vector<std::string>& unit_labels() const { return unit_labels_; }
  const std::vector<std::string>& period_labels() const { return period_labels_; }

  //! Long-format view, units outer and periods inner.
  std::vector<Record> records() const;

  //! Sub-panel made of periods [first, first + count).
  PanelData period_slice(std::size_t first, std::size_t count) const;

  //! Componentwise min / max of the observed regressors.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> observed_support() const;

private:
  std::size_t n_units_;
  std::size_t n_periods_;
  std::size_t dim_;
  std::vector<double> y_;
  std::vector<double> x_;
  std::vector<std::string> unit_labels_;
  std::vector<std::string> period_labels_;
};

//! Evaluation point, quantile level, bandwidths and rectangular support.
struct EvalSpec
{
  Eigen::VectorXd x;
  double tau = 0.5;
  double h = 0.8;
  double b = 0.5;
  Eigen::VectorXd support_lo;
  Eigen::VectorXd support_hi;
  //! Set when the support bounds were taken from the observed data.
  bool support_inferred = false;

  //! Throws InvalidArgument / DimensionMismatch naming the offending field.
  void validate(std::size_t dim) const;
};

//! Builds an EvalSpec whose support is the observed range of `p`.
EvalSpec
make_eval_spec(const PanelData& p, Eigen::VectorXd x, double tau, double h, double b);

//! Assembles a dense balanced panel from long-format records.
//!
//! Units keep first-appearance order. Periods are sorted numerically when
//! every period id parses as a number, otherwise first-appearance order.
PanelData
validate_panel(std::span<const Record> records);

//! First half holds periods [0, T/2), second half the rest (floor split).
std::pair<PanelData, PanelData>
split_halves(const PanelData& p);

//! Reads `id,t,y,x1,...,xd` delimited text with a header row.
PanelData
read_panel(std::istream& in, char delimiter = ',');

PanelData
read_panel_file(const std::string& path, char delimiter = ',');

} // namespace qpanel
