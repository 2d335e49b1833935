#include "qpanel/model.hpp"
#include "qpanel/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace qpanel {

namespace {

std::vector<std::string>
default_labels(std::size_t n)
{
  std::vector<std::string> out(n);
  for (std::size_t k = 0; k < n; ++k)
    out[k] = std::to_string(k + 1);
  return out;
}

bool
parse_double(std::string_view s, double& out)
{
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  if (s.empty())
    return false;
  if (s.front() == '+')
    s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::string
trim(std::string_view s)
{
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return std::string(s);
}

std::vector<std::string>
split_line(const std::string& line, char delimiter)
{
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == delimiter) {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

} // namespace

PanelData::PanelData(std::size_t n_units,
                     std::size_t n_periods,
                     std::size_t dim,
                     std::vector<double> y,
                     std::vector<double> x,
                     std::vector<std::string> unit_labels,
                     std::vector<std::string> period_labels)
  : n_units_(n_units)
  , n_periods_(n_periods)
  , dim_(dim)
  , y_(std::move(y))
  , x_(std::move(x))
  , unit_labels_(std::move(unit_labels))
  , period_labels_(std::move(period_labels))
{
  if (n_units_ == 0 || n_periods_ == 0 || dim_ == 0)
    throw Error(Errc::invalid_argument, "panel needs N >= 1, T >= 1 and d >= 1");
  if (y_.size() != n_units_ * n_periods_ || x_.size() != n_units_ * n_periods_ * dim_)
    throw Error(Errc::dimension_mismatch, "storage size does not match N x T x d");
  for (std::size_t k = 0; k < y_.size(); ++k) {
    if (!std::isfinite(y_[k]))
      throw Error(Errc::non_finite_value,
                  "y at unit " + std::to_string(k / n_periods_) + ", period " +
                    std::to_string(k % n_periods_));
  }
  for (std::size_t k = 0; k < x_.size(); ++k) {
    if (!std::isfinite(x_[k]))
      throw Error(Errc::non_finite_value, "x entry " + std::to_string(k));
  }
  if (unit_labels_.empty())
    unit_labels_ = default_labels(n_units_);
  if (period_labels_.empty())
    period_labels_ = default_labels(n_periods_);
  if (unit_labels_.size() != n_units_ || period_labels_.size() != n_periods_)
    throw Error(Errc::dimension_mismatch, "label count does not match panel shape");
}

std::vector<Record>
PanelData::records() const
{
  std::vector<Record> out;
  out.reserve(n_units_ * n_periods_);
  for (std::size_t i = 0; i < n_units_; ++i) {
    for (std::size_t t = 0; t < n_periods_; ++t) {
      auto xs = x(i, t);
      out.push_back({ unit_labels_[i], period_labels_[t], y(i, t), { xs.begin(), xs.end() } });
    }
  }
  return out;
}

PanelData
PanelData::period_slice(std::size_t first, std::size_t count) const
{
  if (count == 0 || first + count > n_periods_)
    throw Error(Errc::invalid_argument, "period slice out of range");
  std::vector<double> y;
  std::vector<double> x;
  y.reserve(n_units_ * count);
  x.reserve(n_units_ * count * dim_);
  for (std::size_t i = 0; i < n_units_; ++i) {
    for (std::size_t t = first; t < first + count; ++t) {
      y.push_back(this->y(i, t));
      auto xs = this->x(i, t);
      x.insert(x.end(), xs.begin(), xs.end());
    }
  }
  std::vector<std::string> periods(period_labels_.begin() + static_cast<std::ptrdiff_t>(first),
                                   period_labels_.begin() +
                                     static_cast<std::ptrdiff_t>(first + count));
  return PanelData(n_units_, count, dim_, std::move(y), std::move(x), unit_labels_,
                   std::move(periods));
}

std::pair<Eigen::VectorXd, Eigen::VectorXd>
PanelData::observed_support() const
{
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(dim_), INFINITY);
  Eigen::VectorXd hi = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(dim_), -INFINITY);
  for (std::size_t k = 0; k < x_.size(); ++k) {
    auto j = static_cast<Eigen::Index>(k % dim_);
    lo[j] = std::min(lo[j], x_[k]);
    hi[j] = std::max(hi[j], x_[k]);
  }
  return { lo, hi };
}

void
EvalSpec::validate(std::size_t dim) const
{
  auto d = static_cast<Eigen::Index>(dim);
  if (x.size() != d || support_lo.size() != d || support_hi.size() != d)
    throw Error(Errc::dimension_mismatch,
                "evaluation point and support must have " + std::to_string(dim) +
                  " coordinates");
  if (!(tau > 0.0 && tau < 1.0))
    throw Error(Errc::invalid_argument, "tau must lie strictly inside (0, 1)");
  if (!(h > 0.0) || !std::isfinite(h))
    throw Error(Errc::invalid_argument, "bandwidth h must be positive");
  if (!(b > 0.0) || !std::isfinite(b))
    throw Error(Errc::invalid_argument, "bandwidth b must be positive");
  for (Eigen::Index j = 0; j < d; ++j) {
    if (!std::isfinite(x[j]))
      throw Error(Errc::non_finite_value, "x[" + std::to_string(j) + "] is not finite");
    if (!(support_lo[j] < support_hi[j]))
      throw Error(Errc::invalid_argument,
                  "support coordinate " + std::to_string(j) + " has lo >= hi");
    if (x[j] < support_lo[j] || x[j] > support_hi[j]) {
      std::ostringstream msg;
      msg << "x[" << j << "] = " << x[j] << " lies outside the support [" << support_lo[j]
          << ", " << support_hi[j] << "]";
      throw Error(Errc::invalid_argument, msg.str());
    }
  }
}

EvalSpec
make_eval_spec(const PanelData& p, Eigen::VectorXd x, double tau, double h, double b)
{
  auto [lo, hi] = p.observed_support();
  EvalSpec spec;
  spec.x = std::move(x);
  spec.tau = tau;
  spec.h = h;
  spec.b = b;
  spec.support_lo = lo;
  spec.support_hi = hi;
  spec.support_inferred = true;
  return spec;
}

PanelData
validate_panel(std::span<const Record> records)
{
  if (records.empty())
    throw Error(Errc::invalid_argument, "no records");
  const std::size_t d = records.front().x.size();
  if (d == 0)
    throw Error(Errc::dimension_mismatch, "records carry no regressors");

  std::unordered_map<std::string, std::size_t> unit_index;
  std::unordered_map<std::string, std::size_t> period_index;
  std::vector<std::string> units;
  std::vector<std::string> periods;
  for (const auto& r : records) {
    if (r.x.size() != d)
      throw Error(Errc::dimension_mismatch,
                  "record (" + r.unit + ", " + r.period + ") has " +
                    std::to_string(r.x.size()) + " regressors, expected " +
                    std::to_string(d));
    if (unit_index.emplace(r.unit, units.size()).second)
      units.push_back(r.unit);
    if (period_index.emplace(r.period, periods.size()).second)
      periods.push_back(r.period);
  }

  // numeric period ids are put in numeric order
  std::vector<double> numeric(periods.size());
  bool all_numeric = true;
  for (std::size_t k = 0; k < periods.size() && all_numeric; ++k)
    all_numeric = parse_double(periods[k], numeric[k]);
  if (all_numeric) {
    std::vector<std::size_t> order(periods.size());
    for (std::size_t k = 0; k < order.size(); ++k)
      order[k] = k;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return numeric[a] < numeric[b]; });
    std::vector<std::string> sorted;
    sorted.reserve(periods.size());
    for (auto k : order)
      sorted.push_back(periods[k]);
    periods = std::move(sorted);
    for (std::size_t k = 0; k < periods.size(); ++k)
      period_index[periods[k]] = k;
  }

  const std::size_t n = units.size();
  const std::size_t t_count = periods.size();
  std::vector<double> y(n * t_count, 0.0);
  std::vector<double> x(n * t_count * d, 0.0);
  std::vector<char> seen(n * t_count, 0);
  for (const auto& r : records) {
    const std::size_t i = unit_index.at(r.unit);
    const std::size_t t = period_index.at(r.period);
    const std::size_t cell = i * t_count + t;
    if (seen[cell])
      throw Error(Errc::duplicate_cell, "unit " + r.unit + ", period " + r.period);
    seen[cell] = 1;
    if (!std::isfinite(r.y))
      throw Error(Errc::non_finite_value, "y at unit " + r.unit + ", period " + r.period);
    for (std::size_t j = 0; j < d; ++j) {
      if (!std::isfinite(r.x[j]))
        throw Error(Errc::non_finite_value,
                    "x" + std::to_string(j + 1) + " at unit " + r.unit + ", period " +
                      r.period);
    }
    y[cell] = r.y;
    std::copy(r.x.begin(), r.x.end(), x.begin() + static_cast<std::ptrdiff_t>(cell * d));
  }
  for (std::size_t cell = 0; cell < seen.size(); ++cell) {
    if (!seen[cell])
      throw Error(Errc::missing_cell,
                  "unit " + units[cell / t_count] + ", period " + periods[cell % t_count]);
  }
  return PanelData(n, t_count, d, std::move(y), std::move(x), std::move(units),
                   std::move(periods));
}

std::pair<PanelData, PanelData>
split_halves(const PanelData& p)
{
  const std::size_t t = p.n_periods();
  if (t < 2)
    throw Error(Errc::too_few_periods, "half-panel split needs T >= 2, got " + std::to_string(t));
  const std::size_t first = t / 2;
  return { p.period_slice(0, first), p.period_slice(first, t - first) };
}

PanelData
read_panel(std::istream& in, char delimiter)
{
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_line(line, delimiter);
      break;
    }
  }
  if (header.size() < 4)
    throw Error(Errc::parse_error, "header must be id,t,y,x1[,...,xd]");
  const std::size_t d = header.size() - 3;

  std::vector<Record> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty())
      continue;
    auto fields = split_line(line, delimiter);
    if (fields.size() != header.size())
      throw Error(Errc::dimension_mismatch,
                  "line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                    " fields, expected " + std::to_string(header.size()));
    Record r;
    r.unit = fields[0];
    r.period = fields[1];
    r.x.resize(d);
    // from_chars accepts "nan"/"inf"; those are rejected later as NonFiniteValue
    if (!parse_double(fields[2], r.y))
      throw Error(Errc::parse_error,
                  "line " + std::to_string(line_no) + ": cannot parse y '" + fields[2] + "'");
    for (std::size_t j = 0; j < d; ++j) {
      if (!parse_double(fields[3 + j], r.x[j]))
        throw Error(Errc::parse_error, "line " + std::to_string(line_no) + ": cannot parse " +
                                         header[3 + j] + " '" + fields[3 + j] + "'");
    }
    records.push_back(std::move(r));
  }
  return validate_panel(records);
}

PanelData
read_panel_file(const std::string& path, char delimiter)
{
  std::ifstream in(path);
  if (!in)
    throw Error(Errc::invalid_argument, "cannot open input file " + path);
  return read_panel(in, delimiter);
}

} // namespace qpanel
