#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qpanel {

enum class Errc
{
  invalid_argument,
  missing_cell,
  duplicate_cell,
  non_finite_value,
  dimension_mismatch,
  too_few_periods,
  parse_error,
  empty_region,
  singular_c,
  singular_moment,
  all_weights_zero,
  no_local_data,
  rank_deficient_design,
  degenerate_density,
  unsupported,
  invalid_grid
};

std::string_view to_string(Errc code);

//! Exception carrying a machine-readable error code.
class Error : public std::runtime_error
{
public:
  Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what)
    , code_(code)
    , detail_(what)
  {}

  Errc code() const noexcept { return code_; }
  //! Message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

private:
  Errc code_;
  std::string detail_;
};

inline std::string_view
to_string(Errc code)
{
  switch (code) {
    case Errc::invalid_argument:
      return "InvalidArgument";
    case Errc::missing_cell:
      return "MissingCell";
    case Errc::duplicate_cell:
      return "DuplicateCell";
    case Errc::non_finite_value:
      return "NonFiniteValue";
    case Errc::dimension_mismatch:
      return "DimensionMismatch";
    case Errc::too_few_periods:
      return "TooFewPeriods";
    case Errc::parse_error:
      return "ParseError";
    case Errc::empty_region:
      return "EmptyRegion";
    case Errc::singular_c:
      return "SingularC";
    case Errc::singular_moment:
      return "SingularMoment";
    case Errc::all_weights_zero:
      return "AllWeightsZero";
    case Errc::no_local_data:
      return "NoLocalData";
    case Errc::rank_deficient_design:
      return "RankDeficientDesign";
    case Errc::degenerate_density:
      return "DegenerateDensity";
    case Errc::unsupported:
      return "Unsupported";
    case Errc::invalid_grid:
      return "InvalidGrid";
  }
  return "Unknown";
}

} // namespace qpanel
