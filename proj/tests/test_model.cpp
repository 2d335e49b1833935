#include "doctest.h"
#include "qpanel/error.hpp"
#include "qpanel/model.hpp"

#include <sstream>

using namespace qpanel;

namespace {

std::vector<Record>
grid_records(std::size_t n, std::size_t t)
{
  std::vector<Record> r;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < t; ++s)
      r.push_back({ "u" + std::to_string(i), std::to_string(s + 1), double(i * 10 + s), { double(s) } });
  return r;
}

Errc
code_of(auto&& f)
{
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::invalid_argument;
}

} // namespace

TEST_CASE("validate_panel assembles a dense panel")
{
  auto recs = grid_records(3, 4);
  PanelData p = validate_panel(recs);
  CHECK(p.n_units() == 3);
  CHECK(p.n_periods() == 4);
  CHECK(p.dim() == 1);
  CHECK(p.y(2, 3) == 23.0);
  CHECK(p.x(1, 2)[0] == 2.0);
  CHECK(p.unit_labels()[0] == "u0");
}

TEST_CASE("validate_panel errors")
{
  auto recs = grid_records(2, 3);
  SUBCASE("missing cell")
  {
    recs.pop_back();
    CHECK(code_of([&] { validate_panel(recs); }) == Errc::missing_cell);
  }
  SUBCASE("duplicate cell")
  {
    recs.push_back(recs.front());
    CHECK(code_of([&] { validate_panel(recs); }) == Errc::duplicate_cell);
  }
  SUBCASE("non-finite")
  {
    recs[1].y = std::numeric_limits<double>::quiet_NaN();
    CHECK(code_of([&] { validate_panel(recs); }) == Errc::non_finite_value);
  }
  SUBCASE("dimension mismatch")
  {
    recs[2].x.push_back(1.0);
    CHECK(code_of([&] { validate_panel(recs); }) == Errc::dimension_mismatch);
  }
}

TEST_CASE("numeric period ids sort numerically, others keep appearance order")
{
  std::vector<Record> recs{ { "a", "10", 1, { 0 } }, { "a", "9", 2, { 0 } }, { "b", "9", 3, { 0 } },
                            { "b", "10", 4, { 0 } } };
  PanelData p = validate_panel(recs);
  CHECK(p.period_labels() == std::vector<std::string>{ "9", "10" });
  CHECK(p.y(0, 0) == 2.0);
  CHECK(p.y(1, 1) == 4.0);

  std::vector<Record> named{ { "a", "q2", 1, { 0 } }, { "a", "q1", 2, { 0 } }, { "b", "q1", 3, { 0 } },
                             { "b", "q2", 4, { 0 } } };
  PanelData q = validate_panel(named);
  CHECK(q.period_labels() == std::vector<std::string>{ "q2", "q1" });
  CHECK(q.y(1, 0) == 4.0);
}

TEST_CASE("round trip through records is exact")
{
  auto recs = grid_records(4, 5);
  PanelData p = validate_panel(recs);
  PanelData q = validate_panel(p.records());
  CHECK(q.y_data() == p.y_data());
  CHECK(q.x_data() == p.x_data());
  CHECK(q.unit_labels() == p.unit_labels());
  CHECK(q.period_labels() == p.period_labels());
}

TEST_CASE("split_halves uses a floor split")
{
  for (std::size_t t : { 2u, 3u, 7u, 10u }) {
    PanelData p = validate_panel(grid_records(2, t));
    auto [a, b] = split_halves(p);
    CHECK(a.n_periods() == t / 2);
    CHECK(a.n_periods() + b.n_periods() == t);
    CHECK(b.y(1, 0) == p.y(1, t / 2));
  }
  PanelData one = validate_panel(grid_records(2, 1));
  CHECK(code_of([&] { split_halves(one); }) == Errc::too_few_periods);
}

TEST_CASE("read_panel parses delimited text with scientific notation")
{
  std::istringstream in("id,t,y,x1,x2\n1,1,1.5e0,2,-3e-1\n1,2,2,0,0\n2,1,3,1,1\n2,2,4,1E1,2\n");
  PanelData p = read_panel(in);
  CHECK(p.dim() == 2);
  CHECK(p.y(0, 0) == 1.5);
  CHECK(p.x(0, 0)[1] == doctest::Approx(-0.3));
  CHECK(p.x(1, 1)[0] == 10.0);

  std::istringstream bad("id,t,y,x1\n1,1,abc,2\n");
  CHECK(code_of([&] { read_panel(bad); }) == Errc::parse_error);
}

TEST_CASE("EvalSpec validation names the coordinate")
{
  PanelData p = validate_panel(grid_records(2, 4));
  EvalSpec s = make_eval_spec(p, Eigen::VectorXd::Constant(1, 1.0), 0.5, 0.8, 0.5);
  CHECK(s.support_inferred);
  CHECK(s.support_lo[0] == 0.0);
  CHECK(s.support_hi[0] == 3.0);
  s.x[0] = 5.0;
  try {
    s.validate(1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::invalid_argument);
    CHECK(std::string(e.what()).find("x[0]") != std::string::npos);
  }
  s.x[0] = 1.0;
  s.tau = 1.0;
  CHECK_THROWS_AS(s.validate(1), Error);
}
