#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "p2r/assignment.hpp"

using namespace p2r;

namespace {

CostMatrix from_rows(const std::vector<std::vector<double>>& rows) {
  CostMatrix cost(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) cost.set(i, j, rows[i][j]);
  return cost;
}

CostMatrix random_cost(std::mt19937_64& rng, std::size_t n, std::size_t m) {
  std::uniform_real_distribution<double> dist(0.0, 100.0);
  CostMatrix cost(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) cost.set(i, j, dist(rng));
  return cost;
}

}  // namespace

TEST_CASE("two-by-two worked example", "[assignment]") {
  const CostMatrix cost = from_rows({{1.0, 2.0}, {3.0, 1.0}});
  // Oracle: the only two assignments are {0->0,1->1} = 2 and {0->1,1->0} = 5.
  const double best_by_enumeration = std::min(1.0 + 1.0, 2.0 + 3.0);

  const AssignResult hungarian = hungarian_assign(cost);
  CHECK(hungarian.total_cost == best_by_enumeration);
  CHECK(hungarian.match.column_of(0) == 0);
  CHECK(hungarian.match.column_of(1) == 1);

  const AssignResult brute = brute_force_assign(cost);
  CHECK(brute.total_cost == best_by_enumeration);
  CHECK(brute.match.row_assignment() == hungarian.match.row_assignment());
}

TEST_CASE("single-entry matrix", "[assignment]") {
  const CostMatrix cost = from_rows({{5.0}});
  const AssignResult hungarian = hungarian_assign(cost);
  CHECK(hungarian.total_cost == 5.0);
  CHECK(hungarian.match.column_of(0) == 0);
  CHECK(brute_force_assign(cost).total_cost == 5.0);
}

TEST_CASE("degenerate all-zero costs give a valid zero-cost assignment", "[assignment]") {
  const CostMatrix cost = from_rows({{0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}});
  const AssignResult result = hungarian_assign(cost);
  CHECK(result.total_cost == 0.0);
  const auto counts = result.match.column_counts();
  CHECK(counts == std::vector<std::size_t>{1, 1});
}

TEST_CASE("random 5x4 instance matches the oracle", "[assignment]") {
  std::mt19937_64 rng(2024);
  const CostMatrix cost = random_cost(rng, 5, 4);
  CHECK(hungarian_assign(cost).total_cost == brute_force_assign(cost).total_cost);
}

TEST_CASE("oracle equivalence over random instances", "[assignment][property]") {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng() % 8;
    const std::size_t m = 1 + rng() % std::min<std::size_t>(n, 6);
    const CostMatrix cost = random_cost(rng, n, m);
    const AssignResult hungarian = hungarian_assign(cost);
    const AssignResult brute = brute_force_assign(cost);
    REQUIRE(hungarian.total_cost == brute.total_cost);
    // Every column used exactly once.
    for (std::size_t used : hungarian.match.column_counts()) REQUIRE(used == 1);
  }
}

TEST_CASE("adding a constant to a column leaves the argmin unchanged", "[assignment][property]") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 6;
    const std::size_t m = 1 + rng() % std::min<std::size_t>(n, 5);
    const CostMatrix cost = random_cost(rng, n, m);
    const AssignResult base = hungarian_assign(cost);

    const std::size_t column = rng() % m;
    const double shift = 17.5;
    CostMatrix shifted = cost;
    for (std::size_t i = 0; i < n; ++i) shifted.set(i, column, cost.at(i, column) + shift);
    const AssignResult moved = hungarian_assign(shifted);

    REQUIRE(moved.match.row_assignment() == base.match.row_assignment());
    REQUIRE_THAT(moved.total_cost - base.total_cost,
                 Catch::Matchers::WithinAbs(shift, 1e-9));
  }
}

TEST_CASE("solver input validation", "[assignment]") {
  CHECK_THROWS_AS(hungarian_assign(from_rows({{1.0, 2.0}})), std::invalid_argument);  // n < m
  CostMatrix forbidden(2, 1);
  forbidden.set(0, 0, 1.0);
  forbidden.set_forbidden(1, 0);
  CHECK_THROWS_AS(hungarian_assign(forbidden), std::invalid_argument);
  CostMatrix cost(2, 2);
  CHECK_THROWS_AS(cost.set(0, 0, std::numeric_limits<double>::infinity()), std::invalid_argument);

  CostMatrix big(11, 3);
  CHECK_THROWS_AS(brute_force_assign(big), std::invalid_argument);
}

TEST_CASE("empty column set yields an empty assignment", "[assignment]") {
  const CostMatrix cost(3, 0);
  const AssignResult result = hungarian_assign(cost);
  CHECK(result.total_cost == 0.0);
  CHECK(result.match.cols() == 0);
  CHECK(result.match.row_indicator() == std::vector<double>{0.0, 0.0, 0.0});
}
