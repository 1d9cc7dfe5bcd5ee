// Exact one-to-one assignment over rectangular (pixels x points) cost
// matrices: a shortest-augmenting-path Hungarian solver and an exhaustive
// oracle for small instances. Solvers are pure functions.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "p2r/core.hpp"

namespace p2r {

// n rows (pixels) x m columns (points). Entries may be marked "forbidden"
// to stand in for infinite cost; forbidden entries never enter arithmetic.
class CostMatrix {
 public:
  CostMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), values_(rows * cols, 0.0), forbidden_(rows * cols, 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double at(std::size_t i, std::size_t j) const { return values_[i * cols_ + j]; }
  bool forbidden(std::size_t i, std::size_t j) const { return forbidden_[i * cols_ + j] != 0; }

  void set(std::size_t i, std::size_t j, double value) {
    if (!std::isfinite(value)) throw std::invalid_argument("CostMatrix: non-finite entry");
    values_[i * cols_ + j] = value;
    forbidden_[i * cols_ + j] = 0;
  }
  void set_forbidden(std::size_t i, std::size_t j) { forbidden_[i * cols_ + j] = 1; }

  bool any_forbidden() const {
    for (std::uint8_t f : forbidden_)
      if (f) return true;
    return false;
  }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> values_;
  std::vector<std::uint8_t> forbidden_;
};

struct AssignResult {
  MatchMatrix match;
  double total_cost = 0.0;
};

namespace detail {

// Sum assigned entries in ascending column order so the Hungarian and
// brute-force totals are computed with an identical reduction order.
inline double assigned_total(const CostMatrix& cost, const std::vector<int>& row_of_column) {
  double total = 0.0;
  for (std::size_t j = 0; j < row_of_column.size(); ++j)
    total += cost.at(static_cast<std::size_t>(row_of_column[j]), j);
  return total;
}

inline MatchMatrix match_from_columns(std::size_t rows, const std::vector<int>& row_of_column) {
  MatchMatrix match(rows, row_of_column.size());
  for (std::size_t j = 0; j < row_of_column.size(); ++j)
    match.assign(static_cast<std::size_t>(row_of_column[j]), static_cast<int>(j));
  return match;
}

}  // namespace detail

// Kuhn-Munkres via shortest augmenting paths, run column-by-column so the
// work is O(n * m^2) for n >> m rectangular inputs. Requires n >= m and all
// entries finite (no forbidden marks).
inline AssignResult hungarian_assign(const CostMatrix& cost) {
  const std::size_t n = cost.rows();
  const std::size_t m = cost.cols();
  if (n < m) throw std::invalid_argument("hungarian_assign: fewer rows than columns");
  if (cost.any_forbidden())
    throw std::invalid_argument("hungarian_assign: forbidden entries are not supported");
  if (m == 0) return AssignResult{MatchMatrix(n, 0), 0.0};

  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based potentials; columns of the input act as the scanned side.
  std::vector<double> point_pot(m + 1, 0.0), pixel_pot(n + 1, 0.0);
  std::vector<int> owner(n + 1, 0);   // owner[pixel] = point occupying it
  std::vector<int> prev(n + 1, 0);
  std::vector<double> min_reduced(n + 1, 0.0);
  std::vector<char> visited(n + 1, 0);

  for (std::size_t j = 1; j <= m; ++j) {
    owner[0] = static_cast<int>(j);
    std::size_t i0 = 0;
    std::fill(min_reduced.begin(), min_reduced.end(), kInf);
    std::fill(visited.begin(), visited.end(), 0);
    do {
      visited[i0] = 1;
      const std::size_t j0 = static_cast<std::size_t>(owner[i0]);
      double delta = kInf;
      std::size_t i1 = 0;
      for (std::size_t i = 1; i <= n; ++i) {
        if (visited[i]) continue;
        const double reduced = cost.at(i - 1, j0 - 1) - point_pot[j0] - pixel_pot[i];
        if (reduced < min_reduced[i]) {
          min_reduced[i] = reduced;
          prev[i] = static_cast<int>(i0);
        }
        if (min_reduced[i] < delta) {
          delta = min_reduced[i];
          i1 = i;
        }
      }
      for (std::size_t i = 0; i <= n; ++i) {
        if (visited[i]) {
          point_pot[static_cast<std::size_t>(owner[i])] += delta;
          pixel_pot[i] -= delta;
        } else {
          min_reduced[i] -= delta;
        }
      }
      i0 = i1;
    } while (owner[i0] != 0);
    // Walk the augmenting path back.
    do {
      const std::size_t i1 = static_cast<std::size_t>(prev[i0]);
      owner[i0] = owner[i1];
      i0 = i1;
    } while (i0);
  }

  std::vector<int> row_of_column(m, -1);
  for (std::size_t i = 1; i <= n; ++i)
    if (owner[i] != 0) row_of_column[static_cast<std::size_t>(owner[i]) - 1] = static_cast<int>(i - 1);
  return AssignResult{detail::match_from_columns(n, row_of_column),
                      detail::assigned_total(cost, row_of_column)};
}

inline constexpr std::size_t kBruteForceMaxCols = 7;
inline constexpr std::size_t kBruteForceMaxRows = 10;

// Enumerates every ordered selection of m distinct rows. Test oracle only.
inline AssignResult brute_force_assign(const CostMatrix& cost) {
  const std::size_t n = cost.rows();
  const std::size_t m = cost.cols();
  if (n < m) throw std::invalid_argument("brute_force_assign: fewer rows than columns");
  if (m > kBruteForceMaxCols || n > kBruteForceMaxRows)
    throw std::invalid_argument("brute_force_assign: instance exceeds enumeration budget");
  if (m == 0) return AssignResult{MatchMatrix(n, 0), 0.0};

  std::vector<int> current(m, -1), best(m, -1);
  std::vector<char> used(n, 0);
  double best_total = std::numeric_limits<double>::infinity();

  auto recurse = [&](auto&& self, std::size_t j, double running) -> void {
    if (j == m) {
      if (running < best_total) {
        best_total = running;
        best = current;
      }
      return;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i] || cost.forbidden(i, j)) continue;
      used[i] = 1;
      current[j] = static_cast<int>(i);
      self(self, j + 1, running + cost.at(i, j));
      used[i] = 0;
    }
  };
  recurse(recurse, 0, 0.0);

  if (best[0] == -1 && m > 0)
    throw std::invalid_argument("brute_force_assign: no feasible assignment");
  return AssignResult{detail::match_from_columns(n, best), detail::assigned_total(cost, best)};
}

}  // namespace p2r
