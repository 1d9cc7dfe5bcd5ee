// Loss-kernel benchmark: times the full P2P loss (cost build + Hungarian +
// BCE) against the full P2R loss (region scan + per-column argmin + BCE) on
// one seeded random instance. Single worker by default; the opt-in parallel
// mode farms the row-independent stages out to threads with a deterministic
// merge.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <thread>
#include <vector>

#include "p2r/assignment.hpp"
#include "p2r/core.hpp"
#include "p2r/loss.hpp"
#include "p2r/matching.hpp"

namespace p2r {

struct BenchConfig {
  std::size_t pixels = 8640;
  std::size_t points = 775;
  int repeats = 20;
  std::uint64_t seed = 0;
  double tau = kDefaultTau;
  double mu = 8.0;
  double lambda = 1.0;
  bool parallel = false;
};

struct BenchInstance {
  ScoreMap scores;
  PointAnnotation points;
};

// Grid dims: the largest divisor of n at or below sqrt(n) becomes the height.
inline std::pair<int, int> bench_grid_shape(std::size_t n) {
  std::size_t h = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
  while (h > 1 && n % h != 0) --h;
  return {static_cast<int>(h), static_cast<int>(n / h)};
}

inline BenchInstance make_bench_instance(const BenchConfig& cfg) {
  if (cfg.pixels < cfg.points)
    throw std::invalid_argument("bench: need at least as many pixels as points");
  const auto [h, w] = bench_grid_shape(cfg.pixels);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> score_dist(kProbEps, 1.0 - kProbEps);
  std::vector<double> scores(cfg.pixels);
  for (double& s : scores) s = score_dist(rng);

  // m distinct pixel positions.
  std::vector<std::size_t> indices(cfg.pixels);
  for (std::size_t i = 0; i < cfg.pixels; ++i) indices[i] = i;
  for (std::size_t i = 0; i < cfg.points; ++i)
    std::swap(indices[i], indices[i + rng() % (cfg.pixels - i)]);
  std::vector<Point2> pts(cfg.points);
  for (std::size_t j = 0; j < cfg.points; ++j)
    pts[j] = pixel_coords(static_cast<std::int64_t>(indices[j]), w);

  return BenchInstance{ScoreMap(std::move(scores), h, w), PointAnnotation(std::move(pts))};
}

namespace detail {

template <typename Fn>
inline void parallel_rows(std::size_t n, Fn&& fn) {
  const unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  if (workers == 1 || n < 2 * workers) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> threads;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (unsigned t = 0; t < workers; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (std::thread& t : threads) t.join();
}

inline CostMatrix p2p_cost_parallel(const ScoreMap& pred, const PointAnnotation& gt, double tau) {
  CostMatrix cost(pred.size(), gt.size());
  parallel_rows(pred.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Point2 xi = pred.coords(i);
      const double s = inverse_sigmoid(pred[i]);
      for (std::size_t j = 0; j < gt.size(); ++j)
        cost.set(i, j, tau * l2_distance(xi, gt[j]) - s);
    }
  });
  return cost;
}

// Row-parallel P2R objective; per-column minima are merged with the same
// lowest-row tie rule as the sequential scan, so the result is identical.
inline MatchResult p2r_objective_parallel(const ScoreMap& pred, const PointAnnotation& gt,
                                          double tau, double mu) {
  const std::size_t n = pred.size();
  const std::size_t m = gt.size();
  MatchResult result{MatchMatrix(n, m), std::vector<double>(n, 0.0), {},
                     NeighborhoodMask{std::vector<std::uint8_t>(n, 0), mu}};
  if (m == 0) return result;

  const unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::vector<double>> best_cost(workers,
                                             std::vector<double>(m, std::numeric_limits<double>::infinity()));
  std::vector<std::vector<int>> best_row(workers, std::vector<int>(m, -1));

  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> threads;
  for (unsigned t = 0; t < workers; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&, t, begin, end] {
      for (std::size_t i = begin; i < end; ++i) {
        const Point2 xi = pred.coords(i);
        std::size_t nearest = 0;
        double nearest_dist = l2_distance(xi, gt[0]);
        for (std::size_t j = 1; j < m; ++j) {
          const double d = l2_distance(xi, gt[j]);
          if (d < nearest_dist) {
            nearest_dist = d;
            nearest = j;
          }
        }
        if (nearest_dist >= mu) continue;
        result.mask.in_radius[i] = 1;
        result.region.assign(i, static_cast<int>(nearest));
        const double cost = tau * nearest_dist - inverse_sigmoid(pred[i]);
        if (cost < best_cost[t][nearest] ||
            (cost == best_cost[t][nearest] && static_cast<int>(i) < best_row[t][nearest])) {
          best_cost[t][nearest] = cost;
          best_row[t][nearest] = static_cast<int>(i);
        }
      }
    });
  }
  for (std::thread& th : threads) th.join();

  std::vector<int> chosen(m, -1);
  std::vector<double> chosen_cost(m, std::numeric_limits<double>::infinity());
  for (unsigned t = 0; t < workers; ++t) {
    for (std::size_t j = 0; j < m; ++j) {
      if (best_row[t][j] < 0) continue;
      if (best_cost[t][j] < chosen_cost[j] ||
          (best_cost[t][j] == chosen_cost[j] && best_row[t][j] < chosen[j])) {
        chosen_cost[j] = best_cost[t][j];
        chosen[j] = best_row[t][j];
      }
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    if (chosen[j] < 0)
      throw std::invalid_argument("p2r bench: point " + std::to_string(j) + " has no pixel within mu");
    result.objective[static_cast<std::size_t>(chosen[j])] = 1.0;
  }
  result.chosen_pixels = std::move(chosen);
  return result;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace detail

struct BenchResult {
  int height = 0;
  int width = 0;
  std::size_t pixels = 0;
  std::size_t points = 0;
  std::vector<double> p2p_seconds;
  std::vector<double> p2r_seconds;
  double p2p_mean = 0.0, p2p_median = 0.0;
  double p2r_mean = 0.0, p2r_median = 0.0;
  double speedup_median = 0.0;
  double p2p_loss = 0.0;
  double p2r_loss = 0.0;
};

inline BenchResult run_bench(const BenchConfig& cfg) {
  const BenchInstance instance = make_bench_instance(cfg);
  BenchResult result;
  result.height = instance.scores.height();
  result.width = instance.scores.width();
  result.pixels = cfg.pixels;
  result.points = cfg.points;

  using clock = std::chrono::steady_clock;
  for (int rep = 0; rep < cfg.repeats; ++rep) {
    {
      const auto t0 = clock::now();
      const CostMatrix cost = cfg.parallel
                                  ? detail::p2p_cost_parallel(instance.scores, instance.points, cfg.tau)
                                  : p2p_cost(instance.scores, instance.points, cfg.tau);
      const AssignResult assigned = hungarian_assign(cost);
      const LossBreakdown loss =
          weighted_bce(instance.scores, assigned.match.row_indicator(), cfg.lambda);
      const auto t1 = clock::now();
      result.p2p_loss = loss.total;
      result.p2p_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    {
      const auto t0 = clock::now();
      const MatchResult match =
          cfg.parallel
              ? detail::p2r_objective_parallel(instance.scores, instance.points, cfg.tau, cfg.mu)
              : p2r_objective(instance.scores, instance.points, cfg.tau, cfg.mu);
      const LossBreakdown loss = weighted_bce(instance.scores, match.objective, cfg.lambda);
      const auto t1 = clock::now();
      result.p2r_loss = loss.total;
      result.p2r_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
  }
  result.p2p_mean = detail::mean(result.p2p_seconds);
  result.p2p_median = detail::median(result.p2p_seconds);
  result.p2r_mean = detail::mean(result.p2r_seconds);
  result.p2r_median = detail::median(result.p2r_seconds);
  result.speedup_median = result.p2r_median > 0.0 ? result.p2p_median / result.p2r_median : 0.0;
  return result;
}

}  // namespace p2r
