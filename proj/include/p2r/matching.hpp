// P2P and P2R matching: pairwise distances, cost construction with the
// inverse-sigmoid score transform, the nearest-point region matrix, the
// neighborhood mask and the per-scheme learning objective. All operations
// are pure; empty annotations short-circuit to all-background objectives.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "p2r/assignment.hpp"
#include "p2r/core.hpp"

namespace p2r {

// Score transform S(p) inside the matching cost. The inverse sigmoid is the
// default; identity reproduces the vanilla point-matching cost.
enum class CostScoreTransform { kInverseSigmoid, kIdentity };

inline constexpr double kDefaultTau = 8.0;
inline constexpr double kDefaultMu = 64.0;

inline double inverse_sigmoid(double p) {
  p = clamp_prob(p);
  return -std::log(1.0 / p - 1.0);
}

inline double score_transform(double p, CostScoreTransform transform) {
  return transform == CostScoreTransform::kInverseSigmoid ? inverse_sigmoid(p) : p;
}

struct DistanceMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major n x m

  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

inline double l2_distance(const Point2& a, const Point2& b) {
  const double dr = a.row - b.row;
  const double dc = a.col - b.col;
  return std::sqrt(dr * dr + dc * dc);
}

inline DistanceMatrix pairwise_distances(const std::vector<Point2>& pred_coords,
                                         const PointAnnotation& gt) {
  for (const Point2& p : pred_coords)
    if (!std::isfinite(p.row) || !std::isfinite(p.col))
      throw std::invalid_argument("pairwise_distances: non-finite pixel coordinate");
  DistanceMatrix d;
  d.rows = pred_coords.size();
  d.cols = gt.size();
  d.values.resize(d.rows * d.cols);
  for (std::size_t i = 0; i < d.rows; ++i)
    for (std::size_t j = 0; j < d.cols; ++j)
      d.values[i * d.cols + j] = l2_distance(pred_coords[i], gt[j]);
  return d;
}

// All pixel-center coordinates of an h x w grid, row-major.
inline std::vector<Point2> grid_coords(int height, int width) {
  std::vector<Point2> coords;
  coords.reserve(static_cast<std::size_t>(height) * width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      coords.push_back(Point2{static_cast<double>(r), static_cast<double>(c)});
  return coords;
}

inline DistanceMatrix pairwise_distances(const ScoreMap& pred, const PointAnnotation& gt) {
  return pairwise_distances(grid_coords(pred.height(), pred.width()), gt);
}

// C[i,j] = tau * l2(i,j) - S(p[i]).
inline CostMatrix p2p_cost(const ScoreMap& pred, const PointAnnotation& gt, double tau,
                           CostScoreTransform transform = CostScoreTransform::kInverseSigmoid) {
  if (tau < 0.0) throw std::invalid_argument("p2p_cost: tau must be non-negative");
  const std::size_t n = pred.size();
  const std::size_t m = gt.size();
  CostMatrix cost(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 xi = pred.coords(i);
    const double s = score_transform(pred[i], transform);
    for (std::size_t j = 0; j < m; ++j)
      cost.set(i, j, tau * l2_distance(xi, gt[j]) - s);
  }
  return cost;
}

// Per-pixel indicator of lying strictly within distance mu of some point.
struct NeighborhoodMask {
  std::vector<std::uint8_t> in_radius;  // length n, {0,1}
  double mu = 0.0;

  std::size_t size() const { return in_radius.size(); }
  bool operator[](std::size_t i) const { return in_radius[i] != 0; }
};

inline NeighborhoodMask neighborhood_mask(const DistanceMatrix& dist, double mu) {
  if (mu <= 0.0) throw std::invalid_argument("neighborhood_mask: mu must be positive");
  NeighborhoodMask mask;
  mask.mu = mu;
  mask.in_radius.assign(dist.rows, 0);
  for (std::size_t i = 0; i < dist.rows; ++i) {
    for (std::size_t j = 0; j < dist.cols; ++j) {
      if (dist.at(i, j) < mu) {
        mask.in_radius[i] = 1;
        break;
      }
    }
  }
  return mask;
}

// Row i one-hot at its nearest point, ties to the lowest point index.
inline MatchMatrix nearest_region_matrix(const DistanceMatrix& dist) {
  if (dist.cols == 0)
    throw std::invalid_argument("nearest_region_matrix: no points; caller must branch");
  MatchMatrix match(dist.rows, dist.cols);
  for (std::size_t i = 0; i < dist.rows; ++i) {
    std::size_t best = 0;
    double best_dist = dist.at(i, 0);
    for (std::size_t j = 1; j < dist.cols; ++j) {
      if (dist.at(i, j) < best_dist) {
        best_dist = dist.at(i, j);
        best = j;
      }
    }
    match.assign(i, static_cast<int>(best));
  }
  return match;
}

// Region matrix M: row i one-hot at its nearest point iff the pixel lies
// within mu of some point, all-zero otherwise. m = 0 gives the empty matrix.
inline MatchMatrix p2r_region(const ScoreMap& pred, const PointAnnotation& gt, double mu) {
  if (gt.empty()) return MatchMatrix(pred.size(), 0);
  const DistanceMatrix dist = pairwise_distances(pred, gt);
  const MatchMatrix nearest = nearest_region_matrix(dist);
  const NeighborhoodMask mask = neighborhood_mask(dist, mu);
  MatchMatrix region(dist.rows, dist.cols);
  for (std::size_t i = 0; i < dist.rows; ++i)
    if (mask[i]) region.assign(i, nearest.column_of(i));
  return region;
}

// Matching output shared by both schemes: the region (or assignment) matrix,
// the binary learning objective and the representative pixel per point.
struct MatchResult {
  MatchMatrix region;                 // M (P2R) or the assignment matrix (P2P)
  std::vector<double> objective;      // length n, one 1 per matched point
  std::vector<int> chosen_pixels;     // length m, row selected per point
  NeighborhoodMask mask;              // beta; all-ones for P2P
};

inline MatchResult p2p_objective(const ScoreMap& pred, const PointAnnotation& gt, double tau,
                                 CostScoreTransform transform = CostScoreTransform::kInverseSigmoid) {
  const std::size_t n = pred.size();
  const std::size_t m = gt.size();
  if (n < m) throw std::invalid_argument("p2p_objective: more points than pixels");
  MatchResult result{MatchMatrix(n, m), std::vector<double>(n, 0.0), {},
                     NeighborhoodMask{std::vector<std::uint8_t>(n, 1), 0.0}};
  if (m == 0) return result;

  AssignResult assigned = hungarian_assign(p2p_cost(pred, gt, tau, transform));
  result.region = assigned.match;
  result.chosen_pixels.assign(m, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const int j = result.region.column_of(i);
    if (j != MatchMatrix::kUnassigned) {
      result.objective[i] = 1.0;
      result.chosen_pixels[static_cast<std::size_t>(j)] = static_cast<int>(i);
    }
  }
  return result;
}

// P2R objective: within each point's region, pick the pixel minimizing
// tau * l2 - S(p) (ties to the lowest row index). Entries outside the region
// are treated as forbidden rather than running arithmetic on infinities.
// Runs in O(n*m) without materializing the cost matrix.
inline MatchResult p2r_objective(const ScoreMap& pred, const PointAnnotation& gt, double tau,
                                 double mu,
                                 CostScoreTransform transform = CostScoreTransform::kInverseSigmoid) {
  if (tau < 0.0) throw std::invalid_argument("p2r_objective: tau must be non-negative");
  if (mu <= 0.0) throw std::invalid_argument("p2r_objective: mu must be positive");
  const std::size_t n = pred.size();
  const std::size_t m = gt.size();
  MatchResult result{MatchMatrix(n, m), std::vector<double>(n, 0.0), {},
                     NeighborhoodMask{std::vector<std::uint8_t>(n, 0), mu}};
  if (m == 0) return result;

  for (const Point2& p : gt.coords())
    if (!std::isfinite(p.row) || !std::isfinite(p.col))
      throw std::invalid_argument("p2r_objective: non-finite point coordinate");

  std::vector<int> best_row(m, -1);
  std::vector<double> best_cost(m, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 xi = pred.coords(i);
    // Nearest point of pixel i; ties go to the lowest point index.
    std::size_t nearest = 0;
    double nearest_dist = l2_distance(xi, gt[0]);
    for (std::size_t j = 1; j < m; ++j) {
      const double d = l2_distance(xi, gt[j]);
      if (d < nearest_dist) {
        nearest_dist = d;
        nearest = j;
      }
    }
    if (nearest_dist >= mu) continue;  // beta[i] = 0: outside every region
    result.mask.in_radius[i] = 1;
    result.region.assign(i, static_cast<int>(nearest));
    const double cost = tau * nearest_dist - score_transform(pred[i], transform);
    if (cost < best_cost[nearest]) {
      best_cost[nearest] = cost;
      best_row[nearest] = static_cast<int>(i);
    }
  }

  std::string unmatched;
  for (std::size_t j = 0; j < m; ++j) {
    if (best_row[j] < 0) {
      if (!unmatched.empty()) unmatched += ",";
      unmatched += std::to_string(j);
    }
  }
  if (!unmatched.empty())
    throw std::invalid_argument("p2r_objective: no pixel within mu=" + std::to_string(mu) +
                                " for point indices [" + unmatched + "]");
  for (std::size_t j = 0; j < m; ++j)
    result.objective[static_cast<std::size_t>(best_row[j])] = 1.0;
  result.chosen_pixels = std::move(best_row);
  return result;
}

}  // namespace p2r
