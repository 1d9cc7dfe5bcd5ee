#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "p2r/matching.hpp"

using namespace p2r;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ScoreMap uniform_scores(int h, int w, double p) {
  return ScoreMap(std::vector<double>(static_cast<std::size_t>(h) * w, p), h, w);
}

ScoreMap random_scores(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(0.05, 0.95);
  std::vector<double> v(static_cast<std::size_t>(h) * w);
  for (double& x : v) x = dist(rng);
  return ScoreMap(std::move(v), h, w);
}

}  // namespace

TEST_CASE("pairwise distances", "[matching]") {
  SECTION("3-4-5 triangle") {
    const DistanceMatrix d = pairwise_distances({{0.0, 0.0}}, PointAnnotation({{3.0, 4.0}}));
    CHECK(d.at(0, 0) == 5.0);
  }
  SECTION("coincident pixel and point") {
    const DistanceMatrix d = pairwise_distances({{2.0, 2.0}}, PointAnnotation({{2.0, 2.0}}));
    CHECK(d.at(0, 0) == 0.0);
  }
  SECTION("2x2 grid against the origin") {
    const DistanceMatrix d = pairwise_distances(grid_coords(2, 2), PointAnnotation({{0.0, 0.0}}));
    CHECK(d.at(0, 0) == 0.0);
    CHECK(d.at(1, 0) == 1.0);
    CHECK(d.at(2, 0) == 1.0);
    CHECK_THAT(d.at(3, 0), WithinRel(std::sqrt(2.0), 1e-15));
  }
  SECTION("no points gives an n x 0 matrix") {
    const DistanceMatrix d = pairwise_distances(grid_coords(2, 3), PointAnnotation({}));
    CHECK(d.rows == 6);
    CHECK(d.cols == 0);
    CHECK(d.values.empty());
  }
}

TEST_CASE("inverse sigmoid", "[matching]") {
  CHECK(inverse_sigmoid(0.5) == 0.0);
  CHECK_THAT(inverse_sigmoid(0.9), WithinRel(std::log(9.0), 1e-14));

  SECTION("odd symmetry") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> dist(0.01, 0.99);
    for (int i = 0; i < 500; ++i) {
      const double p = dist(rng);
      CHECK_THAT(inverse_sigmoid(1.0 - p), WithinAbs(-inverse_sigmoid(p), 1e-9));
    }
  }
  SECTION("strictly increasing") {
    double prev = inverse_sigmoid(0.001);
    for (double p = 0.002; p < 1.0; p += 0.001) {
      const double cur = inverse_sigmoid(p);
      REQUIRE(cur > prev);
      prev = cur;
    }
  }
}

TEST_CASE("p2p cost matrix", "[matching]") {
  SECTION("tau=0 with uniform 0.5 scores vanishes") {
    const CostMatrix cost = p2p_cost(uniform_scores(2, 2, 0.5), PointAnnotation({{0.0, 0.0}}), 0.0);
    for (std::size_t i = 0; i < 4; ++i) CHECK(cost.at(i, 0) == 0.0);
  }
  SECTION("tau * distance - inverse sigmoid") {
    // Pixel (0,0) with p = 0.9 at distance 1 from the point, tau = 8.
    const ScoreMap pred({0.9, 0.5}, 1, 2);
    const CostMatrix cost = p2p_cost(pred, PointAnnotation({{0.0, 1.0}}), 8.0);
    CHECK_THAT(cost.at(0, 0), WithinRel(8.0 - std::log(9.0), 1e-14));
  }
  SECTION("identity transform reproduces the vanilla cost") {
    const ScoreMap pred({0.9, 0.5}, 1, 2);
    const CostMatrix cost =
        p2p_cost(pred, PointAnnotation({{0.0, 1.0}}), 8.0, CostScoreTransform::kIdentity);
    CHECK_THAT(cost.at(0, 0), WithinRel(8.0 - 0.9, 1e-14));
  }
}

TEST_CASE("p2p objective", "[matching]") {
  SECTION("no points means all background") {
    const MatchResult r = p2p_objective(uniform_scores(2, 2, 0.5), PointAnnotation({}), 8.0);
    CHECK(r.objective == std::vector<double>(4, 0.0));
    CHECK(r.chosen_pixels.empty());
  }
  SECTION("single point lands on the nearest pixel under uniform scores") {
    const MatchResult r = p2p_objective(uniform_scores(2, 2, 0.5), PointAnnotation({{0.0, 0.0}}), 8.0);
    CHECK(r.objective == std::vector<double>{1.0, 0.0, 0.0, 0.0});
    CHECK(r.chosen_pixels == std::vector<int>{0});
  }
  SECTION("two points on pixel centers match one-to-one, verified by brute force") {
    const ScoreMap pred = uniform_scores(2, 2, 0.5);
    const PointAnnotation gt({{0.0, 0.0}, {1.0, 1.0}});
    const MatchResult r = p2p_objective(pred, gt, 8.0);
    CHECK(r.objective == std::vector<double>{1.0, 0.0, 0.0, 1.0});
    const AssignResult oracle = brute_force_assign(p2p_cost(pred, gt, 8.0));
    CHECK(hungarian_assign(p2p_cost(pred, gt, 8.0)).total_cost == oracle.total_cost);
  }
  SECTION("more points than pixels is rejected") {
    CHECK_THROWS_AS(p2p_objective(uniform_scores(1, 1, 0.5),
                                  PointAnnotation({{0.0, 0.0}, {0.0, 0.0}}), 8.0),
                    std::invalid_argument);
  }
}

TEST_CASE("nearest region matrix", "[matching]") {
  SECTION("single point absorbs every pixel") {
    const DistanceMatrix d = pairwise_distances(grid_coords(2, 2), PointAnnotation({{0.0, 0.0}}));
    const MatchMatrix m = nearest_region_matrix(d);
    for (std::size_t i = 0; i < 4; ++i) CHECK(m.column_of(i) == 0);
  }
  SECTION("equidistant pixel breaks ties to the lower point index") {
    const PointAnnotation gt({{0.0, 0.0}, {1.0, 1.0}});
    const DistanceMatrix d = pairwise_distances(grid_coords(2, 2), gt);
    const MatchMatrix m = nearest_region_matrix(d);
    CHECK(m.column_of(1) == 0);  // pixel (0,1) is 1.0 from both points
    CHECK(m.column_of(2) == 0);  // pixel (1,0) likewise
    CHECK(m.column_of(0) == 0);
    CHECK(m.column_of(3) == 1);
  }
  SECTION("pixel coincident with a point joins it") {
    const PointAnnotation gt({{5.0, 5.0}, {1.0, 1.0}});
    const DistanceMatrix d = pairwise_distances({{1.0, 1.0}}, gt);
    CHECK(nearest_region_matrix(d).column_of(0) == 1);
  }
  SECTION("empty point set is the caller's branch") {
    const DistanceMatrix d = pairwise_distances(grid_coords(2, 2), PointAnnotation({}));
    CHECK_THROWS_AS(nearest_region_matrix(d), std::invalid_argument);
  }
}

TEST_CASE("neighborhood mask", "[matching]") {
  const PointAnnotation origin({{0.0, 0.0}});
  SECTION("mu = 1.5 covers the whole 2x2 grid") {
    const DistanceMatrix d = pairwise_distances(grid_coords(2, 2), origin);
    const NeighborhoodMask mask = neighborhood_mask(d, 1.5);
    CHECK(mask.in_radius == std::vector<std::uint8_t>{1, 1, 1, 1});
  }
  SECTION("mu below every distance leaves the mask empty") {
    const DistanceMatrix d = pairwise_distances({{3.0, 4.0}}, origin);
    CHECK(neighborhood_mask(d, 1.0).in_radius == std::vector<std::uint8_t>{0});
  }
  SECTION("no points means no neighborhood") {
    const DistanceMatrix d = pairwise_distances(grid_coords(2, 2), PointAnnotation({}));
    CHECK(neighborhood_mask(d, 10.0).in_radius == std::vector<std::uint8_t>{0, 0, 0, 0});
  }
  SECTION("threshold is strict") {
    const DistanceMatrix d = pairwise_distances({{0.0, 1.0}}, origin);
    CHECK(neighborhood_mask(d, 1.0).in_radius == std::vector<std::uint8_t>{0});
  }
  CHECK_THROWS_AS(neighborhood_mask(DistanceMatrix{}, 0.0), std::invalid_argument);
}

TEST_CASE("p2r region matrix", "[matching]") {
  const ScoreMap pred = uniform_scores(3, 3, 0.5);
  SECTION("mu beyond the grid diagonal reduces to the nearest-point matrix") {
    const PointAnnotation gt({{0.0, 0.0}, {2.0, 2.0}});
    const MatchMatrix region = p2r_region(pred, gt, 100.0);
    const MatchMatrix nearest = nearest_region_matrix(pairwise_distances(pred, gt));
    CHECK(region.row_assignment() == nearest.row_assignment());
  }
  SECTION("mu below all distances gives the zero matrix") {
    const PointAnnotation gt({{0.5, 0.5}});
    const MatchMatrix region = p2r_region(pred, gt, 0.1);
    for (std::size_t i = 0; i < region.rows(); ++i) CHECK_FALSE(region.assigned(i));
  }
  SECTION("well-separated points produce disjoint regions") {
    const ScoreMap wide = uniform_scores(3, 9, 0.5);
    const PointAnnotation gt({{1.0, 1.0}, {1.0, 7.0}});
    const MatchMatrix region = p2r_region(wide, gt, 2.0);
    std::size_t in_zero = 0, in_one = 0;
    for (std::size_t i = 0; i < region.rows(); ++i) {
      if (!region.assigned(i)) continue;
      (region.column_of(i) == 0 ? in_zero : in_one) += 1;
      // Rows are one-hot, so overlap is impossible; confirm both regions are
      // non-empty and centered on their own point.
      const Point2 c = wide.coords(i);
      const double d0 = l2_distance(c, gt[0]);
      const double d1 = l2_distance(c, gt[1]);
      CHECK(std::min(d0, d1) < 2.0);
      CHECK((region.column_of(i) == 0 ? d0 : d1) == std::min(d0, d1));
    }
    CHECK(in_zero > 0);
    CHECK(in_one > 0);
  }
  SECTION("no points gives the empty matrix") {
    const MatchMatrix region = p2r_region(pred, PointAnnotation({}), 3.0);
    CHECK(region.cols() == 0);
    CHECK(region.rows() == 9);
  }
}

TEST_CASE("p2r objective on a four-pixel line", "[matching]") {
  const ScoreMap pred({0.9, 0.1, 0.1, 0.1}, 1, 4);
  const PointAnnotation gt({{0.0, 0.0}});
  const MatchResult r = p2r_objective(pred, gt, 8.0, 10.0);
  CHECK(r.objective == std::vector<double>{1.0, 0.0, 0.0, 0.0});
  CHECK(r.chosen_pixels == std::vector<int>{0});
  // Frozen costs: -S(0.9) and 8 + S(0.9)^sign-flip at distance one.
  const double cost0 = 8.0 * 0.0 - inverse_sigmoid(0.9);
  const double cost1 = 8.0 * 1.0 - inverse_sigmoid(0.1);
  CHECK_THAT(cost0, WithinAbs(-2.1972245773362196, 1e-12));
  CHECK_THAT(cost1, WithinAbs(10.19722457733622, 1e-12));
}

TEST_CASE("p2r objective limiting behavior", "[matching]") {
  // Scores peak away from the point; coordinates decide only when tau wins.
  const ScoreMap pred({0.2, 0.3, 0.9, 0.2, 0.2, 0.2}, 1, 6);
  const PointAnnotation gt({{0.0, 0.0}});
  SECTION("tau = 0 picks the score argmax inside the region") {
    const MatchResult r = p2r_objective(pred, gt, 0.0, 100.0);
    CHECK(r.chosen_pixels == std::vector<int>{2});
  }
  SECTION("huge tau picks the distance argmin") {
    const MatchResult r = p2r_objective(pred, gt, 1e9, 100.0);
    CHECK(r.chosen_pixels == std::vector<int>{0});
  }
  SECTION("an isolated point is reported by index") {
    const PointAnnotation off_grid({{0.0, 0.0}, {0.5, 3.5}});
    try {
      p2r_objective(pred, off_grid, 8.0, 0.2);
      FAIL("expected an unmatched-point error");
    } catch (const std::invalid_argument& e) {
      const std::string msg = e.what();
      CHECK(msg.find("1") != std::string::npos);
    }
  }
}

TEST_CASE("p2r equals p2p for a single point with unbounded radius", "[matching][property]") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const int h = 2 + static_cast<int>(rng() % 3);
    const int w = 2 + static_cast<int>(rng() % 3);
    const ScoreMap pred = random_scores(h, w, rng);
    const PointAnnotation gt({{static_cast<double>(rng() % h), static_cast<double>(rng() % w)}});
    const double diagonal = std::sqrt(static_cast<double>(h * h + w * w));
    const MatchResult via_region = p2r_objective(pred, gt, 8.0, diagonal + 1.0);
    const MatchResult via_hungarian = p2p_objective(pred, gt, 8.0);
    CHECK(via_region.chosen_pixels == via_hungarian.chosen_pixels);
    CHECK(via_region.objective == via_hungarian.objective);
  }
}

TEST_CASE("neighborhood mask grows monotonically with mu", "[matching][property]") {
  std::mt19937_64 rng(31);
  const ScoreMap pred = random_scores(4, 5, rng);
  const PointAnnotation gt({{1.0, 1.0}, {2.0, 4.0}});
  const DistanceMatrix d = pairwise_distances(pred, gt);
  NeighborhoodMask prev = neighborhood_mask(d, 0.25);
  for (double mu = 0.5; mu < 8.0; mu += 0.25) {
    const NeighborhoodMask next = neighborhood_mask(d, mu);
    for (std::size_t i = 0; i < next.size(); ++i) REQUIRE(next[i] >= prev[i]);
    prev = next;
  }
}

TEST_CASE("p2r objective scans match a brute-force oracle", "[matching][property]") {
  std::mt19937_64 rng(4711);
  std::uniform_real_distribution<double> mu_dist(1.5, 6.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int h = 2 + static_cast<int>(rng() % 2);
    const int w = 2 + static_cast<int>(rng() % 4);
    const ScoreMap pred = random_scores(h, w, rng);
    const std::size_t m = 1 + rng() % 3;
    std::vector<Point2> pts;
    while (pts.size() < m) {
      const Point2 cand{static_cast<double>(rng() % h), static_cast<double>(rng() % w)};
      bool fresh = true;
      for (const Point2& p : pts) fresh = fresh && (p.row != cand.row || p.col != cand.col);
      if (fresh) pts.push_back(cand);
    }
    const PointAnnotation gt(pts);
    const double mu = mu_dist(rng);
    const MatchResult r = p2r_objective(pred, gt, 8.0, mu);

    // Exactly m ones, each inside its own point's region.
    double ones = 0.0;
    for (double v : r.objective) ones += v;
    REQUIRE(ones == static_cast<double>(m));

    const DistanceMatrix dist = pairwise_distances(pred, gt);
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t chosen = static_cast<std::size_t>(r.chosen_pixels[j]);
      double best_cost = std::numeric_limits<double>::infinity();
      int best_pixel = -1;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        // Admissible: nearest point of pixel i is j (lowest-index ties) and
        // the distance clears mu.
        std::size_t nearest = 0;
        for (std::size_t k = 1; k < m; ++k)
          if (dist.at(i, k) < dist.at(i, nearest)) nearest = k;
        if (nearest != j || dist.at(i, j) >= mu) continue;
        const double cost = 8.0 * dist.at(i, j) - inverse_sigmoid(pred[i]);
        if (cost < best_cost) {
          best_cost = cost;
          best_pixel = static_cast<int>(i);
        }
      }
      REQUIRE(best_pixel == static_cast<int>(chosen));
      REQUIRE(r.region.column_of(chosen) == static_cast<int>(j));
      REQUIRE(dist.at(chosen, j) < mu);
    }
  }
}
