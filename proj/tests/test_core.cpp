#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "p2r/core.hpp"
#include "p2r/tensor_io.hpp"

using namespace p2r;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "p2r_core_test";
  fs::create_directories(dir);
  return dir;
}
}  // namespace

TEST_CASE("pixel_coords follows row-major order", "[core]") {
  CHECK(pixel_coords(0, 4).row == 0.0);
  CHECK(pixel_coords(0, 4).col == 0.0);
  CHECK(pixel_coords(5, 4).row == 1.0);
  CHECK(pixel_coords(5, 4).col == 1.0);
  CHECK(pixel_coords(7, 4).row == 1.0);
  CHECK(pixel_coords(7, 4).col == 3.0);
  CHECK_THROWS_AS(pixel_coords(-1, 4), std::out_of_range);
  CHECK_THROWS_AS(pixel_coords(0, 0), std::invalid_argument);
}

TEST_CASE("ScoreMap clamps values into [eps, 1-eps]", "[core]") {
  const ScoreMap map({-1.0, 0.0, 0.5, 1.0, 2.0, 0.25}, 2, 3);
  CHECK(map[0] == kProbEps);
  CHECK(map[1] == kProbEps);
  CHECK(map[2] == 0.5);
  CHECK(map[3] == 1.0 - kProbEps);
  CHECK(map[4] == 1.0 - kProbEps);
  CHECK(map[5] == 0.25);

  SECTION("clamping is idempotent") {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> wide(-2.0, 3.0);
    for (int i = 0; i < 1000; ++i) {
      const double v = wide(rng);
      CHECK(clamp_prob(clamp_prob(v)) == clamp_prob(v));
    }
    const ScoreMap again(map.values(), 2, 3);
    CHECK(again.values() == map.values());
  }
}

TEST_CASE("ScoreMap validates shape and finiteness", "[core]") {
  CHECK_THROWS_AS(ScoreMap({0.5, 0.5, 0.5}, 2, 2), std::invalid_argument);
  CHECK_THROWS_AS(ScoreMap({0.5, std::nan("")}, 1, 2), std::invalid_argument);
  CHECK_THROWS_AS(ScoreMap({}, 0, 0), std::invalid_argument);
}

TEST_CASE("PointAnnotation rejects bad coordinates at load time", "[core]") {
  CHECK_THROWS_AS(PointAnnotation({{0.0, std::numeric_limits<double>::infinity()}}),
                  std::invalid_argument);
  const PointAnnotation points({{1.0, 2.0}, {3.0, 0.0}});
  CHECK_NOTHROW(points.validate_in_grid(4, 4));
  CHECK_THROWS_AS(points.validate_in_grid(3, 4), std::invalid_argument);
  const PointAnnotation negative({{-0.5, 1.0}});
  CHECK_THROWS_AS(negative.validate_in_grid(4, 4), std::invalid_argument);
}

TEST_CASE("MatchMatrix keeps rows all-zero or one-hot", "[core]") {
  MatchMatrix m(4, 2);
  m.assign(1, 0);
  m.assign(3, 1);
  CHECK_THROWS_AS(m.assign(0, 2), std::invalid_argument);
  CHECK(m.row_indicator() == std::vector<double>{0.0, 1.0, 0.0, 1.0});
  CHECK(m.apply_column_vector({1.0, 0.0}) == std::vector<double>{0.0, 1.0, 0.0, 0.0});
  CHECK(m.column_counts() == std::vector<std::size_t>{1, 1});
  CHECK_THROWS_AS(MatchMatrix({0, 5}, 2), std::invalid_argument);
}

TEST_CASE("ConfidenceMask only admits 0/1 weights", "[core]") {
  CHECK_NOTHROW(ConfidenceMask({0.0, 1.0, 1.0}));
  CHECK_THROWS_AS(ConfidenceMask({0.5}), std::invalid_argument);
}

TEST_CASE("tensor round-trip is bit-exact for f64", "[core][io]") {
  const fs::path path = temp_dir() / "roundtrip.p2rt";
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(-10.0, 10.0);
  std::vector<double> values(2 * 3 * 3);
  for (double& v : values) v = dist(rng);
  values[0] = -0.0;

  save_tensor(values, {2, 3, 3}, path);
  const TensorData loaded = load_tensor(path);
  CHECK(loaded.dims == std::vector<std::uint32_t>{2, 3, 3});
  CHECK(loaded.dtype == TensorDtype::f64);
  REQUIRE(loaded.values.size() == values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    CHECK(std::bit_cast<std::uint64_t>(loaded.values[i]) == std::bit_cast<std::uint64_t>(values[i]));
  }
  CHECK_NOTHROW(loaded.as_feature_map());
  CHECK_THROWS_AS(loaded.as_score_map(), TensorIoError);
}

TEST_CASE("tensor f32 round-trip preserves shape", "[core][io]") {
  const fs::path path = temp_dir() / "f32.p2rt";
  save_tensor({0.25, 0.5, 0.75, 1.0}, {2, 2}, path, TensorDtype::f32);
  const TensorData loaded = load_tensor(path);
  CHECK(loaded.dtype == TensorDtype::f32);
  CHECK(loaded.dims == std::vector<std::uint32_t>{2, 2});
  CHECK(loaded.values == std::vector<double>{0.25, 0.5, 0.75, 1.0});
}

TEST_CASE("malformed tensor files raise distinct errors", "[core][io]") {
  const fs::path dir = temp_dir();

  SECTION("bad magic") {
    const fs::path path = dir / "badmagic.p2rt";
    std::ofstream(path, std::ios::binary) << "XXXXrest-of-file-padding";
    CHECK_THROWS_AS(load_tensor(path), BadMagicError);
  }
  SECTION("bad dtype code") {
    const fs::path path = dir / "baddtype.p2rt";
    save_tensor({1.0}, {1}, path);
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(8);
    f.put(static_cast<char>(9));
    f.close();
    CHECK_THROWS_AS(load_tensor(path), BadDtypeError);
  }
  SECTION("truncated payload names expected and actual byte counts") {
    const fs::path path = dir / "trunc.p2rt";
    save_tensor({1.0, 2.0, 3.0}, {3}, path);
    fs::resize_file(path, fs::file_size(path) - 5);
    try {
      load_tensor(path);
      FAIL("expected TruncatedPayloadError");
    } catch (const TruncatedPayloadError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("24") != std::string::npos);  // expected bytes
      CHECK(msg.find("19") != std::string::npos);  // actual bytes
    }
  }
}

TEST_CASE("point csv round-trip and validation", "[core][io]") {
  const fs::path path = temp_dir() / "points.csv";
  const PointAnnotation points({{0.0, 0.0}, {2.5, 1.25}});
  save_points(points, path);
  const PointAnnotation loaded = load_points(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[1].row == 2.5);
  CHECK(loaded[1].col == 1.25);
  CHECK_NOTHROW(load_points(path, 4, 4));
  CHECK_THROWS_AS(load_points(path, 2, 2), std::invalid_argument);

  const fs::path bad = temp_dir() / "badheader.csv";
  std::ofstream(bad) << "x,y\n1,2\n";
  CHECK_THROWS_AS(load_points(bad), TensorIoError);
}
