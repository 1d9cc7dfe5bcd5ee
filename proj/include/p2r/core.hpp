// Core domain types for point-based counting losses: score maps, point
// annotations, match matrices and confidence masks. All coordinates are in
// prediction-grid units, (row, col) order; pixel i of an h*w grid sits at
// (i / w, i % w). Types are immutable after construction and safe to share
// across concurrent readers.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace p2r {

// Probabilities are clamped into [kProbEps, 1 - kProbEps] before any
// logarithm or inverse sigmoid touches them.
inline constexpr double kProbEps = 1e-6;

inline double clamp_prob(double v) {
  return std::min(std::max(v, kProbEps), 1.0 - kProbEps);
}

struct Point2 {
  double row = 0.0;
  double col = 0.0;
};

inline std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (char c : text) {
    hash ^= static_cast<unsigned char>(c);
    hash *= 0x100000001b3ull;
  }
  return hash;
}

inline Point2 pixel_coords(std::int64_t index, int width) {
  if (width <= 0) throw std::invalid_argument("pixel_coords: width must be positive");
  if (index < 0) throw std::out_of_range("pixel_coords: negative pixel index");
  return Point2{static_cast<double>(index / width), static_cast<double>(index % width)};
}

// Flattened per-pixel foreground probabilities with grid shape (h, w).
// Values are clamped at construction; clamping is idempotent.
class ScoreMap {
 public:
  ScoreMap(std::vector<double> values, int height, int width, int stride = 1)
      : values_(std::move(values)), height_(height), width_(width), stride_(stride) {
    if (height_ <= 0 || width_ <= 0)
      throw std::invalid_argument("ScoreMap: non-positive grid dimension");
    if (values_.size() != static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_))
      throw std::invalid_argument("ScoreMap: value count does not match h*w");
    for (double& v : values_) {
      if (!std::isfinite(v)) throw std::invalid_argument("ScoreMap: non-finite value");
      v = clamp_prob(v);
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int stride() const { return stride_; }  // grid-to-image ratio, reporting only
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const { return values_; }
  Point2 coords(std::size_t i) const {
    if (i >= values_.size()) throw std::out_of_range("ScoreMap: pixel index out of range");
    return pixel_coords(static_cast<std::int64_t>(i), width_);
  }

 private:
  std::vector<double> values_;
  int height_;
  int width_;
  int stride_;
};

// Ground-truth or pseudo point locations, (row, col) in prediction-grid units.
class PointAnnotation {
 public:
  PointAnnotation() = default;
  explicit PointAnnotation(std::vector<Point2> coords) : coords_(std::move(coords)) {
    for (const Point2& p : coords_) {
      if (!std::isfinite(p.row) || !std::isfinite(p.col))
        throw std::invalid_argument("PointAnnotation: non-finite coordinate");
    }
  }

  std::size_t size() const { return coords_.size(); }
  bool empty() const { return coords_.empty(); }
  const Point2& operator[](std::size_t j) const { return coords_[j]; }
  const std::vector<Point2>& coords() const { return coords_; }

  // Load-time grid check: negative or out-of-grid coordinates are rejected.
  void validate_in_grid(int height, int width) const {
    for (std::size_t j = 0; j < coords_.size(); ++j) {
      const Point2& p = coords_[j];
      if (p.row < 0.0 || p.col < 0.0 || p.row > height - 1 || p.col > width - 1)
        throw std::invalid_argument("PointAnnotation: point " + std::to_string(j) +
                                    " at (" + std::to_string(p.row) + ", " + std::to_string(p.col) +
                                    ") outside " + std::to_string(height) + "x" + std::to_string(width) + " grid");
    }
  }

 private:
  std::vector<Point2> coords_;
};

// Sparse n x m binary matrix whose rows are all-zero or one-hot, stored as a
// per-row column index. The representation makes the all-zero-or-one-hot row
// structure impossible to violate.
class MatchMatrix {
 public:
  static constexpr int kUnassigned = -1;

  MatchMatrix(std::size_t rows, std::size_t cols)
      : assignment_(rows, kUnassigned), cols_(cols) {}
  MatchMatrix(std::vector<int> row_assignment, std::size_t cols)
      : assignment_(std::move(row_assignment)), cols_(cols) {
    for (int a : assignment_) {
      if (a != kUnassigned && (a < 0 || static_cast<std::size_t>(a) >= cols_))
        throw std::invalid_argument("MatchMatrix: column index out of range");
    }
  }

  std::size_t rows() const { return assignment_.size(); }
  std::size_t cols() const { return cols_; }
  int column_of(std::size_t row) const { return assignment_[row]; }
  bool assigned(std::size_t row) const { return assignment_[row] != kUnassigned; }
  void assign(std::size_t row, int col) {
    if (col < 0 || static_cast<std::size_t>(col) >= cols_)
      throw std::invalid_argument("MatchMatrix: column index out of range");
    assignment_[row] = col;
  }
  const std::vector<int>& row_assignment() const { return assignment_; }

  // M * 1_m: indicator of assigned rows.
  std::vector<double> row_indicator() const {
    std::vector<double> out(assignment_.size(), 0.0);
    for (std::size_t i = 0; i < assignment_.size(); ++i)
      if (assignment_[i] != kUnassigned) out[i] = 1.0;
    return out;
  }

  // M * zeta for a per-column 0/1 vector.
  std::vector<double> apply_column_vector(const std::vector<double>& per_column) const {
    if (per_column.size() != cols_)
      throw std::invalid_argument("MatchMatrix: column vector length mismatch");
    std::vector<double> out(assignment_.size(), 0.0);
    for (std::size_t i = 0; i < assignment_.size(); ++i)
      if (assignment_[i] != kUnassigned) out[i] = per_column[static_cast<std::size_t>(assignment_[i])];
    return out;
  }

  std::vector<std::size_t> column_counts() const {
    std::vector<std::size_t> counts(cols_, 0);
    for (int a : assignment_)
      if (a != kUnassigned) ++counts[static_cast<std::size_t>(a)];
    return counts;
  }

 private:
  std::vector<int> assignment_;
  std::size_t cols_;
};

// Diagonal of the confidence matrix Z: one weight per pixel, each 0 or 1.
class ConfidenceMask {
 public:
  explicit ConfidenceMask(std::vector<double> weights) : weights_(std::move(weights)) {
    for (double w : weights_)
      if (w != 0.0 && w != 1.0)
        throw std::invalid_argument("ConfidenceMask: weight outside {0, 1}");
  }
  static ConfidenceMask ones(std::size_t n) { return ConfidenceMask(std::vector<double>(n, 1.0)); }
  static ConfidenceMask zeros(std::size_t n) { return ConfidenceMask(std::vector<double>(n, 0.0)); }

  std::size_t size() const { return weights_.size(); }
  double operator[](std::size_t i) const { return weights_[i]; }
  const std::vector<double>& weights() const { return weights_; }

 private:
  std::vector<double> weights_;
};

// Dense c x h x w feature grid, row-major.
class FeatureMap {
 public:
  FeatureMap(int channels, int height, int width)
      : channels_(channels), height_(height), width_(width),
        data_(static_cast<std::size_t>(channels) * height * width, 0.0) {
    if (channels_ <= 0 || height_ <= 0 || width_ <= 0)
      throw std::invalid_argument("FeatureMap: non-positive dimension");
  }
  FeatureMap(int channels, int height, int width, std::vector<double> data, int stride = 1)
      : channels_(channels), height_(height), width_(width), data_(std::move(data)), stride_(stride) {
    if (channels_ <= 0 || height_ <= 0 || width_ <= 0)
      throw std::invalid_argument("FeatureMap: non-positive dimension");
    if (data_.size() != static_cast<std::size_t>(channels_) * height_ * width_)
      throw std::invalid_argument("FeatureMap: data size does not match c*h*w");
    for (double v : data_)
      if (!std::isfinite(v)) throw std::invalid_argument("FeatureMap: non-finite entry");
  }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  int stride() const { return stride_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(height_) * width_; }

  double at(int ch, int row, int col) const {
    return data_[(static_cast<std::size_t>(ch) * height_ + row) * width_ + col];
  }
  double& at(int ch, int row, int col) {
    return data_[(static_cast<std::size_t>(ch) * height_ + row) * width_ + col];
  }
  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

 private:
  int channels_;
  int height_;
  int width_;
  std::vector<double> data_;
  int stride_ = 1;
};

}  // namespace p2r
