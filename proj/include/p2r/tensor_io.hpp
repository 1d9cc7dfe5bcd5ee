// On-disk formats: the "P2RT" binary tensor container and CSV point files
// (header "row,col", one point per line). 64-bit payloads round-trip
// bit-exactly; each malformed-file condition raises a distinct error type.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "p2r/core.hpp"

namespace p2r {

struct TensorIoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BadMagicError : TensorIoError {
  using TensorIoError::TensorIoError;
};
struct BadDtypeError : TensorIoError {
  using TensorIoError::TensorIoError;
};
struct TruncatedPayloadError : TensorIoError {
  using TensorIoError::TensorIoError;
};

enum class TensorDtype : std::uint8_t { f32 = 0, f64 = 1 };

// Loaded tensor, decoded to double regardless of stored dtype.
struct TensorData {
  TensorDtype dtype = TensorDtype::f64;
  std::vector<std::uint32_t> dims;
  std::vector<double> values;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (std::uint32_t d : dims) n *= d;
    return n;
  }

  ScoreMap as_score_map() const {
    if (dims.size() != 2)
      throw TensorIoError("tensor is not a 2-d score map (ndim=" + std::to_string(dims.size()) + ")");
    return ScoreMap(values, static_cast<int>(dims[0]), static_cast<int>(dims[1]));
  }
  FeatureMap as_feature_map() const {
    if (dims.size() != 3)
      throw TensorIoError("tensor is not a 3-d feature map (ndim=" + std::to_string(dims.size()) + ")");
    return FeatureMap(static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                      static_cast<int>(dims[2]), values);
  }
};

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(p[k]) << (8 * k);
  return v;
}

}  // namespace detail

inline constexpr char kTensorMagic[4] = {'P', '2', 'R', 'T'};
inline constexpr std::uint32_t kTensorVersion = 1;

inline void save_tensor(const std::vector<double>& values,
                        const std::vector<std::uint32_t>& dims,
                        const std::filesystem::path& path,
                        TensorDtype dtype = TensorDtype::f64) {
  std::size_t n = 1;
  for (std::uint32_t d : dims) n *= d;
  if (values.size() != n)
    throw TensorIoError("save_tensor: value count does not match dims product");

  std::string buf;
  buf.reserve(16 + 4 * dims.size() + values.size() * 8);
  buf.append(kTensorMagic, 4);
  detail::put_u32_le(buf, kTensorVersion);
  buf.push_back(static_cast<char>(dtype));
  detail::put_u32_le(buf, static_cast<std::uint32_t>(dims.size()));
  for (std::uint32_t d : dims) detail::put_u32_le(buf, d);
  if (dtype == TensorDtype::f64) {
    for (double v : values) detail::put_u64_le(buf, std::bit_cast<std::uint64_t>(v));
  } else {
    for (double v : values) {
      float f = static_cast<float>(v);
      detail::put_u32_le(buf, std::bit_cast<std::uint32_t>(f));
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TensorIoError("save_tensor: cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw TensorIoError("save_tensor: write failed for " + path.string());
}

inline void save_tensor(const ScoreMap& map, const std::filesystem::path& path,
                        TensorDtype dtype = TensorDtype::f64) {
  save_tensor(map.values(),
              {static_cast<std::uint32_t>(map.height()), static_cast<std::uint32_t>(map.width())},
              path, dtype);
}

inline void save_tensor(const FeatureMap& map, const std::filesystem::path& path,
                        TensorDtype dtype = TensorDtype::f64) {
  save_tensor(map.data(),
              {static_cast<std::uint32_t>(map.channels()), static_cast<std::uint32_t>(map.height()),
               static_cast<std::uint32_t>(map.width())},
              path, dtype);
}

inline TensorData load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorIoError("load_tensor: cannot open " + path.string());
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
  std::size_t size = raw.size();

  if (size < 13) throw TruncatedPayloadError("load_tensor: file shorter than fixed header");
  if (std::memcmp(p, kTensorMagic, 4) != 0)
    throw BadMagicError("load_tensor: bad magic \"" + raw.substr(0, 4) + "\" in " + path.string());
  std::uint32_t version = detail::get_u32_le(p + 4);
  if (version != kTensorVersion)
    throw TensorIoError("load_tensor: unsupported version " + std::to_string(version));
  std::uint8_t dtype_code = p[8];
  if (dtype_code > 1)
    throw BadDtypeError("load_tensor: unknown dtype code " + std::to_string(dtype_code));
  TensorDtype dtype = static_cast<TensorDtype>(dtype_code);
  std::uint32_t ndim = detail::get_u32_le(p + 9);

  std::size_t offset = 13;
  if (size < offset + 4ull * ndim)
    throw TruncatedPayloadError("load_tensor: header truncated before dimension list");
  TensorData t;
  t.dtype = dtype;
  t.dims.resize(ndim);
  std::size_t n = 1;
  for (std::uint32_t k = 0; k < ndim; ++k) {
    t.dims[k] = detail::get_u32_le(p + offset);
    offset += 4;
    n *= t.dims[k];
  }

  std::size_t elem_size = dtype == TensorDtype::f64 ? 8 : 4;
  std::size_t expected = n * elem_size;
  std::size_t actual = size - offset;
  if (actual != expected)
    throw TruncatedPayloadError("load_tensor: payload has " + std::to_string(actual) +
                                " bytes, expected " + std::to_string(expected));

  t.values.resize(n);
  if (dtype == TensorDtype::f64) {
    for (std::size_t i = 0; i < n; ++i)
      t.values[i] = std::bit_cast<double>(detail::get_u64_le(p + offset + 8 * i));
  } else {
    for (std::size_t i = 0; i < n; ++i)
      t.values[i] = std::bit_cast<float>(detail::get_u32_le(p + offset + 4 * i));
  }
  return t;
}

// --- CSV point files -------------------------------------------------------

inline void save_points(const PointAnnotation& points, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw TensorIoError("save_points: cannot open " + path.string() + " for writing");
  out << "row,col\n";
  out.precision(17);
  for (const Point2& p : points.coords()) out << p.row << "," << p.col << "\n";
  if (!out) throw TensorIoError("save_points: write failed for " + path.string());
}

inline PointAnnotation load_points(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TensorIoError("load_points: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw TensorIoError("load_points: empty file " + path.string());
  if (line.size() && line.back() == '\r') line.pop_back();
  if (line != "row,col")
    throw TensorIoError("load_points: expected header \"row,col\", got \"" + line + "\"");
  std::vector<Point2> pts;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.size() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ss(line);
    Point2 p;
    char comma = 0;
    if (!(ss >> p.row >> comma >> p.col) || comma != ',')
      throw TensorIoError("load_points: malformed line " + std::to_string(lineno) + " in " +
                          path.string());
    pts.push_back(p);
  }
  return PointAnnotation(std::move(pts));
}

// Load and validate against a grid in one step.
inline PointAnnotation load_points(const std::filesystem::path& path, int height, int width) {
  PointAnnotation points = load_points(path);
  points.validate_in_grid(height, width);
  return points;
}

}  // namespace p2r
