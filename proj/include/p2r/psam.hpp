// Point-specific activation maps: sliding-block extraction around every
// pixel, per-block decoder gradients obtained in a single pass, ReLU'd
// channel-summed heat patches, fill-back into full-resolution maps, and the
// foreground aggregations. The all-pixel pipeline streams one block at a
// time so its working set stays at n*r^2 patch values plus two r^2*c
// scratch buffers instead of the naive n*h*w*c Jacobian.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "p2r/core.hpp"

namespace p2r::psam {

// Decoder seen by the PSAM pipeline: a map from an r x r x c block to one
// probability, plus the analytic gradient of that output w.r.t. the block.
struct BlockDecoder {
  virtual ~BlockDecoder() = default;
  virtual int receptive_field() const = 0;  // r, odd
  virtual int channels() const = 0;
  virtual bool differentiable() const { return true; }
  virtual double forward(std::span<const double> block) const = 0;
  virtual void input_gradient(std::span<const double> block, std::span<double> grad) const = 0;
};

// Tracks doubles allocated by the PSAM pipeline; peak is the working-set
// figure asserted by the memory-contract test.
struct WorkingSetMeter {
  std::size_t current = 0;
  std::size_t peak = 0;
  void on_alloc(std::size_t doubles) {
    current += doubles;
    peak = std::max(peak, current);
  }
  void on_release(std::size_t doubles) { current -= doubles; }
};

// Sliding r x r x c blocks, one per pixel, zero-padded at borders. Block q
// stores channel-major [ch][dr][dc]; valid flags mark in-bounds cells.
struct BlockSet {
  int r = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> blocks;        // n x (r*r*c)
  std::vector<std::uint8_t> valid;   // n x (r*r)

  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  std::size_t block_size() const { return static_cast<std::size_t>(r) * r * channels; }
  std::span<const double> block(std::size_t q) const {
    return std::span<const double>(blocks).subspan(q * block_size(), block_size());
  }
  std::span<const std::uint8_t> valid_cells(std::size_t q) const {
    return std::span<const std::uint8_t>(valid).subspan(q * static_cast<std::size_t>(r) * r,
                                                        static_cast<std::size_t>(r) * r);
  }
};

namespace detail {

// Copies the r x r window centered at pixel q into `block` (channel-major),
// writing zeros at out-of-bounds cells. `valid` may be null.
inline void gather_block(const FeatureMap& f, int r, std::size_t q, std::span<double> block,
                         std::uint8_t* valid) {
  const int rad = r / 2;
  const int qr = static_cast<int>(q) / f.width();
  const int qc = static_cast<int>(q) % f.width();
  std::size_t idx = 0;
  for (int ch = 0; ch < f.channels(); ++ch) {
    for (int dr = -rad; dr <= rad; ++dr) {
      for (int dc = -rad; dc <= rad; ++dc) {
        const int row = qr + dr;
        const int col = qc + dc;
        const bool inside = row >= 0 && row < f.height() && col >= 0 && col < f.width();
        block[idx++] = inside ? f.at(ch, row, col) : 0.0;
      }
    }
  }
  if (valid) {
    std::size_t cell = 0;
    for (int dr = -rad; dr <= rad; ++dr)
      for (int dc = -rad; dc <= rad; ++dc) {
        const int row = qr + dr;
        const int col = qc + dc;
        valid[cell++] = row >= 0 && row < f.height() && col >= 0 && col < f.width() ? 1 : 0;
      }
  }
}

}  // namespace detail

inline BlockSet extract_blocks(const FeatureMap& f, int r) {
  if (r <= 0 || r % 2 == 0) throw std::invalid_argument("extract_blocks: r must be odd and positive");
  if (r > 2 * std::min(f.height(), f.width()) - 1)
    throw std::invalid_argument("extract_blocks: r exceeds 2*min(h,w)-1");
  BlockSet set;
  set.r = r;
  set.channels = f.channels();
  set.height = f.height();
  set.width = f.width();
  const std::size_t n = set.pixel_count();
  set.blocks.assign(n * set.block_size(), 0.0);
  set.valid.assign(n * static_cast<std::size_t>(r) * r, 0);
  for (std::size_t q = 0; q < n; ++q)
    detail::gather_block(f, r, q,
                         std::span<double>(set.blocks).subspan(q * set.block_size(), set.block_size()),
                         set.valid.data() + q * static_cast<std::size_t>(r) * r);
  return set;
}

// p[q] = decoder(block q). For a decoder whose receptive field matches r this
// agrees with running the decoder over the full map.
inline ScoreMap decode_blocks(const BlockSet& set, const BlockDecoder& decoder) {
  if (decoder.receptive_field() != set.r)
    throw std::invalid_argument("decode_blocks: decoder receptive field != block r");
  if (decoder.channels() != set.channels)
    throw std::invalid_argument("decode_blocks: decoder channel count mismatch");
  const std::size_t n = set.pixel_count();
  std::vector<double> scores(n, 0.0);
  for (std::size_t q = 0; q < n; ++q) scores[q] = decoder.forward(set.block(q));
  return ScoreMap(std::move(scores), set.height, set.width);
}

// Per-block gradients d p[q] / d block_q, same layout as BlockSet::blocks.
// One pass suffices because the summed output has unit sensitivity to each
// p[q]. Pad cells carry a gradient value too; BlockSet::valid marks them.
struct BlockGradients {
  int r = 0;
  int channels = 0;
  std::vector<double> values;  // n x (r*r*c)

  std::span<const double> block(std::size_t q) const {
    const std::size_t sz = static_cast<std::size_t>(r) * r * channels;
    return std::span<const double>(values).subspan(q * sz, sz);
  }
};

inline BlockGradients block_gradients(const BlockSet& set, const BlockDecoder& decoder) {
  if (decoder.receptive_field() != set.r)
    throw std::invalid_argument("block_gradients: decoder receptive field != block r");
  if (decoder.channels() != set.channels)
    throw std::invalid_argument("block_gradients: decoder channel count mismatch");
  if (!decoder.differentiable())
    throw std::invalid_argument("block_gradients: decoder does not provide gradients");
  BlockGradients g;
  g.r = set.r;
  g.channels = set.channels;
  const std::size_t n = set.pixel_count();
  const std::size_t sz = set.block_size();
  g.values.assign(n * sz, 0.0);
  for (std::size_t q = 0; q < n; ++q)
    decoder.input_gradient(set.block(q), std::span<double>(g.values).subspan(q * sz, sz));
  return g;
}

struct PsamPatch {
  int r = 0;
  std::vector<double> values;  // r*r, non-negative
};

struct PsamMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;  // h*w, non-negative
};

// H~ = max(sum_channels grad .* block, 0), an r x r map.
inline PsamPatch psam_patch(std::span<const double> grad, std::span<const double> block, int r,
                            int channels) {
  const std::size_t cells = static_cast<std::size_t>(r) * r;
  if (grad.size() != cells * channels || block.size() != cells * channels)
    throw std::invalid_argument("psam_patch: shape mismatch");
  PsamPatch patch;
  patch.r = r;
  patch.values.assign(cells, 0.0);
  for (int ch = 0; ch < channels; ++ch)
    for (std::size_t t = 0; t < cells; ++t)
      patch.values[t] += grad[ch * cells + t] * block[ch * cells + t];
  for (double& v : patch.values) v = std::max(v, 0.0);
  return patch;
}

// Places patch q onto an h x w zero map; pad cells are dropped.
inline PsamMap fill_back(const PsamPatch& patch, std::size_t q, int height, int width) {
  const int r = patch.r;
  const int rad = r / 2;
  if (q >= static_cast<std::size_t>(height) * width)
    throw std::invalid_argument("fill_back: pixel index outside grid");
  PsamMap map;
  map.height = height;
  map.width = width;
  map.values.assign(static_cast<std::size_t>(height) * width, 0.0);
  const int qr = static_cast<int>(q) / width;
  const int qc = static_cast<int>(q) % width;
  for (int dr = -rad; dr <= rad; ++dr) {
    for (int dc = -rad; dc <= rad; ++dc) {
      const int row = qr + dr;
      const int col = qc + dc;
      if (row < 0 || row >= height || col < 0 || col >= width) continue;
      map.values[static_cast<std::size_t>(row) * width + col] =
          patch.values[static_cast<std::size_t>(dr + rad) * r + (dc + rad)];
    }
  }
  return map;
}

// All-pixel PSAM patches. Streams one block at a time: working set is the
// n x r^2 patch store plus two r^2*c scratch buffers.
struct PatchSet {
  int r = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;  // n x (r*r)

  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  std::span<const double> patch(std::size_t q) const {
    const std::size_t cells = static_cast<std::size_t>(r) * r;
    return std::span<const double>(values).subspan(q * cells, cells);
  }
};

inline PatchSet compute_patches(const FeatureMap& f, const BlockDecoder& decoder,
                                WorkingSetMeter* meter = nullptr) {
  const int r = decoder.receptive_field();
  if (r <= 0 || r % 2 == 0) throw std::invalid_argument("compute_patches: r must be odd and positive");
  if (decoder.channels() != f.channels())
    throw std::invalid_argument("compute_patches: decoder channel count mismatch");
  if (!decoder.differentiable())
    throw std::invalid_argument("compute_patches: decoder does not provide gradients");

  const std::size_t n = f.pixel_count();
  const std::size_t cells = static_cast<std::size_t>(r) * r;
  const std::size_t block_len = cells * f.channels();

  PatchSet out;
  out.r = r;
  out.channels = f.channels();
  out.height = f.height();
  out.width = f.width();
  out.values.assign(n * cells, 0.0);
  if (meter) meter->on_alloc(n * cells);

  std::vector<double> block(block_len, 0.0);
  std::vector<double> grad(block_len, 0.0);
  if (meter) meter->on_alloc(2 * block_len);

  for (std::size_t q = 0; q < n; ++q) {
    detail::gather_block(f, r, q, block, nullptr);
    decoder.input_gradient(block, grad);
    for (std::size_t t = 0; t < cells; ++t) {
      double acc = 0.0;
      for (int ch = 0; ch < f.channels(); ++ch) acc += grad[ch * cells + t] * block[ch * cells + t];
      out.values[q * cells + t] = std::max(acc, 0.0);
    }
  }
  if (meter) meter->on_release(2 * block_len);
  return out;
}

enum class AggregateMode { kMean, kGlobal };

inline constexpr double kForegroundThreshold = 0.5;

// mode kMean: element-wise sum of patches over foreground pixels, r x r.
inline PsamPatch aggregate_patches(const PatchSet& patches, const ScoreMap& scores) {
  if (scores.size() != patches.pixel_count())
    throw std::invalid_argument("aggregate_patches: score/patch count mismatch");
  const std::size_t cells = static_cast<std::size_t>(patches.r) * patches.r;
  PsamPatch agg;
  agg.r = patches.r;
  agg.values.assign(cells, 0.0);
  for (std::size_t q = 0; q < patches.pixel_count(); ++q) {
    if (scores[q] <= kForegroundThreshold) continue;
    const auto p = patches.patch(q);
    for (std::size_t t = 0; t < cells; ++t) agg.values[t] += p[t];
  }
  return agg;
}

// mode kGlobal: sum of filled-back maps over foreground pixels, h x w.
inline PsamMap aggregate_global(const PatchSet& patches, const ScoreMap& scores) {
  if (scores.size() != patches.pixel_count())
    throw std::invalid_argument("aggregate_global: score/patch count mismatch");
  PsamMap agg;
  agg.height = patches.height;
  agg.width = patches.width;
  agg.values.assign(patches.pixel_count(), 0.0);
  const int r = patches.r;
  const int rad = r / 2;
  for (std::size_t q = 0; q < patches.pixel_count(); ++q) {
    if (scores[q] <= kForegroundThreshold) continue;
    const auto p = patches.patch(q);
    const int qr = static_cast<int>(q) / patches.width;
    const int qc = static_cast<int>(q) % patches.width;
    for (int dr = -rad; dr <= rad; ++dr) {
      for (int dc = -rad; dc <= rad; ++dc) {
        const int row = qr + dr;
        const int col = qc + dc;
        if (row < 0 || row >= patches.height || col < 0 || col >= patches.width) continue;
        agg.values[static_cast<std::size_t>(row) * patches.width + col] +=
            p[static_cast<std::size_t>(dr + rad) * r + (dc + rad)];
      }
    }
  }
  return agg;
}

}  // namespace p2r::psam
