// Desk-scale point counter: a tiny decoder (single linear-sigmoid unit, or
// one tanh hidden layer) with analytic forward/backward over r x r x c
// feature blocks, the foreground-count estimator, an Adam optimizer step and
// TensorFile checkpoints.
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "p2r/core.hpp"
#include "p2r/psam.hpp"
#include "p2r/tensor_io.hpp"

namespace p2r {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

enum class DecoderKind { kLinear, kMlp };

inline std::string to_string(DecoderKind kind) {
  return kind == DecoderKind::kLinear ? "linear" : "mlp";
}
inline DecoderKind decoder_kind_from_string(const std::string& s) {
  if (s == "linear") return DecoderKind::kLinear;
  if (s == "mlp") return DecoderKind::kMlp;
  throw std::invalid_argument("unknown decoder kind \"" + s + "\"");
}

inline constexpr int kDefaultReceptiveField = 5;
inline constexpr int kDefaultMlpHidden = 8;

// Parameters live in one flat vector laid out [weights..., biases...] so the
// optimizer and EMA update can treat every decoder uniformly.
class TinyDecoder : public psam::BlockDecoder {
 public:
  static TinyDecoder linear(int r, int c) { return TinyDecoder(DecoderKind::kLinear, r, c, 0); }
  static TinyDecoder mlp(int r, int c, int hidden = kDefaultMlpHidden) {
    return TinyDecoder(DecoderKind::kMlp, r, c, hidden);
  }
  static TinyDecoder make(DecoderKind kind, int r, int c, int hidden = kDefaultMlpHidden) {
    return kind == DecoderKind::kLinear ? linear(r, c) : mlp(r, c, hidden);
  }

  DecoderKind kind() const { return kind_; }
  int receptive_field() const override { return r_; }
  int channels() const override { return c_; }
  int hidden() const { return hidden_; }
  std::size_t block_length() const { return static_cast<std::size_t>(r_) * r_ * c_; }
  std::size_t weight_count() const { return weight_count_; }
  std::size_t bias_count() const { return params_.size() - weight_count_; }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::span<const double> weights() const {
    return std::span<const double>(params_).first(weight_count_);
  }
  std::span<double> weights() { return std::span<double>(params_).first(weight_count_); }
  std::span<const double> biases() const {
    return std::span<const double>(params_).subspan(weight_count_);
  }
  std::span<double> biases() { return std::span<double>(params_).subspan(weight_count_); }

  double forward(std::span<const double> block) const override {
    check_block(block);
    if (kind_ == DecoderKind::kLinear) return sigmoid(linear_response(block));
    std::vector<double> h(hidden_);
    hidden_activations(block, h);
    return sigmoid(output_response(h));
  }

  void input_gradient(std::span<const double> block, std::span<double> grad) const override {
    check_block(block);
    if (grad.size() != block_length())
      throw std::invalid_argument("TinyDecoder: gradient buffer size mismatch");
    if (kind_ == DecoderKind::kLinear) {
      const double s = sigmoid(linear_response(block));
      const double ds = s * (1.0 - s);
      const auto w = weights();
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] = ds * w[k];
      return;
    }
    const std::size_t d = block_length();
    std::vector<double> h(hidden_);
    hidden_activations(block, h);
    const double s = sigmoid(output_response(h));
    const double ds = s * (1.0 - s);
    const auto w1 = weights().first(static_cast<std::size_t>(hidden_) * d);
    const auto w2 = weights().subspan(static_cast<std::size_t>(hidden_) * d);
    std::fill(grad.begin(), grad.end(), 0.0);
    for (int j = 0; j < hidden_; ++j) {
      const double gj = ds * w2[j] * (1.0 - h[j] * h[j]);
      for (std::size_t k = 0; k < d; ++k) grad[k] += gj * w1[static_cast<std::size_t>(j) * d + k];
    }
  }

  // Accumulates parameter gradients for one block given d loss / d p[q].
  // When `d_block` is non-empty it receives d loss / d block as well.
  void backward_block(std::span<const double> block, double upstream,
                      std::span<double> d_params_acc, std::span<double> d_block = {}) const {
    check_block(block);
    if (d_params_acc.size() != params_.size())
      throw std::invalid_argument("TinyDecoder: parameter gradient size mismatch");
    const std::size_t d = block_length();
    if (kind_ == DecoderKind::kLinear) {
      const double s = sigmoid(linear_response(block));
      const double g = upstream * s * (1.0 - s);
      const auto w = weights();
      for (std::size_t k = 0; k < d; ++k) d_params_acc[k] += g * block[k];
      d_params_acc[weight_count_] += g;  // bias
      if (!d_block.empty())
        for (std::size_t k = 0; k < d; ++k) d_block[k] = g * w[k];
      return;
    }
    std::vector<double> h(hidden_);
    hidden_activations(block, h);
    const double s = sigmoid(output_response(h));
    const double g2 = upstream * s * (1.0 - s);
    const std::size_t w1_len = static_cast<std::size_t>(hidden_) * d;
    const auto w1 = weights().first(w1_len);
    const auto w2 = weights().subspan(w1_len);
    if (!d_block.empty()) std::fill(d_block.begin(), d_block.end(), 0.0);
    for (int j = 0; j < hidden_; ++j) {
      d_params_acc[w1_len + j] += g2 * h[j];                       // w2
      const double gj = g2 * w2[j] * (1.0 - h[j] * h[j]);
      d_params_acc[weight_count_ + j] += gj;                       // b1
      for (std::size_t k = 0; k < d; ++k) {
        d_params_acc[static_cast<std::size_t>(j) * d + k] += gj * block[k];  // W1
        if (!d_block.empty()) d_block[k] += gj * w1[static_cast<std::size_t>(j) * d + k];
      }
    }
    d_params_acc[params_.size() - 1] += g2;  // b2
  }

 private:
  TinyDecoder(DecoderKind kind, int r, int c, int hidden)
      : kind_(kind), r_(r), c_(c), hidden_(hidden) {
    if (r <= 0 || r % 2 == 0) throw std::invalid_argument("TinyDecoder: r must be odd and positive");
    if (c <= 0) throw std::invalid_argument("TinyDecoder: channel count must be positive");
    const std::size_t d = block_length();
    if (kind == DecoderKind::kLinear) {
      weight_count_ = d;
      params_.assign(d + 1, 0.0);
    } else {
      if (hidden <= 0) throw std::invalid_argument("TinyDecoder: hidden width must be positive");
      weight_count_ = static_cast<std::size_t>(hidden) * d + hidden;      // W1 then w2
      params_.assign(weight_count_ + static_cast<std::size_t>(hidden) + 1, 0.0);  // b1 then b2
    }
  }

  void check_block(std::span<const double> block) const {
    if (block.size() != block_length())
      throw std::invalid_argument("TinyDecoder: block size mismatch");
  }
  double linear_response(std::span<const double> block) const {
    const auto w = weights();
    double z = 0.0;
    for (std::size_t k = 0; k < block.size(); ++k) z += w[k] * block[k];
    return z + params_[weight_count_];
  }
  void hidden_activations(std::span<const double> block, std::vector<double>& h) const {
    const std::size_t d = block_length();
    const auto w1 = weights();
    const auto b = biases();
    for (int j = 0; j < hidden_; ++j) {
      double z = 0.0;
      const std::size_t base = static_cast<std::size_t>(j) * d;
      for (std::size_t k = 0; k < d; ++k) z += w1[base + k] * block[k];
      h[static_cast<std::size_t>(j)] = std::tanh(z + b[static_cast<std::size_t>(j)]);
    }
  }
  double output_response(const std::vector<double>& h) const {
    const std::size_t w1_len = static_cast<std::size_t>(hidden_) * block_length();
    const auto w2 = weights().subspan(w1_len);
    double z = 0.0;
    for (int j = 0; j < hidden_; ++j) z += w2[j] * h[static_cast<std::size_t>(j)];
    return z + params_.back();
  }

  DecoderKind kind_;
  int r_;
  int c_;
  int hidden_;
  std::size_t weight_count_ = 0;
  std::vector<double> params_;
};

// Full-map forward: gathers each pixel's block in the same cell order as
// extract_blocks and runs the same per-block forward, so the result is
// bit-identical to decode_blocks.
inline ScoreMap decoder_forward(const TinyDecoder& decoder, const FeatureMap& f) {
  if (decoder.channels() != f.channels())
    throw std::invalid_argument("decoder_forward: channel count mismatch");
  const std::size_t n = f.pixel_count();
  std::vector<double> scores(n, 0.0);
  std::vector<double> block(decoder.block_length(), 0.0);
  for (std::size_t q = 0; q < n; ++q) {
    psam::detail::gather_block(f, decoder.receptive_field(), q, block, nullptr);
    scores[q] = decoder.forward(block);
  }
  return ScoreMap(std::move(scores), f.height(), f.width());
}

struct DecoderGradients {
  std::vector<double> d_params;    // aligned with TinyDecoder::params()
  std::vector<double> d_features;  // n x (r*r*c) when requested, else empty

  std::span<const double> d_weights(const TinyDecoder& d) const {
    return std::span<const double>(d_params).first(d.weight_count());
  }
  std::span<const double> d_biases(const TinyDecoder& d) const {
    return std::span<const double>(d_params).subspan(d.weight_count());
  }
};

inline DecoderGradients decoder_backward(const TinyDecoder& decoder, const FeatureMap& f,
                                         std::span<const double> upstream,
                                         bool with_feature_grads = false) {
  if (decoder.channels() != f.channels())
    throw std::invalid_argument("decoder_backward: channel count mismatch");
  if (upstream.size() != f.pixel_count())
    throw std::invalid_argument("decoder_backward: upstream length mismatch");
  DecoderGradients g;
  g.d_params.assign(decoder.params().size(), 0.0);
  const std::size_t block_len = decoder.block_length();
  if (with_feature_grads) g.d_features.assign(f.pixel_count() * block_len, 0.0);
  std::vector<double> block(block_len, 0.0);
  for (std::size_t q = 0; q < f.pixel_count(); ++q) {
    if (upstream[q] == 0.0 && !with_feature_grads) continue;
    psam::detail::gather_block(f, decoder.receptive_field(), q, block, nullptr);
    std::span<double> d_block =
        with_feature_grads ? std::span<double>(g.d_features).subspan(q * block_len, block_len)
                           : std::span<double>{};
    decoder.backward_block(block, upstream[q], g.d_params, d_block);
  }
  return g;
}

inline long count_estimate(const ScoreMap& scores) {
  long count = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] > 0.5) ++count;
  return count;
}

// --- Adam ------------------------------------------------------------------

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  long step = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                      double lr) {
  if (grads.size() != params.size()) throw std::invalid_argument("adam_step: shape mismatch");
  if (state.first_moment.empty()) {
    state.first_moment.assign(params.size(), 0.0);
    state.second_moment.assign(params.size(), 0.0);
  }
  if (state.first_moment.size() != params.size())
    throw std::invalid_argument("adam_step: state shape mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double g = grads[k];
    state.first_moment[k] = kAdamBeta1 * state.first_moment[k] + (1.0 - kAdamBeta1) * g;
    state.second_moment[k] = kAdamBeta2 * state.second_moment[k] + (1.0 - kAdamBeta2) * g * g;
    const double m_hat = state.first_moment[k] / bc1;
    const double v_hat = state.second_moment[k] / bc2;
    params[k] -= lr * m_hat / (std::sqrt(v_hat) + kAdamEps);
  }
}

// --- Checkpoints -------------------------------------------------------------
// <prefix>.weights.p2rt + <prefix>.bias.p2rt + <prefix>.meta (key = value).

inline void save_checkpoint(const TinyDecoder& decoder, const std::filesystem::path& prefix) {
  const auto w = decoder.weights();
  const auto b = decoder.biases();
  save_tensor(std::vector<double>(w.begin(), w.end()),
              {static_cast<std::uint32_t>(w.size())}, prefix.string() + ".weights.p2rt");
  save_tensor(std::vector<double>(b.begin(), b.end()),
              {static_cast<std::uint32_t>(b.size())}, prefix.string() + ".bias.p2rt");
  std::ofstream meta(prefix.string() + ".meta", std::ios::trunc);
  if (!meta) throw TensorIoError("save_checkpoint: cannot write " + prefix.string() + ".meta");
  meta << "kind = " << to_string(decoder.kind()) << "\n";
  meta << "r = " << decoder.receptive_field() << "\n";
  meta << "c = " << decoder.channels() << "\n";
  if (decoder.kind() == DecoderKind::kMlp) meta << "hidden = " << decoder.hidden() << "\n";
}

inline TinyDecoder load_checkpoint(const std::filesystem::path& prefix) {
  std::ifstream meta(prefix.string() + ".meta");
  if (!meta) throw TensorIoError("load_checkpoint: cannot open " + prefix.string() + ".meta");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  const DecoderKind kind = decoder_kind_from_string(kv.at("kind"));
  const int r = std::stoi(kv.at("r"));
  const int c = std::stoi(kv.at("c"));
  const int hidden = kind == DecoderKind::kMlp ? std::stoi(kv.at("hidden")) : 0;
  TinyDecoder decoder = TinyDecoder::make(kind, r, c, hidden == 0 ? kDefaultMlpHidden : hidden);

  const TensorData w = load_tensor(prefix.string() + ".weights.p2rt");
  const TensorData b = load_tensor(prefix.string() + ".bias.p2rt");
  if (w.values.size() != decoder.weight_count() || b.values.size() != decoder.bias_count())
    throw TensorIoError("load_checkpoint: parameter tensors do not match decoder shape");
  std::copy(w.values.begin(), w.values.end(), decoder.weights().begin());
  std::copy(b.values.begin(), b.values.end(), decoder.biases().begin());
  return decoder;
}

}  // namespace p2r
