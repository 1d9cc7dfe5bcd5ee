// Mean-teacher semi-supervised training on synthetic scenes: planted-point
// scene generation, flip/jitter/cutout augmentation, pseudo-label
// extraction, EMA teacher updates, the alpha ramp and the training loop
// itself. Everything is deterministic given the config seed: augmentation
// seeds derive from (seed, epoch, scene), shuffles use an explicit
// Fisher-Yates, and reductions run in a fixed order.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "p2r/core.hpp"
#include "p2r/counter.hpp"
#include "p2r/loss.hpp"
#include "p2r/matching.hpp"
#include "p2r/tensor_io.hpp"

namespace p2r {

// --- seeding helpers ---------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  return splitmix64(splitmix64(a ^ splitmix64(b)) ^ splitmix64(c ^ 0x517cc1b727220a95ull));
}

template <typename T>
inline void deterministic_shuffle(std::vector<T>& items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i)
    std::swap(items[i - 1], items[rng() % i]);
}

// --- scenes ------------------------------------------------------------------

struct SceneSample {
  std::string id;
  FeatureMap features;
  PointAnnotation gt_points;
  bool labeled = false;
  std::uint64_t seed = 0;
};

inline constexpr double kSignatureSigma = 1.0;
inline constexpr double kMinPointSeparation = 2.0;

// Gaussian signature value at offset (dr, dc) from a planted point.
inline double signature_value(double dr, double dc, double amplitude = 1.0) {
  return amplitude * std::exp(-(dr * dr + dc * dc) / (2.0 * kSignatureSigma * kSignatureSigma));
}

struct SceneParams {
  int points = 0;
  int height = 24;
  int width = 24;
  int channels = 4;
  double noise_sigma = 0.1;
  double amplitude = 1.0;  // domain-shift knob, together with noise_sigma
};

// Features are amplitude-1 Gaussian bumps (sigma 1.0) planted in every
// channel at integer point locations, plus i.i.d. noise. Deterministic per
// seed.
inline SceneSample generate_scene(const SceneParams& params, std::uint64_t seed) {
  if (params.points < 0) throw std::invalid_argument("generate_scene: negative point count");
  std::mt19937_64 rng(seed);
  std::vector<Point2> points;
  points.reserve(static_cast<std::size_t>(params.points));
  const long max_attempts = 1000L * std::max(params.points, 1);
  long attempts = 0;
  while (points.size() < static_cast<std::size_t>(params.points)) {
    if (++attempts > max_attempts)
      throw std::invalid_argument("generate_scene: grid too small to place " +
                                  std::to_string(params.points) + " points at min separation " +
                                  std::to_string(kMinPointSeparation));
    Point2 cand{static_cast<double>(rng() % static_cast<std::uint64_t>(params.height)),
                static_cast<double>(rng() % static_cast<std::uint64_t>(params.width))};
    bool ok = true;
    for (const Point2& p : points)
      if (l2_distance(p, cand) < kMinPointSeparation) {
        ok = false;
        break;
      }
    if (ok) points.push_back(cand);
  }

  FeatureMap features(params.channels, params.height, params.width);
  const int reach = static_cast<int>(std::ceil(3.0 * kSignatureSigma));
  for (const Point2& p : points) {
    const int pr = static_cast<int>(p.row);
    const int pc = static_cast<int>(p.col);
    for (int ch = 0; ch < params.channels; ++ch)
      for (int dr = -reach; dr <= reach; ++dr)
        for (int dc = -reach; dc <= reach; ++dc) {
          const int row = pr + dr;
          const int col = pc + dc;
          if (row < 0 || row >= params.height || col < 0 || col >= params.width) continue;
          features.at(ch, row, col) += signature_value(dr, dc, params.amplitude);
        }
  }
  if (params.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, params.noise_sigma);
    for (double& v : features.data()) v += noise(rng);
  }
  return SceneSample{"", std::move(features), PointAnnotation(std::move(points)), false, seed};
}

// --- augmentation ------------------------------------------------------------

inline SceneSample flip_horizontal(const SceneSample& sample) {
  SceneSample out = sample;
  const int h = sample.features.height();
  const int w = sample.features.width();
  for (int ch = 0; ch < sample.features.channels(); ++ch)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) out.features.at(ch, r, c) = sample.features.at(ch, r, w - 1 - c);
  std::vector<Point2> pts = sample.gt_points.coords();
  for (Point2& p : pts) p.col = static_cast<double>(w - 1) - p.col;
  out.gt_points = PointAnnotation(std::move(pts));
  return out;
}

// Weak view: horizontal flip with probability 0.5.
inline SceneSample augment_weak(const SceneSample& sample, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return (rng() & 1ull) ? flip_horizontal(sample) : sample;
}

struct StrongAugmented {
  SceneSample sample;
  std::vector<double> validity;  // length n, 0 inside the cutout rectangle
};

inline constexpr double kJitterSigma = 0.1;
inline constexpr double kCutoutMinFrac = 0.10;
inline constexpr double kCutoutMaxFrac = 0.25;

// Strong view: the same flip decision as augment_weak(sample, seed), plus
// feature noise jitter and one rectangular cutout covering 10-25% of the
// area. The validity mask zeroes loss contributions inside the cutout.
inline StrongAugmented augment_strong(const SceneSample& sample, std::uint64_t seed) {
  StrongAugmented out{augment_weak(sample, seed), {}};
  const int h = out.sample.features.height();
  const int w = out.sample.features.width();
  const std::size_t n = out.sample.features.pixel_count();
  out.validity.assign(n, 1.0);

  std::mt19937_64 rng(mix_seed(seed, 0x5742a9e1ull));
  std::normal_distribution<double> jitter(0.0, kJitterSigma);
  for (double& v : out.sample.features.data()) v += jitter(rng);

  std::uniform_real_distribution<double> frac_dist(kCutoutMinFrac, kCutoutMaxFrac);
  std::uniform_real_distribution<double> aspect_dist(-std::log(2.0), std::log(2.0));
  int cut_h = 0, cut_w = 0;
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double frac = frac_dist(rng);
    const double aspect = std::exp(aspect_dist(rng));
    cut_h = std::clamp(static_cast<int>(std::lround(std::sqrt(frac * n * aspect))), 1, h);
    cut_w = std::clamp(static_cast<int>(std::lround(frac * n / cut_h)), 1, w);
    const double actual = static_cast<double>(cut_h) * cut_w / static_cast<double>(n);
    if (actual >= kCutoutMinFrac && actual <= kCutoutMaxFrac) break;
    cut_h = cut_w = 0;
  }
  if (cut_h == 0)
    throw std::logic_error("augment_strong: no admissible cutout rectangle found");
  const int r0 = static_cast<int>(rng() % static_cast<std::uint64_t>(h - cut_h + 1));
  const int c0 = static_cast<int>(rng() % static_cast<std::uint64_t>(w - cut_w + 1));
  for (int r = r0; r < r0 + cut_h; ++r)
    for (int c = c0; c < c0 + cut_w; ++c) {
      for (int ch = 0; ch < out.sample.features.channels(); ++ch)
        out.sample.features.at(ch, r, c) = 0.0;
      out.validity[static_cast<std::size_t>(r) * w + c] = 0.0;
    }
  return out;
}

// --- pseudo labels and teacher updates ----------------------------------------

struct PseudoLabels {
  PointAnnotation points;
  std::vector<double> scores;
};

// Every pixel scoring strictly above 0.5 becomes a pseudo point.
inline PseudoLabels extract_pseudo_labels(const ScoreMap& teacher_scores) {
  PseudoLabels out;
  std::vector<Point2> pts;
  for (std::size_t i = 0; i < teacher_scores.size(); ++i) {
    if (teacher_scores[i] > 0.5) {
      pts.push_back(teacher_scores.coords(i));
      out.scores.push_back(teacher_scores[i]);
    }
  }
  out.points = PointAnnotation(std::move(pts));
  return out;
}

inline void ema_update(std::span<double> teacher_params, std::span<const double> student_params,
                       double momentum) {
  if (teacher_params.size() != student_params.size())
    throw std::invalid_argument("ema_update: shape mismatch");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw std::invalid_argument("ema_update: momentum must lie in [0, 1)");
  for (std::size_t k = 0; k < teacher_params.size(); ++k)
    teacher_params[k] = momentum * teacher_params[k] + (1.0 - momentum) * student_params[k];
}

// --- training configuration ----------------------------------------------------

enum class MatchingScheme { kP2P, kP2R };

inline std::string to_string(MatchingScheme s) { return s == MatchingScheme::kP2P ? "p2p" : "p2r"; }
inline MatchingScheme matching_scheme_from_string(const std::string& s) {
  if (s == "p2p") return MatchingScheme::kP2P;
  if (s == "p2r") return MatchingScheme::kP2R;
  throw std::invalid_argument("unknown matching scheme \"" + s + "\"");
}

struct TrainConfig {
  int epochs = 300;
  int warmup_epochs = 100;     // labeled-only phase
  double alpha_step = 0.01;    // per-epoch ramp after warmup
  double alpha_cap = 2.0 / 3.0;
  double eta = 0.7;
  double tau = kDefaultTau;
  double mu = kDefaultMu;
  double lambda = 1.0;
  double ema_momentum = 0.99;
  double lr_decoder = 5e-5;
  int batch_size = 16;
  MatchingScheme matching_scheme = MatchingScheme::kP2R;
  CostScoreTransform cost_score_transform = CostScoreTransform::kInverseSigmoid;
  DecoderKind decoder = DecoderKind::kLinear;
  int receptive_field = kDefaultReceptiveField;
  int mlp_hidden = kDefaultMlpHidden;
  bool eval_student = false;  // teacher is evaluated by default
  std::uint64_t seed = 0;

  void validate() const {
    if (!(eta > 0.5 && eta < 1.0)) throw std::invalid_argument("TrainConfig: eta must lie in (0.5, 1)");
    if (!(alpha_cap >= 0.0 && alpha_cap <= 1.0))
      throw std::invalid_argument("TrainConfig: alpha_cap must lie in [0, 1]");
    if (warmup_epochs >= epochs)
      throw std::invalid_argument("TrainConfig: warmup must be shorter than the run");
    if (batch_size <= 0) throw std::invalid_argument("TrainConfig: batch size must be positive");
    if (alpha_step < 0.0) throw std::invalid_argument("TrainConfig: alpha_step must be non-negative");
    if (!(ema_momentum >= 0.0 && ema_momentum < 1.0))
      throw std::invalid_argument("TrainConfig: ema_momentum must lie in [0, 1)");
  }
};

inline double alpha_schedule(int epoch, const TrainConfig& config) {
  if (epoch < 0) throw std::invalid_argument("alpha_schedule: negative epoch");
  if (epoch < config.warmup_epochs) return 0.0;
  return std::min(config.alpha_cap, (epoch - config.warmup_epochs) * config.alpha_step);
}

// --- dataset ------------------------------------------------------------------

struct Dataset {
  std::vector<SceneSample> scenes;

  std::size_t labeled_count() const {
    std::size_t k = 0;
    for (const SceneSample& s : scenes) k += s.labeled ? 1 : 0;
    return k;
  }
  double mean_true_count() const {
    double sum = 0.0;
    for (const SceneSample& s : scenes) sum += static_cast<double>(s.gt_points.size());
    return scenes.empty() ? 0.0 : sum / static_cast<double>(scenes.size());
  }
};

// Layout: <dir>/scenes/<id>.features.p2rt, <dir>/scenes/<id>.points.csv and
// <dir>/manifest with header "id,labeled".
inline void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "scenes");
  std::ofstream manifest(dir / "manifest", std::ios::trunc);
  if (!manifest) throw TensorIoError("save_dataset: cannot write manifest in " + dir.string());
  manifest << "id,labeled\n";
  for (const SceneSample& s : dataset.scenes) {
    save_tensor(s.features, dir / "scenes" / (s.id + ".features.p2rt"));
    save_points(s.gt_points, dir / "scenes" / (s.id + ".points.csv"));
    manifest << s.id << "," << (s.labeled ? 1 : 0) << "\n";
  }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest");
  if (!manifest) throw TensorIoError("load_dataset: cannot open manifest in " + dir.string());
  std::string line;
  if (!std::getline(manifest, line) || (line != "id,labeled" && line != "id,labeled\r"))
    throw TensorIoError("load_dataset: manifest must start with \"id,labeled\"");
  Dataset dataset;
  while (std::getline(manifest, line)) {
    if (line.size() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw TensorIoError("load_dataset: malformed manifest line \"" + line + "\"");
    const std::string id = line.substr(0, comma);
    const std::string flag = line.substr(comma + 1);
    if (flag != "0" && flag != "1")
      throw TensorIoError("load_dataset: labeled flag must be 0 or 1 in \"" + line + "\"");
    FeatureMap features = load_tensor(dir / "scenes" / (id + ".features.p2rt")).as_feature_map();
    PointAnnotation points = load_points(dir / "scenes" / (id + ".points.csv"),
                                         features.height(), features.width());
    dataset.scenes.push_back(SceneSample{id, std::move(features), std::move(points), flag == "1", 0});
  }
  return dataset;
}

// --- evaluation ----------------------------------------------------------------

struct EvalMetrics {
  double mae = 0.0;
  double mse = 0.0;  // root-mean-square count error
  double mean_predicted_count = 0.0;
};

inline EvalMetrics evaluate(const TinyDecoder& decoder, const Dataset& dataset) {
  if (dataset.scenes.empty()) throw std::invalid_argument("evaluate: empty dataset");
  double abs_sum = 0.0, sq_sum = 0.0, pred_sum = 0.0;
  for (const SceneSample& s : dataset.scenes) {
    const long predicted = count_estimate(decoder_forward(decoder, s.features));
    const double diff = static_cast<double>(predicted) - static_cast<double>(s.gt_points.size());
    abs_sum += std::abs(diff);
    sq_sum += diff * diff;
    pred_sum += static_cast<double>(predicted);
  }
  const double inv = 1.0 / static_cast<double>(dataset.scenes.size());
  return EvalMetrics{abs_sum * inv, std::sqrt(sq_sum * inv), pred_sum * inv};
}

// --- training loop ---------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double alpha = 0.0;
  double labeled_loss = 0.0;    // sum over the epoch's labeled samples
  double unlabeled_loss = 0.0;  // sum over the epoch's unlabeled samples
  double unlabeled_bg = 0.0;    // background part of the unlabeled sum
  double val_mae = 0.0;
  double val_mse = 0.0;
  double mean_pred_count = 0.0;
};

inline std::string epoch_record_json(const EpochRecord& r) {
  std::ostringstream ss;
  ss.precision(17);
  ss << "{\"epoch\":" << r.epoch << ",\"alpha\":" << r.alpha << ",\"labeled_loss\":" << r.labeled_loss
     << ",\"unlabeled_loss\":" << r.unlabeled_loss << ",\"unlabeled_bg\":" << r.unlabeled_bg
     << ",\"val_mae\":" << r.val_mae << ",\"val_mse\":" << r.val_mse
     << ",\"mean_pred_count\":" << r.mean_pred_count << "}";
  return ss.str();
}

struct TrainResult {
  std::vector<EpochRecord> log;
  std::optional<TinyDecoder> student;
  std::optional<TinyDecoder> teacher;
  std::optional<TinyDecoder> warmup_student;  // snapshot when the warmup ends
  std::optional<TinyDecoder> warmup_teacher;
  bool nan_abort = false;
  int nan_epoch = -1;
  std::string nan_diagnostic;
};

inline TinyDecoder initial_decoder(const TrainConfig& config, int channels) {
  TinyDecoder decoder = TinyDecoder::make(config.decoder, config.receptive_field, channels,
                                          config.mlp_hidden);
  if (config.decoder == DecoderKind::kMlp) {
    // Zero init would leave the hidden units permanently symmetric.
    std::mt19937_64 rng(mix_seed(config.seed, 0x1d2cull));
    std::uniform_real_distribution<double> u(-0.1, 0.1);
    for (double& p : decoder.params()) p = u(rng);
  }
  return decoder;
}

namespace detail {

inline MatchResult scheme_objective(const ScoreMap& scores, const PointAnnotation& points,
                                    const TrainConfig& cfg) {
  if (cfg.matching_scheme == MatchingScheme::kP2P)
    return p2p_objective(scores, points, cfg.tau, cfg.cost_score_transform);
  return p2r_objective(scores, points, cfg.tau, cfg.mu, cfg.cost_score_transform);
}

}  // namespace detail

// Runs the mean-teacher loop. The teacher sees weakly augmented unlabeled
// scenes and emits pseudo points; the student is supervised on the strongly
// augmented view with the scheme's confidence mask (cutout pixels forced to
// zero weight). The optimizer only ever updates the student; the teacher
// moves by EMA once per optimizer step. A non-finite loss aborts the run
// with a diagnostic instead of training on.
inline TrainResult train(const Dataset& dataset, const TrainConfig& config) {
  config.validate();
  if (dataset.labeled_count() == 0)
    throw std::invalid_argument("train: dataset has no labeled sample");
  const int channels = dataset.scenes.front().features.channels();

  TrainResult result;
  TinyDecoder student = initial_decoder(config, channels);
  TinyDecoder teacher = student;
  AdamState opt_state;

  std::vector<std::size_t> labeled_indices;
  std::vector<std::size_t> all_indices;
  for (std::size_t i = 0; i < dataset.scenes.size(); ++i) {
    all_indices.push_back(i);
    if (dataset.scenes[i].labeled) labeled_indices.push_back(i);
  }

  std::vector<double> param_grads(student.params().size(), 0.0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double alpha = alpha_schedule(epoch, config);
    // Unlabeled scenes only join once they can contribute to the loss.
    std::vector<std::size_t> order = alpha == 0.0 ? labeled_indices : all_indices;
    std::mt19937_64 shuffle_rng(mix_seed(config.seed, 0xe70c5ull, static_cast<std::uint64_t>(epoch)));
    deterministic_shuffle(order, shuffle_rng);

    EpochRecord record;
    record.epoch = epoch;
    record.alpha = alpha;

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const double batch_inv = 1.0 / static_cast<double>(end - start);
      std::fill(param_grads.begin(), param_grads.end(), 0.0);

      for (std::size_t b = start; b < end; ++b) {
        const SceneSample& scene = dataset.scenes[order[b]];
        // Keyed by the scene id, so a labeled-only subset run sees the same
        // augmentation stream as a full run with alpha_cap = 0.
        const std::uint64_t aug_seed =
            mix_seed(config.seed, static_cast<std::uint64_t>(epoch), fnv1a64(scene.id));
        if (scene.labeled) {
          const SceneSample view = augment_weak(scene, aug_seed);
          const ScoreMap scores = decoder_forward(student, view.features);
          const MatchResult match = detail::scheme_objective(scores, view.gt_points, config);
          const LossBreakdown loss = weighted_bce(scores, match.objective, config.lambda);
          if (!std::isfinite(loss.total)) {
            result.nan_abort = true;
            result.nan_epoch = epoch;
            result.nan_diagnostic = "labeled loss non-finite on scene " + scene.id;
          } else {
            record.labeled_loss += loss.total;
            const double scale = (1.0 - alpha) * batch_inv;
            if (scale != 0.0) {
              std::vector<double> upstream =
                  bce_gradient(scores, match.objective, ConfidenceMask::ones(scores.size()), config.lambda);
              for (double& g : upstream) g *= scale;
              std::vector<double> block(student.block_length(), 0.0);
              for (std::size_t q = 0; q < scores.size(); ++q) {
                if (upstream[q] == 0.0) continue;
                psam::detail::gather_block(view.features, student.receptive_field(), q, block, nullptr);
                student.backward_block(block, upstream[q], param_grads);
              }
            }
          }
        } else {
          const SceneSample weak_view = augment_weak(scene, aug_seed);
          const ScoreMap teacher_scores = decoder_forward(teacher, weak_view.features);
          const PseudoLabels pseudo = extract_pseudo_labels(teacher_scores);
          const StrongAugmented strong = augment_strong(scene, aug_seed);
          const ScoreMap student_scores = decoder_forward(student, strong.sample.features);

          const MatchResult match = detail::scheme_objective(student_scores, pseudo.points, config);
          const std::vector<double> zeta = confidence_vector(pseudo.scores, config.eta);
          ConfidenceMask confidence =
              config.matching_scheme == MatchingScheme::kP2P
                  ? p2p_confidence(match.region, zeta)
                  : p2r_confidence(match.region, zeta, match.mask);
          // Cutout pixels contribute exactly zero.
          std::vector<double> weights = confidence.weights();
          for (std::size_t i = 0; i < weights.size(); ++i) weights[i] *= strong.validity[i];
          confidence = ConfidenceMask(std::move(weights));

          const LossBreakdown loss = masked_bce(student_scores, match.objective, confidence, config.lambda);
          if (config.matching_scheme == MatchingScheme::kP2P && loss.background_term != 0.0)
            throw std::logic_error("train: P2P unlabeled background term is nonzero");
          if (!std::isfinite(loss.total)) {
            result.nan_abort = true;
            result.nan_epoch = epoch;
            result.nan_diagnostic = "unlabeled loss non-finite on scene " + scene.id;
          } else {
            record.unlabeled_loss += loss.total;
            record.unlabeled_bg += loss.background_term;
            const double scale = alpha * batch_inv;
            if (scale != 0.0) {
              std::vector<double> upstream =
                  bce_gradient(student_scores, match.objective, confidence, config.lambda);
              for (double& g : upstream) g *= scale;
              std::vector<double> block(student.block_length(), 0.0);
              for (std::size_t q = 0; q < student_scores.size(); ++q) {
                if (upstream[q] == 0.0) continue;
                psam::detail::gather_block(strong.sample.features, student.receptive_field(), q, block,
                                           nullptr);
                student.backward_block(block, upstream[q], param_grads);
              }
            }
          }
        }
        if (result.nan_abort) break;
      }
      if (result.nan_abort) break;

      adam_step(student.params(), param_grads, opt_state, config.lr_decoder);
      ema_update(teacher.params(), student.params(), config.ema_momentum);
    }
    if (result.nan_abort) {
      result.log.push_back(record);
      break;
    }

    const EvalMetrics metrics = evaluate(config.eval_student ? student : teacher, dataset);
    record.val_mae = metrics.mae;
    record.val_mse = metrics.mse;
    record.mean_pred_count = metrics.mean_predicted_count;
    result.log.push_back(record);

    if (epoch + 1 == config.warmup_epochs) {
      result.warmup_student = student;
      result.warmup_teacher = teacher;
    }
  }

  result.student = std::move(student);
  result.teacher = std::move(teacher);
  return result;
}

inline void write_training_log(const TrainResult& result, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw TensorIoError("write_training_log: cannot open " + path.string());
  for (const EpochRecord& r : result.log) out << epoch_record_json(r) << "\n";
  if (result.nan_abort)
    out << "{\"event\":\"nan_abort\",\"epoch\":" << result.nan_epoch << ",\"detail\":\""
        << result.nan_diagnostic << "\"}\n";
}

}  // namespace p2r
