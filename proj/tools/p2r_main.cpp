// Command-line front end: scene generation, matching inspection, PSAM
// export, mean-teacher training, evaluation and the P2P-vs-P2R loss
// benchmark. Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric
// failure. Errors print one machine-parsable line: P2R_ERROR[kind]: message.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "p2r/bench.hpp"
#include "p2r/config.hpp"
#include "p2r/core.hpp"
#include "p2r/counter.hpp"
#include "p2r/loss.hpp"
#include "p2r/manifest.hpp"
#include "p2r/matching.hpp"
#include "p2r/psam.hpp"
#include "p2r/semisup.hpp"
#include "p2r/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

// --- gen ---------------------------------------------------------------------

struct GenOptions {
  int scenes = 200;
  std::string points_range = "4..12";
  std::vector<int> size = {24, 24};
  int channels = 4;
  double labeled_frac = 0.05;
  double noise_sigma = 0.1;
  double amplitude = 1.0;
  std::uint64_t seed = 0;
  std::string out;
};

std::pair<int, int> parse_range(const std::string& text) {
  const auto dots = text.find("..");
  if (dots == std::string::npos)
    throw UsageError("points range must look like a..b, got \"" + text + "\"");
  try {
    const int lo = std::stoi(text.substr(0, dots));
    const int hi = std::stoi(text.substr(dots + 2));
    if (lo < 0 || hi < lo) throw UsageError("points range must satisfy 0 <= a <= b");
    return {lo, hi};
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception&) {
    throw UsageError("points range must look like a..b, got \"" + text + "\"");
  }
}

int run_gen(const GenOptions& opt) {
  const auto [lo, hi] = parse_range(opt.points_range);
  if (opt.scenes <= 0) throw UsageError("--scenes must be positive");
  if (opt.size.size() != 2 || opt.size[0] <= 0 || opt.size[1] <= 0)
    throw UsageError("--size expects positive h w");
  if (opt.labeled_frac < 0.0 || opt.labeled_frac > 1.0)
    throw UsageError("--labeled-frac must lie in [0, 1]");

  p2r::RunManifest manifest;
  manifest.command = "gen";
  manifest.started_at = p2r::iso_timestamp_now();
  manifest.seed = opt.seed;

  p2r::Dataset dataset;
  std::mt19937_64 rng(p2r::mix_seed(opt.seed, 0x6e1ull));
  for (int i = 0; i < opt.scenes; ++i) {
    p2r::SceneParams params;
    params.points = lo + (hi > lo ? static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1)) : 0);
    params.height = opt.size[0];
    params.width = opt.size[1];
    params.channels = opt.channels;
    params.noise_sigma = opt.noise_sigma;
    params.amplitude = opt.amplitude;
    const std::uint64_t scene_seed = p2r::mix_seed(opt.seed, 0xacce55ull, static_cast<std::uint64_t>(i));
    p2r::SceneSample sample = p2r::generate_scene(params, scene_seed);
    char id[32];
    std::snprintf(id, sizeof(id), "scene_%04d", i);
    sample.id = id;
    dataset.scenes.push_back(std::move(sample));
  }

  // Exactly round(N * frac) labeled ids, chosen by a seeded shuffle.
  const auto labeled_count =
      static_cast<std::size_t>(std::lround(opt.labeled_frac * static_cast<double>(opt.scenes)));
  std::vector<std::size_t> order(dataset.scenes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 label_rng(p2r::mix_seed(opt.seed, 0x1abe1ull));
  p2r::deterministic_shuffle(order, label_rng);
  for (std::size_t k = 0; k < labeled_count && k < order.size(); ++k)
    dataset.scenes[order[k]].labeled = true;

  const fs::path out_dir(opt.out);
  fs::create_directories(out_dir);
  p2r::save_dataset(dataset, out_dir);

  manifest.config = {{"scenes", std::to_string(opt.scenes)},
                     {"points_range", opt.points_range},
                     {"height", std::to_string(opt.size[0])},
                     {"width", std::to_string(opt.size[1])},
                     {"channels", std::to_string(opt.channels)},
                     {"labeled_frac", std::to_string(opt.labeled_frac)},
                     {"noise_sigma", std::to_string(opt.noise_sigma)},
                     {"amplitude", std::to_string(opt.amplitude)},
                     {"seed", std::to_string(opt.seed)}};
  manifest.outputs.push_back(out_dir / "manifest");
  for (const auto& s : dataset.scenes) {
    manifest.outputs.push_back(out_dir / "scenes" / (s.id + ".features.p2rt"));
    manifest.outputs.push_back(out_dir / "scenes" / (s.id + ".points.csv"));
  }
  manifest.finished_at = p2r::iso_timestamp_now();
  manifest.write(out_dir / "run_manifest.json");

  json summary = {{"scenes", opt.scenes}, {"labeled", labeled_count}, {"out", out_dir.string()}};
  std::cout << summary.dump() << "\n";
  return 0;
}

// --- match -------------------------------------------------------------------

struct MatchOptions {
  std::string scheme = "p2r";
  std::string pred;
  std::string gt;
  double tau = p2r::kDefaultTau;
  double mu = p2r::kDefaultMu;
  bool mu_set = false;
  std::string transform = "inverse_sigmoid";
  std::string out;
};

p2r::CostScoreTransform parse_transform(const std::string& s) {
  if (s == "inverse_sigmoid") return p2r::CostScoreTransform::kInverseSigmoid;
  if (s == "identity") return p2r::CostScoreTransform::kIdentity;
  throw UsageError("cost_score_transform must be identity or inverse_sigmoid");
}

int run_match(const MatchOptions& opt) {
  if (opt.scheme != "p2p" && opt.scheme != "p2r") throw UsageError("--scheme must be p2p or p2r");
  if (opt.scheme == "p2r" && !opt.mu_set) throw UsageError("--mu is required for scheme p2r");
  if (opt.scheme == "p2p" && opt.mu_set) throw UsageError("--mu only applies to scheme p2r");
  const p2r::CostScoreTransform transform = parse_transform(opt.transform);

  p2r::RunManifest manifest;
  manifest.command = "match";
  manifest.started_at = p2r::iso_timestamp_now();

  const p2r::ScoreMap pred = p2r::load_tensor(opt.pred).as_score_map();
  const p2r::PointAnnotation gt = p2r::load_points(opt.gt, pred.height(), pred.width());

  const p2r::MatchResult result =
      opt.scheme == "p2p" ? p2r::p2p_objective(pred, gt, opt.tau, transform)
                          : p2r::p2r_objective(pred, gt, opt.tau, opt.mu, transform);

  const fs::path out_dir(opt.out);
  fs::create_directories(out_dir);
  p2r::save_tensor(p2r::ScoreMap(result.objective, pred.height(), pred.width()),
                   out_dir / "objective.p2rt");

  {
    std::ofstream region(out_dir / "region.csv", std::ios::trunc);
    region << "pixel,point\n";
    for (std::size_t i = 0; i < result.region.rows(); ++i)
      if (result.region.assigned(i)) region << i << "," << result.region.column_of(i) << "\n";
  }
  {
    std::ofstream chosen(out_dir / "chosen.csv", std::ios::trunc);
    chosen.precision(17);
    chosen << "point,pixel,row,col,cost\n";
    for (std::size_t j = 0; j < result.chosen_pixels.size(); ++j) {
      const std::size_t q = static_cast<std::size_t>(result.chosen_pixels[j]);
      const p2r::Point2 coords = pred.coords(q);
      const double cost =
          opt.tau * p2r::l2_distance(coords, gt[j]) - p2r::score_transform(pred[q], transform);
      chosen << j << "," << q << "," << coords.row << "," << coords.col << "," << cost << "\n";
    }
  }
  double selected_cost = 0.0;
  for (std::size_t j = 0; j < result.chosen_pixels.size(); ++j) {
    const std::size_t q = static_cast<std::size_t>(result.chosen_pixels[j]);
    selected_cost +=
        opt.tau * p2r::l2_distance(pred.coords(q), gt[j]) - p2r::score_transform(pred[q], transform);
  }
  json summary = {{"scheme", opt.scheme},
                  {"pixels", pred.size()},
                  {"points", gt.size()},
                  {"tau", opt.tau},
                  {"selected_cost", selected_cost},
                  {"foreground", static_cast<long>(gt.size())}};
  if (opt.scheme == "p2r") summary["mu"] = opt.mu;
  {
    std::ofstream sf(out_dir / "summary.json", std::ios::trunc);
    sf << summary.dump(2) << "\n";
  }

  manifest.config = {{"scheme", opt.scheme},
                     {"pred", opt.pred},
                     {"gt", opt.gt},
                     {"tau", std::to_string(opt.tau)},
                     {"cost_score_transform", opt.transform}};
  if (opt.scheme == "p2r") manifest.config["mu"] = std::to_string(opt.mu);
  for (const char* name : {"objective.p2rt", "region.csv", "chosen.csv", "summary.json"})
    manifest.outputs.push_back(out_dir / name);
  manifest.finished_at = p2r::iso_timestamp_now();
  manifest.write(out_dir / "run_manifest.json");

  std::cout << summary.dump() << "\n";
  return 0;
}

// --- psam --------------------------------------------------------------------

struct PsamOptions {
  std::string features;
  std::string checkpoint;
  std::string aggregate = "mean";
  std::string out;
};

int run_psam(const PsamOptions& opt) {
  if (opt.aggregate != "mean" && opt.aggregate != "global")
    throw UsageError("--aggregate must be mean or global");

  p2r::RunManifest manifest;
  manifest.command = "psam";
  manifest.started_at = p2r::iso_timestamp_now();

  const p2r::FeatureMap features = p2r::load_tensor(opt.features).as_feature_map();
  const p2r::TinyDecoder decoder = p2r::load_checkpoint(opt.checkpoint);
  if (decoder.channels() != features.channels())
    throw p2r::TensorIoError("psam: checkpoint expects " + std::to_string(decoder.channels()) +
                             " channels, features have " + std::to_string(features.channels()));

  const p2r::ScoreMap scores = p2r::decoder_forward(decoder, features);
  const p2r::psam::PatchSet patches = p2r::psam::compute_patches(features, decoder);
  const int r = patches.r;
  const std::size_t cells = static_cast<std::size_t>(r) * r;

  std::vector<std::size_t> foreground;
  for (std::size_t q = 0; q < scores.size(); ++q)
    if (scores[q] > p2r::psam::kForegroundThreshold) foreground.push_back(q);

  const fs::path out_dir(opt.out);
  fs::create_directories(out_dir);

  std::vector<double> fg_patches(foreground.size() * cells);
  for (std::size_t k = 0; k < foreground.size(); ++k) {
    const auto patch = patches.patch(foreground[k]);
    std::copy(patch.begin(), patch.end(), fg_patches.begin() + static_cast<std::ptrdiff_t>(k * cells));
  }
  p2r::save_tensor(fg_patches,
                   {static_cast<std::uint32_t>(foreground.size()), static_cast<std::uint32_t>(r),
                    static_cast<std::uint32_t>(r)},
                   out_dir / "patches.p2rt");
  {
    std::ofstream pts(out_dir / "points.csv", std::ios::trunc);
    pts.precision(17);
    pts << "pixel,row,col,score\n";
    for (const std::size_t q : foreground) {
      const p2r::Point2 c = scores.coords(q);
      pts << q << "," << c.row << "," << c.col << "," << scores[q] << "\n";
    }
  }

  std::vector<double> aggregate_values;
  if (opt.aggregate == "mean") {
    const p2r::psam::PsamPatch agg = p2r::psam::aggregate_patches(patches, scores);
    aggregate_values = agg.values;
    p2r::save_tensor(agg.values, {static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(r)},
                     out_dir / "aggregate.p2rt");
  } else {
    const p2r::psam::PsamMap agg = p2r::psam::aggregate_global(patches, scores);
    aggregate_values = agg.values;
    p2r::save_tensor(agg.values,
                     {static_cast<std::uint32_t>(agg.height), static_cast<std::uint32_t>(agg.width)},
                     out_dir / "aggregate.p2rt");
  }
  {
    std::vector<double> sorted = aggregate_values;
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());
    std::ofstream sv(out_dir / "sorted_values.csv", std::ios::trunc);
    sv.precision(17);
    sv << "rank,value\n";
    for (std::size_t k = 0; k < sorted.size(); ++k) sv << k << "," << sorted[k] << "\n";
  }

  manifest.config = {{"features", opt.features},
                     {"checkpoint", opt.checkpoint},
                     {"aggregate", opt.aggregate}};
  for (const char* name : {"patches.p2rt", "points.csv", "aggregate.p2rt", "sorted_values.csv"})
    manifest.outputs.push_back(out_dir / name);
  manifest.finished_at = p2r::iso_timestamp_now();
  manifest.write(out_dir / "run_manifest.json");

  json summary = {{"foreground", foreground.size()}, {"r", r}, {"aggregate", opt.aggregate}};
  std::cout << summary.dump() << "\n";
  return 0;
}

// --- train / eval ---------------------------------------------------------------

struct TrainOptions {
  std::string data;
  std::string scheme;
  std::string config_file;
  std::string out;
  // Flag overrides; CLI11 count() tells us which were set.
  long epochs = 0;
  long warmup = 0;
  long batch_size = 0;
  double alpha_step = 0.0, alpha_cap = 0.0, eta = 0.0, tau = 0.0, mu = 0.0, lambda = 0.0;
  double ema_momentum = 0.0, lr = 0.0;
  std::uint64_t seed = 0;
  std::string decoder;
  long receptive_field = 0;
  bool eval_student = false;
};

p2r::TrainConfig build_train_config(const CLI::App* cmd, const TrainOptions& opt) {
  p2r::TrainConfig cfg;
  if (!opt.config_file.empty()) {
    const p2r::KeyValueConfig file = p2r::KeyValueConfig::from_file(opt.config_file);
    cfg.epochs = static_cast<int>(file.get_long("epochs", cfg.epochs));
    cfg.warmup_epochs = static_cast<int>(file.get_long("warmup_epochs", cfg.warmup_epochs));
    cfg.alpha_step = file.get_double("alpha_step", cfg.alpha_step);
    cfg.alpha_cap = file.get_double("alpha_cap", cfg.alpha_cap);
    cfg.eta = file.get_double("eta", cfg.eta);
    cfg.tau = file.get_double("tau", cfg.tau);
    cfg.mu = file.get_double("mu", cfg.mu);
    cfg.lambda = file.get_double("lambda", cfg.lambda);
    cfg.ema_momentum = file.get_double("ema_momentum", cfg.ema_momentum);
    cfg.lr_decoder = file.get_double("lr_decoder", cfg.lr_decoder);
    cfg.batch_size = static_cast<int>(file.get_long("batch_size", cfg.batch_size));
    cfg.seed = static_cast<std::uint64_t>(file.get_long("seed", static_cast<long>(cfg.seed)));
    cfg.matching_scheme =
        p2r::matching_scheme_from_string(file.get_string("matching_scheme", to_string(cfg.matching_scheme)));
    cfg.cost_score_transform =
        parse_transform(file.get_string("cost_score_transform", "inverse_sigmoid"));
    cfg.decoder = p2r::decoder_kind_from_string(file.get_string("decoder", to_string(cfg.decoder)));
    cfg.receptive_field = static_cast<int>(file.get_long("receptive_field", cfg.receptive_field));
    cfg.mlp_hidden = static_cast<int>(file.get_long("mlp_hidden", cfg.mlp_hidden));
    cfg.eval_student = file.get_long("eval_student", cfg.eval_student ? 1 : 0) != 0;
  }
  // Flags override the file.
  if (!opt.scheme.empty()) cfg.matching_scheme = p2r::matching_scheme_from_string(opt.scheme);
  if (cmd->count("--epochs")) cfg.epochs = static_cast<int>(opt.epochs);
  if (cmd->count("--warmup")) cfg.warmup_epochs = static_cast<int>(opt.warmup);
  if (cmd->count("--batch-size")) cfg.batch_size = static_cast<int>(opt.batch_size);
  if (cmd->count("--alpha-step")) cfg.alpha_step = opt.alpha_step;
  if (cmd->count("--alpha-cap")) cfg.alpha_cap = opt.alpha_cap;
  if (cmd->count("--eta")) cfg.eta = opt.eta;
  if (cmd->count("--tau")) cfg.tau = opt.tau;
  if (cmd->count("--mu")) cfg.mu = opt.mu;
  if (cmd->count("--lambda")) cfg.lambda = opt.lambda;
  if (cmd->count("--ema-momentum")) cfg.ema_momentum = opt.ema_momentum;
  if (cmd->count("--lr")) cfg.lr_decoder = opt.lr;
  if (cmd->count("--seed")) cfg.seed = opt.seed;
  if (cmd->count("--decoder")) cfg.decoder = p2r::decoder_kind_from_string(opt.decoder);
  if (cmd->count("--rfield")) cfg.receptive_field = static_cast<int>(opt.receptive_field);
  if (cmd->count("--eval-student")) cfg.eval_student = opt.eval_student;
  return cfg;
}

std::map<std::string, std::string> config_snapshot(const p2r::TrainConfig& cfg) {
  auto fmt = [](double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
  };
  return {{"epochs", std::to_string(cfg.epochs)},
          {"warmup_epochs", std::to_string(cfg.warmup_epochs)},
          {"alpha_step", fmt(cfg.alpha_step)},
          {"alpha_cap", fmt(cfg.alpha_cap)},
          {"eta", fmt(cfg.eta)},
          {"tau", fmt(cfg.tau)},
          {"mu", fmt(cfg.mu)},
          {"lambda", fmt(cfg.lambda)},
          {"ema_momentum", fmt(cfg.ema_momentum)},
          {"lr_decoder", fmt(cfg.lr_decoder)},
          {"batch_size", std::to_string(cfg.batch_size)},
          {"matching_scheme", to_string(cfg.matching_scheme)},
          {"cost_score_transform",
           cfg.cost_score_transform == p2r::CostScoreTransform::kInverseSigmoid ? "inverse_sigmoid"
                                                                                : "identity"},
          {"decoder", to_string(cfg.decoder)},
          {"receptive_field", std::to_string(cfg.receptive_field)},
          {"mlp_hidden", std::to_string(cfg.mlp_hidden)},
          {"eval_student", cfg.eval_student ? "1" : "0"},
          {"seed", std::to_string(cfg.seed)}};
}

int run_train(const CLI::App* cmd, const TrainOptions& opt) {
  const p2r::TrainConfig cfg = build_train_config(cmd, opt);

  p2r::RunManifest manifest;
  manifest.command = "train";
  manifest.started_at = p2r::iso_timestamp_now();
  manifest.seed = cfg.seed;
  manifest.config = config_snapshot(cfg);

  const p2r::Dataset dataset = p2r::load_dataset(opt.data);
  const p2r::TrainResult result = p2r::train(dataset, cfg);

  const fs::path out_dir(opt.out);
  fs::create_directories(out_dir);
  p2r::write_training_log(result, out_dir / "log.jsonl");
  manifest.outputs.push_back(out_dir / "log.jsonl");

  auto save_model = [&](const std::optional<p2r::TinyDecoder>& model, const std::string& name) {
    if (!model) return;
    p2r::save_checkpoint(*model, out_dir / name);
    manifest.outputs.push_back(out_dir / (name + ".weights.p2rt"));
    manifest.outputs.push_back(out_dir / (name + ".bias.p2rt"));
    manifest.outputs.push_back(out_dir / (name + ".meta"));
  };
  save_model(result.student, "final_student");
  save_model(result.teacher, "final_teacher");
  save_model(result.warmup_student, "warmup_student");
  save_model(result.warmup_teacher, "warmup_teacher");

  manifest.finished_at = p2r::iso_timestamp_now();
  manifest.write(out_dir / "run_manifest.json");

  if (result.nan_abort) {
    std::cerr << "P2R_ERROR[numeric]: training aborted at epoch " << result.nan_epoch << ": "
              << result.nan_diagnostic << "\n";
    return kExitNumeric;
  }
  const p2r::EpochRecord& last = result.log.back();
  json summary = {{"epochs", static_cast<long>(result.log.size())},
                  {"val_mae", last.val_mae},
                  {"val_mse", last.val_mse},
                  {"mean_pred_count", last.mean_pred_count}};
  std::cout << summary.dump() << "\n";
  return 0;
}

struct EvalOptions {
  std::string data;
  std::string checkpoint;
  std::string out = ".";
};

int run_eval(const EvalOptions& opt) {
  p2r::RunManifest manifest;
  manifest.command = "eval";
  manifest.started_at = p2r::iso_timestamp_now();
  manifest.config = {{"data", opt.data}, {"checkpoint", opt.checkpoint}};

  const p2r::Dataset dataset = p2r::load_dataset(opt.data);
  const p2r::TinyDecoder decoder = p2r::load_checkpoint(opt.checkpoint);
  const p2r::EvalMetrics metrics = p2r::evaluate(decoder, dataset);

  json summary = {{"mae", metrics.mae},
                  {"mse", metrics.mse},
                  {"mean_pred_count", metrics.mean_predicted_count}};
  const fs::path out_dir(opt.out);
  fs::create_directories(out_dir);
  {
    std::ofstream mf(out_dir / "metrics.json", std::ios::trunc);
    mf << summary.dump(2) << "\n";
  }
  manifest.outputs.push_back(out_dir / "metrics.json");
  manifest.finished_at = p2r::iso_timestamp_now();
  manifest.write(out_dir / "run_manifest.json");

  std::cout << summary.dump() << "\n";
  return 0;
}

// --- bench -------------------------------------------------------------------

struct BenchOptions {
  std::size_t pixels = 8640;
  std::size_t points = 775;
  int repeats = 20;
  std::uint64_t seed = 0;
  double tau = p2r::kDefaultTau;
  double mu = 8.0;
  bool parallel = false;
  std::string out;
};

int run_bench_cmd(const BenchOptions& opt) {
  p2r::BenchConfig cfg;
  cfg.pixels = opt.pixels;
  cfg.points = opt.points;
  cfg.repeats = opt.repeats;
  cfg.seed = opt.seed;
  cfg.tau = opt.tau;
  cfg.mu = opt.mu;
  cfg.parallel = opt.parallel;

  p2r::RunManifest manifest;
  manifest.command = "bench";
  manifest.started_at = p2r::iso_timestamp_now();
  manifest.seed = opt.seed;
  manifest.config = {{"n", std::to_string(opt.pixels)},   {"m", std::to_string(opt.points)},
                     {"repeats", std::to_string(opt.repeats)}, {"seed", std::to_string(opt.seed)},
                     {"tau", std::to_string(opt.tau)},     {"mu", std::to_string(opt.mu)},
                     {"parallel", opt.parallel ? "1" : "0"}};

  const p2r::BenchResult result = p2r::run_bench(cfg);

  json summary = {{"n", result.pixels},
                  {"m", result.points},
                  {"grid", {result.height, result.width}},
                  {"p2p_mean_seconds", result.p2p_mean},
                  {"p2p_median_seconds", result.p2p_median},
                  {"p2r_mean_seconds", result.p2r_mean},
                  {"p2r_median_seconds", result.p2r_median},
                  {"speedup_median", result.speedup_median}};

  if (!opt.out.empty()) {
    const fs::path out_dir(opt.out);
    fs::create_directories(out_dir);
    {
      std::ofstream csv(out_dir / "bench.csv", std::ios::trunc);
      csv.precision(17);
      csv << "repeat,p2p_seconds,p2r_seconds\n";
      for (std::size_t i = 0; i < result.p2p_seconds.size(); ++i)
        csv << i << "," << result.p2p_seconds[i] << "," << result.p2r_seconds[i] << "\n";
    }
    {
      std::ofstream js(out_dir / "bench.json", std::ios::trunc);
      js << summary.dump(2) << "\n";
    }
    manifest.outputs.push_back(out_dir / "bench.csv");
    manifest.outputs.push_back(out_dir / "bench.json");
    manifest.finished_at = p2r::iso_timestamp_now();
    manifest.write(out_dir / "run_manifest.json");
  }

  std::cout << summary.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"point-matching losses, PSAM export, desk-scale semi-supervised training"};
  app.require_subcommand(1);

  GenOptions gen;
  CLI::App* gen_cmd = app.add_subcommand("gen", "generate a synthetic scene dataset");
  gen_cmd->add_option("--scenes", gen.scenes, "number of scenes");
  gen_cmd->add_option("--points-range", gen.points_range, "points per scene, a..b");
  gen_cmd->add_option("--size", gen.size, "grid height and width")->expected(2);
  gen_cmd->add_option("--channels", gen.channels, "feature channels");
  gen_cmd->add_option("--labeled-frac", gen.labeled_frac, "fraction of labeled scenes");
  gen_cmd->add_option("--noise", gen.noise_sigma, "feature noise sigma");
  gen_cmd->add_option("--amplitude", gen.amplitude, "signature amplitude");
  gen_cmd->add_option("--seed", gen.seed, "generation seed");
  gen_cmd->add_option("--out", gen.out, "output directory")->required();

  MatchOptions match;
  CLI::App* match_cmd = app.add_subcommand("match", "run one matching pass and dump the objective");
  match_cmd->add_option("--scheme", match.scheme, "p2p or p2r")->required();
  match_cmd->add_option("--pred", match.pred, "score map tensor")->required();
  match_cmd->add_option("--gt", match.gt, "points csv")->required();
  match_cmd->add_option("--tau", match.tau, "distance weight");
  match_cmd->add_option("--mu", match.mu, "region radius (p2r)");
  match_cmd->add_option("--transform", match.transform, "identity or inverse_sigmoid");
  match_cmd->add_option("--out", match.out, "output directory")->required();

  PsamOptions psam;
  CLI::App* psam_cmd = app.add_subcommand("psam", "export activation patches and aggregates");
  psam_cmd->add_option("--features", psam.features, "feature map tensor")->required();
  psam_cmd->add_option("--checkpoint", psam.checkpoint, "decoder checkpoint prefix")->required();
  psam_cmd->add_option("--aggregate", psam.aggregate, "mean or global");
  psam_cmd->add_option("--out", psam.out, "output directory")->required();

  TrainOptions train;
  CLI::App* train_cmd = app.add_subcommand("train", "mean-teacher training on a scene dataset");
  train_cmd->add_option("--data", train.data, "dataset directory")->required();
  train_cmd->add_option("--scheme", train.scheme, "p2p or p2r");
  train_cmd->add_option("--config", train.config_file, "key = value config file");
  train_cmd->add_option("--out", train.out, "output directory")->required();
  train_cmd->add_option("--epochs", train.epochs, "total epochs");
  train_cmd->add_option("--warmup", train.warmup, "labeled-only epochs");
  train_cmd->add_option("--batch-size", train.batch_size, "batch size");
  train_cmd->add_option("--alpha-step", train.alpha_step, "alpha ramp per epoch");
  train_cmd->add_option("--alpha-cap", train.alpha_cap, "alpha ceiling");
  train_cmd->add_option("--eta", train.eta, "pseudo-label confidence threshold");
  train_cmd->add_option("--tau", train.tau, "distance weight");
  train_cmd->add_option("--mu", train.mu, "region radius");
  train_cmd->add_option("--lambda", train.lambda, "foreground loss weight");
  train_cmd->add_option("--ema-momentum", train.ema_momentum, "teacher EMA momentum");
  train_cmd->add_option("--lr", train.lr, "decoder learning rate");
  train_cmd->add_option("--seed", train.seed, "training seed");
  train_cmd->add_option("--decoder", train.decoder, "linear or mlp");
  train_cmd->add_option("--rfield", train.receptive_field, "decoder receptive field");
  train_cmd->add_flag("--eval-student", train.eval_student, "evaluate the student instead of the teacher");

  EvalOptions eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--data", eval.data, "dataset directory")->required();
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint prefix")->required();
  eval_cmd->add_option("--out", eval.out, "output directory for metrics + manifest");

  BenchOptions bench;
  CLI::App* bench_cmd = app.add_subcommand("bench", "time the P2P and P2R loss kernels");
  bench_cmd->add_option("--n", bench.pixels, "pixel count");
  bench_cmd->add_option("--m", bench.points, "point count");
  bench_cmd->add_option("--repeats", bench.repeats, "timing repeats");
  bench_cmd->add_option("--seed", bench.seed, "instance seed");
  bench_cmd->add_option("--tau", bench.tau, "distance weight");
  bench_cmd->add_option("--mu", bench.mu, "region radius");
  bench_cmd->add_flag("--parallel", bench.parallel, "use worker threads for the row scans");
  bench_cmd->add_option("--out", bench.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "P2R_ERROR[usage]: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return run_gen(gen);
    if (match_cmd->parsed()) {
      match.mu_set = match_cmd->count("--mu") > 0;
      return run_match(match);
    }
    if (psam_cmd->parsed()) return run_psam(psam);
    if (train_cmd->parsed()) return run_train(train_cmd, train);
    if (eval_cmd->parsed()) return run_eval(eval);
    if (bench_cmd->parsed()) return run_bench_cmd(bench);
    std::cerr << "P2R_ERROR[usage]: no subcommand\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "P2R_ERROR[usage]: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "P2R_ERROR[numeric]: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const p2r::TensorIoError& e) {
    std::cerr << "P2R_ERROR[data]: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "P2R_ERROR[data]: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "P2R_ERROR[data]: " << e.what() << "\n";
    return kExitData;
  }
}
