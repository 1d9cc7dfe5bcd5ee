// Weighted and confidence-masked binary cross entropy, the per-scheme
// confidence masks, analytic loss gradients, and the executable check that
// the P2P background term vanishes identically. Losses are sums, not means;
// reductions run in a fixed sequential order so results are bit-reproducible.
#pragma once

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "p2r/core.hpp"
#include "p2r/matching.hpp"

namespace p2r {

struct LossBreakdown {
  double total = 0.0;
  double foreground_term = 0.0;
  double background_term = 0.0;
  long active_pixel_count = 0;
};

// -lambda * sum_i target[i]*z[i]*log(p[i]) - sum_i (1-target[i])*z[i]*log(1-p[i]).
// weighted_bce is the z = 1 special case and shares this code path, so the
// two agree to the last bit.
inline LossBreakdown masked_bce(const ScoreMap& pred, const std::vector<double>& target,
                                const ConfidenceMask& confidence, double lambda) {
  const std::size_t n = pred.size();
  if (target.size() != n) throw std::invalid_argument("masked_bce: target length mismatch");
  if (confidence.size() != n) throw std::invalid_argument("masked_bce: confidence length mismatch");
  if (lambda <= 0.0) throw std::invalid_argument("masked_bce: lambda must be positive");

  LossBreakdown out;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = confidence[i];
    if (z != 0.0) ++out.active_pixel_count;
    const double p = pred[i];
    out.foreground_term += lambda * target[i] * z * -std::log(p);
    out.background_term += (1.0 - target[i]) * z * -std::log(1.0 - p);
  }
  out.total = out.foreground_term + out.background_term;
  return out;
}

inline LossBreakdown weighted_bce(const ScoreMap& pred, const std::vector<double>& target,
                                  double lambda) {
  return masked_bce(pred, target, ConfidenceMask::ones(pred.size()), lambda);
}

// zeta[j] = 1 iff pseudo score j strictly exceeds eta. Thresholds at or below
// 0.5 would re-admit every extracted pseudo point, so eta is confined to
// (0.5, 1).
inline std::vector<double> confidence_vector(const std::vector<double>& pseudo_scores, double eta) {
  if (!(eta > 0.5 && eta < 1.0))
    throw std::invalid_argument("confidence_vector: eta must lie in (0.5, 1)");
  std::vector<double> zeta(pseudo_scores.size(), 0.0);
  for (std::size_t j = 0; j < pseudo_scores.size(); ++j)
    if (pseudo_scores[j] > eta) zeta[j] = 1.0;
  return zeta;
}

// z = M_st * zeta: confidence reaches only matched rows.
inline ConfidenceMask p2p_confidence(const MatchMatrix& match, const std::vector<double>& zeta) {
  return ConfidenceMask(match.apply_column_vector(zeta));
}

// z = M_st * zeta + (1 - beta): pixels outside every region are reliable
// background. A row assigned while beta = 0 would push an entry to 2, which
// indicates an inconsistent match/mask pairing.
inline ConfidenceMask p2r_confidence(const MatchMatrix& match, const std::vector<double>& zeta,
                                     const NeighborhoodMask& mask) {
  if (mask.size() != match.rows())
    throw std::invalid_argument("p2r_confidence: mask length mismatch");
  std::vector<double> z = match.apply_column_vector(zeta);
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] += mask[i] ? 0.0 : 1.0;
    if (z[i] != 0.0 && z[i] != 1.0)
      throw std::logic_error("p2r_confidence: entry outside {0,1}; match matrix assigns a row with beta=0");
  }
  return ConfidenceMask(std::move(z));
}

struct BackgroundCheck {
  bool holds = false;
  double residual = 0.0;
};

// Computes the background term of the masked loss with z = M_st * zeta and
// reports whether it is exactly zero. With the one-hot row structure every
// confident row carries target 1, so each summand multiplies by a hard 0.
inline BackgroundCheck verify_background_vanishes(const MatchMatrix& match,
                                                  const std::vector<double>& zeta,
                                                  const ScoreMap& student_scores) {
  const ConfidenceMask z = p2p_confidence(match, zeta);
  const std::vector<double> target = match.row_indicator();
  const LossBreakdown loss = masked_bce(student_scores, target, z, 1.0);
  return BackgroundCheck{loss.background_term == 0.0, loss.background_term};
}

// d(masked_bce)/dp[i] = z[i] * (-lambda*target[i]/p[i] + (1-target[i])/(1-p[i])).
inline std::vector<double> bce_gradient(const ScoreMap& pred, const std::vector<double>& target,
                                        const ConfidenceMask& confidence, double lambda) {
  const std::size_t n = pred.size();
  if (target.size() != n) throw std::invalid_argument("bce_gradient: target length mismatch");
  if (confidence.size() != n) throw std::invalid_argument("bce_gradient: confidence length mismatch");
  if (lambda <= 0.0) throw std::invalid_argument("bce_gradient: lambda must be positive");
  std::vector<double> grad(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = pred[i];
    grad[i] = confidence[i] * (-lambda * target[i] / p + (1.0 - target[i]) / (1.0 - p));
  }
  return grad;
}

inline double combined_loss(double labeled_loss, double unlabeled_loss, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("combined_loss: alpha must lie in [0, 1]");
  return alpha * unlabeled_loss + (1.0 - alpha) * labeled_loss;
}

// JSON-lines metrics record for a loss value.
inline std::string loss_record_json(long step, const LossBreakdown& loss) {
  std::ostringstream ss;
  ss.precision(17);
  ss << "{\"step\":" << step << ",\"total\":" << loss.total << ",\"fg\":" << loss.foreground_term
     << ",\"bg\":" << loss.background_term << ",\"active\":" << loss.active_pixel_count << "}";
  return ss.str();
}

}  // namespace p2r
