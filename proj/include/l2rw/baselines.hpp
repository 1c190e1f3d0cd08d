#ifndef L2RW_BASELINES_HPP_
#define L2RW_BASELINES_HPP_

// Non-learned weighting schemes: uniform, focal, self-paced.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "l2rw/types.hpp"

namespace l2rw {

enum class WeighterKind { teacher, uniform, focal, spl };

/// Focal multipliers (1 - p_k)^gamma, p_k the true-class probability. Not
/// batch-normalized.
template <typename Scalar>
Vec<Scalar> focal_weights(const Vec<Scalar>& p, Scalar gamma) {
  if (gamma < Scalar(0)) throw ConfigError("focal gamma must be >= 0");
  Vec<Scalar> w(p.size());
  for (Index k = 0; k < p.size(); ++k) {
    if (!(p[k] >= Scalar(0) && p[k] <= Scalar(1)))
      throw ConfigError("focal_weights: probability outside [0, 1]");
    w[k] = gamma == Scalar(0) ? Scalar(1) : std::pow(Scalar(1) - p[k], gamma);
  }
  return w;
}

/// Self-paced selection: 1 for samples with loss <= threshold, else 0.
template <typename Scalar>
Vec<Scalar> spl_weights(const Vec<Scalar>& losses, Scalar threshold) {
  if (threshold < Scalar(0)) throw ConfigError("spl threshold must be >= 0");
  return (losses.array() <= threshold).template cast<Scalar>().matrix();
}

/// Linear ramp of the SPL loss threshold from `start` at step 0 to `end` at
/// `total_steps`, clamped afterwards. Non-decreasing by construction.
struct SplSchedule {
  double start = 0;
  double end = std::numeric_limits<double>::infinity();
  Index total_steps = 1;

  double at(Index step) const {
    if (step >= total_steps) return end;
    if (std::isinf(end)) return start;
    const double f = static_cast<double>(step) / static_cast<double>(total_steps);
    return start + f * (end - start);
  }

  /// Starts at the q-th percentile of the initial losses and finishes above
  /// the largest initial loss, so every sample is admitted by the end.
  static SplSchedule from_losses(std::vector<double> losses, double percentile,
                                 Index total_steps) {
    if (losses.empty()) throw ConfigError("SPL schedule needs initial losses");
    if (percentile < 0 || percentile > 100)
      throw ConfigError("SPL percentile must be in [0, 100]");
    std::sort(losses.begin(), losses.end());
    const double pos = percentile / 100.0 * static_cast<double>(losses.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, losses.size() - 1);
    const double q = losses[lo] + (pos - static_cast<double>(lo)) * (losses[hi] - losses[lo]);
    SplSchedule s;
    s.start = q;
    s.end = 2.0 * losses.back() + 1.0;
    s.total_steps = std::max<Index>(1, total_steps);
    return s;
  }
};

}  // namespace l2rw

#endif  // L2RW_BASELINES_HPP_
