#pragma once

// Mutual-information guided late aggregation for a single target channel:
// histogram NMI, Top-k neighbour selection on the training split, z-score
// alignment and a fixed-weight convex blend of forecasts.

#include <cstddef>
#include <span>
#include <vector>

#include "ude/data.hpp"
#include "ude/types.hpp"

namespace ude {

class MIConfig {
 public:
  /// Throws InvalidArgument unless w_self + top_k * w_neighbor == 1 and
  /// n_bins >= 2.
  MIConfig(std::size_t n_bins = 16, std::size_t top_k = 5, double w_self = 0.9,
           double w_neighbor = 0.02);

  /// Weights derived from top_k with w_self fixed: w_neighbor = (1 - w_self) / top_k.
  static MIConfig with_top_k(std::size_t top_k, double w_self = 0.9, std::size_t n_bins = 16);

  std::size_t n_bins() const { return n_bins_; }
  std::size_t top_k() const { return top_k_; }
  double w_self() const { return w_self_; }
  double w_neighbor() const { return w_neighbor_; }

 private:
  std::size_t n_bins_;
  std::size_t top_k_;
  double w_self_;
  double w_neighbor_;
};

/// Shannon entropy (nats) of an equal-width histogram over [min, max].
double histogram_entropy(std::span<const double> x, std::size_t n_bins);

struct NmiResult {
  double value = 0.0;
  bool degenerate = false;  // a marginal entropy was zero
};

/// I(X;Y) / sqrt(H(X) H(Y)) from an n_bins x n_bins joint histogram.
NmiResult nmi_detail(std::span<const double> x, std::span<const double> y, std::size_t n_bins);
double nmi(std::span<const double> x, std::span<const double> y, std::size_t n_bins);

struct NeighborSelection {
  std::size_t target = 0;
  std::vector<std::size_t> neighbors;  // descending NMI, ties to lower index
  std::vector<double> scores;          // NMI of each selected neighbour
  std::vector<double> all_scores;      // NMI per channel, target = 1
  std::vector<std::size_t> degenerate; // channels with zero entropy
};

/// Ranks the other channels by NMI with the target on the z-scored training
/// split and keeps the top_k.
NeighborSelection select_neighbors(const Series& series, std::size_t target,
                                   const MIConfig& cfg);

/// Training-split statistics per channel.
using AlignmentStats = ZScoreStats;

/// Maps a neighbour forecast into the target's scale:
/// (y - mu_j) / sigma_j * sigma_k + mu_k.
Vector align_forecast(const Vector& forecast, const ChannelStats& neighbor,
                      const ChannelStats& target);

struct BlendResult {
  Vector forecast;
  double target_weight = 0.0;
  std::vector<double> neighbor_weights;  // per input neighbour, 0 if excluded
  std::vector<std::size_t> excluded;     // positions into the neighbour list
};

BlendResult blend(const Vector& target_forecast, std::span<const Vector> neighbor_forecasts,
                  std::size_t target, std::span<const std::size_t> neighbors,
                  const AlignmentStats& stats, const MIConfig& cfg);

}  // namespace ude
