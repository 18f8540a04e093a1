#include "ude/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ude/error.hpp"

namespace ude {

namespace {

struct Binning {
  double lo = 0.0;
  double width = 0.0;  // 0 when the input is constant
  std::size_t bins = 1;

  std::size_t operator()(double v) const {
    if (width == 0.0) return 0;
    const auto b = static_cast<std::size_t>(std::floor((v - lo) / width));
    return std::min(b, bins - 1);
  }
};

Binning make_binning(std::span<const double> x, std::size_t n_bins) {
  if (x.size() < 2) fail(ErrorCode::InvalidArgument, "entropy needs at least 2 samples");
  if (n_bins < 2) fail(ErrorCode::InvalidArgument, "histogram needs at least 2 bins");
  double lo = x[0], hi = x[0];
  for (double v : x) {
    if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "histogram input is not finite");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Binning b;
  b.lo = lo;
  b.bins = n_bins;
  b.width = hi > lo ? (hi - lo) / static_cast<double>(n_bins) : 0.0;
  return b;
}

// Entropy from nonzero counts summed in ascending order.
double entropy_of_counts(std::vector<std::size_t> counts, std::size_t total) {
  counts.erase(std::remove(counts.begin(), counts.end(), std::size_t{0}), counts.end());
  std::sort(counts.begin(), counts.end());
  const auto n = static_cast<double>(total);
  double h = 0.0;
  for (std::size_t c : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

}  // namespace

MIConfig::MIConfig(std::size_t n_bins, std::size_t top_k, double w_self, double w_neighbor)
    : n_bins_(n_bins), top_k_(top_k), w_self_(w_self), w_neighbor_(w_neighbor) {
  if (n_bins < 2) fail(ErrorCode::InvalidArgument, "n_bins must be >= 2");
  if (top_k == 0) fail(ErrorCode::InvalidArgument, "top_k must be >= 1");
  if (w_self < 0.0 || w_neighbor < 0.0) {
    fail(ErrorCode::InvalidArgument, "blend weights must be non-negative");
  }
  const double total = w_self + static_cast<double>(top_k) * w_neighbor;
  if (std::abs(total - 1.0) > 1e-12) {
    fail(ErrorCode::InvalidArgument,
         "blend weights must sum to 1 (w_self + top_k * w_neighbor = " + std::to_string(total) +
             ")");
  }
}

MIConfig MIConfig::with_top_k(std::size_t top_k, double w_self, std::size_t n_bins) {
  if (top_k == 0) fail(ErrorCode::InvalidArgument, "top_k must be >= 1");
  return MIConfig(n_bins, top_k, w_self, (1.0 - w_self) / static_cast<double>(top_k));
}

double histogram_entropy(std::span<const double> x, std::size_t n_bins) {
  const Binning bin = make_binning(x, n_bins);
  std::vector<std::size_t> counts(n_bins, 0);
  for (double v : x) ++counts[bin(v)];
  return entropy_of_counts(std::move(counts), x.size());
}

NmiResult nmi_detail(std::span<const double> x, std::span<const double> y, std::size_t n_bins) {
  if (x.size() != y.size()) {
    fail(ErrorCode::DimensionMismatch, "nmi inputs differ in length");
  }
  const Binning bx = make_binning(x, n_bins);
  const Binning by = make_binning(y, n_bins);
  std::vector<std::size_t> joint(n_bins * n_bins, 0), cx(n_bins, 0), cy(n_bins, 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t a = bx(x[i]), b = by(y[i]);
    ++joint[a * n_bins + b];
    ++cx[a];
    ++cy[b];
  }
  const double hx = entropy_of_counts(std::move(cx), x.size());
  const double hy = entropy_of_counts(std::move(cy), x.size());
  const double hxy = entropy_of_counts(std::move(joint), x.size());
  NmiResult out;
  if (hx <= 0.0 || hy <= 0.0) {
    out.degenerate = true;
    return out;
  }
  const double mi = hx + hy - hxy;
  out.value = std::clamp(mi / std::sqrt(hx * hy), 0.0, 1.0);
  return out;
}

double nmi(std::span<const double> x, std::span<const double> y, std::size_t n_bins) {
  return nmi_detail(x, y, n_bins).value;
}

NeighborSelection select_neighbors(const Series& series, std::size_t target,
                                   const MIConfig& cfg) {
  const std::size_t n = series.channel_count();
  if (target >= n) {
    fail(ErrorCode::IndexOutOfRange, "target channel " + std::to_string(target + 1) +
                                         " not in series with " + std::to_string(n) +
                                         " channels");
  }
  if (n < cfg.top_k() + 1) {
    fail(ErrorCode::TooFewChannels,
         "need at least " + std::to_string(cfg.top_k() + 1) + " channels for top_k=" +
             std::to_string(cfg.top_k()) + ", have " + std::to_string(n));
  }
  const Series z = zscore_apply(series, zscore_fit(series));
  const std::size_t train = series.train_end;
  auto train_span = [&](std::size_t c) {
    return std::span<const double>(z.channels[c]).first(train);
  };
  NeighborSelection out;
  out.target = target;
  out.all_scores.assign(n, 0.0);
  std::vector<std::size_t> candidates;
  for (std::size_t c = 0; c < n; ++c) {
    if (c == target) {
      out.all_scores[c] = 1.0;
      continue;
    }
    const NmiResult r = nmi_detail(train_span(target), train_span(c), cfg.n_bins());
    out.all_scores[c] = r.value;
    if (r.degenerate) out.degenerate.push_back(c);
    candidates.push_back(c);
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
    if (out.all_scores[a] != out.all_scores[b]) return out.all_scores[a] > out.all_scores[b];
    return a < b;
  });
  candidates.resize(cfg.top_k());
  out.neighbors = candidates;
  for (std::size_t c : candidates) out.scores.push_back(out.all_scores[c]);
  return out;
}

Vector align_forecast(const Vector& forecast, const ChannelStats& neighbor,
                      const ChannelStats& target) {
  if (neighbor.mean == target.mean && neighbor.std == target.std) return forecast;
  return ((forecast.array() - neighbor.mean) / neighbor.std * target.std + target.mean).matrix();
}

BlendResult blend(const Vector& target_forecast, std::span<const Vector> neighbor_forecasts,
                  std::size_t target, std::span<const std::size_t> neighbors,
                  const AlignmentStats& stats, const MIConfig& cfg) {
  if (neighbor_forecasts.size() != neighbors.size()) {
    fail(ErrorCode::DimensionMismatch, "one forecast is needed per neighbour");
  }
  if (neighbors.size() > cfg.top_k()) {
    fail(ErrorCode::InvalidArgument, "more neighbours than top_k");
  }
  auto stat = [&](std::size_t c) -> const ChannelStats& {
    if (c >= stats.channels.size()) {
      fail(ErrorCode::MissingStats, "no alignment statistics for channel " + std::to_string(c + 1));
    }
    return stats.channels[c];
  };
  const ChannelStats& ts = stat(target);
  BlendResult out;
  // Weight of neighbours that are missing or excluded returns to the target.
  out.target_weight = cfg.w_self() +
                      static_cast<double>(cfg.top_k() - neighbors.size()) * cfg.w_neighbor();
  out.neighbor_weights.assign(neighbors.size(), 0.0);
  Vector acc = Vector::Zero(target_forecast.size());
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    const ChannelStats& ns = stat(neighbors[i]);
    if (neighbor_forecasts[i].size() != target_forecast.size()) {
      fail(ErrorCode::DimensionMismatch, "neighbour forecast length differs from target");
    }
    if (ns.zero_variance || !(ns.std > 0.0)) {
      out.excluded.push_back(i);
      out.target_weight += cfg.w_neighbor();
      continue;
    }
    out.neighbor_weights[i] = cfg.w_neighbor();
    acc += cfg.w_neighbor() * (align_forecast(neighbor_forecasts[i], ns, ts) - target_forecast);
  }
  // y + sum w_j (a_j - y), equal to w_self y + sum w_j a_j.
  out.forecast = target_forecast + acc;
  return out;
}

}  // namespace ude
