#pragma once

// Multichannel series container, synthetic generators, CSV ingestion,
// train-split z-scoring and sliding-window assembly.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace ude {

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;  // test gets the remainder
};

struct Series {
  std::vector<std::string> names;
  std::vector<std::vector<double>> channels;
  double dt = 1.0;
  std::size_t train_end = 0;  // exclusive
  std::size_t val_end = 0;    // exclusive; test is [val_end, length)

  std::size_t length() const { return channels.empty() ? 0 : channels.front().size(); }
  std::size_t channel_count() const { return channels.size(); }

  /// Index of the named channel; throws InvalidArgument if absent.
  std::size_t channel_index(const std::string& name) const;

  /// Sets train_end / val_end from fractions of the length.
  void set_splits(const SplitFractions& fractions);

  /// Checks that channels have equal lengths and finite values, with ordered splits.
  void validate() const;
};

enum class Split { All, Train, Val, Test };

// --- generators -----------------------------------------------------------

struct PeriodicParams {
  std::vector<double> amplitudes{1.0};
  std::vector<double> periods{50.0};  // in samples
  std::vector<double> phases{0.0};
  double noise = 0.0;                 // std of additive Gaussian noise
};

struct RandomWalkParams {
  double step_std = 1.0;
  double start = 0.0;
};

struct LorenzParams {
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;
  double dt = 0.01;
  double x0 = 1.0, y0 = 1.0, z0 = 1.0;
  std::size_t burn_in = 0;  // steps discarded before recording
  double jitter = 0.0;      // seeded perturbation of the initial condition
};

struct SparsePulseParams {
  double rate = 0.05;  // Bernoulli probability per sample, in (0, 1)
  double amplitude = 1.0;
  double noise = 0.0;
};

Series gen_periodic(const PeriodicParams& params, std::size_t length, std::uint64_t seed);
Series gen_random_walk(const RandomWalkParams& params, std::size_t length,
                       std::uint64_t seed);
/// Three channels x, y, z integrated with fixed-step RK4.
Series gen_lorenz(const LorenzParams& params, std::size_t length, std::uint64_t seed);
Series gen_sparse_pulse(const SparsePulseParams& params, std::size_t length,
                        std::uint64_t seed);

/// One classical RK4 step of the Lorenz system.
void lorenz_rk4_step(const LorenzParams& params, double h, double state[3]);

// --- CSV ------------------------------------------------------------------

enum class NanPolicy { Reject, ForwardFill, DropRow };

struct CsvOptions {
  NanPolicy nan_policy = NanPolicy::Reject;
  bool timestamp_column = false;  // ignore the first column
  SplitFractions splits{};
};

Series load_csv(const std::filesystem::path& path, const CsvOptions& options = {});
Series read_csv(std::istream& in, const CsvOptions& options = {},
                const std::string& source = "<stream>");
void write_csv(std::ostream& out, const Series& series);
void save_csv(const std::filesystem::path& path, const Series& series);

// --- normalization --------------------------------------------------------

struct ChannelStats {
  double mean = 0.0;
  double std = 1.0;
  bool zero_variance = false;
};

struct ZScoreStats {
  std::vector<ChannelStats> channels;
};

enum class VariancePolicy { Strict, PassThrough };

/// Per-channel mean and population std over the training split only.
ZScoreStats zscore_fit(const Series& series, VariancePolicy policy = VariancePolicy::PassThrough);
/// Zero-variance channels are centred but not scaled.
Series zscore_apply(const Series& series, const ZScoreStats& stats);
Series zscore_inverse(const Series& series, const ZScoreStats& stats);
double zscore_value(double x, const ChannelStats& s);
double zscore_inverse_value(double z, const ChannelStats& s);

// --- windows --------------------------------------------------------------

struct WindowSpec {
  std::size_t lookback = 512;
  std::size_t horizon = 96;
  std::size_t stride = 1;

  void validate() const;
};

struct Window {
  std::size_t channel = 0;
  std::size_t start = 0;  // first input sample; targets begin at start + lookback
};

/// Windows lying entirely inside the requested split.
std::vector<Window> make_windows(const Series& series, const WindowSpec& spec,
                                 Split split = Split::All);

std::span<const double> window_input(const Series& series, const Window& w,
                                     const WindowSpec& spec);
std::span<const double> window_target(const Series& series, const Window& w,
                                      const WindowSpec& spec);

/// [begin, end) sample range of a split.
std::pair<std::size_t, std::size_t> split_range(const Series& series, Split split);

}  // namespace ude
