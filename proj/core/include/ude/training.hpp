#pragma once

// MSE training with Adam and per-epoch cosine annealing, multi-series
// pretraining, head-only fine-tuning and windowed evaluation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ude/data.hpp"
#include "ude/encoder.hpp"
#include "ude/types.hpp"

namespace ude {

struct TrainConfig {
  double lr = 1e-3;
  double lr_min = 0.0;
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  bool anneal = true;
  bool freeze_encoder = false;
  std::uint64_t seed = 0;
  double data_fraction = 1.0;
  std::size_t window_stride = 1;
  std::size_t patience = 20;  // epochs without val improvement; 0 disables
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool verbose = false;

  void validate() const;

  static TrainConfig pretrain() { return {}; }
  static TrainConfig pretrain_low_lr() {
    TrainConfig c;
    c.lr = 1e-4;
    return c;
  }
  static TrainConfig finetune() {
    TrainConfig c;
    c.lr = 5e-5;
    c.freeze_encoder = true;
    return c;
  }
};

struct LossResult {
  double loss = 0.0;
  Vector grad;  // d loss / d pred
};

LossResult mse_loss(const Vector& pred, const Vector& target);

struct AdamState {
  std::vector<Matrix> m, v;
  std::size_t step = 0;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState make_adam_state(std::span<const Matrix> params);
AdamState make_adam_state(const EncoderModel& model);

/// One bias-corrected Adam update of every parameter.
void adam_step(std::span<Matrix> params, std::span<const Matrix> grads, AdamState& state,
               double lr, const AdamHyper& hyper = {});

/// Adam on a model; with head_only the encoder parameters are untouched.
void adam_step(EncoderModel& model, const Gradients& grads, AdamState& state, double lr,
               const AdamHyper& hyper = {}, bool head_only = false);

double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max, double lr_min = 0.0);

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_mse = 0.0;
  double train_mae = 0.0;
  double val_mse = 0.0;
  double val_mae = 0.0;
};

struct TrainReport {
  TrainConfig config;
  EpochStats initial;
  std::vector<EpochStats> epochs;
  bool has_val = false;
  bool has_test = false;
  double test_mse = 0.0;
  double test_mae = 0.0;
  std::size_t best_epoch = 0;  // 0 = initial model kept
  std::size_t train_windows = 0;
  std::size_t steps = 0;
  std::size_t parameter_count = 0;
  double wall_seconds = 0.0;
};

/// Trains every parameter (or only the head when cfg.freeze_encoder) on
/// per-channel windows drawn from every series of the corpus. Each series is
/// z-scored with its own training-split statistics first.
TrainReport train(EncoderModel& model, std::span<const Series> corpus, const TrainConfig& cfg);

/// Head-only adaptation: train() with freeze_encoder forced on.
TrainReport finetune(EncoderModel& model, const Series& target, TrainConfig cfg);

struct Metrics {
  std::vector<double> mse;  // per channel
  std::vector<double> mae;
  double mse_mean = 0.0;    // average of the per-channel values
  double mae_mean = 0.0;
  std::size_t windows = 0;
};

using Predictor = std::function<Vector(std::span<const double> input, const Window& window)>;

/// Metrics of an arbitrary predictor over the windows of one split of an
/// already-normalized series.
Metrics evaluate_predictor(const Series& normalized, const WindowSpec& spec,
                           const Predictor& predict, Split split = Split::Test);

/// Model metrics in z-scored space (train-split statistics).
Metrics evaluate(const EncoderModel& model, const Series& series, const WindowSpec& spec,
                 Split split = Split::Test);

/// Window spec matching a model's lookback and horizon.
WindowSpec model_window_spec(const EncoderModel& model, std::size_t stride = 1);

void write_report_csv(std::ostream& out, const TrainReport& report);
std::string report_summary(const TrainReport& report);

}  // namespace ude
