#include "ude/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include "ude/error.hpp"
#include "ude/io.hpp"

namespace ude {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) fail(ErrorCode::InvalidArgument, "lr must be positive");
  if (lr_min < 0.0 || lr_min > lr) fail(ErrorCode::InvalidArgument, "lr_min must lie in [0, lr]");
  if (batch_size == 0) fail(ErrorCode::InvalidArgument, "batch_size must be >= 1");
  if (!(data_fraction >= 0.0 && data_fraction <= 1.0)) {
    fail(ErrorCode::InvalidArgument, "data_fraction must lie in [0, 1]");
  }
  if (window_stride == 0) fail(ErrorCode::InvalidArgument, "window_stride must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0)) {
    fail(ErrorCode::InvalidArgument, "adam hyperparameters out of range");
  }
}

LossResult mse_loss(const Vector& pred, const Vector& target) {
  if (pred.size() != target.size() || pred.size() == 0) {
    fail(ErrorCode::DimensionMismatch, "mse needs equal, non-empty shapes (" +
                                           std::to_string(pred.size()) + " vs " +
                                           std::to_string(target.size()) + ")");
  }
  const Vector diff = pred - target;
  const auto n = static_cast<double>(diff.size());
  return {diff.squaredNorm() / n, 2.0 * diff / n};
}

AdamState make_adam_state(std::span<const Matrix> params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.push_back(Matrix::Zero(p.rows(), p.cols()));
    s.v.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
  return s;
}

AdamState make_adam_state(const EncoderModel& model) {
  AdamState s;
  for (const auto& p : model.parameters()) {
    s.m.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    s.v.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  }
  return s;
}

namespace {

void adam_update(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, double lr,
                 double c1, double c2, const AdamHyper& h) {
  m = h.beta1 * m + (1.0 - h.beta1) * grad;
  v = h.beta2 * v + (1.0 - h.beta2) * grad.cwiseProduct(grad);
  param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + h.eps);
}

}  // namespace

void adam_step(std::span<Matrix> params, std::span<const Matrix> grads, AdamState& state,
               double lr, const AdamHyper& hyper) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    fail(ErrorCode::DimensionMismatch, "adam: parameter, gradient and state counts differ");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam_update(params[i], grads[i], state.m[i], state.v[i], lr, c1, c2, hyper);
  }
}

void adam_step(EncoderModel& model, const Gradients& grads, AdamState& state, double lr,
               const AdamHyper& hyper, bool head_only) {
  auto& params = model.parameters();
  if (params.size() != grads.values.size() || params.size() != state.m.size()) {
    fail(ErrorCode::DimensionMismatch, "adam: parameter, gradient and state counts differ");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (head_only && !params[i].head) continue;
    adam_update(params[i].value, grads.values[i], state.m[i], state.v[i], lr, c1, c2, hyper);
  }
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max, double lr_min) {
  if (total_steps == 0) return lr_max;
  const double s = static_cast<double>(std::min(step, total_steps));
  return lr_min + 0.5 * (lr_max - lr_min) *
                      (1.0 + std::cos(std::numbers::pi * s / static_cast<double>(total_steps)));
}

WindowSpec model_window_spec(const EncoderModel& model, std::size_t stride) {
  return {model.config().lookback, model.config().horizon(), stride};
}

namespace {

struct Sample {
  std::size_t series = 0;
  Window window;
};

Vector as_vector(std::span<const double> s) {
  return Eigen::Map<const Vector>(s.data(), static_cast<Eigen::Index>(s.size()));
}

std::vector<Sample> collect(std::span<const Series> corpus, const WindowSpec& spec, Split split) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto [begin, end] = split_range(corpus[i], split);
    if (end < begin + spec.lookback + spec.horizon) continue;
    for (const auto& w : make_windows(corpus[i], spec, split)) out.push_back({i, w});
  }
  return out;
}

struct LossTotals {
  double mse = 0.0;
  double mae = 0.0;
};

LossTotals average_loss(const EncoderModel& model, std::span<const Series> corpus,
                        std::span<const Sample> samples, const WindowSpec& spec) {
  LossTotals t;
  if (samples.empty()) return t;
  Tape tape;
  for (const auto& s : samples) {
    const auto& series = corpus[s.series];
    const Vector pred =
        forward(embed_series(window_input(series, s.window, spec), model.config().delay), model, tape);
    const Vector target = as_vector(window_target(series, s.window, spec));
    t.mse += (pred - target).squaredNorm() / static_cast<double>(target.size());
    t.mae += (pred - target).cwiseAbs().sum() / static_cast<double>(target.size());
  }
  t.mse /= static_cast<double>(samples.size());
  t.mae /= static_cast<double>(samples.size());
  return t;
}

}  // namespace

TrainReport train(EncoderModel& model, std::span<const Series> corpus, const TrainConfig& cfg) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  if (corpus.empty()) fail(ErrorCode::InvalidArgument, "training corpus is empty");

  std::vector<Series> normalized;
  normalized.reserve(corpus.size());
  for (const auto& s : corpus) {
    s.validate();
    normalized.push_back(zscore_apply(s, zscore_fit(s)));
  }
  const WindowSpec spec = model_window_spec(model, cfg.window_stride);
  std::vector<Sample> train_samples = collect(normalized, spec, Split::Train);
  const std::vector<Sample> val_samples = collect(normalized, spec, Split::Val);
  const std::vector<Sample> test_samples = collect(normalized, spec, Split::Test);
  if (train_samples.empty() && cfg.data_fraction > 0.0 && cfg.epochs > 0) {
    fail(ErrorCode::SeriesTooShort, "no training windows fit the corpus");
  }

  std::mt19937_64 rng(cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  if (cfg.data_fraction < 1.0) {
    const auto keep = static_cast<std::size_t>(
        std::llround(cfg.data_fraction * static_cast<double>(train_samples.size())));
    std::vector<std::size_t> order(train_samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(std::max<std::size_t>(keep, cfg.data_fraction > 0.0 && !order.empty() ? 1 : 0));
    std::sort(order.begin(), order.end());
    std::vector<Sample> kept;
    for (std::size_t i : order) kept.push_back(train_samples[i]);
    train_samples.swap(kept);
  }

  TrainReport report;
  report.config = cfg;
  report.train_windows = train_samples.size();
  report.parameter_count = model.scalar_count();
  report.has_val = !val_samples.empty();
  report.has_test = !test_samples.empty();

  const LossTotals init_train = average_loss(model, normalized, train_samples, spec);
  const LossTotals init_val = average_loss(model, normalized, val_samples, spec);
  report.initial = {0, cfg.lr, init_train.mse, init_train.mae, init_val.mse, init_val.mae};

  const bool head_only = cfg.freeze_encoder;
  const AdamHyper hyper{cfg.beta1, cfg.beta2, cfg.eps};
  AdamState adam = make_adam_state(model);
  Gradients& grads = model.grads();
  std::vector<Matrix> best;
  double best_val = report.has_val ? init_val.mse : 0.0;
  std::size_t since_best = 0;
  if (report.has_val) {
    for (const auto& p : model.parameters()) best.push_back(p.value);
  }
  Tape tape;

  const std::size_t epochs = train_samples.empty() ? 0 : cfg.epochs;
  std::vector<std::size_t> order(train_samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const double lr = cfg.anneal ? cosine_lr(epoch, epochs, cfg.lr, cfg.lr_min) : cfg.lr;
    std::shuffle(order.begin(), order.end(), rng);
    double sum_mse = 0.0, sum_mae = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(end - b);
      grads.zero();
      double batch_loss = 0.0;
      for (std::size_t i = b; i < end; ++i) {
        const Sample& s = train_samples[order[i]];
        const Series& series = normalized[s.series];
        const PatchGrid grid = embed_series(window_input(series, s.window, spec), model.config().delay);
        Vector pred;
        try {
          pred = forward(grid, model, tape, &dropout_rng);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::NonFinite) throw;
          fail(ErrorCode::Divergence, std::string(e.what()) + " at step " +
                                          std::to_string(report.steps + 1) + " (epoch " +
                                          std::to_string(epoch + 1) + ")");
        }
        const Vector target = as_vector(window_target(series, s.window, spec));
        LossResult loss = mse_loss(pred, target);
        batch_loss += loss.loss;
        sum_mae += (pred - target).cwiseAbs().mean();
        loss.grad *= inv;
        backward(model, tape, loss.grad, grads);
      }
      sum_mse += batch_loss;
      if (!std::isfinite(batch_loss)) {
        fail(ErrorCode::Divergence, "non-finite loss at step " + std::to_string(report.steps + 1) +
                                        " (epoch " + std::to_string(epoch + 1) + ")");
      }
      adam_step(model, grads, adam, lr, hyper, head_only);
      ++report.steps;
      if (!model.finite()) {
        fail(ErrorCode::Divergence, "non-finite parameters after step " +
                                        std::to_string(report.steps));
      }
    }
    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.lr = lr;
    stats.train_mse = sum_mse / static_cast<double>(order.size());
    stats.train_mae = sum_mae / static_cast<double>(order.size());
    if (report.has_val) {
      const LossTotals val = average_loss(model, normalized, val_samples, spec);
      stats.val_mse = val.mse;
      stats.val_mae = val.mae;
    }
    report.epochs.push_back(stats);
    if (cfg.verbose) {
      std::cerr << "epoch " << stats.epoch << " lr " << lr << " train_mse " << stats.train_mse
                << " val_mse " << stats.val_mse << '\n';
    }
    if (report.has_val) {
      if (stats.val_mse < best_val) {
        best_val = stats.val_mse;
        report.best_epoch = stats.epoch;
        since_best = 0;
        best.clear();
        for (const auto& p : model.parameters()) best.push_back(p.value);
      } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
        break;
      }
    } else {
      report.best_epoch = stats.epoch;
    }
  }
  if (report.has_val && !best.empty()) {
    auto& params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].value = best[i];
  }
  grads.zero();

  if (report.has_test) {
    const LossTotals test = average_loss(model, normalized, test_samples, spec);
    report.test_mse = test.mse;
    report.test_mae = test.mae;
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

TrainReport finetune(EncoderModel& model, const Series& target, TrainConfig cfg) {
  cfg.freeze_encoder = true;
  return train(model, std::span<const Series>(&target, 1), cfg);
}

Metrics evaluate_predictor(const Series& normalized, const WindowSpec& spec,
                           const Predictor& predict, Split split) {
  const auto [begin, end] = split_range(normalized, split);
  if (end < begin + spec.lookback + spec.horizon) {
    fail(ErrorCode::SeriesTooShort, "no evaluation windows fit the requested split");
  }
  const auto windows = make_windows(normalized, spec, split);
  Metrics m;
  const std::size_t channels = normalized.channel_count();
  m.mse.assign(channels, 0.0);
  m.mae.assign(channels, 0.0);
  std::vector<std::size_t> counts(channels, 0);
  for (const auto& w : windows) {
    const Vector pred = predict(window_input(normalized, w, spec), w);
    const Vector target = as_vector(window_target(normalized, w, spec));
    if (pred.size() != target.size()) {
      fail(ErrorCode::DimensionMismatch, "predictor returned the wrong horizon");
    }
    m.mse[w.channel] += (pred - target).squaredNorm() / static_cast<double>(target.size());
    m.mae[w.channel] += (pred - target).cwiseAbs().sum() / static_cast<double>(target.size());
    ++counts[w.channel];
  }
  for (std::size_t c = 0; c < channels; ++c) {
    m.mse[c] /= static_cast<double>(counts[c]);
    m.mae[c] /= static_cast<double>(counts[c]);
    m.mse_mean += m.mse[c];
    m.mae_mean += m.mae[c];
  }
  m.mse_mean /= static_cast<double>(channels);
  m.mae_mean /= static_cast<double>(channels);
  m.windows = windows.size();
  return m;
}

Metrics evaluate(const EncoderModel& model, const Series& series, const WindowSpec& spec,
                 Split split) {
  if (spec.lookback != model.config().lookback || spec.horizon != model.config().horizon()) {
    fail(ErrorCode::DimensionMismatch,
         "window spec (" + std::to_string(spec.lookback) + ", " + std::to_string(spec.horizon) +
             ") does not match the model (" + std::to_string(model.config().lookback) + ", " +
             std::to_string(model.config().horizon()) + ")");
  }
  series.validate();
  const Series normalized = zscore_apply(series, zscore_fit(series));
  Tape tape;
  return evaluate_predictor(
      normalized, spec,
      [&](std::span<const double> input, const Window&) {
        return forward(embed_series(input, model.config().delay), model, tape);
      },
      split);
}

void write_report_csv(std::ostream& out, const TrainReport& report) {
  out << "epoch,lr,train_mse,train_mae,val_mse,val_mae\n";
  auto row = [&](const EpochStats& e) {
    out << e.epoch << ',' << format_double(e.lr) << ',' << format_double(e.train_mse) << ','
        << format_double(e.train_mae) << ',' << format_double(e.val_mse) << ','
        << format_double(e.val_mae) << '\n';
  };
  row(report.initial);
  for (const auto& e : report.epochs) row(e);
}

std::string report_summary(const TrainReport& report) {
  std::ostringstream s;
  s << "parameters: " << report.parameter_count << '\n'
    << "train windows: " << report.train_windows << '\n'
    << "epochs run: " << report.epochs.size() << " (best " << report.best_epoch << ")\n"
    << "optimizer steps: " << report.steps << '\n'
    << "initial train mse: " << format_double(report.initial.train_mse) << '\n';
  if (!report.epochs.empty()) {
    s << "final train mse: " << format_double(report.epochs.back().train_mse) << '\n';
  }
  if (report.has_val) s << "initial val mse: " << format_double(report.initial.val_mse) << '\n';
  if (report.has_test) {
    s << "test mse: " << format_double(report.test_mse) << '\n'
      << "test mae: " << format_double(report.test_mae) << '\n';
  }
  s << "lr: " << format_double(report.config.lr) << ", batch: " << report.config.batch_size
    << ", freeze_encoder: " << (report.config.freeze_encoder ? "true" : "false")
    << ", data_fraction: " << format_double(report.config.data_fraction)
    << ", seed: " << report.config.seed << '\n';
  // Excludes wall-clock time.
  return s.str();
}

}  // namespace ude
