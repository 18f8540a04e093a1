#include "ude/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include "ude/error.hpp"
#include "ude/io.hpp"

namespace ude {

std::size_t Series::channel_index(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  fail(ErrorCode::InvalidArgument, "no channel named '" + name + "'");
}

void Series::set_splits(const SplitFractions& fractions) {
  if (!(fractions.train > 0.0) || !(fractions.val >= 0.0) ||
      fractions.train + fractions.val > 1.0) {
    fail(ErrorCode::InvalidArgument, "split fractions must satisfy 0 < train, train + val <= 1");
  }
  const auto n = static_cast<double>(length());
  auto cut = [n](double f) { return static_cast<std::size_t>(std::floor(n * f + 1e-9)); };
  train_end = cut(fractions.train);
  val_end = cut(fractions.train) + cut(fractions.val);
  if (val_end > length()) val_end = length();
  if (train_end == 0 && length() > 0) train_end = 1;
  if (val_end <= train_end) val_end = std::min(length(), train_end + 1);
}

void Series::validate() const {
  if (channels.empty()) fail(ErrorCode::InvalidArgument, "series has no channels");
  if (names.size() != channels.size()) {
    fail(ErrorCode::InvalidArgument, "channel name count differs from channel count");
  }
  for (std::size_t c = 0; c < channels.size(); ++c) {
    if (channels[c].size() != length()) {
      fail(ErrorCode::DimensionMismatch, "channel '" + names[c] + "' has a different length");
    }
    for (std::size_t t = 0; t < channels[c].size(); ++t) {
      if (!std::isfinite(channels[c][t])) {
        fail(ErrorCode::NonFinite, "channel '" + names[c] + "' has a non-finite value at row " +
                                       std::to_string(t + 1));
      }
    }
  }
  if (!(0 < train_end && train_end < val_end && val_end <= length())) {
    fail(ErrorCode::InvalidArgument,
         "splits must satisfy 0 < train_end < val_end <= length (got " +
             std::to_string(train_end) + ", " + std::to_string(val_end) + ", " +
             std::to_string(length()) + ")");
  }
}

namespace {

void require_length(std::size_t length) {
  if (length < 2) fail(ErrorCode::InvalidArgument, "generated series needs length >= 2");
}

Series single(std::string name, std::vector<double> values, double dt = 1.0) {
  Series s;
  s.names.push_back(std::move(name));
  s.channels.push_back(std::move(values));
  s.dt = dt;
  s.set_splits({});
  return s;
}

}  // namespace

Series gen_periodic(const PeriodicParams& params, std::size_t length, std::uint64_t seed) {
  require_length(length);
  if (params.amplitudes.empty() || params.amplitudes.size() != params.periods.size()) {
    fail(ErrorCode::InvalidArgument, "periodic generator needs one period per amplitude");
  }
  if (!params.phases.empty() && params.phases.size() != params.periods.size()) {
    fail(ErrorCode::InvalidArgument, "periodic generator needs one phase per component");
  }
  for (double p : params.periods) {
    if (!(p > 0.0)) fail(ErrorCode::InvalidArgument, "periods must be positive");
  }
  if (params.noise < 0.0) fail(ErrorCode::InvalidArgument, "noise must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> x(length, 0.0);
  for (std::size_t t = 0; t < length; ++t) {
    double v = 0.0;
    for (std::size_t k = 0; k < params.periods.size(); ++k) {
      const double phase = params.phases.empty() ? 0.0 : params.phases[k];
      v += params.amplitudes[k] *
           std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / params.periods[k] + phase);
    }
    if (params.noise > 0.0) v += params.noise * noise(rng);
    x[t] = v;
  }
  return single("periodic", std::move(x));
}

Series gen_random_walk(const RandomWalkParams& params, std::size_t length,
                       std::uint64_t seed) {
  require_length(length);
  if (!(params.step_std > 0.0)) fail(ErrorCode::InvalidArgument, "step std must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> step(0.0, params.step_std);
  std::vector<double> x(length);
  x[0] = params.start;
  for (std::size_t t = 1; t < length; ++t) x[t] = x[t - 1] + step(rng);
  return single("random_walk", std::move(x));
}

void lorenz_rk4_step(const LorenzParams& p, double h, double s[3]) {
  auto f = [&p](const double* v, double* out) {
    out[0] = p.sigma * (v[1] - v[0]);
    out[1] = v[0] * (p.rho - v[2]) - v[1];
    out[2] = v[0] * v[1] - p.beta * v[2];
  };
  double k1[3], k2[3], k3[3], k4[3], tmp[3];
  f(s, k1);
  for (int i = 0; i < 3; ++i) tmp[i] = s[i] + 0.5 * h * k1[i];
  f(tmp, k2);
  for (int i = 0; i < 3; ++i) tmp[i] = s[i] + 0.5 * h * k2[i];
  f(tmp, k3);
  for (int i = 0; i < 3; ++i) tmp[i] = s[i] + h * k3[i];
  f(tmp, k4);
  for (int i = 0; i < 3; ++i) s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
}

Series gen_lorenz(const LorenzParams& params, std::size_t length, std::uint64_t seed) {
  require_length(length);
  if (!(params.dt > 0.0)) fail(ErrorCode::InvalidArgument, "lorenz dt must be positive");
  double s[3] = {params.x0, params.y0, params.z0};
  if (params.jitter > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, params.jitter);
    for (double& v : s) v += n(rng);
  }
  for (std::size_t i = 0; i < params.burn_in; ++i) lorenz_rk4_step(params, params.dt, s);
  Series out;
  out.names = {"x", "y", "z"};
  out.channels.assign(3, std::vector<double>(length));
  out.dt = params.dt;
  for (std::size_t t = 0; t < length; ++t) {
    if (t > 0) lorenz_rk4_step(params, params.dt, s);
    for (int c = 0; c < 3; ++c) out.channels[static_cast<std::size_t>(c)][t] = s[c];
  }
  out.set_splits({});
  return out;
}

Series gen_sparse_pulse(const SparsePulseParams& params, std::size_t length,
                        std::uint64_t seed) {
  require_length(length);
  if (!(params.rate > 0.0 && params.rate < 1.0)) {
    fail(ErrorCode::InvalidArgument, "pulse rate must lie in (0, 1)");
  }
  if (params.noise < 0.0) fail(ErrorCode::InvalidArgument, "noise must be >= 0");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution pulse(params.rate);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> x(length, 0.0);
  for (std::size_t t = 0; t < length; ++t) {
    x[t] = pulse(rng) ? params.amplitude : 0.0;
    if (params.noise > 0.0) x[t] += params.noise * noise(rng);
  }
  return single("sparse_pulse", std::move(x));
}

// --- CSV ----------------------------------------------------------------------

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t begin = 0;
  while (true) {
    const std::size_t comma = line.find(',', begin);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(begin));
      break;
    }
    out.push_back(line.substr(begin, comma - begin));
    begin = comma + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

bool is_nan_token(std::string_view s) {
  return s.empty() || s == "nan" || s == "NaN" || s == "NAN" || s == "NA" || s == "null";
}

double parse_cell(std::string_view cell, const std::string& source, std::size_t line,
                  std::size_t column) {
  cell = trim(cell);
  if (is_nan_token(cell)) return std::nan("");
  double v = 0.0;
  std::string_view body = cell;
  if (!body.empty() && body.front() == '+') body.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), v);
  if (ec != std::errc() || ptr != body.data() + body.size()) {
    fail(ErrorCode::Parse, source + ":" + std::to_string(line) + ": column " +
                               std::to_string(column) + ": non-numeric cell '" +
                               std::string(cell) + "'");
  }
  return v;
}

}  // namespace

Series read_csv(std::istream& in, const CsvOptions& options, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  Series s;
  bool have_header = false;
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> row_lines;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
      line.erase(0, 3);
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    const std::size_t skip = options.timestamp_column ? 1 : 0;
    if (!have_header) {
      if (fields.size() <= skip) {
        fail(ErrorCode::Parse, source + ":" + std::to_string(line_no) + ": header has no channels");
      }
      for (std::size_t i = skip; i < fields.size(); ++i) {
        s.names.emplace_back(trim(fields[i]));
      }
      have_header = true;
      continue;
    }
    if (fields.size() != s.names.size() + skip) {
      fail(ErrorCode::Parse, source + ":" + std::to_string(line_no) + ": expected " +
                                 std::to_string(s.names.size() + skip) + " fields, found " +
                                 std::to_string(fields.size()));
    }
    std::vector<double> row;
    row.reserve(s.names.size());
    for (std::size_t i = skip; i < fields.size(); ++i) {
      row.push_back(parse_cell(fields[i], source, line_no, i + 1));
    }
    rows.push_back(std::move(row));
    row_lines.push_back(line_no);
  }
  if (!have_header) fail(ErrorCode::Parse, source + ": empty file");
  if (rows.empty()) fail(ErrorCode::Parse, source + ": no data rows");

  std::vector<double> last(s.names.size(), std::nan(""));
  s.channels.assign(s.names.size(), {});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto& row = rows[r];
    bool drop = false;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (!std::isnan(row[c])) {
        if (!std::isfinite(row[c])) {
          fail(ErrorCode::Parse, source + ":" + std::to_string(row_lines[r]) +
                                     ": infinite value in column '" + s.names[c] + "'");
        }
        last[c] = row[c];
        continue;
      }
      switch (options.nan_policy) {
        case NanPolicy::Reject:
          fail(ErrorCode::Parse, source + ":" + std::to_string(row_lines[r]) +
                                     ": missing value in column '" + s.names[c] + "'");
        case NanPolicy::ForwardFill:
          if (std::isnan(last[c])) {
            fail(ErrorCode::Parse, source + ":" + std::to_string(row_lines[r]) +
                                       ": cannot forward-fill leading missing value in column '" +
                                       s.names[c] + "'");
          }
          row[c] = last[c];
          break;
        case NanPolicy::DropRow:
          drop = true;
          break;
      }
    }
    if (drop) continue;
    for (std::size_t c = 0; c < row.size(); ++c) s.channels[c].push_back(row[c]);
  }
  if (s.length() < 2) fail(ErrorCode::Parse, source + ": fewer than 2 usable rows");
  s.set_splits(options.splits);
  return s;
}

Series load_csv(const std::filesystem::path& path, const CsvOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open '" + path.string() + "'");
  return read_csv(in, options, path.string());
}

void write_csv(std::ostream& out, const Series& series) {
  for (std::size_t c = 0; c < series.names.size(); ++c) {
    if (c > 0) out << ',';
    out << series.names[c];
  }
  out << '\n';
  for (std::size_t t = 0; t < series.length(); ++t) {
    for (std::size_t c = 0; c < series.channels.size(); ++c) {
      if (c > 0) out << ',';
      out << format_double(series.channels[c][t]);
    }
    out << '\n';
  }
}

void save_csv(const std::filesystem::path& path, const Series& series) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write '" + path.string() + "'");
  write_csv(out, series);
  if (!out) fail(ErrorCode::Io, "write to '" + path.string() + "' failed");
}

// --- normalization --------------------------------------------------------------

ZScoreStats zscore_fit(const Series& series, VariancePolicy policy) {
  if (series.train_end == 0 || series.train_end > series.length()) {
    fail(ErrorCode::InvalidArgument, "training split is empty");
  }
  ZScoreStats stats;
  const auto n = static_cast<double>(series.train_end);
  for (std::size_t c = 0; c < series.channel_count(); ++c) {
    const auto& x = series.channels[c];
    double mean = 0.0;
    for (std::size_t t = 0; t < series.train_end; ++t) mean += x[t];
    mean /= n;
    double var = 0.0;
    for (std::size_t t = 0; t < series.train_end; ++t) var += (x[t] - mean) * (x[t] - mean);
    var /= n;
    ChannelStats cs;
    cs.mean = mean;
    cs.std = std::sqrt(var);
    if (!(cs.std > 1e-12 * std::max(1.0, std::abs(mean)))) {
      if (policy == VariancePolicy::Strict) {
        fail(ErrorCode::InvalidArgument,
             "channel '" + series.names[c] + "' has zero variance on the training split");
      }
      cs.zero_variance = true;
      cs.std = 1.0;
    }
    stats.channels.push_back(cs);
  }
  return stats;
}

double zscore_value(double x, const ChannelStats& s) { return (x - s.mean) / s.std; }
double zscore_inverse_value(double z, const ChannelStats& s) { return z * s.std + s.mean; }

Series zscore_apply(const Series& series, const ZScoreStats& stats) {
  if (stats.channels.size() != series.channel_count()) {
    fail(ErrorCode::MissingStats, "z-score stats do not cover every channel");
  }
  Series out = series;
  for (std::size_t c = 0; c < out.channel_count(); ++c) {
    for (double& v : out.channels[c]) v = zscore_value(v, stats.channels[c]);
  }
  return out;
}

Series zscore_inverse(const Series& series, const ZScoreStats& stats) {
  if (stats.channels.size() != series.channel_count()) {
    fail(ErrorCode::MissingStats, "z-score stats do not cover every channel");
  }
  Series out = series;
  for (std::size_t c = 0; c < out.channel_count(); ++c) {
    for (double& v : out.channels[c]) v = zscore_inverse_value(v, stats.channels[c]);
  }
  return out;
}

// --- windows ---------------------------------------------------------------------

void WindowSpec::validate() const {
  if (lookback == 0 || horizon == 0 || stride == 0) {
    fail(ErrorCode::InvalidArgument, "lookback, horizon and stride must be >= 1");
  }
}

std::pair<std::size_t, std::size_t> split_range(const Series& series, Split split) {
  switch (split) {
    case Split::All: return {0, series.length()};
    case Split::Train: return {0, series.train_end};
    case Split::Val: return {series.train_end, series.val_end};
    case Split::Test: return {series.val_end, series.length()};
  }
  return {0, 0};
}

std::vector<Window> make_windows(const Series& series, const WindowSpec& spec, Split split) {
  spec.validate();
  const auto [begin, end] = split_range(series, split);
  const std::size_t span = spec.lookback + spec.horizon;
  if (end < begin + span) {
    fail(ErrorCode::SeriesTooShort,
         "split of " + std::to_string(end - begin) + " samples cannot hold lookback " +
             std::to_string(spec.lookback) + " + horizon " + std::to_string(spec.horizon));
  }
  std::vector<Window> out;
  for (std::size_t c = 0; c < series.channel_count(); ++c) {
    for (std::size_t start = begin; start + span <= end; start += spec.stride) {
      out.push_back({c, start});
    }
  }
  return out;
}

std::span<const double> window_input(const Series& series, const Window& w,
                                     const WindowSpec& spec) {
  return std::span<const double>(series.channels[w.channel]).subspan(w.start, spec.lookback);
}

std::span<const double> window_target(const Series& series, const Window& w,
                                      const WindowSpec& spec) {
  return std::span<const double>(series.channels[w.channel])
      .subspan(w.start + spec.lookback, spec.horizon);
}

}  // namespace ude
