#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "test_util.hpp"
#include "ude/data.hpp"
#include "ude/error.hpp"

using namespace ude;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::Internal;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

Series from_csv(const std::string& text, CsvOptions opt = {}) {
  std::istringstream in(text);
  return read_csv(in, opt, "mem.csv");
}

}  // namespace

TEST_CASE("gen_periodic") {
  const Series s = gen_periodic({}, 1000, 0);
  REQUIRE(s.channel_count() == 1);
  const auto& x = s.channels[0];
  double lag0 = 0.0, lag = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    CHECK(std::abs(x[t]) <= 1.0);
    if (t + 50 < x.size()) {
      lag0 += x[t] * x[t];
      lag += x[t] * x[t + 50];
    }
  }
  CHECK(lag / lag0 > 0.999);
  CHECK(x[12] == doctest::Approx(std::sin(2.0 * std::numbers::pi * 12.0 / 50.0)).epsilon(1e-15));

  PeriodicParams two;
  two.amplitudes = {1.0, 0.5};
  two.periods = {20.0, 7.0};
  two.phases = {0.0, 1.0};
  const Series m = gen_periodic(two, 100, 0);
  CHECK(m.channels[0][3] == doctest::Approx(std::sin(2 * std::numbers::pi * 3 / 20.0) +
                                            0.5 * std::sin(2 * std::numbers::pi * 3 / 7.0 + 1.0)));
  two.periods = {20.0};
  CHECK_THROWS_AS(gen_periodic(two, 100, 0), Error);
  CHECK_THROWS_AS(gen_periodic({}, 1, 0), Error);
}

TEST_CASE("generators are pure functions of params and seed") {
  CHECK(gen_random_walk({}, 500, 3).channels == gen_random_walk({}, 500, 3).channels);
  CHECK(gen_random_walk({}, 500, 3).channels != gen_random_walk({}, 500, 4).channels);
  PeriodicParams noisy;
  noisy.noise = 0.1;
  CHECK(gen_periodic(noisy, 300, 9).channels == gen_periodic(noisy, 300, 9).channels);
  LorenzParams jit;
  jit.jitter = 0.1;
  CHECK(gen_lorenz(jit, 300, 1).channels == gen_lorenz(jit, 300, 1).channels);
  CHECK(gen_lorenz(jit, 300, 1).channels != gen_lorenz(jit, 300, 2).channels);
  CHECK(gen_sparse_pulse({}, 400, 5).channels == gen_sparse_pulse({}, 400, 5).channels);
}

TEST_CASE("gen_random_walk has unit-variance steps") {
  const Series s = gen_random_walk({}, 20001, 7);
  const auto& x = s.channels[0];
  CHECK(x[0] == 0.0);
  double sum = 0.0, sq = 0.0;
  for (std::size_t t = 1; t < x.size(); ++t) {
    const double d = x[t] - x[t - 1];
    sum += d;
    sq += d * d;
  }
  const double n = static_cast<double>(x.size() - 1);
  CHECK(std::abs(sum / n) < 0.03);
  CHECK(std::abs(sq / n - (sum / n) * (sum / n) - 1.0) < 0.05);
}

TEST_CASE("gen_lorenz is bounded and converges with step size") {
  const Series s = gen_lorenz({}, 10000, 0);
  REQUIRE(s.channel_count() == 3);
  CHECK(s.names == std::vector<std::string>{"x", "y", "z"});
  double peak = 0.0;
  for (const auto& c : s.channels)
    for (double v : c) peak = std::max(peak, std::abs(v));
  CHECK(peak < 100.0);
  CHECK(s.channels[0][0] == 1.0);

  // Local order check: from each of the first 100 states, one step of dt
  // and two steps of dt/2 agree relative to the state magnitude.
  LorenzParams p;
  auto local_gap = [&](const double* s, double h) {
    double coarse[3] = {s[0], s[1], s[2]};
    double fine[3] = {s[0], s[1], s[2]};
    lorenz_rk4_step(p, h, coarse);
    lorenz_rk4_step(p, h / 2, fine);
    lorenz_rk4_step(p, h / 2, fine);
    double gap = 0.0;
    for (int i = 0; i < 3; ++i) gap = std::max(gap, std::abs(coarse[i] - fine[i]));
    return gap;
  };
  double state[3] = {p.x0, p.y0, p.z0};
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double scale = std::max({1.0, std::abs(state[0]), std::abs(state[1]), std::abs(state[2])});
    worst = std::max(worst, local_gap(state, p.dt) / scale);
    if (k == 35) {
      // Fifth-order local error: halving the step shrinks the gap about 32x.
      const double ratio = local_gap(state, p.dt) / local_gap(state, p.dt / 2);
      CHECK(ratio > 24.0);
      CHECK(ratio < 40.0);
    }
    lorenz_rk4_step(p, p.dt, state);
  }
  CHECK(worst < 1e-5);

  // One step against a hand-expanded RK4 stage evaluation.
  auto f = [&](const double* s, double* d) {
    d[0] = p.sigma * (s[1] - s[0]);
    d[1] = s[0] * (p.rho - s[2]) - s[1];
    d[2] = s[0] * s[1] - p.beta * s[2];
  };
  double s0[3] = {1.0, 2.0, 3.0}, k1[3], k2[3], k3[3], k4[3], t[3];
  const double h = 0.01;
  f(s0, k1);
  for (int i = 0; i < 3; ++i) t[i] = s0[i] + h / 2 * k1[i];
  f(t, k2);
  for (int i = 0; i < 3; ++i) t[i] = s0[i] + h / 2 * k2[i];
  f(t, k3);
  for (int i = 0; i < 3; ++i) t[i] = s0[i] + h * k3[i];
  f(t, k4);
  double got[3] = {1.0, 2.0, 3.0};
  lorenz_rk4_step(p, h, got);
  for (int i = 0; i < 3; ++i) {
    CHECK(got[i] == doctest::Approx(s0[i] + h / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])).epsilon(1e-14));
  }
}

TEST_CASE("gen_sparse_pulse") {
  SparsePulseParams p;
  p.rate = 0.1;
  p.amplitude = 2.5;
  const Series s = gen_sparse_pulse(p, 20000, 1);
  std::size_t pulses = 0;
  for (double v : s.channels[0]) {
    CHECK((v == 0.0 || v == 2.5));
    pulses += v != 0.0 ? 1 : 0;
  }
  CHECK(std::abs(static_cast<double>(pulses) / 20000.0 - 0.1) < 0.01);
  p.rate = 0.0;
  CHECK(code_of([&] { gen_sparse_pulse(p, 10, 0); }) == ErrorCode::InvalidArgument);
  p.rate = 1.0;
  CHECK_THROWS_AS(gen_sparse_pulse(p, 10, 0), Error);
}

TEST_CASE("splits default to 70/10/20") {
  const Series s = gen_random_walk({}, 1000, 0);
  CHECK(s.train_end == 700);
  CHECK(s.val_end == 800);
  CHECK(split_range(s, Split::Test) == std::make_pair<std::size_t, std::size_t>(800, 1000));
  CHECK(split_range(s, Split::All) == std::make_pair<std::size_t, std::size_t>(0, 1000));
  Series bad = s;
  CHECK_THROWS_AS(bad.set_splits({0.0, 0.1}), Error);
  CHECK(s.channel_index("random_walk") == 0);
  CHECK_THROWS_AS(s.channel_index("nope"), Error);
}

TEST_CASE("read_csv: hand-written file") {
  const Series s = from_csv("a,b\n1,2\n3.5,-4\n5e-1,+6\n");
  CHECK(s.names == std::vector<std::string>{"a", "b"});
  CHECK(s.channels[0] == std::vector<double>{1.0, 3.5, 0.5});
  CHECK(s.channels[1] == std::vector<double>{2.0, -4.0, 6.0});
}

TEST_CASE("read_csv: CRLF, BOM and timestamp column") {
  CsvOptions opt;
  opt.timestamp_column = true;
  const Series s = from_csv("\xEF\xBB\xBFtime,x\r\n2020-01-01,1\r\n2020-01-02,2\r\n", opt);
  CHECK(s.names == std::vector<std::string>{"x"});
  CHECK(s.channels[0] == std::vector<double>{1.0, 2.0});
}

TEST_CASE("read_csv: NaN policies") {
  const std::string text = "a,b\n1,2\n3,nan\n5,6\n";
  const std::string msg = message_of([&] { from_csv(text); });
  CHECK(msg.find("mem.csv:3") != std::string::npos);
  CHECK(msg.find("'b'") != std::string::npos);

  CsvOptions ff;
  ff.nan_policy = NanPolicy::ForwardFill;
  CHECK(from_csv(text, ff).channels[1] == std::vector<double>{2.0, 2.0, 6.0});

  CsvOptions drop;
  drop.nan_policy = NanPolicy::DropRow;
  const Series d = from_csv(text, drop);
  CHECK(d.channels[0] == std::vector<double>{1.0, 5.0});
  CHECK(d.channels[1] == std::vector<double>{2.0, 6.0});

  CHECK_THROWS_AS(from_csv("a\nnan\n1\n", ff), Error);
}

TEST_CASE("read_csv: malformed input") {
  CHECK(code_of([] { from_csv(""); }) == ErrorCode::Parse);
  CHECK(code_of([] { from_csv("a,b\n"); }) == ErrorCode::Parse);
  const std::string ragged = message_of([] { from_csv("a,b\n1,2\n3\n"); });
  CHECK(ragged.find("mem.csv:3") != std::string::npos);
  const std::string word = message_of([] { from_csv("a,b\n1,2\n3,x7\n"); });
  CHECK(word.find("mem.csv:3") != std::string::npos);
  CHECK(word.find("column 2") != std::string::npos);
  CHECK(code_of([] { load_csv("/nonexistent/file.csv"); }) == ErrorCode::Io);
}

TEST_CASE("CSV round trip is bit exact") {
  Series s;
  s.names = {"u", "v", "w"};
  for (int c = 0; c < 3; ++c) {
    auto x = test::random_series(10000, static_cast<std::uint64_t>(c), -1e6, 1e6);
    for (std::size_t i = 0; i < x.size(); i += 7) x[i] *= 1e-9;
    s.channels.push_back(x);
  }
  s.set_splits({});
  const auto path = std::filesystem::temp_directory_path() / "ude_roundtrip.csv";
  save_csv(path, s);
  const Series back = load_csv(path);
  std::filesystem::remove(path);
  CHECK(back.names == s.names);
  CHECK(back.channels == s.channels);
}

TEST_CASE("zscore") {
  Series s = gen_random_walk({}, 1000, 2);
  const ZScoreStats st = zscore_fit(s);
  REQUIRE(st.channels.size() == 1);
  // Oracle: population stats over the first 700 samples.
  double mean = 0.0, var = 0.0;
  for (std::size_t t = 0; t < 700; ++t) mean += s.channels[0][t] / 700.0;
  for (std::size_t t = 0; t < 700; ++t) var += (s.channels[0][t] - mean) * (s.channels[0][t] - mean) / 700.0;
  CHECK(st.channels[0].mean == doctest::Approx(mean).epsilon(1e-12));
  CHECK(st.channels[0].std == doctest::Approx(std::sqrt(var)).epsilon(1e-12));

  const Series z = zscore_apply(s, st);
  const Series back = zscore_inverse(z, st);
  for (std::size_t t = 0; t < 1000; ++t) CHECK(std::abs(back.channels[0][t] - s.channels[0][t]) < 1e-12 * (1.0 + std::abs(s.channels[0][t])));

  // Already standardized training data is left in place.
  const Series zz = zscore_apply(z, zscore_fit(z));
  const auto st2 = zscore_fit(z);
  CHECK(std::abs(st2.channels[0].mean) < 1e-12);
  CHECK(std::abs(st2.channels[0].std - 1.0) < 1e-12);
  for (std::size_t t = 0; t < 1000; ++t) CHECK(std::abs(zz.channels[0][t] - z.channels[0][t]) < 1e-11);

  // Test-split values do not affect the statistics.
  Series altered = s;
  for (std::size_t t = 700; t < 1000; ++t) altered.channels[0][t] = 1e9;
  CHECK(zscore_fit(altered).channels[0].mean == st.channels[0].mean);
}

TEST_CASE("zscore of a constant channel") {
  Series s;
  s.names = {"c"};
  s.channels = {std::vector<double>(100, 4.0)};
  s.set_splits({});
  const auto st = zscore_fit(s);
  CHECK(st.channels[0].zero_variance);
  CHECK(st.channels[0].std == 1.0);
  const Series z = zscore_apply(s, st);
  for (double v : z.channels[0]) CHECK(v == 0.0);
  CHECK(code_of([&] { zscore_fit(s, VariancePolicy::Strict); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("make_windows counting") {
  const Series s = gen_random_walk({}, 1000, 0);
  const WindowSpec spec{512, 96, 1};
  const auto all = make_windows(s, spec);
  CHECK(all.size() == 393);
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i].start == i);

  const Series exact = gen_random_walk({}, 608, 0);
  CHECK(make_windows(exact, spec).size() == 1);
  CHECK(make_windows(s, WindowSpec{512, 96, 1000}).size() == 1);
  CHECK(make_windows(s, WindowSpec{10, 5, 3}).size() == (1000 - 15) / 3 + 1);
  CHECK(code_of([&] { make_windows(s, WindowSpec{900, 101, 1}); }) == ErrorCode::SeriesTooShort);
  CHECK_THROWS_AS(make_windows(s, WindowSpec{0, 1, 1}), Error);
}

TEST_CASE("windows stay inside their split") {
  const Series s = gen_lorenz({}, 2000, 0);
  const WindowSpec spec{64, 16, 5};
  for (Split sp : {Split::Train, Split::Val, Split::Test}) {
    const auto [b, e] = split_range(s, sp);
    const auto ws = make_windows(s, spec, sp);
    CHECK(!ws.empty());
    for (const auto& w : ws) {
      CHECK(w.start >= b);
      CHECK(w.start + spec.lookback + spec.horizon <= e);
      const auto in = window_input(s, w, spec);
      const auto tg = window_target(s, w, spec);
      CHECK(in.size() == 64);
      CHECK(tg.size() == 16);
      CHECK(in.data() + in.size() == tg.data());
      CHECK(tg.front() == s.channels[w.channel][w.start + 64]);
    }
  }
  for (const auto& w : make_windows(s, spec, Split::Test)) CHECK(w.start >= s.val_end);
  CHECK(make_windows(s, spec, Split::Train).size() == 3 * ((1400 - 80) / 5 + 1));
}

TEST_CASE("Series::validate") {
  Series s = gen_random_walk({}, 10, 0);
  CHECK_NOTHROW(s.validate());
  s.channels[0][4] = NAN;
  CHECK(code_of([&] { s.validate(); }) == ErrorCode::NonFinite);
  Series r = gen_lorenz({}, 10, 0);
  r.channels[1].pop_back();
  CHECK(code_of([&] { r.validate(); }) == ErrorCode::DimensionMismatch);
}
