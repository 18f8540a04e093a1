#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "ude/ude.hpp"
#include "ude_cli/cli.hpp"

namespace fs = std::filesystem;
using ude::cli::run;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

Result ude_run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Result r;
  r.code = run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("ude_cli_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::vector<double>> read_numbers(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

std::map<std::string, std::vector<std::string>> csv_columns(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string h;
    while (std::getline(ss, h, ',')) header.push_back(h);
  }
  std::map<std::string, std::vector<std::string>> cols;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    for (std::size_t i = 0; std::getline(ss, cell, ','); ++i) cols[header.at(i)].push_back(cell);
  }
  return cols;
}

const std::vector<std::string> kTrainModel = {"--lookback", "48", "--horizon", "6", "--m", "8",
                                              "--p", "4", "--q", "4", "--epochs", "2",
                                              "--stride", "8", "--batch-size", "16"};

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("help enumerates every flag of every command") {
  const std::vector<std::string> csv = {"--timestamp", "--nan-policy"};
  const std::vector<std::string> delay = {"--m", "--tau", "--p", "--q"};
  const std::vector<std::string> train = {"--epochs",   "--lr",       "--batch-size", "--stride",
                                          "--patience", "--fraction", "--verbose"};
  std::map<std::string, std::vector<std::string>> flags = {
      {"generate",
       {"--kind", "--length", "--out", "--period", "--amplitude", "--noise", "--step-std",
        "--rate", "--pulse", "--dt", "--burn-in", "--jitter"}},
      {"embed", concat(concat({"--in", "--channel", "--out"}, delay), csv)},
      {"train",
       concat(concat(concat({"--in", "--out", "--report", "--lookback", "--horizon"}, delay),
                     train),
              csv)},
      {"finetune", concat(concat({"--model", "--in", "--out", "--report"}, train), csv)},
      {"forecast",
       concat({"--model", "--in", "--out", "--channel", "--start", "--aggregate", "--audit"},
              csv)},
      {"evaluate", concat({"--model", "--in", "--out", "--horizon", "--split", "--stride"}, csv)},
      {"tda", concat(concat({"--in", "--channel", "--out", "--metric", "--order", "--clusters",
                             "--max-tokens", "--rows"},
                            delay),
                     csv)},
      {"koopman", concat({"--model", "--in", "--channel", "--out", "--stride", "--step"}, csv)},
      {"attn", concat({"--model", "--in", "--channel", "--out", "--flagged", "--start", "--n-std"},
                      csv)},
      {"aggregate", concat({"--in", "--target", "--out", "--topk", "--bins"}, csv)},
  };
  const Result top = ude_run({"--help"});
  CHECK(top.code == 0);
  CHECK(top.out.find("--seed") != std::string::npos);
  CHECK(top.out.find("--config") != std::string::npos);
  for (const auto& [cmd, list] : flags) {
    CAPTURE(cmd);
    CHECK(top.out.find(cmd) != std::string::npos);
    const Result r = ude_run({cmd, "--help"});
    CHECK(r.code == 0);
    for (const auto& flag : list) {
      CAPTURE(flag);
      CHECK(r.out.find(flag + " ") != std::string::npos);
    }
  }
}

TEST_CASE("generate is deterministic per seed") {
  TempDir d("gen");
  REQUIRE(ude_run({"--seed", "7", "generate", "--kind", "lorenz", "--length", "5000", "--out",
                   d / "a.csv"})
              .code == 0);
  REQUIRE(ude_run({"generate", "--kind", "lorenz", "--length", "5000", "--out", d / "b.csv",
                   "--seed", "7"})
              .code == 0);
  CHECK(slurp(d / "a.csv") == slurp(d / "b.csv"));
  const ude::Series s = ude::load_csv(d / "a.csv");
  CHECK(s.channel_count() == 3);
  CHECK(s.length() == 5000);

  for (const std::string kind : {"periodic", "random_walk", "sparse_pulse"}) {
    CAPTURE(kind);
    auto args = [&](const std::string& seed, const std::string& out) {
      return std::vector<std::string>{"--seed", seed,     "generate", "--kind", kind,
                                      "--length", "400", "--noise",  "0.1",    "--out", out};
    };
    const bool walk = kind == "random_walk";
    auto a = args("1", d / "p1.csv"), b = args("1", d / "p2.csv"), c = args("2", d / "p3.csv");
    if (walk) {
      for (auto* v : {&a, &b, &c}) v->erase(v->begin() + 7, v->begin() + 9);
    }
    REQUIRE(ude_run(a).code == 0);
    REQUIRE(ude_run(b).code == 0);
    REQUIRE(ude_run(c).code == 0);
    CHECK(slurp(d / "p1.csv") == slurp(d / "p2.csv"));
    CHECK(slurp(d / "p1.csv") != slurp(d / "p3.csv"));
  }
}

TEST_CASE("embed writes U*V patches matching the Hankel layout") {
  TempDir d("embed");
  REQUIRE(ude_run({"--seed", "7", "generate", "--kind", "lorenz", "--length", "500", "--out",
                   d / "l.csv"})
              .code == 0);
  const std::size_t T = 500, m = 9, tau = 2, p = 3, q = 4;
  const Result r = ude_run({"embed", "--in", d / "l.csv", "--channel", "y", "--m", "9", "--tau",
                            "2", "--p", "3", "--q", "4", "--out", d / "patches"});
  REQUIRE(r.code == 0);

  const std::size_t L = T - (m - 1) * tau, U = L / p, V = m / q;
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(d.path / "patches")) {
    files += e.path().filename().string().starts_with("patch_");
  }
  CHECK(files == U * V);
  const auto manifest = csv_columns(slurp(d.path / "patches" / "manifest.csv"));
  CHECK(manifest.at("j").size() == U * V);

  const ude::Series s = ude::load_csv(d / "l.csv");
  const auto& x = s.channels[1];
  for (std::size_t j : {std::size_t{1}, std::size_t{2}, std::size_t{7}, U * V}) {
    const std::size_t u = (j - 1) / V + 1, v = (j - 1) % V + 1;
    const auto patch = read_numbers(d.path / "patches" / ("patch_" + std::to_string(j) + ".csv"));
    REQUIRE(patch.size() == p);
    for (std::size_t a = 0; a < p; ++a) {
      REQUIRE(patch[a].size() == q);
      for (std::size_t b = 0; b < q; ++b) {
        const std::size_t row = (u - 1) * p + a, col = (v - 1) * q + b;
        CHECK(patch[a][b] == x[row + col * tau]);
      }
    }
  }
  const ude::DelayConfig cfg{m, tau, p, q};
  CHECK(ude::embed_series(x, cfg).patch_count() == files);
}

TEST_CASE("exit codes and single-line errors") {
  TempDir d("codes");
  CHECK(ude_run({}).code == 1);
  CHECK(ude_run({"frobnicate"}).code == 1);

  const Result unknown =
      ude_run({"generate", "--kind", "lorenz", "--length", "10", "--out", d / "x.csv", "--bogus"});
  CHECK(unknown.code == 1);
  CHECK(unknown.err.starts_with("error: usage: "));
  CHECK(unknown.err.find("Usage:") != std::string::npos);
  CHECK_FALSE(fs::exists(d / "x.csv"));

  CHECK(ude_run({"generate", "--kind", "sine", "--length", "10", "--out", d / "x.csv"}).code == 1);
  CHECK(ude_run({"embed", "--in", d / "missing.csv", "--channel", "x", "--out", d / "p"}).code ==
        1);

  std::ofstream(d.path / "bad.csv") << "a,b\n1,2\n3,oops\n";
  const Result bad = ude_run({"aggregate", "--in", d / "bad.csv", "--target", "a", "--out",
                              d / "o.csv", "--topk", "1"});
  CHECK(bad.code == 1);
  CHECK(bad.err.starts_with("error: parse-error: "));
  CHECK(bad.err.find("bad.csv:3") != std::string::npos);
  CHECK(std::count(bad.err.begin(), bad.err.end(), '\n') == 1);

  std::ofstream(d.path / "junk.ckpt") << "not a checkpoint";
  std::ofstream(d.path / "ok.csv") << "a\n1\n2\n3\n";
  const Result ck = ude_run({"evaluate", "--model", d / "junk.ckpt", "--in", d / "ok.csv"});
  CHECK(ck.code == 1);
  CHECK(ck.err.starts_with("error: "));

  const Result ok = ude_run({"generate", "--kind", "periodic", "--length", "10", "--out",
                             d / "x.csv"});
  CHECK(ok.code == 0);
  CHECK(ok.err.empty());
}

TEST_CASE("train, finetune, evaluate and forecast round trip") {
  TempDir d("pipeline");
  REQUIRE(ude_run({"--seed", "4", "generate", "--kind", "periodic", "--length", "1200",
                   "--period", "24", "--noise", "0.05", "--out", d / "p.csv"})
              .code == 0);
  REQUIRE(ude_run({"--seed", "5", "generate", "--kind", "lorenz", "--length", "1200", "--out",
                   d / "l.csv"})
              .code == 0);

  SUBCASE("training is bit-reproducible under --seed") {
    auto train = [&](const std::string& seed, const std::string& tag) {
      return ude_run(concat({"--seed", seed, "train", "--in", d / "p.csv", "--in", d / "l.csv",
                             "--out", d / (tag + ".ckpt"), "--report", d / (tag + ".csv")},
                            kTrainModel));
    };
    REQUIRE(train("9", "a").code == 0);
    REQUIRE(train("9", "b").code == 0);
    REQUIRE(train("10", "c").code == 0);
    CHECK(slurp(d / "a.ckpt") == slurp(d / "b.ckpt"));
    CHECK(slurp(d / "a.csv") == slurp(d / "b.csv"));
    CHECK(slurp(d / "a.ckpt") != slurp(d / "c.ckpt"));
  }

  SUBCASE("commands leave their inputs untouched and finetune freezes the encoder") {
    REQUIRE(ude_run(concat({"--seed", "1", "train", "--in", d / "p.csv", "--out", d / "m.ckpt"},
                           kTrainModel))
                .code == 0);
    const std::string data = slurp(d / "p.csv"), model = slurp(d / "m.ckpt");
    REQUIRE(ude_run({"finetune", "--model", d / "m.ckpt", "--in", d / "p.csv", "--out",
                     d / "f.ckpt", "--epochs", "2", "--stride", "8"})
                .code == 0);
    CHECK(ude_run({"finetune", "--model", d / "m.ckpt", "--in", d / "p.csv", "--out",
                   d / "m.ckpt"})
              .code == 1);
    REQUIRE(ude_run({"forecast", "--model", d / "f.ckpt", "--in", d / "p.csv", "--out",
                     d / "fc.csv"})
                .code == 0);
    REQUIRE(ude_run({"evaluate", "--model", d / "f.ckpt", "--in", d / "p.csv"}).code == 0);
    CHECK(slurp(d / "p.csv") == data);
    CHECK(slurp(d / "m.ckpt") == model);
    const auto base = ude::load_checkpoint(d / "m.ckpt");
    const auto tuned = ude::load_checkpoint(d / "f.ckpt");
    CHECK(base.hash(true, false) == tuned.hash(true, false));
  }

  SUBCASE("evaluate matches the library metrics and truncates the horizon") {
    REQUIRE(ude_run(concat({"train", "--in", d / "l.csv", "--out", d / "m.ckpt"}, kTrainModel))
                .code == 0);
    const Result full = ude_run({"evaluate", "--model", d / "m.ckpt", "--in", d / "l.csv"});
    REQUIRE(full.code == 0);
    const auto model = ude::load_checkpoint(d / "m.ckpt");
    const auto series = ude::load_csv(d / "l.csv");
    const auto ref = ude::evaluate(model, series, ude::model_window_spec(model));
    const auto cols = csv_columns(full.out);
    REQUIRE(cols.at("channel").size() == 4);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(std::stod(cols.at("mse")[c]) == doctest::Approx(ref.mse[c]).epsilon(1e-12));
      CHECK(std::stod(cols.at("mae")[c]) == doctest::Approx(ref.mae[c]).epsilon(1e-12));
    }
    CHECK(cols.at("channel")[3] == "mean");

    REQUIRE(ude_run({"evaluate", "--model", d / "m.ckpt", "--in", d / "l.csv", "--horizon", "1",
                     "--out", d / "h1.csv"})
                .code == 0);
    // Oracle for h = 1: squared error of the first forecast step only.
    const auto z = ude::zscore_apply(series, ude::zscore_fit(series));
    const ude::WindowSpec spec{48, 6, 1};
    double se = 0.0;
    std::size_t n = 0;
    for (const auto& w : ude::make_windows(z, ude::WindowSpec{48, 1, 1}, ude::Split::Test)) {
      if (w.channel != 0) continue;
      const double y = model.predict(ude::window_input(z, w, spec))(0);
      const double t = z.channels[0][w.start + 48];
      se += (y - t) * (y - t);
      ++n;
    }
    const auto h1 = csv_columns(slurp(d / "h1.csv"));
    CHECK(std::stod(h1.at("mse")[0]) == doctest::Approx(se / static_cast<double>(n)));
    CHECK(ude_run({"evaluate", "--model", d / "m.ckpt", "--in", d / "l.csv", "--horizon", "7"})
              .code == 1);
  }

  SUBCASE("forecast aggregation changes only the target column") {
    REQUIRE(ude_run(concat({"train", "--in", d / "l.csv", "--out", d / "m.ckpt"}, kTrainModel))
                .code == 0);
    REQUIRE(ude_run({"forecast", "--model", d / "m.ckpt", "--in", d / "l.csv", "--out",
                     d / "plain.csv"})
                .code == 0);
    REQUIRE(ude_run({"forecast", "--model", d / "m.ckpt", "--in", d / "l.csv", "--out",
                     d / "agg.csv", "--aggregate", "target=y", "topk=2", "--audit",
                     d / "audit.csv"})
                .code == 0);
    const auto plain = csv_columns(slurp(d / "plain.csv"));
    const auto agg = csv_columns(slurp(d / "agg.csv"));
    CHECK(plain.at("x") == agg.at("x"));
    CHECK(plain.at("z") == agg.at("z"));
    CHECK(plain.at("step") == agg.at("step"));
    CHECK(plain.at("step").front() == "1200");

    const auto audit = csv_columns(slurp(d / "audit.csv"));
    REQUIRE(audit.at("channel").size() == 3);
    CHECK(audit.at("role")[0] == "target");
    double wsum = 0.0;
    for (const auto& w : audit.at("weight")) wsum += std::stod(w);
    CHECK(wsum == doctest::Approx(1.0).epsilon(1e-15));

    // Blend oracle: w_self * y + sum_j w_j * ((a_j - mu_j) / sd_j * sd_y + mu_y).
    const auto series = ude::load_csv(d / "l.csv");
    const auto stats = ude::zscore_fit(series);
    const auto& ty = stats.channels[1];
    for (std::size_t i = 0; i < 6; ++i) {
      double expect = std::stod(audit.at("weight")[0]) * std::stod(plain.at("y")[i]);
      for (std::size_t k = 1; k < 3; ++k) {
        const std::string& name = audit.at("channel")[k];
        const auto& ns = stats.channels[series.channel_index(name)];
        const double a = std::stod(plain.at(name)[i]);
        expect += std::stod(audit.at("weight")[k]) * ((a - ns.mean) / ns.std * ty.std + ty.mean);
      }
      CHECK(std::stod(agg.at("y")[i]) == doctest::Approx(expect).epsilon(1e-12));
    }
    CHECK(ude_run({"forecast", "--model", d / "m.ckpt", "--in", d / "l.csv", "--out",
                   d / "bad.csv", "--aggregate", "topk=2"})
              .code == 1);
  }
}

TEST_CASE("analysis commands write their declared artifacts") {
  TempDir d("analysis");
  REQUIRE(ude_run({"generate", "--kind", "periodic", "--length", "800", "--period", "16",
                   "--out", d / "p.csv"})
              .code == 0);
  REQUIRE(ude_run(concat({"train", "--in", d / "p.csv", "--out", d / "m.ckpt"}, kTrainModel))
              .code == 0);

  REQUIRE(ude_run({"tda", "--in", d / "p.csv", "--channel", "periodic", "--m", "8", "--p", "4",
                   "--q", "4", "--max-tokens", "12", "--clusters", "2", "--out", d / "tda"})
              .code == 0);
  for (const char* f : {"diagrams.csv", "distances.csv", "clusters.csv"}) {
    CHECK(fs::exists(d.path / "tda" / f));
  }
  CHECK(csv_columns(slurp(d.path / "tda" / "clusters.csv")).at("token").size() == 12);

  const Result k = ude_run({"koopman", "--model", d / "m.ckpt", "--in", d / "p.csv", "--channel",
                            "periodic", "--stride", "4", "--out", d / "kp"});
  REQUIRE(k.code == 0);
  const auto K = read_numbers(d.path / "kp" / "K.csv");
  CHECK(K.size() == 64);
  CHECK(csv_columns(slurp(d.path / "kp" / "trajectory.csv")).at("step").size() ==
        (800 - 48) / 4 + 1);

  const Result a = ude_run({"attn", "--model", d / "m.ckpt", "--in", d / "p.csv", "--channel",
                            "periodic", "--out", d / "attn.csv", "--flagged", d / "fl.csv"});
  REQUIRE(a.code == 0);
  const auto hist = csv_columns(slurp(d / "attn.csv"));
  const auto model = ude::load_checkpoint(d / "m.ckpt");
  CHECK(hist.at("token").size() == model.config().token_count());
  std::size_t flags = 0;
  for (const auto& v : hist.at("flags")) flags += std::stoul(v);
  const auto fl = csv_columns(slurp(d / "fl.csv"));
  CHECK(flags == (fl.empty() ? 0 : fl.at("token").size()));

  std::ofstream(d.path / "three.csv") << "a,b,c\n";
  {
    std::ofstream o(d.path / "three.csv", std::ios::app);
    for (int i = 0; i < 100; ++i) o << i % 7 << ',' << (i % 7) * 2 << ',' << (i * 37) % 11 << '\n';
  }
  REQUIRE(ude_run({"aggregate", "--in", d / "three.csv", "--target", "a", "--topk", "1", "--out",
                   d / "rank.csv"})
              .code == 0);
  const auto rank = csv_columns(slurp(d / "rank.csv"));
  CHECK(rank.at("selected") == std::vector<std::string>{"target", "yes", "no"});
  CHECK(std::stod(rank.at("nmi")[1]) == 1.0);
}
