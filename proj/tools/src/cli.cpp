#include "ude_cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "ude/ude.hpp"

namespace ude::cli {

namespace fs = std::filesystem;

namespace {

struct CsvFlags {
  bool timestamp = false;
  std::string nan_policy = "reject";

  void add(CLI::App* cmd) {
    cmd->add_flag("--timestamp", timestamp, "Ignore the first CSV column");
    cmd->add_option("--nan-policy", nan_policy, "Missing values: reject | ffill | drop")
        ->check(CLI::IsMember({"reject", "ffill", "drop"}))
        ->capture_default_str();
  }

  CsvOptions options() const {
    CsvOptions o;
    o.timestamp_column = timestamp;
    o.nan_policy = nan_policy == "ffill"  ? NanPolicy::ForwardFill
                   : nan_policy == "drop" ? NanPolicy::DropRow
                                          : NanPolicy::Reject;
    return o;
  }
};

struct DelayFlags {
  std::optional<std::size_t> m, tau, p, q;

  void add(CLI::App* cmd) {
    cmd->add_option("--m", m, "Embedding dimension");
    cmd->add_option("--tau", tau, "Delay step in samples");
    cmd->add_option("--p", p, "Patch rows");
    cmd->add_option("--q", q, "Patch columns");
  }

  DelayConfig apply(DelayConfig d) const {
    if (m) d.m = *m;
    if (tau) d.tau = *tau;
    if (p) d.p = *p;
    if (q) d.q = *q;
    d.validate();
    return d;
  }
};

struct TrainFlags {
  std::optional<std::size_t> epochs, batch_size, stride, patience;
  std::optional<double> lr, fraction;
  bool verbose = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--lr", lr, "Peak learning rate");
    cmd->add_option("--batch-size", batch_size, "Windows per optimizer step");
    cmd->add_option("--stride", stride, "Sliding-window stride");
    cmd->add_option("--patience", patience, "Early-stopping patience in epochs, 0 disables");
    cmd->add_option("--fraction", fraction, "Fraction of training windows used, in [0, 1]");
    cmd->add_flag("--verbose", verbose, "Print per-epoch progress");
  }

  TrainConfig apply(TrainConfig t) const {
    if (epochs) t.epochs = *epochs;
    if (batch_size) t.batch_size = *batch_size;
    if (stride) t.window_stride = *stride;
    if (patience) t.patience = *patience;
    if (lr) t.lr = *lr;
    if (fraction) t.data_fraction = *fraction;
    t.verbose = verbose;
    return t;
  }
};

struct Flags {
  std::uint64_t seed = 0;
  std::string config;

  // generate
  std::string kind;
  std::size_t length = 0;
  std::vector<double> periods{50.0}, amplitudes{1.0};
  double noise = 0.0, step_std = 1.0, rate = 0.05, pulse = 1.0, dt = 0.01, jitter = 0.0;
  std::size_t burn_in = 0;

  // shared
  std::vector<std::string> inputs;
  std::string in, out, model, channel, report, audit, flagged, split = "test";
  CsvFlags csv;
  DelayFlags delay;
  TrainFlags train;
  std::optional<std::size_t> lookback, horizon, start;
  std::size_t stride = 1;

  // forecast / aggregate
  std::vector<std::string> channels, aggregate;
  std::string target;
  std::optional<std::size_t> topk, bins;

  // tda / koopman / attn
  std::string metric = "h1";
  std::size_t clusters = 3, max_tokens = 0, step = 1;
  bool rows = false;
  double order = 2.0, n_std = 2.0;
};

[[noreturn]] void user_error(const std::string& message) {
  fail(ErrorCode::InvalidArgument, message);
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path() && !fs::exists(path.parent_path())) {
    fail(ErrorCode::Io, "output directory '" + path.parent_path().string() + "' does not exist");
  }
  std::ofstream o(path, std::ios::binary);
  if (!o) fail(ErrorCode::Io, "cannot write '" + path.string() + "'");
  return o;
}

void close_output(std::ofstream& o, const fs::path& path) {
  o.close();
  if (!o) fail(ErrorCode::Io, "failed writing '" + path.string() + "'");
}

void guard_inputs(const fs::path& out, const std::vector<std::string>& inputs) {
  for (const auto& in : inputs) {
    std::error_code ec;
    if (fs::exists(out) && fs::equivalent(out, in, ec)) {
      user_error("output '" + out.string() + "' would overwrite input '" + in + "'");
    }
  }
}

void write_matrix(const fs::path& path, const Matrix& m) {
  auto o = open_output(path);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) o << ',';
      o << format_double(m(r, c));
    }
    o << '\n';
  }
  close_output(o, path);
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    fail(ErrorCode::Io, "cannot create directory '" + dir.string() + "'");
  }
}

PipelineConfig base_config(const Flags& f) {
  return f.config.empty() ? PipelineConfig{} : load_config(f.config);
}

std::size_t window_start(const Series& s, std::size_t lookback,
                         const std::optional<std::size_t>& start) {
  if (s.length() < lookback) {
    fail(ErrorCode::SeriesTooShort, "series of length " + std::to_string(s.length()) +
                                        " is shorter than lookback " + std::to_string(lookback));
  }
  const std::size_t last = s.length() - lookback;
  if (!start) return last;
  if (*start > last) {
    fail(ErrorCode::IndexOutOfRange, "--start " + std::to_string(*start) +
                                         " leaves fewer than " + std::to_string(lookback) +
                                         " samples");
  }
  return *start;
}

// --- commands --------------------------------------------------------------

int cmd_generate(const Flags& f, std::ostream& out) {
  Series s;
  if (f.kind == "periodic") {
    PeriodicParams p;
    p.periods = f.periods;
    p.amplitudes = f.amplitudes;
    p.phases.assign(f.periods.size(), 0.0);
    p.noise = f.noise;
    s = gen_periodic(p, f.length, f.seed);
  } else if (f.kind == "random_walk") {
    RandomWalkParams p;
    p.step_std = f.step_std;
    s = gen_random_walk(p, f.length, f.seed);
  } else if (f.kind == "lorenz") {
    LorenzParams p;
    p.dt = f.dt;
    p.burn_in = f.burn_in;
    p.jitter = f.jitter;
    s = gen_lorenz(p, f.length, f.seed);
  } else {
    SparsePulseParams p;
    p.rate = f.rate;
    p.amplitude = f.pulse;
    p.noise = f.noise;
    s = gen_sparse_pulse(p, f.length, f.seed);
  }
  save_csv(f.out, s);
  out << "wrote " << f.out << " (" << s.channel_count() << " channels, " << s.length()
      << " rows)\n";
  return kExitOk;
}

int cmd_embed(const Flags& f, std::ostream& out) {
  const PipelineConfig cfg = base_config(f);
  const DelayConfig d = f.delay.apply(cfg.model.delay);
  const Series s = load_csv(f.in, f.csv.options());
  const std::size_t c = s.channel_index(f.channel);
  const HankelMatrix h = build_hankel(s.channels[c], d, c);
  const PatchGrid grid = partition_patches(h, d);

  const fs::path dir(f.out);
  make_dir(dir);
  auto manifest = open_output(dir / "manifest.csv");
  manifest << "j,u,v,row_start,col_start,file\n";
  for (std::size_t j = 1; j <= grid.patch_count(); ++j) {
    const auto [u, v] = patch_coords(j, grid.V);
    const std::string name = "patch_" + std::to_string(j) + ".csv";
    write_matrix(dir / name, grid.patches[j - 1]);
    manifest << j << ',' << u << ',' << v << ',' << (u - 1) * d.p + 1 << ','
             << (v - 1) * d.q + 1 << ',' << name << '\n';
  }
  close_output(manifest, dir / "manifest.csv");

  auto meta = open_output(dir / "grid.csv");
  meta << "key,value\nchannel," << s.names[c] << "\nT," << s.length() << "\nm," << d.m
       << "\ntau," << d.tau << "\np," << d.p << "\nq," << d.q << "\nL," << h.rows() << "\nU,"
       << grid.U << "\nV," << grid.V << "\npatches," << grid.patch_count() << "\nleftover_rows,"
       << grid.leftover_rows << "\nleftover_cols," << grid.leftover_cols << '\n';
  close_output(meta, dir / "grid.csv");
  out << "wrote " << grid.patch_count() << " patches (" << grid.U << " x " << grid.V << ") to "
      << dir.string() << '\n';
  return kExitOk;
}

void emit_report(const Flags& f, const TrainReport& report, std::ostream& out) {
  if (!f.report.empty()) {
    auto o = open_output(f.report);
    write_report_csv(o, report);
    close_output(o, f.report);
  }
  out << report_summary(report);
}

int cmd_train(const Flags& f, const CLI::App& app, std::ostream& out) {
  PipelineConfig cfg = base_config(f);
  ModelConfig mc = cfg.model;
  mc.delay = f.delay.apply(mc.delay);
  if (f.lookback) mc.lookback = *f.lookback;
  if (f.horizon) mc.encoder.horizon = *f.horizon;
  TrainConfig tc = f.train.apply(cfg.train);
  if (app.get_option("--seed")->count() > 0) {
    mc.encoder.seed = f.seed;
    tc.seed = f.seed;
  }
  mc.validate();
  tc.validate();
  guard_inputs(f.out, f.inputs);

  std::vector<Series> corpus;
  for (const auto& path : f.inputs) corpus.push_back(load_csv(path, f.csv.options()));
  EncoderModel model(mc);
  const TrainReport report = train(model, corpus, tc);
  save_checkpoint(f.out, model);
  emit_report(f, report, out);
  return kExitOk;
}

int cmd_finetune(const Flags& f, const CLI::App& app, std::ostream& out) {
  TrainConfig tc = f.config.empty() ? TrainConfig::finetune() : load_config(f.config).train;
  tc = f.train.apply(tc);
  tc.freeze_encoder = true;
  if (app.get_option("--seed")->count() > 0) tc.seed = f.seed;
  tc.validate();
  guard_inputs(f.out, {f.in, f.model});

  EncoderModel model = load_checkpoint(f.model);
  const Series target = load_csv(f.in, f.csv.options());
  const TrainReport report = finetune(model, target, tc);
  save_checkpoint(f.out, model);
  emit_report(f, report, out);
  return kExitOk;
}

struct AggregateRequest {
  std::string target;
  std::optional<std::size_t> topk;
};

AggregateRequest parse_aggregate(const std::vector<std::string>& tokens) {
  AggregateRequest r;
  for (const auto& t : tokens) {
    const auto eq = t.find('=');
    const std::string key = eq == std::string::npos ? "" : t.substr(0, eq);
    const std::string value = eq == std::string::npos ? "" : t.substr(eq + 1);
    if (key == "target" && !value.empty()) {
      r.target = value;
    } else if (key == "topk" && !value.empty() &&
               value.find_first_not_of("0123456789") == std::string::npos) {
      r.topk = std::stoul(value);
    } else {
      user_error("--aggregate expects target=<name> [topk=<k>], got '" + t + "'");
    }
  }
  if (r.target.empty()) user_error("--aggregate needs target=<name>");
  return r;
}

MIConfig mi_for(const PipelineConfig& cfg, std::optional<std::size_t> topk,
                std::optional<std::size_t> bins) {
  const std::size_t n_bins = bins.value_or(cfg.mi.n_bins());
  if (!topk || *topk == cfg.mi.top_k()) {
    return MIConfig(n_bins, cfg.mi.top_k(), cfg.mi.w_self(), cfg.mi.w_neighbor());
  }
  return MIConfig::with_top_k(*topk, cfg.mi.w_self(), n_bins);
}

int cmd_forecast(const Flags& f, std::ostream& out) {
  std::optional<AggregateRequest> agg;
  if (!f.aggregate.empty()) agg = parse_aggregate(f.aggregate);
  guard_inputs(f.out, {f.in, f.model});
  if (!f.audit.empty()) guard_inputs(f.audit, {f.in, f.model});
  const PipelineConfig cfg = base_config(f);

  const EncoderModel model = load_checkpoint(f.model);
  const Series s = load_csv(f.in, f.csv.options());
  const std::size_t lookback = model.config().lookback;
  const std::size_t start = window_start(s, lookback, f.start);
  const ZScoreStats stats = zscore_fit(s);
  const Series z = zscore_apply(s, stats);

  std::vector<std::size_t> chosen;
  for (const auto& name : f.channels) chosen.push_back(s.channel_index(name));
  if (chosen.empty()) {
    for (std::size_t c = 0; c < s.channel_count(); ++c) chosen.push_back(c);
  }

  std::vector<std::optional<Vector>> cache(s.channel_count());
  auto raw_forecast = [&](std::size_t c) -> const Vector& {
    if (!cache[c]) {
      const std::span<const double> x(z.channels[c]);
      Vector y = model.predict(x.subspan(start, lookback));
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        y(i) = zscore_inverse_value(y(i), stats.channels[c]);
      }
      cache[c] = std::move(y);
    }
    return *cache[c];
  };

  std::optional<std::size_t> agg_target;
  if (agg) {
    agg_target = s.channel_index(agg->target);
    const MIConfig mi = mi_for(cfg, agg->topk, std::nullopt);
    const NeighborSelection sel = select_neighbors(s, *agg_target, mi);
    std::vector<Vector> nf;
    for (std::size_t c : sel.neighbors) nf.push_back(raw_forecast(c));
    const BlendResult b = blend(raw_forecast(*agg_target), nf, *agg_target, sel.neighbors,
                                stats, mi);
    std::ostringstream a;
    a << "channel,role,nmi,weight\n"
      << s.names[*agg_target] << ",target,1," << format_double(b.target_weight) << '\n';
    for (std::size_t i = 0; i < sel.neighbors.size(); ++i) {
      a << s.names[sel.neighbors[i]] << ",neighbor," << format_double(sel.scores[i]) << ','
        << format_double(b.neighbor_weights[i]) << '\n';
    }
    if (f.audit.empty()) {
      out << a.str();
    } else {
      auto o = open_output(f.audit);
      o << a.str();
      close_output(o, f.audit);
    }
    raw_forecast(*agg_target);
    cache[*agg_target] = b.forecast;
  }

  auto o = open_output(f.out);
  o << "step";
  for (std::size_t c : chosen) o << ',' << s.names[c];
  o << '\n';
  const auto h = static_cast<Eigen::Index>(model.config().horizon());
  for (Eigen::Index i = 0; i < h; ++i) {
    o << start + lookback + static_cast<std::size_t>(i);
    for (std::size_t c : chosen) o << ',' << format_double(raw_forecast(c)(i));
    o << '\n';
  }
  close_output(o, f.out);
  return kExitOk;
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "all") return Split::All;
  return Split::Test;
}

int cmd_evaluate(const Flags& f, std::ostream& out) {
  if (!f.out.empty()) guard_inputs(f.out, {f.in, f.model});
  const EncoderModel model = load_checkpoint(f.model);
  const std::size_t full = model.config().horizon();
  const std::size_t h = f.horizon.value_or(full);
  if (h == 0 || h > full) {
    user_error("--horizon " + std::to_string(h) + " must be in [1, " + std::to_string(full) +
               "] for this model");
  }
  const Series s = load_csv(f.in, f.csv.options());
  s.validate();
  const Series z = zscore_apply(s, zscore_fit(s));
  WindowSpec spec{model.config().lookback, h, f.stride};
  const Metrics m = evaluate_predictor(
      z, spec,
      [&](std::span<const double> input, const Window&) -> Vector {
        return model.predict(input).head(static_cast<Eigen::Index>(h));
      },
      parse_split(f.split));

  std::ostringstream csv;
  csv << "channel,mse,mae\n";
  for (std::size_t c = 0; c < s.channel_count(); ++c) {
    csv << s.names[c] << ',' << format_double(m.mse[c]) << ',' << format_double(m.mae[c])
        << '\n';
  }
  csv << "mean," << format_double(m.mse_mean) << ',' << format_double(m.mae_mean) << '\n';
  if (f.out.empty()) {
    out << csv.str();
  } else {
    auto o = open_output(f.out);
    o << csv.str();
    close_output(o, f.out);
    out << "windows: " << m.windows << "\nmse: " << format_double(m.mse_mean)
        << "\nmae: " << format_double(m.mae_mean) << '\n';
  }
  return kExitOk;
}

int cmd_tda(const Flags& f, std::ostream& out) {
  const PipelineConfig cfg = base_config(f);
  const DelayConfig d = f.delay.apply(cfg.model.delay);
  TokenDistanceParams params;
  if (f.metric == "twwd") {
    params.metric = TokenMetric::Twwd;
  } else {
    params.homology_dim = f.metric == "h0" ? 0 : 1;
  }
  params.use_rows = f.rows;
  params.max_tokens = f.max_tokens;
  params.wasserstein.order = f.order;
  if (f.clusters == 0) user_error("--clusters must be >= 1");

  const Series s = load_csv(f.in, f.csv.options());
  const std::size_t c = s.channel_index(f.channel);
  const PatchGrid grid = embed_series(s.channels[c], d);
  std::size_t n = grid.patch_count();
  if (f.max_tokens > 0) n = std::min(n, f.max_tokens);
  if (f.clusters > n) {
    user_error("--clusters " + std::to_string(f.clusters) + " exceeds the " + std::to_string(n) +
               " tokens");
  }

  std::vector<PersistenceDiagram> diagrams;
  for (std::size_t j = 0; j < n; ++j) {
    diagrams.push_back(rips_persistence(patch_cloud(grid.patches[j], f.rows), params.rips));
  }
  const DistanceMatrix dm = diagram_distance_matrix(diagrams, params);
  const auto labels = cluster_tokens(dm, f.clusters);

  const fs::path dir(f.out);
  make_dir(dir);
  auto dg = open_output(dir / "diagrams.csv");
  dg << "token,dim,birth,death\n";
  for (std::size_t j = 0; j < n; ++j) {
    for (const auto& p : diagrams[j].features) {
      dg << j + 1 << ',' << p.dim << ',' << format_double(p.birth) << ','
         << format_double(p.death) << '\n';
    }
  }
  close_output(dg, dir / "diagrams.csv");
  auto dist = open_output(dir / "distances.csv");
  write_distance_csv(dist, dm);
  close_output(dist, dir / "distances.csv");
  auto cl = open_output(dir / "clusters.csv");
  cl << "token,cluster\n";
  for (std::size_t j = 0; j < n; ++j) cl << j + 1 << ',' << labels[j] << '\n';
  close_output(cl, dir / "clusters.csv");
  out << "tokens: " << n << "\nclusters: " << f.clusters << '\n';
  return kExitOk;
}

int cmd_koopman(const Flags& f, std::ostream& out) {
  const EncoderModel model = load_checkpoint(f.model);
  const Series s = load_csv(f.in, f.csv.options());
  const std::size_t c = s.channel_index(f.channel);
  const Series z = zscore_apply(s, zscore_fit(s));
  const LatentTrajectory traj = extract_latent_trajectory(z, c, model, f.stride);
  const KoopmanFit fit = fit_koopman(traj, f.step);
  const auto modes = spectrum(fit.K);

  const fs::path dir(f.out);
  make_dir(dir);
  auto tr = open_output(dir / "trajectory.csv");
  write_trajectory_csv(tr, traj);
  close_output(tr, dir / "trajectory.csv");
  write_matrix(dir / "K.csv", fit.K);
  auto sp = open_output(dir / "spectrum.csv");
  write_spectrum_csv(sp, modes);
  close_output(sp, dir / "spectrum.csv");
  auto fo = open_output(dir / "fit.csv");
  fo << "key,value\nsnapshots," << traj.size() << "\nlatent_dim," << traj.latent_dim()
     << "\nstep," << f.step << "\nresidual," << format_double(fit.residual) << "\nrank,"
     << fit.rank << "\ndiagonalizable," << (fit.diagonalizable ? 1 : 0) << "\nunderdetermined,"
     << (fit.underdetermined ? 1 : 0) << '\n';
  close_output(fo, dir / "fit.csv");
  out << "snapshots: " << traj.size() << "\nresidual: " << format_double(fit.residual)
      << "\nrank: " << fit.rank << '\n';
  return kExitOk;
}

int cmd_attn(const Flags& f, std::ostream& out) {
  guard_inputs(f.out, {f.in, f.model});
  if (!f.flagged.empty()) guard_inputs(f.flagged, {f.in, f.model});
  const EncoderModel model = load_checkpoint(f.model);
  const Series s = load_csv(f.in, f.csv.options());
  const std::size_t c = s.channel_index(f.channel);
  const std::size_t lookback = model.config().lookback;
  const std::size_t start = window_start(s, lookback, f.start);
  const Series z = zscore_apply(s, zscore_fit(s));
  const std::span<const double> x(z.channels[c]);
  const PatchGrid grid = embed_series(x.subspan(start, lookback), model.config().delay);
  const LatentSequence latent = encode(grid, model, true);
  const HighAttentionTokens hat = high_attention_tokens(latent, f.n_std);

  const auto& e = model.config().encoder;
  auto o = open_output(f.out);
  o << "token,flags,first_patch,last_patch\n";
  for (std::size_t t = 0; t < hat.histogram.size(); ++t) {
    const std::size_t first = t * e.pool_stride + 1;
    const std::size_t last = std::min(t * e.pool_stride + e.pool_kernel, grid.patch_count());
    o << t + 1 << ',' << hat.histogram[t] << ',' << first << ',' << last << '\n';
  }
  close_output(o, f.out);
  if (!f.flagged.empty()) {
    auto fl = open_output(f.flagged);
    fl << "layer,head,token\n";
    for (std::size_t l = 0; l < hat.flagged.size(); ++l) {
      for (std::size_t hd = 0; hd < hat.flagged[l].size(); ++hd) {
        for (std::size_t t : hat.flagged[l][hd]) fl << l + 1 << ',' << hd + 1 << ',' << t + 1 << '\n';
      }
    }
    close_output(fl, f.flagged);
  }
  const long top = hat.top_token();
  out << "flags: " << hat.total_flags() << "\ntop token: " << (top < 0 ? 0 : top + 1) << '\n';
  return kExitOk;
}

int cmd_aggregate(const Flags& f, std::ostream& out) {
  guard_inputs(f.out, {f.in});
  const PipelineConfig cfg = base_config(f);
  const MIConfig mi = mi_for(cfg, f.topk, f.bins);
  const Series s = load_csv(f.in, f.csv.options());
  const std::size_t target = s.channel_index(f.target);
  const NeighborSelection sel = select_neighbors(s, target, mi);

  auto o = open_output(f.out);
  o << "channel,nmi,rank,selected,weight\n";
  for (std::size_t c = 0; c < s.channel_count(); ++c) {
    const auto it = std::find(sel.neighbors.begin(), sel.neighbors.end(), c);
    const bool picked = it != sel.neighbors.end();
    const std::size_t rank = c == target ? 0 : picked ? 1 + (it - sel.neighbors.begin()) : 0;
    const double w = c == target ? mi.w_self() : picked ? mi.w_neighbor() : 0.0;
    o << s.names[c] << ',' << format_double(sel.all_scores[c]) << ',' << rank << ','
      << (c == target ? "target" : picked ? "yes" : "no") << ',' << format_double(w) << '\n';
  }
  close_output(o, f.out);
  out << "target: " << s.names[target] << "\nneighbors:";
  for (std::size_t c : sel.neighbors) out << ' ' << s.names[c];
  out << '\n';
  return kExitOk;
}

// --- parser ----------------------------------------------------------------

struct Commands {
  CLI::App *generate, *embed, *train, *finetune, *forecast, *evaluate, *tda, *koopman, *attn,
      *aggregate;
};

Commands build(CLI::App& app, Flags& f) {
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--seed", f.seed, "Seed for every stochastic component")->capture_default_str();
  app.add_option("--config", f.config, "Key-value configuration file")
      ->check(CLI::ExistingFile);

  Commands c{};
  c.generate = app.add_subcommand("generate", "Write a synthetic series to CSV");
  c.generate->add_option("--kind", f.kind, "periodic | random_walk | lorenz | sparse_pulse")
      ->required()
      ->check(CLI::IsMember({"periodic", "random_walk", "lorenz", "sparse_pulse"}));
  c.generate->add_option("--length", f.length, "Number of samples")->required();
  c.generate->add_option("--out", f.out, "Output CSV")->required();
  c.generate->add_option("--period", f.periods, "Periods in samples (periodic)");
  c.generate->add_option("--amplitude", f.amplitudes, "Amplitudes per period (periodic)");
  c.generate->add_option("--noise", f.noise, "Additive Gaussian noise std");
  c.generate->add_option("--step-std", f.step_std, "Step std (random_walk)");
  c.generate->add_option("--rate", f.rate, "Pulse probability per sample (sparse_pulse)");
  c.generate->add_option("--pulse", f.pulse, "Pulse amplitude (sparse_pulse)");
  c.generate->add_option("--dt", f.dt, "Integration step (lorenz)");
  c.generate->add_option("--burn-in", f.burn_in, "Discarded steps (lorenz)");
  c.generate->add_option("--jitter", f.jitter, "Initial-condition perturbation (lorenz)");

  c.embed = app.add_subcommand("embed", "Write the delay-patch grid of one channel");
  c.embed->add_option("--in", f.in, "Input CSV")->required()->check(CLI::ExistingFile);
  c.embed->add_option("--channel", f.channel, "Channel name")->required();
  c.embed->add_option("--out", f.out, "Output directory")->required();
  f.delay.add(c.embed);
  f.csv.add(c.embed);

  c.train = app.add_subcommand("train", "Pretrain a model on a corpus of CSV series");
  c.train->add_option("--in", f.inputs, "Input CSV, repeatable")
      ->required()
      ->check(CLI::ExistingFile);
  c.train->add_option("--out", f.out, "Output checkpoint")->required();
  c.train->add_option("--report", f.report, "Per-epoch report CSV");
  c.train->add_option("--lookback", f.lookback, "Input samples per window");
  c.train->add_option("--horizon", f.horizon, "Forecast length");
  f.delay.add(c.train);
  f.train.add(c.train);
  f.csv.add(c.train);

  c.finetune = app.add_subcommand("finetune", "Head-only adaptation of a checkpoint");
  c.finetune->add_option("--model", f.model, "Input checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  c.finetune->add_option("--in", f.in, "Target CSV")->required()->check(CLI::ExistingFile);
  c.finetune->add_option("--out", f.out, "Output checkpoint")->required();
  c.finetune->add_option("--report", f.report, "Per-epoch report CSV");
  f.train.add(c.finetune);
  f.csv.add(c.finetune);

  c.forecast = app.add_subcommand("forecast", "Forecast the window after --start");
  c.forecast->add_option("--model", f.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  c.forecast->add_option("--in", f.in, "Input CSV")->required()->check(CLI::ExistingFile);
  c.forecast->add_option("--out", f.out, "Forecast CSV")->required();
  c.forecast->add_option("--channel", f.channels, "Channels to forecast, repeatable");
  c.forecast->add_option("--start", f.start, "First input sample, default the last window");
  c.forecast->add_option("--aggregate", f.aggregate, "target=<name> [topk=<k>]")
      ->expected(1, 2);
  c.forecast->add_option("--audit", f.audit, "Neighbour audit CSV, default stdout");
  f.csv.add(c.forecast);

  c.evaluate = app.add_subcommand("evaluate", "Per-channel MSE/MAE in z-scored units");
  c.evaluate->add_option("--model", f.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  c.evaluate->add_option("--in", f.in, "Input CSV")->required()->check(CLI::ExistingFile);
  c.evaluate->add_option("--out", f.out, "Metrics CSV, default stdout");
  c.evaluate->add_option("--horizon", f.horizon, "Leading forecast steps scored");
  c.evaluate->add_option("--split", f.split, "train | val | test | all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}))
      ->capture_default_str();
  c.evaluate->add_option("--stride", f.stride, "Window stride")->capture_default_str();
  f.csv.add(c.evaluate);

  c.tda = app.add_subcommand("tda", "Persistence diagrams, token distances and clusters");
  c.tda->add_option("--in", f.in, "Input CSV")->required()->check(CLI::ExistingFile);
  c.tda->add_option("--channel", f.channel, "Channel name")->required();
  c.tda->add_option("--out", f.out, "Output directory")->required();
  c.tda->add_option("--metric", f.metric, "h0 | h1 | twwd")
      ->check(CLI::IsMember({"h0", "h1", "twwd"}))
      ->capture_default_str();
  c.tda->add_option("--order", f.order, "Wasserstein order")->capture_default_str();
  c.tda->add_option("--clusters", f.clusters, "Number of clusters")->capture_default_str();
  c.tda->add_option("--max-tokens", f.max_tokens, "Leading tokens analysed, 0 for all");
  c.tda->add_flag("--rows", f.rows, "Use patch rows as points");
  f.delay.add(c.tda);
  f.csv.add(c.tda);

  c.koopman = app.add_subcommand("koopman", "Fit a linear map to the latent trajectory");
  c.koopman->add_option("--model", f.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  c.koopman->add_option("--in", f.in, "Input CSV")->required()->check(CLI::ExistingFile);
  c.koopman->add_option("--channel", f.channel, "Channel name")->required();
  c.koopman->add_option("--out", f.out, "Output directory")->required();
  c.koopman->add_option("--stride", f.stride, "Window stride")->capture_default_str();
  c.koopman->add_option("--step", f.step, "Snapshot offset of the fitted map")
      ->capture_default_str();
  f.csv.add(c.koopman);

  c.attn = app.add_subcommand("attn", "High-attention token histogram for one window");
  c.attn->add_option("--model", f.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  c.attn->add_option("--in", f.in, "Input CSV")->required()->check(CLI::ExistingFile);
  c.attn->add_option("--channel", f.channel, "Channel name")->required();
  c.attn->add_option("--out", f.out, "Histogram CSV")->required();
  c.attn->add_option("--flagged", f.flagged, "Per-head flagged tokens CSV");
  c.attn->add_option("--start", f.start, "First input sample, default the last window");
  c.attn->add_option("--n-std", f.n_std, "Threshold in standard deviations")
      ->capture_default_str();
  f.csv.add(c.attn);

  c.aggregate = app.add_subcommand("aggregate", "Rank channels by NMI with a target");
  c.aggregate->add_option("--in", f.in, "Input CSV")->required()->check(CLI::ExistingFile);
  c.aggregate->add_option("--target", f.target, "Target channel name")->required();
  c.aggregate->add_option("--out", f.out, "Ranking CSV")->required();
  c.aggregate->add_option("--topk", f.topk, "Neighbours kept");
  c.aggregate->add_option("--bins", f.bins, "Histogram bins");
  f.csv.add(c.aggregate);
  return c;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

int dispatch(const Commands& c, const CLI::App& app, const Flags& f, std::ostream& out) {
  if (c.generate->parsed()) return cmd_generate(f, out);
  if (c.embed->parsed()) return cmd_embed(f, out);
  if (c.train->parsed()) return cmd_train(f, app, out);
  if (c.finetune->parsed()) return cmd_finetune(f, app, out);
  if (c.forecast->parsed()) return cmd_forecast(f, out);
  if (c.evaluate->parsed()) return cmd_evaluate(f, out);
  if (c.tda->parsed()) return cmd_tda(f, out);
  if (c.koopman->parsed()) return cmd_koopman(f, out);
  if (c.attn->parsed()) return cmd_attn(f, out);
  return cmd_aggregate(f, out);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app("Delay-embedding forecasting pipeline", "ude");
  Flags f;
  Commands c{};
  try {
    c = build(app, f);
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: usage: " << one_line(e.what()) << '\n';
    const auto selected = app.get_subcommands();
    err << (selected.empty() ? app.help() : selected.back()->help());
    return kExitUser;
  }
  try {
    return dispatch(c, app, f, out);
  } catch (const Error& e) {
    err << "error: " << to_string(e.code()) << ": " << one_line(e.what()) << '\n';
    return e.internal() ? kExitInternal : kExitUser;
  } catch (const fs::filesystem_error& e) {
    err << "error: io-error: " << one_line(e.what()) << '\n';
    return kExitUser;
  } catch (const std::exception& e) {
    err << "error: internal: " << one_line(e.what()) << '\n';
    return kExitInternal;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"ude"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace ude::cli
