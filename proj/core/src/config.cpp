#include "ude/config.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "ude/error.hpp"
#include "ude/io.hpp"

namespace ude {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    fail(ErrorCode::Parse, "config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    fail(ErrorCode::Parse, "config key '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  fail(ErrorCode::Parse, "config key '" + key + "' expects a boolean, got '" + v + "'");
}

void apply_model_key(ModelConfig& m, const std::string& key, const std::string& v) {
  auto& d = m.delay;
  auto& e = m.encoder;
  if (key == "model.lookback") m.lookback = to_size(key, v);
  else if (key == "delay.m") d.m = to_size(key, v);
  else if (key == "delay.tau") d.tau = to_size(key, v);
  else if (key == "delay.p") d.p = to_size(key, v);
  else if (key == "delay.q") d.q = to_size(key, v);
  else if (key == "encoder.d_model") e.d_model = to_size(key, v);
  else if (key == "encoder.n_layers") e.n_layers = to_size(key, v);
  else if (key == "encoder.n_heads") e.n_heads = to_size(key, v);
  else if (key == "encoder.d_ff") e.d_ff = to_size(key, v);
  else if (key == "encoder.pool_kernel") e.pool_kernel = to_size(key, v);
  else if (key == "encoder.pool_stride") e.pool_stride = to_size(key, v);
  else if (key == "encoder.horizon") e.horizon = to_size(key, v);
  else if (key == "encoder.dropout") e.dropout = to_double(key, v);
  else if (key == "encoder.seed") e.seed = to_size(key, v);
  else if (key == "encoder.head") e.head = parse_head_kind(v);
  else if (key == "encoder.head_hidden") e.head_hidden = to_size(key, v);
  else fail(ErrorCode::Parse, "unknown config key '" + key + "'");
}

bool is_model_key(const std::string& key) {
  return key.starts_with("model.") || key.starts_with("delay.") || key.starts_with("encoder.");
}

ModelConfig preset(const std::string& name) {
  ModelConfig m;
  if (name == "desk") return m;
  if (name == "ude_small") {
    m.delay = DelayConfig::ude_small();
    m.encoder = EncoderConfig::ude_small();
    m.lookback = 1024;
    return m;
  }
  fail(ErrorCode::Parse, "unknown model preset '" + name + "'");
}

}  // namespace

const char* to_string(HeadKind kind) {
  return kind == HeadKind::Affine ? "affine" : "mlp_gelu";
}

HeadKind parse_head_kind(const std::string& text) {
  if (text == "affine") return HeadKind::Affine;
  if (text == "mlp_gelu") return HeadKind::MlpGelu;
  fail(ErrorCode::Parse, "head must be 'affine' or 'mlp_gelu', got '" + text + "'");
}

KeyValues parse_key_values(std::istream& in, const std::string& source) {
  KeyValues kv;
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        fail(ErrorCode::Parse, source + ":" + std::to_string(line_no) + ": malformed section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::Parse, source + ":" + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

PipelineConfig config_from_key_values(const KeyValues& kv) {
  PipelineConfig c;
  if (auto it = kv.find("model.preset"); it != kv.end()) c.model = preset(it->second);
  std::size_t n_bins = 16, top_k = 5;
  double w_self = 0.9, w_neighbor = 0.02;
  for (const auto& [key, v] : kv) {
    if (key == "model.preset") continue;
    if (is_model_key(key)) {
      apply_model_key(c.model, key, v);
      continue;
    }
    auto& t = c.train;
    if (key == "train.lr") t.lr = to_double(key, v);
    else if (key == "train.lr_min") t.lr_min = to_double(key, v);
    else if (key == "train.batch_size") t.batch_size = to_size(key, v);
    else if (key == "train.epochs") t.epochs = to_size(key, v);
    else if (key == "train.anneal") t.anneal = to_bool(key, v);
    else if (key == "train.freeze_encoder") t.freeze_encoder = to_bool(key, v);
    else if (key == "train.seed") t.seed = to_size(key, v);
    else if (key == "train.data_fraction") t.data_fraction = to_double(key, v);
    else if (key == "train.window_stride") t.window_stride = to_size(key, v);
    else if (key == "train.patience") t.patience = to_size(key, v);
    else if (key == "train.beta1") t.beta1 = to_double(key, v);
    else if (key == "train.beta2") t.beta2 = to_double(key, v);
    else if (key == "train.eps") t.eps = to_double(key, v);
    else if (key == "mi.n_bins") n_bins = to_size(key, v);
    else if (key == "mi.top_k") top_k = to_size(key, v);
    else if (key == "mi.w_self") w_self = to_double(key, v);
    else if (key == "mi.w_neighbor") w_neighbor = to_double(key, v);
    else fail(ErrorCode::Parse, "unknown config key '" + key + "'");
  }
  c.mi = MIConfig(n_bins, top_k, w_self, w_neighbor);
  c.model.validate();
  c.train.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open config '" + path.string() + "'");
  return config_from_key_values(parse_key_values(in, path.string()));
}

std::string model_config_text(const ModelConfig& m) {
  std::ostringstream o;
  const auto& d = m.delay;
  const auto& e = m.encoder;
  o << "[model]\nlookback = " << m.lookback << "\n"
    << "[delay]\nm = " << d.m << "\ntau = " << d.tau << "\np = " << d.p << "\nq = " << d.q << "\n"
    << "[encoder]\nd_model = " << e.d_model << "\nn_layers = " << e.n_layers
    << "\nn_heads = " << e.n_heads << "\nd_ff = " << e.d_ff << "\npool_kernel = " << e.pool_kernel
    << "\npool_stride = " << e.pool_stride << "\nhorizon = " << e.horizon
    << "\ndropout = " << format_double(e.dropout) << "\nseed = " << e.seed
    << "\nhead = " << to_string(e.head) << "\nhead_hidden = " << e.head_hidden << "\n";
  return o.str();
}

ModelConfig parse_model_config_text(const std::string& text) {
  std::istringstream in(text);
  ModelConfig m;
  for (const auto& [key, v] : parse_key_values(in, "<checkpoint>")) {
    if (!is_model_key(key)) fail(ErrorCode::Parse, "unexpected key '" + key + "' in model config");
    apply_model_key(m, key, v);
  }
  m.validate();
  return m;
}

void write_config(std::ostream& out, const PipelineConfig& c) {
  const auto& t = c.train;
  out << model_config_text(c.model) << "[train]\nlr = " << format_double(t.lr)
      << "\nlr_min = " << format_double(t.lr_min) << "\nbatch_size = " << t.batch_size
      << "\nepochs = " << t.epochs << "\nanneal = " << (t.anneal ? "true" : "false")
      << "\nfreeze_encoder = " << (t.freeze_encoder ? "true" : "false") << "\nseed = " << t.seed
      << "\ndata_fraction = " << format_double(t.data_fraction)
      << "\nwindow_stride = " << t.window_stride << "\npatience = " << t.patience
      << "\nbeta1 = " << format_double(t.beta1) << "\nbeta2 = " << format_double(t.beta2)
      << "\neps = " << format_double(t.eps) << "\n"
      << "[mi]\nn_bins = " << c.mi.n_bins() << "\ntop_k = " << c.mi.top_k()
      << "\nw_self = " << format_double(c.mi.w_self())
      << "\nw_neighbor = " << format_double(c.mi.w_neighbor()) << "\n";
}

}  // namespace ude
