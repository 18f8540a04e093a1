#include "ude/encoder.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <string>

#include "ude/error.hpp"

namespace ude {

namespace {

constexpr double kLayerNormEps = 1e-5;

using Index = Eigen::Index;

Index idx(std::size_t n) { return static_cast<Index>(n); }

Matrix xavier(std::size_t rows, std::size_t cols, std::size_t fan_in,
              std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix w(idx(rows), idx(cols));
  for (Index c = 0; c < w.cols(); ++c) {
    for (Index r = 0; r < w.rows(); ++r) w(r, c) = dist(rng);
  }
  return w;
}

// Y = X W^T + 1 b^T, with W stored out x in and b as an out x 1 column.
Matrix affine_rows(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix y = x * w.transpose();
  y.rowwise() += b.col(0).transpose();
  return y;
}

void affine_rows_backward(const Matrix& dy, const Matrix& x, const Matrix& w,
                          Matrix& dw, Matrix& db, Matrix* dx) {
  dw.noalias() += dy.transpose() * x;
  db.col(0) += dy.colwise().sum().transpose();
  if (dx != nullptr) dx->noalias() = dy * w;
}

Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta,
                  Tape::Norm* tape) {
  const Index n = x.rows();
  const double d = static_cast<double>(x.cols());
  Matrix xhat(x.rows(), x.cols());
  Vector inv_std(n);
  for (Index r = 0; r < n; ++r) {
    const double mean = x.row(r).sum() / d;
    const double var = (x.row(r).array() - mean).square().sum() / d;
    inv_std[r] = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) = (x.row(r).array() - mean) * inv_std[r];
  }
  Matrix y = xhat.array().rowwise() * gamma.col(0).transpose().array();
  y.rowwise() += beta.col(0).transpose();
  if (tape != nullptr) {
    tape->xhat = std::move(xhat);
    tape->inv_std = std::move(inv_std);
  }
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Tape::Norm& norm,
                           const Matrix& gamma, Matrix& dgamma, Matrix& dbeta) {
  dgamma.col(0) += (dy.array() * norm.xhat.array()).colwise().sum().transpose().matrix();
  dbeta.col(0) += dy.colwise().sum().transpose();
  const double d = static_cast<double>(dy.cols());
  Matrix dxhat = dy.array().rowwise() * gamma.col(0).transpose().array();
  Matrix dx(dy.rows(), dy.cols());
  for (Index r = 0; r < dy.rows(); ++r) {
    const double mean_dxhat = dxhat.row(r).sum() / d;
    const double mean_dxhat_xhat = dxhat.row(r).dot(norm.xhat.row(r)) / d;
    dx.row(r) = norm.inv_std[r] *
                (dxhat.row(r).array() - mean_dxhat -
                 norm.xhat.row(r).array() * mean_dxhat_xhat);
  }
  return dx;
}

double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

void softmax_rows(Matrix& s) {
  for (Index r = 0; r < s.rows(); ++r) {
    const double peak = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - peak).exp();
    s.row(r) /= s.row(r).sum();
  }
}

Matrix dropout_mask(Index rows, Index cols, double rate, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  Matrix mask(rows, cols);
  for (Index c = 0; c < cols; ++c) {
    for (Index r = 0; r < rows; ++r) mask(r, c) = keep(rng) ? scale : 0.0;
  }
  return mask;
}

Matrix pool_matrix(std::size_t n_tokens, std::size_t kernel, std::size_t stride) {
  const std::size_t out = pooled_length(n_tokens, kernel, stride);
  Matrix pool = Matrix::Zero(idx(out), idx(n_tokens));
  for (std::size_t w = 0; w < out; ++w) {
    const std::size_t begin = w * stride;
    const std::size_t end = std::min(begin + kernel, n_tokens);
    const double weight = 1.0 / static_cast<double>(end - begin);
    for (std::size_t t = begin; t < end; ++t) pool(idx(w), idx(t)) = weight;
  }
  return pool;
}

Matrix flatten_patches(const PatchGrid& grid, std::size_t width) {
  Matrix flat(idx(grid.patch_count()), idx(width));
  for (std::size_t j = 0; j < grid.patch_count(); ++j) {
    const Matrix& patch = grid.patches[j];
    if (static_cast<std::size_t>(patch.size()) != width) {
      fail(ErrorCode::DimensionMismatch,
           "patch " + std::to_string(j + 1) + " has " +
               std::to_string(patch.size()) + " cells, token projection expects " +
               std::to_string(width));
    }
    flat.row(idx(j)) = flatten_patch(patch).transpose();
  }
  return flat;
}

Vector flatten_rows(const Matrix& m) {
  Vector out(m.size());
  Index k = 0;
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) out[k++] = m(r, c);
  }
  return out;
}

void require_finite(const Matrix& m, const char* where) {
  if (!m.allFinite()) {
    fail(ErrorCode::NonFinite, std::string("non-finite activation in ") + where);
  }
}

// One post-norm encoder layer. `lt` retains intermediates for backward;
// `maps` receives per-head attention when non-null.
Matrix layer_forward(const Matrix& x, const EncoderModel& model, std::size_t l,
                     Tape::Layer* lt, std::vector<Matrix>* maps,
                     std::mt19937_64* rng) {
  const auto& s = model.layer(l);
  const auto& cfg = model.config().encoder;
  const Index d = idx(cfg.d_model);
  const Index dh = d / idx(cfg.n_heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Index n = x.rows();

  Matrix q = affine_rows(x, model.value(s.wq), model.value(s.bq));
  Matrix k = affine_rows(x, model.value(s.wk), model.value(s.bk));
  Matrix v = affine_rows(x, model.value(s.wv), model.value(s.bv));
  Matrix concat(n, d);
  std::vector<Matrix> attention;
  attention.reserve(cfg.n_heads);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const Index c0 = idx(h) * dh;
    Matrix scores = q.middleCols(c0, dh) * k.middleCols(c0, dh).transpose() * scale;
    softmax_rows(scores);
    concat.middleCols(c0, dh).noalias() = scores * v.middleCols(c0, dh);
    attention.push_back(std::move(scores));
  }
  Matrix mha = affine_rows(concat, model.value(s.wo), model.value(s.bo));
  const bool drop = rng != nullptr && cfg.dropout > 0.0;
  Matrix mha_mask;
  if (drop) {
    mha_mask = dropout_mask(n, d, cfg.dropout, *rng);
    mha.array() *= mha_mask.array();
  }
  Tape::Norm* ln1 = lt != nullptr ? &lt->ln1 : nullptr;
  Matrix a1 = layer_norm(x + mha, model.value(s.ln1_gamma), model.value(s.ln1_beta), ln1);

  Matrix ff_pre = affine_rows(a1, model.value(s.ff1_w), model.value(s.ff1_b));
  Matrix ff_act = ff_pre.unaryExpr([](double z) { return gelu(z); });
  Matrix ff = affine_rows(ff_act, model.value(s.ff2_w), model.value(s.ff2_b));
  Matrix ff_mask;
  if (drop) {
    ff_mask = dropout_mask(n, d, cfg.dropout, *rng);
    ff.array() *= ff_mask.array();
  }
  Tape::Norm* ln2 = lt != nullptr ? &lt->ln2 : nullptr;
  Matrix out = layer_norm(a1 + ff, model.value(s.ln2_gamma), model.value(s.ln2_beta), ln2);

  if (maps != nullptr) *maps = attention;
  if (lt != nullptr) {
    lt->input = x;
    lt->q = std::move(q);
    lt->k = std::move(k);
    lt->v = std::move(v);
    lt->concat = std::move(concat);
    lt->attention = std::move(attention);
    lt->mha_mask = std::move(mha_mask);
    lt->ff_mask = std::move(ff_mask);
    lt->a1 = std::move(a1);
    lt->ff_pre = std::move(ff_pre);
    lt->ff_act = std::move(ff_act);
  }
  return out;
}

Matrix layer_backward(const Matrix& dout, const EncoderModel& model,
                      std::size_t l, const Tape::Layer& lt, Gradients& g) {
  const auto& s = model.layer(l);
  const auto& cfg = model.config().encoder;
  const Index d = idx(cfg.d_model);
  const Index dh = d / idx(cfg.n_heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  auto& gv = g.values;

  // X' = LN2(A1 + FF(A1))
  Matrix dr2 = layer_norm_backward(dout, lt.ln2, model.value(s.ln2_gamma),
                                   gv[s.ln2_gamma], gv[s.ln2_beta]);
  Matrix dff = dr2;
  if (lt.ff_mask.size() > 0) dff.array() *= lt.ff_mask.array();
  Matrix dff_act;
  affine_rows_backward(dff, lt.ff_act, model.value(s.ff2_w), gv[s.ff2_w],
                       gv[s.ff2_b], &dff_act);
  Matrix dff_pre = dff_act.array() *
                   lt.ff_pre.unaryExpr([](double z) { return gelu_grad(z); }).array();
  Matrix da1_ff;
  affine_rows_backward(dff_pre, lt.a1, model.value(s.ff1_w), gv[s.ff1_w],
                       gv[s.ff1_b], &da1_ff);
  Matrix da1 = dr2 + da1_ff;

  // A1 = LN1(X + MHA(X))
  Matrix dr1 = layer_norm_backward(da1, lt.ln1, model.value(s.ln1_gamma),
                                   gv[s.ln1_gamma], gv[s.ln1_beta]);
  Matrix dmha = dr1;
  if (lt.mha_mask.size() > 0) dmha.array() *= lt.mha_mask.array();
  Matrix dconcat;
  affine_rows_backward(dmha, lt.concat, model.value(s.wo), gv[s.wo], gv[s.bo],
                       &dconcat);

  const Index n = lt.input.rows();
  Matrix dq(n, d), dk(n, d), dv(n, d);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const Index c0 = idx(h) * dh;
    const Matrix& a = lt.attention[h];
    const auto doh = dconcat.middleCols(c0, dh);
    Matrix da = doh * lt.v.middleCols(c0, dh).transpose();
    dv.middleCols(c0, dh).noalias() = a.transpose() * doh;
    Vector rowdot = (da.array() * a.array()).rowwise().sum();
    Matrix ds = a.array() * (da.colwise() - rowdot).array();
    dq.middleCols(c0, dh).noalias() = ds * lt.k.middleCols(c0, dh) * scale;
    dk.middleCols(c0, dh).noalias() = ds.transpose() * lt.q.middleCols(c0, dh) * scale;
  }
  Matrix dx = dr1;
  Matrix tmp;
  affine_rows_backward(dq, lt.input, model.value(s.wq), gv[s.wq], gv[s.bq], &tmp);
  dx += tmp;
  affine_rows_backward(dk, lt.input, model.value(s.wk), gv[s.wk], gv[s.bk], &tmp);
  dx += tmp;
  affine_rows_backward(dv, lt.input, model.value(s.wv), gv[s.wv], gv[s.bv], &tmp);
  dx += tmp;
  return dx;
}

}  // namespace

EncoderConfig EncoderConfig::ude_small() {
  EncoderConfig c;
  c.d_model = 512;
  c.n_layers = 6;
  c.n_heads = 8;
  c.d_ff = 2048;
  c.pool_kernel = 30;
  c.pool_stride = 30;
  return c;
}

void EncoderConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    fail(ErrorCode::InvalidArgument,
         "d_model=" + std::to_string(d_model) + " must be a positive multiple of n_heads=" +
             std::to_string(n_heads));
  }
  if (d_ff == 0 || horizon == 0) {
    fail(ErrorCode::InvalidArgument, "d_ff and horizon must be positive");
  }
  if (pool_kernel == 0 || pool_stride == 0) {
    fail(ErrorCode::InvalidArgument, "pool kernel and stride must be >= 1");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    fail(ErrorCode::InvalidArgument, "dropout must lie in [0, 1)");
  }
  if (head == HeadKind::MlpGelu && head_hidden == 0) {
    fail(ErrorCode::InvalidArgument, "mlp head needs head_hidden >= 1");
  }
}

void ModelConfig::validate() const {
  delay.validate();
  encoder.validate();
  const std::size_t rows = delay.hankel_rows(lookback);
  if (delay.p > rows) {
    fail(ErrorCode::PatchLargerThanMatrix,
         "patch rows p=" + std::to_string(delay.p) + " exceed Hankel rows L=" +
             std::to_string(rows) + " for lookback " + std::to_string(lookback));
  }
}

std::size_t ModelConfig::patch_count() const {
  return (delay.hankel_rows(lookback) / delay.p) * (delay.m / delay.q);
}

std::size_t ModelConfig::token_count() const {
  return pooled_length(patch_count(), encoder.pool_kernel, encoder.pool_stride);
}

std::size_t pooled_length(std::size_t n_tokens, std::size_t kernel,
                          std::size_t stride) {
  if (n_tokens == 0) fail(ErrorCode::InvalidArgument, "pooling needs at least one token");
  if (kernel == 0 || stride == 0) {
    fail(ErrorCode::InvalidArgument, "pool kernel and stride must be >= 1");
  }
  if (n_tokens < kernel) return 1;
  return (n_tokens - kernel) / stride + 1;
}

void Gradients::zero() {
  for (auto& v : values) v.setZero();
}

void Gradients::add(const Gradients& other) {
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += other.values[i];
}

void Gradients::scale(double factor) {
  for (auto& v : values) v *= factor;
}

EncoderModel::EncoderModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  const auto& e = config_.encoder;
  std::mt19937_64 rng(e.seed);
  const std::size_t d = e.d_model;
  const std::size_t width = config_.patch_width();

  auto add = [&](std::string name, Matrix value, bool head = false) {
    params_.push_back({std::move(name), std::move(value), head});
    return params_.size() - 1;
  };

  add("token.weight", xavier(d, width, width, d, rng));
  add("token.bias", Matrix::Zero(idx(d), 1));
  for (std::size_t l = 0; l < e.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerSlots s{};
    s.wq = add(p + "attn.wq", xavier(d, d, d, d, rng));
    s.bq = add(p + "attn.bq", Matrix::Zero(idx(d), 1));
    s.wk = add(p + "attn.wk", xavier(d, d, d, d, rng));
    s.bk = add(p + "attn.bk", Matrix::Zero(idx(d), 1));
    s.wv = add(p + "attn.wv", xavier(d, d, d, d, rng));
    s.bv = add(p + "attn.bv", Matrix::Zero(idx(d), 1));
    s.wo = add(p + "attn.wo", xavier(d, d, d, d, rng));
    s.bo = add(p + "attn.bo", Matrix::Zero(idx(d), 1));
    s.ln1_gamma = add(p + "ln1.gamma", Matrix::Ones(idx(d), 1));
    s.ln1_beta = add(p + "ln1.beta", Matrix::Zero(idx(d), 1));
    s.ff1_w = add(p + "ff1.weight", xavier(e.d_ff, d, d, e.d_ff, rng));
    s.ff1_b = add(p + "ff1.bias", Matrix::Zero(idx(e.d_ff), 1));
    s.ff2_w = add(p + "ff2.weight", xavier(d, e.d_ff, e.d_ff, d, rng));
    s.ff2_b = add(p + "ff2.bias", Matrix::Zero(idx(d), 1));
    s.ln2_gamma = add(p + "ln2.gamma", Matrix::Ones(idx(d), 1));
    s.ln2_beta = add(p + "ln2.beta", Matrix::Zero(idx(d), 1));
    layers_.push_back(s);
  }
  const std::size_t flat = config_.token_count() * d;
  const std::size_t h = e.horizon;
  if (e.head == HeadKind::Affine) {
    head_.w1 = add("head.weight", xavier(flat, h, flat, h, rng), true);
    head_.b1 = add("head.bias", Matrix::Zero(idx(h), 1), true);
  } else {
    const std::size_t hid = e.head_hidden;
    head_.w1 = add("head.fc1.weight", xavier(flat, hid, flat, hid, rng), true);
    head_.b1 = add("head.fc1.bias", Matrix::Zero(idx(hid), 1), true);
    head_.w2 = add("head.fc2.weight", xavier(hid, h, hid, h, rng), true);
    head_.b2 = add("head.fc2.bias", Matrix::Zero(idx(h), 1), true);
  }
  grads_ = zero_gradients();
}

Gradients EncoderModel::zero_gradients() const {
  Gradients g;
  g.values.reserve(params_.size());
  for (const auto& p : params_) {
    g.values.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  }
  return g;
}

std::size_t EncoderModel::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

bool EncoderModel::finite() const {
  for (const auto& p : params_) {
    if (!p.value.allFinite()) return false;
  }
  return true;
}

std::uint64_t EncoderModel::hash(bool include_encoder, bool include_head) const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params_) {
    if (p.head ? !include_head : !include_encoder) continue;
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
    const std::size_t n = static_cast<std::size_t>(p.value.size()) * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

Vector EncoderModel::predict(std::span<const double> window) const {
  if (window.size() != config_.lookback) {
    fail(ErrorCode::DimensionMismatch,
         "window has " + std::to_string(window.size()) + " samples, model expects " +
             std::to_string(config_.lookback));
  }
  return forecast_head(encode(embed_series(window, config_.delay), *this), *this);
}

Matrix embed_tokens(const PatchGrid& grid, const EncoderModel& model) {
  const Matrix flat = flatten_patches(grid, model.config().patch_width());
  return affine_rows(flat, model.value(model.token_weight_slot()),
                     model.value(model.token_bias_slot()));
}

Matrix positional_encoding(std::size_t n_tokens, std::size_t d_model) {
  Matrix pe(idx(n_tokens), idx(d_model));
  for (std::size_t pos = 0; pos < n_tokens; ++pos) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double freq =
          std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
      const double angle = static_cast<double>(pos) / freq;
      pe(idx(pos), idx(i)) = std::sin(angle);
      if (i + 1 < d_model) pe(idx(pos), idx(i + 1)) = std::cos(angle);
    }
  }
  return pe;
}

Matrix pool_tokens(const Matrix& tokens, std::size_t kernel, std::size_t stride) {
  return pool_matrix(static_cast<std::size_t>(tokens.rows()), kernel, stride) * tokens;
}

LatentSequence encoder_forward(const Matrix& input, const EncoderModel& model,
                               bool retain_attention) {
  const auto& cfg = model.config().encoder;
  if (static_cast<std::size_t>(input.cols()) != cfg.d_model) {
    fail(ErrorCode::DimensionMismatch,
         "token width " + std::to_string(input.cols()) + " differs from d_model " +
             std::to_string(cfg.d_model));
  }
  LatentSequence out;
  out.tokens = input;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    std::vector<Matrix> maps;
    out.tokens = layer_forward(out.tokens, model, l, nullptr,
                               retain_attention ? &maps : nullptr, nullptr);
    require_finite(out.tokens, "encoder layer");
    if (retain_attention) out.attention_maps.push_back(std::move(maps));
  }
  return out;
}

LatentSequence encode(const PatchGrid& grid, const EncoderModel& model,
                      bool retain_attention) {
  const auto& cfg = model.config().encoder;
  Matrix x = pool_tokens(embed_tokens(grid, model), cfg.pool_kernel, cfg.pool_stride);
  x += positional_encoding(static_cast<std::size_t>(x.rows()), cfg.d_model);
  return encoder_forward(x, model, retain_attention);
}

Vector forecast_head(const LatentSequence& latent, const EncoderModel& model) {
  const auto& hs = model.head();
  const Matrix& w1 = model.value(hs.w1);
  const Vector flat = flatten_rows(latent.tokens);
  if (flat.size() != w1.rows()) {
    fail(ErrorCode::DimensionMismatch,
         "flattened latent has " + std::to_string(flat.size()) +
             " values, head expects " + std::to_string(w1.rows()));
  }
  Vector y = w1.transpose() * flat + model.value(hs.b1).col(0);
  if (model.config().encoder.head == HeadKind::MlpGelu) {
    y = y.unaryExpr([](double z) { return gelu(z); });
    y = model.value(hs.w2).transpose() * y + model.value(hs.b2).col(0);
  }
  return y;
}

Vector mean_token(const LatentSequence& latent) {
  return latent.tokens.colwise().mean().transpose();
}

Vector forward(const PatchGrid& grid, const EncoderModel& model, Tape& tape,
               std::mt19937_64* dropout_rng) {
  const auto& cfg = model.config().encoder;
  tape.valid = false;
  tape.flat_patches = flatten_patches(grid, model.config().patch_width());
  Matrix e = affine_rows(tape.flat_patches, model.value(model.token_weight_slot()),
                         model.value(model.token_bias_slot()));
  Matrix x = pool_tokens(e, cfg.pool_kernel, cfg.pool_stride);
  x += positional_encoding(static_cast<std::size_t>(x.rows()), cfg.d_model);
  tape.layers.resize(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    x = layer_forward(x, model, l, &tape.layers[l], nullptr, dropout_rng);
  }
  require_finite(x, "encoder forward");
  tape.output_tokens = x;
  tape.head_in = flatten_rows(x);
  const auto& hs = model.head();
  const Matrix& w1 = model.value(hs.w1);
  if (tape.head_in.size() != w1.rows()) {
    fail(ErrorCode::DimensionMismatch, "patch grid does not match head input width");
  }
  Vector y = w1.transpose() * tape.head_in + model.value(hs.b1).col(0);
  if (cfg.head == HeadKind::MlpGelu) {
    tape.head_pre = y;
    tape.head_act = y.unaryExpr([](double z) { return gelu(z); });
    y = model.value(hs.w2).transpose() * tape.head_act + model.value(hs.b2).col(0);
  }
  tape.prediction = y;
  tape.valid = true;
  return y;
}

void backward(const EncoderModel& model, const Tape& tape, const Vector& loss_grad,
              Gradients& grads) {
  if (!tape.valid) {
    fail(ErrorCode::NoRetainedForward, "backward called without a retained forward pass");
  }
  if (loss_grad.size() != tape.prediction.size()) {
    fail(ErrorCode::DimensionMismatch, "loss gradient length differs from forecast length");
  }
  const auto& cfg = model.config().encoder;
  const auto& hs = model.head();
  auto& gv = grads.values;

  Vector dflat;
  if (cfg.head == HeadKind::MlpGelu) {
    gv[hs.w2].noalias() += tape.head_act * loss_grad.transpose();
    gv[hs.b2].col(0) += loss_grad;
    Vector dact = model.value(hs.w2) * loss_grad;
    Vector dpre = dact.array() *
                  tape.head_pre.unaryExpr([](double z) { return gelu_grad(z); }).array();
    gv[hs.w1].noalias() += tape.head_in * dpre.transpose();
    gv[hs.b1].col(0) += dpre;
    dflat = model.value(hs.w1) * dpre;
  } else {
    gv[hs.w1].noalias() += tape.head_in * loss_grad.transpose();
    gv[hs.b1].col(0) += loss_grad;
    dflat = model.value(hs.w1) * loss_grad;
  }

  const Index n = tape.output_tokens.rows();
  const Index d = tape.output_tokens.cols();
  Matrix dx(n, d);
  for (Index r = 0; r < n; ++r) {
    for (Index c = 0; c < d; ++c) dx(r, c) = dflat[r * d + c];
  }
  for (std::size_t l = cfg.n_layers; l-- > 0;) {
    dx = layer_backward(dx, model, l, tape.layers[l], grads);
  }
  // Positional encoding is constant; pooling is linear.
  const Matrix pool = pool_matrix(static_cast<std::size_t>(tape.flat_patches.rows()),
                                  cfg.pool_kernel, cfg.pool_stride);
  const Matrix de = pool.transpose() * dx;
  affine_rows_backward(de, tape.flat_patches, model.value(model.token_weight_slot()),
                       gv[model.token_weight_slot()], gv[model.token_bias_slot()],
                       nullptr);
}

long HighAttentionTokens::top_token() const {
  long best = -1;
  std::size_t best_count = 0;
  for (std::size_t t = 0; t < histogram.size(); ++t) {
    if (histogram[t] > best_count) {
      best_count = histogram[t];
      best = static_cast<long>(t);
    }
  }
  return best;
}

std::size_t HighAttentionTokens::total_flags() const {
  std::size_t n = 0;
  for (auto c : histogram) n += c;
  return n;
}

HighAttentionTokens high_attention_tokens(const LatentSequence& latent, double n_std) {
  if (latent.attention_maps.empty()) {
    fail(ErrorCode::AttentionNotRetained,
         "attention maps were not retained; encode with retain_attention=true");
  }
  HighAttentionTokens out;
  const auto n_tokens = static_cast<std::size_t>(latent.attention_maps[0][0].cols());
  out.histogram.assign(n_tokens, 0);
  for (const auto& layer : latent.attention_maps) {
    auto& flagged_layer = out.flagged.emplace_back();
    for (const Matrix& a : layer) {
      auto& flagged = flagged_layer.emplace_back();
      const Vector received = a.colwise().mean().transpose();
      const double mean = received.mean();
      const double var = (received.array() - mean).square().mean();
      const double threshold = mean + n_std * std::sqrt(var);
      for (Index t = 0; t < received.size(); ++t) {
        if (received[t] > threshold) {
          flagged.push_back(static_cast<std::size_t>(t));
          ++out.histogram[static_cast<std::size_t>(t)];
        }
      }
    }
  }
  return out;
}

}  // namespace ude
