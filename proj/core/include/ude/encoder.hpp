#pragma once

// Encoder-only attention network over delay-patch tokens.
//
// Pipeline for one channel window:
//   patches -> token projection -> average pooling -> + sinusoidal PE
//   -> n_layers x [A = LN(X + MHA(X)); X' = LN(A + FF(A))]
//   -> flatten -> shared forecast head -> h-step forecast
//
// Parameters live in one flat, ordered list. The forecast head is a single
// instance shared by all channels.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ude/embedding.hpp"
#include "ude/types.hpp"

namespace ude {

enum class HeadKind { Affine, MlpGelu };

struct EncoderConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t pool_kernel = 4;
  std::size_t pool_stride = 4;
  std::size_t horizon = 96;
  double dropout = 0.1;
  std::uint64_t seed = 0;
  HeadKind head = HeadKind::Affine;
  std::size_t head_hidden = 128;  // only used by HeadKind::MlpGelu

  void validate() const;

  static EncoderConfig desk() { return {}; }
  static EncoderConfig ude_small();
};

/// Patch geometry plus encoder shape, with the number of input samples per
/// forecast window.
struct ModelConfig {
  DelayConfig delay;
  EncoderConfig encoder;
  std::size_t lookback = 512;

  void validate() const;
  std::size_t patch_width() const { return delay.p * delay.q; }
  std::size_t patch_count() const;
  std::size_t token_count() const;  // after pooling
  std::size_t horizon() const { return encoder.horizon; }
};

/// Length of AvgPool1D output.
std::size_t pooled_length(std::size_t n_tokens, std::size_t kernel,
                          std::size_t stride);

struct Parameter {
  std::string name;
  Matrix value;
  bool head = false;  // belongs to the shared forecast head
};

/// Gradient buffers mirroring the parameter list, index for index.
struct Gradients {
  std::vector<Matrix> values;

  void zero();
  void add(const Gradients& other);
  void scale(double factor);
};

class EncoderModel {
 public:
  struct LayerSlots {
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln1_gamma, ln1_beta;
    std::size_t ff1_w, ff1_b, ff2_w, ff2_b;
    std::size_t ln2_gamma, ln2_beta;
  };
  struct HeadSlots {
    std::size_t w1, b1;  // affine head: the only pair
    std::size_t w2 = 0, b2 = 0;
  };

  /// Builds a model with seeded scaled-uniform initialization.
  explicit EncoderModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Matrix& value(std::size_t slot) { return params_[slot].value; }
  const Matrix& value(std::size_t slot) const { return params_[slot].value; }

  std::size_t token_weight_slot() const { return 0; }
  std::size_t token_bias_slot() const { return 1; }
  const LayerSlots& layer(std::size_t l) const { return layers_[l]; }
  const HeadSlots& head() const { return head_; }

  Gradients& grads() { return grads_; }
  const Gradients& grads() const { return grads_; }
  Gradients zero_gradients() const;

  /// Total scalar parameter count.
  std::size_t scalar_count() const;

  /// True when every parameter is finite.
  bool finite() const;

  /// FNV-1a hash over the raw bytes of the selected parameters.
  std::uint64_t hash(bool include_encoder = true, bool include_head = true) const;

  /// Forecast for one window of `lookback` samples.
  Vector predict(std::span<const double> window) const;

 private:
  ModelConfig config_;
  std::vector<Parameter> params_;
  std::vector<LayerSlots> layers_;
  HeadSlots head_{};
  Gradients grads_;
};

struct LatentSequence {
  Matrix tokens;  // n_tokens x d_model after the final layer
  // attention_maps[layer][head], each n_tokens x n_tokens, row-stochastic.
  std::vector<std::vector<Matrix>> attention_maps;
};

/// token j = W_e * flatten(P_j) + b_e, one row per patch.
Matrix embed_tokens(const PatchGrid& grid, const EncoderModel& model);

/// PE[pos][2i] = sin(pos / 10000^(2i/d)), PE[pos][2i+1] = cos(same).
Matrix positional_encoding(std::size_t n_tokens, std::size_t d_model);

Matrix pool_tokens(const Matrix& tokens, std::size_t kernel, std::size_t stride);

/// Runs the attention stack on already pooled, position-encoded tokens.
LatentSequence encoder_forward(const Matrix& input, const EncoderModel& model,
                               bool retain_attention = false);

Vector forecast_head(const LatentSequence& latent, const EncoderModel& model);

/// Full inference path for a patch grid, without the head.
LatentSequence encode(const PatchGrid& grid, const EncoderModel& model,
                      bool retain_attention = false);

/// Mean over final-layer tokens.
Vector mean_token(const LatentSequence& latent);

/// Intermediates retained by a training forward pass.
struct Tape {
  struct Norm {
    Matrix xhat;
    Vector inv_std;
  };
  struct Layer {
    Matrix input, q, k, v, concat;
    std::vector<Matrix> attention;
    Matrix mha_mask, ff_mask;  // empty when dropout is off
    Norm ln1, ln2;
    Matrix a1, ff_pre, ff_act;
  };

  bool valid = false;
  Matrix flat_patches;  // N x (p*q)
  std::vector<Layer> layers;
  Matrix output_tokens;
  Vector head_in, head_pre, head_act;
  Vector prediction;

  void reset() { valid = false; }
};

/// Training forward pass. Dropout is applied only when `dropout_rng` is
/// given and the configured rate is positive.
Vector forward(const PatchGrid& grid, const EncoderModel& model, Tape& tape,
               std::mt19937_64* dropout_rng = nullptr);

/// Accumulates d loss / d theta into `grads` given d loss / d prediction.
void backward(const EncoderModel& model, const Tape& tape,
              const Vector& loss_grad, Gradients& grads);

/// Per-head tokens whose received attention exceeds mean + 2 std.
struct HighAttentionTokens {
  std::vector<std::vector<std::vector<std::size_t>>> flagged;  // [layer][head]
  std::vector<std::size_t> histogram;                          // per token

  /// Token with the highest flag count, lowest index on ties; -1 if none.
  long top_token() const;
  std::size_t total_flags() const;
};

HighAttentionTokens high_attention_tokens(const LatentSequence& latent,
                                          double n_std = 2.0);

}  // namespace ude
