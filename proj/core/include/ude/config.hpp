#pragma once

// Plain-text configuration: one `key = value` per line, `#` comments and
// `[section]` headers that prefix the following keys. Recognised keys:
//
//   [model]    preset (desk | ude_small, applied first), lookback
//   [delay]    m, tau, p, q
//   [encoder]  d_model, n_layers, n_heads, d_ff, pool_kernel, pool_stride,
//              horizon, dropout, seed, head (affine | mlp_gelu), head_hidden
//   [train]    lr, lr_min, batch_size, epochs, anneal, freeze_encoder, seed,
//              data_fraction, window_stride, patience, beta1, beta2, eps
//   [mi]       n_bins, top_k, w_self, w_neighbor
//
// Unknown keys are errors.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "ude/aggregation.hpp"
#include "ude/encoder.hpp"
#include "ude/training.hpp"

namespace ude {

struct PipelineConfig {
  ModelConfig model;
  TrainConfig train;
  MIConfig mi;
};

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::istream& in, const std::string& source = "<config>");
PipelineConfig config_from_key_values(const KeyValues& kv);
PipelineConfig load_config(const std::filesystem::path& path);
void write_config(std::ostream& out, const PipelineConfig& config);

/// Model section only, as used inside checkpoints.
std::string model_config_text(const ModelConfig& config);
ModelConfig parse_model_config_text(const std::string& text);

const char* to_string(HeadKind kind);
HeadKind parse_head_kind(const std::string& text);

}  // namespace ude
