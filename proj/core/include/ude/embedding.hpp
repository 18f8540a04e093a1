#pragma once

// Per-channel delay embedding: Hankel matrices of delay vectors, cut into the
// non-overlapping p x q patch grid that feeds the encoder.
//
// Indices are 0-based in code. Error messages and the patch index helpers
// use the 1-based (u, v, j) convention of the patch layout, where
// j = (u - 1) * V + v.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "ude/types.hpp"

namespace ude {

struct DelayConfig {
  std::size_t m = 32;   // embedding dimension
  std::size_t tau = 1;  // delay step in samples
  std::size_t p = 8;    // patch rows (time steps)
  std::size_t q = 8;    // patch cols (delay coordinates)

  /// Throws InvalidArgument unless all fields are positive, m >= 2 and q <= m.
  void validate() const;

  /// Row count L = T - (m - 1) * tau of the Hankel matrix for a series of
  /// length T. Throws SeriesTooShort when T < (m - 1) * tau + 1.
  std::size_t hankel_rows(std::size_t series_length) const;

  /// Minimum series length that yields at least one Hankel row.
  std::size_t min_length() const { return (m - 1) * tau + 1; }

  static DelayConfig desk() { return {}; }
  static DelayConfig ude_small() { return {500, 1, 25, 50}; }
};

struct HankelMatrix {
  Matrix values;  // L x m
  std::size_t source_channel = 0;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }
};

struct PatchGrid {
  std::vector<Matrix> patches;  // row-major order, j = u * V + v (0-based)
  std::size_t p = 0;
  std::size_t q = 0;
  std::size_t U = 0;
  std::size_t V = 0;
  std::size_t leftover_rows = 0;
  std::size_t leftover_cols = 0;

  std::size_t patch_count() const { return patches.size(); }

  /// 1-based access, patch(1, 1) is the top-left block.
  const Matrix& patch(std::size_t u, std::size_t v) const;
};

/// 1-based patch index j = (u - 1) V + v.
std::size_t patch_index(std::size_t u, std::size_t v, std::size_t V);

/// Inverse of patch_index: returns 1-based (u, v).
std::pair<std::size_t, std::size_t> patch_coords(std::size_t j, std::size_t V);

/// [x[t - (m-1) tau], ..., x[t - tau], x[t]], oldest first.
Vector delay_vector(std::span<const double> x, std::size_t t,
                    const DelayConfig& cfg);

HankelMatrix build_hankel(std::span<const double> x, const DelayConfig& cfg,
                          std::size_t channel = 0);

PatchGrid partition_patches(const HankelMatrix& hankel, const DelayConfig& cfg);

/// Convenience: build_hankel followed by partition_patches.
PatchGrid embed_series(std::span<const double> x, const DelayConfig& cfg);

/// Row-major flattening of a patch.
Vector flatten_patch(const Matrix& patch);
Matrix reshape_patch(const Vector& flat, std::size_t rows, std::size_t cols);

}  // namespace ude
