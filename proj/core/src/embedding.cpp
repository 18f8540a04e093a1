#include "ude/embedding.hpp"

#include <string>

#include "ude/error.hpp"

namespace ude {

void DelayConfig::validate() const {
  if (m < 2 || tau == 0 || p == 0 || q == 0) {
    fail(ErrorCode::InvalidArgument,
         "delay config requires m >= 2 and tau, p, q >= 1 (got m=" +
             std::to_string(m) + ", tau=" + std::to_string(tau) +
             ", p=" + std::to_string(p) + ", q=" + std::to_string(q) + ")");
  }
  if (q > m) {
    fail(ErrorCode::PatchLargerThanMatrix,
         "patch width q=" + std::to_string(q) + " exceeds embedding dimension m=" +
             std::to_string(m));
  }
}

std::size_t DelayConfig::hankel_rows(std::size_t series_length) const {
  if (series_length < min_length()) {
    fail(ErrorCode::SeriesTooShort,
         "series of length " + std::to_string(series_length) +
             " is shorter than (m-1)*tau+1 = " + std::to_string(min_length()));
  }
  return series_length - (m - 1) * tau;
}

const Matrix& PatchGrid::patch(std::size_t u, std::size_t v) const {
  if (u < 1 || u > U || v < 1 || v > V) {
    fail(ErrorCode::IndexOutOfRange,
         "patch (" + std::to_string(u) + ", " + std::to_string(v) +
             ") outside grid " + std::to_string(U) + "x" + std::to_string(V));
  }
  return patches[(u - 1) * V + (v - 1)];
}

std::size_t patch_index(std::size_t u, std::size_t v, std::size_t V) {
  return (u - 1) * V + v;
}

std::pair<std::size_t, std::size_t> patch_coords(std::size_t j, std::size_t V) {
  if (j < 1 || V == 0) {
    fail(ErrorCode::IndexOutOfRange, "patch index is 1-based");
  }
  return {(j - 1) / V + 1, (j - 1) % V + 1};
}

Vector delay_vector(std::span<const double> x, std::size_t t,
                    const DelayConfig& cfg) {
  if (cfg.m == 0 || cfg.tau == 0) {
    fail(ErrorCode::InvalidArgument, "delay vector requires m, tau >= 1");
  }
  const std::size_t reach = (cfg.m - 1) * cfg.tau;
  if (t < reach || t >= x.size()) {
    fail(ErrorCode::IndexOutOfRange,
         "delay vector at time " + std::to_string(t + 1) + " needs samples " +
             std::to_string(t + 1 >= reach ? t + 1 - reach : 0) + ".." +
             std::to_string(t + 1) + " of a series of length " +
             std::to_string(x.size()));
  }
  Vector y(static_cast<Eigen::Index>(cfg.m));
  const std::size_t first = t - reach;
  for (std::size_t c = 0; c < cfg.m; ++c) {
    y[static_cast<Eigen::Index>(c)] = x[first + c * cfg.tau];
  }
  return y;
}

HankelMatrix build_hankel(std::span<const double> x, const DelayConfig& cfg,
                          std::size_t channel) {
  if (cfg.m == 0 || cfg.tau == 0) {
    fail(ErrorCode::InvalidArgument, "hankel requires m, tau >= 1");
  }
  const std::size_t rows = cfg.hankel_rows(x.size());
  HankelMatrix h;
  h.source_channel = channel;
  h.values.resize(static_cast<Eigen::Index>(rows),
                  static_cast<Eigen::Index>(cfg.m));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cfg.m; ++c) {
      h.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          x[r + c * cfg.tau];
    }
  }
  return h;
}

PatchGrid partition_patches(const HankelMatrix& hankel, const DelayConfig& cfg) {
  const std::size_t L = hankel.rows();
  const std::size_t m = hankel.cols();
  if (cfg.p == 0 || cfg.q == 0) {
    fail(ErrorCode::InvalidArgument, "patch dimensions must be positive");
  }
  if (cfg.p > L || cfg.q > m) {
    fail(ErrorCode::PatchLargerThanMatrix,
         "patch " + std::to_string(cfg.p) + "x" + std::to_string(cfg.q) +
             " does not fit Hankel matrix " + std::to_string(L) + "x" +
             std::to_string(m));
  }
  PatchGrid grid;
  grid.p = cfg.p;
  grid.q = cfg.q;
  grid.U = L / cfg.p;
  grid.V = m / cfg.q;
  grid.leftover_rows = L % cfg.p;
  grid.leftover_cols = m % cfg.q;
  grid.patches.reserve(grid.U * grid.V);
  const auto p = static_cast<Eigen::Index>(cfg.p);
  const auto q = static_cast<Eigen::Index>(cfg.q);
  for (std::size_t u = 0; u < grid.U; ++u) {
    for (std::size_t v = 0; v < grid.V; ++v) {
      grid.patches.emplace_back(hankel.values.block(
          static_cast<Eigen::Index>(u) * p, static_cast<Eigen::Index>(v) * q,
          p, q));
    }
  }
  return grid;
}

PatchGrid embed_series(std::span<const double> x, const DelayConfig& cfg) {
  return partition_patches(build_hankel(x, cfg), cfg);
}

Vector flatten_patch(const Matrix& patch) {
  Vector flat(patch.size());
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < patch.rows(); ++r) {
    for (Eigen::Index c = 0; c < patch.cols(); ++c) flat[k++] = patch(r, c);
  }
  return flat;
}

Matrix reshape_patch(const Vector& flat, std::size_t rows, std::size_t cols) {
  if (static_cast<std::size_t>(flat.size()) != rows * cols) {
    fail(ErrorCode::DimensionMismatch,
         "cannot reshape " + std::to_string(flat.size()) + " values into " +
             std::to_string(rows) + "x" + std::to_string(cols));
  }
  Matrix out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    for (Eigen::Index c = 0; c < out.cols(); ++c) out(r, c) = flat[k++];
  }
  return out;
}

}  // namespace ude
