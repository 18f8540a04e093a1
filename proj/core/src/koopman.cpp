#include "ude/koopman.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include "ude/data.hpp"
#include "ude/encoder.hpp"
#include "ude/error.hpp"
#include "ude/io.hpp"

namespace ude {

Matrix pseudoinverse(const Matrix& a, double rel_tol, std::size_t* rank) {
  Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sigma = svd.singularValues();
  const double cutoff = sigma.size() > 0 ? rel_tol * sigma[0] : 0.0;
  Vector inv = Vector::Zero(sigma.size());
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    if (sigma[i] > cutoff && sigma[i] > 0.0) {
      inv[i] = 1.0 / sigma[i];
      ++r;
    }
  }
  if (rank != nullptr) *rank = r;
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

KoopmanFit fit_koopman(const LatentTrajectory& traj, std::size_t step) {
  if (step == 0) fail(ErrorCode::InvalidArgument, "koopman step must be >= 1");
  if (traj.size() < step + 1 || traj.size() < 2) {
    fail(ErrorCode::SeriesTooShort,
         "koopman fit needs at least " + std::to_string(step + 1) + " states, got " +
             std::to_string(traj.size()));
  }
  const auto dim = static_cast<Eigen::Index>(traj.latent_dim());
  const auto pairs = static_cast<Eigen::Index>(traj.size() - step);
  Matrix z_minus(dim, pairs), z_plus(dim, pairs);
  for (Eigen::Index t = 0; t < pairs; ++t) {
    const Vector& now = traj.states[static_cast<std::size_t>(t)];
    const Vector& next = traj.states[static_cast<std::size_t>(t) + step];
    if (now.size() != dim || next.size() != dim) {
      fail(ErrorCode::DimensionMismatch, "latent states differ in dimension");
    }
    z_minus.col(t) = now;
    z_plus.col(t) = next;
  }

  KoopmanFit fit;
  fit.K = z_plus * pseudoinverse(z_minus, 1e-12, &fit.rank);
  fit.underdetermined = pairs < dim;
  const Matrix err = z_plus - fit.K * z_minus;
  fit.residual = std::sqrt(err.squaredNorm() / static_cast<double>(err.size()));

  Eigen::EigenSolver<Matrix> eig(fit.K, true);
  if (eig.info() != Eigen::Success) {
    fail(ErrorCode::EigenSolver, "eigen-decomposition of K did not converge");
  }
  fit.eigenvalues = eig.eigenvalues();
  fit.eigenvectors = eig.eigenvectors();
  // V is numerically singular when K is defective.
  Eigen::JacobiSVD<ComplexMatrix> vsvd(fit.eigenvectors);
  const auto& sv = vsvd.singularValues();
  fit.diagonalizable = sv.size() == 0 || sv[sv.size() - 1] > 1e-10 * sv[0];
  return fit;
}

std::vector<Vector> rollout(const Matrix& K, const Vector& z0, std::size_t steps) {
  if (K.rows() != K.cols() || K.cols() != z0.size()) {
    fail(ErrorCode::DimensionMismatch, "rollout needs square K matching z0");
  }
  std::vector<Vector> out;
  out.reserve(steps);
  Vector z = z0;
  for (std::size_t k = 0; k < steps; ++k) {
    z = K * z;
    out.push_back(z);
  }
  return out;
}

const char* to_string(Stability s) {
  switch (s) {
    case Stability::Stable: return "stable";
    case Stability::Marginal: return "marginal";
    case Stability::Unstable: return "unstable";
  }
  return "unknown";
}

std::vector<SpectralMode> spectrum(const Matrix& K, double eps) {
  if (K.rows() != K.cols()) fail(ErrorCode::DimensionMismatch, "spectrum needs square K");
  Eigen::EigenSolver<Matrix> eig(K, false);
  if (eig.info() != Eigen::Success) {
    fail(ErrorCode::EigenSolver, "eigenvalue computation did not converge");
  }
  std::vector<SpectralMode> modes;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
    SpectralMode m;
    m.value = eig.eigenvalues()[i];
    if (!std::isfinite(m.value.real()) || !std::isfinite(m.value.imag())) {
      fail(ErrorCode::EigenSolver, "eigenvalue solver produced a non-finite value");
    }
    m.modulus = std::abs(m.value);
    m.argument = std::arg(m.value);
    if (m.modulus < 1.0 - eps) {
      m.stability = Stability::Stable;
    } else if (m.modulus > 1.0 + eps) {
      m.stability = Stability::Unstable;
    } else {
      m.stability = Stability::Marginal;
    }
    modes.push_back(m);
  }
  std::stable_sort(modes.begin(), modes.end(), [](const auto& a, const auto& b) {
    if (a.modulus != b.modulus) return a.modulus > b.modulus;
    return a.argument > b.argument;
  });
  return modes;
}

LatentTrajectory extract_latent_trajectory(const Series& series, std::size_t channel,
                                           const EncoderModel& model,
                                           std::size_t window_stride) {
  if (channel >= series.channel_count()) {
    fail(ErrorCode::IndexOutOfRange, "channel " + std::to_string(channel + 1) +
                                         " not in series with " +
                                         std::to_string(series.channel_count()) +
                                         " channels");
  }
  if (window_stride == 0) fail(ErrorCode::InvalidArgument, "window stride must be >= 1");
  const std::size_t lookback = model.config().lookback;
  const auto& x = series.channels[channel];
  if (x.size() < lookback) {
    fail(ErrorCode::SeriesTooShort,
         "series of length " + std::to_string(x.size()) + " is shorter than lookback " +
             std::to_string(lookback));
  }
  LatentTrajectory traj;
  const std::span<const double> all(x);
  for (std::size_t start = 0; start + lookback <= x.size(); start += window_stride) {
    const auto grid = embed_series(all.subspan(start, lookback), model.config().delay);
    traj.states.push_back(mean_token(encode(grid, model)));
  }
  return traj;
}

void write_trajectory_csv(std::ostream& out, const LatentTrajectory& traj) {
  out << "step";
  for (std::size_t i = 0; i < traj.latent_dim(); ++i) out << ",z" << i;
  out << '\n';
  for (std::size_t t = 0; t < traj.size(); ++t) {
    out << t;
    for (Eigen::Index i = 0; i < traj.states[t].size(); ++i) {
      out << ',' << format_double(traj.states[t][i]);
    }
    out << '\n';
  }
}

void write_spectrum_csv(std::ostream& out, std::span<const SpectralMode> modes) {
  out << "re,im,modulus,argument,stability\n";
  for (const auto& m : modes) {
    out << format_double(m.value.real()) << ',' << format_double(m.value.imag()) << ','
        << format_double(m.modulus) << ',' << format_double(m.argument) << ','
        << to_string(m.stability) << '\n';
  }
}

}  // namespace ude
