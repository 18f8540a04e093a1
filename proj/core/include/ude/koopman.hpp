#pragma once

// Finite-dimensional Koopman (DMD) analysis of latent trajectories. The
// least-squares map K* = Z+ pinv(Z-) comes with power rollouts and a spectrum.

#include <complex>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "ude/types.hpp"

namespace ude {

class EncoderModel;
struct Series;

struct LatentTrajectory {
  std::vector<Vector> states;

  std::size_t latent_dim() const {
    return states.empty() ? 0 : static_cast<std::size_t>(states.front().size());
  }
  std::size_t size() const { return states.size(); }
};

using ComplexVector = Eigen::VectorXcd;
using ComplexMatrix = Eigen::MatrixXcd;

struct KoopmanFit {
  Matrix K;
  double residual = 0.0;  // RMS of z^{t+s} - K z^t over all entries
  std::size_t rank = 0;   // numerical rank of Z-
  ComplexVector eigenvalues;
  ComplexMatrix eigenvectors;
  bool diagonalizable = true;
  bool underdetermined = false;  // fewer snapshot pairs than latent_dim
};

/// Moore-Penrose pseudoinverse via SVD; singular values below
/// rel_tol * sigma_max are treated as zero.
Matrix pseudoinverse(const Matrix& a, double rel_tol = 1e-12,
                     std::size_t* rank = nullptr);

/// Least-squares fit of z^{t+step} = K z^t. step = 1 is the one-step DMD fit;
/// step = h fits the direct h-step map.
KoopmanFit fit_koopman(const LatentTrajectory& traj, std::size_t step = 1);

/// K^k z0 for k = 1..steps, computed iteratively.
std::vector<Vector> rollout(const Matrix& K, const Vector& z0, std::size_t steps);

enum class Stability { Stable, Marginal, Unstable };

struct SpectralMode {
  std::complex<double> value;
  double modulus = 0.0;
  double argument = 0.0;
  Stability stability = Stability::Stable;
};

const char* to_string(Stability s);

/// Eigenvalues sorted by modulus descending, annotated with |lambda| vs 1.
std::vector<SpectralMode> spectrum(const Matrix& K, double eps = 1e-6);

/// Slides a lookback window over one channel with the given stride and
/// records the mean final-layer token of each window.
LatentTrajectory extract_latent_trajectory(const Series& series, std::size_t channel,
                                           const EncoderModel& model,
                                           std::size_t window_stride);

void write_trajectory_csv(std::ostream& out, const LatentTrajectory& traj);
void write_spectrum_csv(std::ostream& out, std::span<const SpectralMode> modes);

}  // namespace ude
