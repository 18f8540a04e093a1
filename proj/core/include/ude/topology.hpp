#pragma once

// Persistent homology of patch point clouds: Vietoris-Rips H0/H1 persistence,
// Wasserstein and bottleneck distances between diagrams, the total weighted
// Wasserstein distance, token distance matrices and average-linkage
// clustering of tokens.

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ude/embedding.hpp"
#include "ude/types.hpp"

namespace ude {

struct PointCloud {
  std::vector<Vector> points;

  std::size_t size() const { return points.size(); }
  std::size_t dim() const {
    return points.empty() ? 0 : static_cast<std::size_t>(points.front().size());
  }
};

/// Columns of a p x q patch as q points in R^p, or its rows as p points in
/// R^q when `use_rows` is set.
PointCloud patch_cloud(const Matrix& patch, bool use_rows = false);

struct PersistencePair {
  int dim = 0;
  double birth = 0.0;
  double death = 0.0;  // +inf for essential features

  bool essential() const { return death == std::numeric_limits<double>::infinity(); }
  double persistence() const { return death - birth; }
};

struct PersistenceDiagram {
  std::vector<PersistencePair> features;

  PersistenceDiagram restrict(int dim) const;
  std::size_t count(int dim) const;
  int max_dim() const;
};

/// Edge {a, b} enters at |a - b| / 2 (Half) or |a - b| (Full).
enum class RipsScale { Half, Full };

struct RipsOptions {
  double max_scale = std::numeric_limits<double>::infinity();
  int max_dim = 1;
  RipsScale scale = RipsScale::Half;
  std::size_t max_points = 256;
};

PersistenceDiagram rips_persistence(const PointCloud& cloud, const RipsOptions& options = {});

struct WassersteinOptions {
  double order = 2.0;
  bool include_essential = false;
  // Death assigned to essential features when they are included.
  double essential_clamp = std::numeric_limits<double>::infinity();
};

/// Optimal partial matching distance with diagonal projections under the
/// max-norm ground metric. Features are matched only within the same
/// homology dimension; dimensions combine as (sum_k W_k^p)^(1/p).
double wasserstein(const PersistenceDiagram& a, const PersistenceDiagram& b,
                   const WassersteinOptions& options = {});

/// W_infinity: the min over matchings of the largest matched cost.
double bottleneck(const PersistenceDiagram& a, const PersistenceDiagram& b,
                  const WassersteinOptions& options = {});

struct TwwdResult {
  double distance = 0.0;
  std::vector<double> weights;  // w_k for k = 0..k_max
};

TwwdResult twwd(const PersistenceDiagram& a, const PersistenceDiagram& b, int k_max = 1,
                const WassersteinOptions& options = {});

struct DistanceMatrix {
  Matrix values;
  std::vector<std::size_t> labels;  // 1-based token indices
};

enum class TokenMetric { SingleDim, Twwd };

struct TokenDistanceParams {
  TokenMetric metric = TokenMetric::SingleDim;
  int homology_dim = 1;  // used by SingleDim
  int k_max = 1;         // used by Twwd
  bool use_rows = false;
  std::size_t max_tokens = 0;  // 0 = every patch
  RipsOptions rips{};
  WassersteinOptions wasserstein{};
};

DistanceMatrix token_distance_matrix(const PatchGrid& grid,
                                     const TokenDistanceParams& params = {});

/// Pairwise distances between precomputed diagrams.
DistanceMatrix diagram_distance_matrix(std::span<const PersistenceDiagram> diagrams,
                                       const TokenDistanceParams& params = {});

/// Deterministic average-linkage clustering. Labels are numbered by the
/// smallest member index, so the cluster holding token 0 is label 0.
std::vector<std::size_t> cluster_tokens(const DistanceMatrix& dm, std::size_t n_clusters);

/// Assignment solver for a square cost matrix (Hungarian algorithm).
/// Returns the column assigned to each row.
std::vector<std::size_t> solve_assignment(const Matrix& cost);

void write_diagram_csv(std::ostream& out, const PersistenceDiagram& diagram);
void write_distance_csv(std::ostream& out, const DistanceMatrix& dm);

}  // namespace ude
