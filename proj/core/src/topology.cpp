#include "ude/topology.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>

#include "ude/error.hpp"
#include "ude/io.hpp"

namespace ude {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Edge {
  double value;
  std::size_t a, b;
};

struct Triangle {
  double value;
  std::size_t order;  // order of the latest-entering edge
  std::size_t e0, e1, e2;
};

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (a < b) std::swap(a, b);
    parent_[a] = b;
    return true;
  }

 private:
  std::vector<std::size_t> parent_;
};

// Symmetric difference of two descending-sorted index lists.
void add_column(std::vector<std::size_t>& target, const std::vector<std::size_t>& source) {
  std::vector<std::size_t> out;
  out.reserve(target.size() + source.size());
  std::size_t i = 0, j = 0;
  while (i < target.size() || j < source.size()) {
    if (j == source.size() || (i < target.size() && target[i] > source[j])) {
      out.push_back(target[i++]);
    } else if (i == target.size() || source[j] > target[i]) {
      out.push_back(source[j++]);
    } else {
      ++i;
      ++j;
    }
  }
  target.swap(out);
}

using Points = std::vector<std::pair<double, double>>;

Points finite_points(const PersistenceDiagram& d, int dim, const WassersteinOptions& opt) {
  Points out;
  for (const auto& f : d.features) {
    if (f.dim != dim) continue;
    if (f.essential()) {
      if (!opt.include_essential) continue;
      if (!std::isfinite(opt.essential_clamp)) {
        fail(ErrorCode::InvalidArgument,
             "including essential features requires a finite essential_clamp");
      }
      out.emplace_back(f.birth, std::max(f.birth, opt.essential_clamp));
      continue;
    }
    out.emplace_back(f.birth, f.death);
  }
  return out;
}

double linf(const std::pair<double, double>& u, const std::pair<double, double>& v) {
  return std::max(std::abs(u.first - v.first), std::abs(u.second - v.second));
}

double to_diagonal(const std::pair<double, double>& u) { return (u.second - u.first) / 2.0; }

// Sum of matched costs^p for one homology dimension.
double wasserstein_power(const Points& a, const Points& b, double p) {
  const std::size_t n = a.size(), m = b.size();
  if (n + m == 0) return 0.0;
  const auto size = static_cast<Eigen::Index>(n + m);
  Matrix cost = Matrix::Zero(size, size);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          std::pow(linf(a[i], b[j]), p);
    }
    const double diag = std::pow(to_diagonal(a[i]), p);
    for (std::size_t k = 0; k < n; ++k) {
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m + k)) = diag;
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    const double diag = std::pow(to_diagonal(b[j]), p);
    for (std::size_t l = 0; l < m; ++l) {
      cost(static_cast<Eigen::Index>(n + l), static_cast<Eigen::Index>(j)) = diag;
    }
  }
  const auto assignment = solve_assignment(cost);
  double total = 0.0;
  for (std::size_t r = 0; r < assignment.size(); ++r) {
    total += cost(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(assignment[r]));
  }
  return total;
}

bool kuhn_augment(std::size_t row, const std::vector<std::vector<std::size_t>>& adj,
                  std::vector<long>& match_col, std::vector<char>& seen) {
  for (std::size_t c : adj[row]) {
    if (seen[c]) continue;
    seen[c] = 1;
    if (match_col[c] < 0 ||
        kuhn_augment(static_cast<std::size_t>(match_col[c]), adj, match_col, seen)) {
      match_col[c] = static_cast<long>(row);
      return true;
    }
  }
  return false;
}

bool perfect_within(const Points& a, const Points& b, double t) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::vector<std::size_t>> adj(n + m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (linf(a[i], b[j]) <= t) adj[i].push_back(j);
    }
    if (to_diagonal(a[i]) <= t) {
      for (std::size_t k = 0; k < n; ++k) adj[i].push_back(m + k);
    }
  }
  for (std::size_t l = 0; l < m; ++l) {
    for (std::size_t j = 0; j < m; ++j) {
      if (to_diagonal(b[j]) <= t) adj[n + l].push_back(j);
    }
    for (std::size_t k = 0; k < n; ++k) adj[n + l].push_back(m + k);
  }
  std::vector<long> match_col(n + m, -1);
  for (std::size_t r = 0; r < n + m; ++r) {
    std::vector<char> seen(n + m, 0);
    if (!kuhn_augment(r, adj, match_col, seen)) return false;
  }
  return true;
}

double bottleneck_dim(const Points& a, const Points& b) {
  std::vector<double> candidates{0.0};
  for (const auto& u : a) {
    candidates.push_back(to_diagonal(u));
    for (const auto& v : b) candidates.push_back(linf(u, v));
  }
  for (const auto& v : b) candidates.push_back(to_diagonal(v));
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  std::size_t lo = 0, hi = candidates.size() - 1;
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (perfect_within(a, b, candidates[mid])) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return candidates[lo];
}

int diagram_max_dim(const PersistenceDiagram& a, const PersistenceDiagram& b) {
  return std::max(a.max_dim(), b.max_dim());
}

double mean_finite_persistence(const PersistenceDiagram& a, const PersistenceDiagram& b,
                               int dim) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto* d : {&a, &b}) {
    for (const auto& f : d->features) {
      if (f.dim == dim && !f.essential()) {
        sum += f.persistence();
        ++n;
      }
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace

PointCloud patch_cloud(const Matrix& patch, bool use_rows) {
  PointCloud cloud;
  if (use_rows) {
    for (Eigen::Index r = 0; r < patch.rows(); ++r) cloud.points.emplace_back(patch.row(r).transpose());
  } else {
    for (Eigen::Index c = 0; c < patch.cols(); ++c) cloud.points.emplace_back(patch.col(c));
  }
  return cloud;
}

PersistenceDiagram PersistenceDiagram::restrict(int dim) const {
  PersistenceDiagram out;
  for (const auto& f : features) {
    if (f.dim == dim) out.features.push_back(f);
  }
  return out;
}

std::size_t PersistenceDiagram::count(int dim) const {
  return static_cast<std::size_t>(std::count_if(
      features.begin(), features.end(), [dim](const auto& f) { return f.dim == dim; }));
}

int PersistenceDiagram::max_dim() const {
  int out = -1;
  for (const auto& f : features) out = std::max(out, f.dim);
  return out;
}

PersistenceDiagram rips_persistence(const PointCloud& cloud, const RipsOptions& options) {
  const std::size_t n = cloud.size();
  if (n == 0) fail(ErrorCode::InvalidArgument, "point cloud is empty");
  if (!(options.max_scale > 0.0)) fail(ErrorCode::InvalidArgument, "max_scale must be positive");
  if (n > options.max_points) {
    fail(ErrorCode::CloudTooLarge,
         "point cloud of " + std::to_string(n) + " points exceeds the Rips cap of " +
             std::to_string(options.max_points) + "; subsample first");
  }
  for (const auto& p : cloud.points) {
    if (static_cast<std::size_t>(p.size()) != cloud.dim()) {
      fail(ErrorCode::DimensionMismatch, "point cloud points differ in dimension");
    }
  }
  const double factor = options.scale == RipsScale::Half ? 0.5 : 1.0;

  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = factor * (cloud.points[i] - cloud.points[j]).norm();
      if (v <= options.max_scale) edges.push_back({v, i, j});
    }
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
    if (x.value != y.value) return x.value < y.value;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  });

  PersistenceDiagram diagram;
  DisjointSets sets(n);
  std::vector<char> positive(edges.size(), 0);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (sets.unite(edges[e].a, edges[e].b)) {
      diagram.features.push_back({0, 0.0, edges[e].value});
    } else {
      positive[e] = 1;
    }
  }
  for (std::size_t v = 0; v < n; ++v) {
    if (sets.find(v) == v) diagram.features.push_back({0, 0.0, kInf});
  }

  if (options.max_dim >= 1 && n >= 3) {
    constexpr std::size_t kAbsent = static_cast<std::size_t>(-1);
    std::vector<std::size_t> order(n * n, kAbsent);
    for (std::size_t e = 0; e < edges.size(); ++e) {
      order[edges[e].a * n + edges[e].b] = e;
      order[edges[e].b * n + edges[e].a] = e;
    }
    std::vector<Triangle> triangles;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const std::size_t eij = order[i * n + j];
        if (eij == kAbsent) continue;
        for (std::size_t k = j + 1; k < n; ++k) {
          const std::size_t eik = order[i * n + k];
          const std::size_t ejk = order[j * n + k];
          if (eik == kAbsent || ejk == kAbsent) continue;
          const std::size_t last = std::max({eij, eik, ejk});
          triangles.push_back({edges[last].value, last, eij, eik, ejk});
        }
      }
    }
    std::sort(triangles.begin(), triangles.end(), [](const Triangle& x, const Triangle& y) {
      if (x.value != y.value) return x.value < y.value;
      if (x.order != y.order) return x.order < y.order;
      const std::size_t xs[3] = {x.e0, x.e1, x.e2};
      const std::size_t ys[3] = {y.e0, y.e1, y.e2};
      return std::lexicographical_compare(xs, xs + 3, ys, ys + 3);
    });

    // Column reduction of the triangle -> edge boundary over Z/2.
    std::vector<std::vector<std::size_t>> reduced;
    reduced.reserve(triangles.size());
    constexpr std::size_t kNone = static_cast<std::size_t>(-1);
    std::vector<std::size_t> owner(edges.size(), kNone);
    std::vector<char> paired(edges.size(), 0);
    for (const auto& t : triangles) {
      std::vector<std::size_t> col{t.e0, t.e1, t.e2};
      std::sort(col.begin(), col.end(), std::greater<>());
      while (!col.empty() && owner[col.front()] != kNone) {
        add_column(col, reduced[owner[col.front()]]);
      }
      if (!col.empty()) {
        const std::size_t low = col.front();
        owner[low] = reduced.size();
        paired[low] = 1;
        if (t.value > edges[low].value) {
          diagram.features.push_back({1, edges[low].value, t.value});
        }
      }
      reduced.push_back(std::move(col));
    }
    for (std::size_t e = 0; e < edges.size(); ++e) {
      if (positive[e] && !paired[e]) diagram.features.push_back({1, edges[e].value, kInf});
    }
  }

  std::stable_sort(diagram.features.begin(), diagram.features.end(),
                   [](const PersistencePair& x, const PersistencePair& y) {
                     if (x.dim != y.dim) return x.dim < y.dim;
                     if (x.birth != y.birth) return x.birth < y.birth;
                     return x.death < y.death;
                   });
  return diagram;
}

std::vector<std::size_t> solve_assignment(const Matrix& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  if (cost.cols() != cost.rows()) fail(ErrorCode::DimensionMismatch, "assignment needs a square matrix");
  if (n == 0) return {};
  // Potentials formulation with 1-based helper arrays.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1),
                                static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assignment(n, 0);
  for (std::size_t j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
  return assignment;
}

double wasserstein(const PersistenceDiagram& a, const PersistenceDiagram& b,
                   const WassersteinOptions& options) {
  if (!(options.order >= 1.0) || !std::isfinite(options.order)) {
    fail(ErrorCode::InvalidArgument, "wasserstein order must be finite and >= 1");
  }
  double total = 0.0;
  for (int k = 0; k <= diagram_max_dim(a, b); ++k) {
    total += wasserstein_power(finite_points(a, k, options), finite_points(b, k, options),
                               options.order);
  }
  return std::pow(total, 1.0 / options.order);
}

double bottleneck(const PersistenceDiagram& a, const PersistenceDiagram& b,
                  const WassersteinOptions& options) {
  double out = 0.0;
  for (int k = 0; k <= diagram_max_dim(a, b); ++k) {
    out = std::max(out, bottleneck_dim(finite_points(a, k, options),
                                       finite_points(b, k, options)));
  }
  return out;
}

TwwdResult twwd(const PersistenceDiagram& a, const PersistenceDiagram& b, int k_max,
                const WassersteinOptions& options) {
  if (k_max < 0) fail(ErrorCode::InvalidArgument, "k_max must be >= 0");
  TwwdResult out;
  out.weights.resize(static_cast<std::size_t>(k_max) + 1, 0.0);
  double sum = 0.0;
  for (int k = 0; k <= k_max; ++k) {
    out.weights[static_cast<std::size_t>(k)] = mean_finite_persistence(a, b, k);
    sum += out.weights[static_cast<std::size_t>(k)];
  }
  for (auto& w : out.weights) {
    w = sum > 0.0 ? w / sum : 1.0 / static_cast<double>(out.weights.size());
  }
  double total = 0.0;
  for (int k = 0; k <= k_max; ++k) {
    const double wk = out.weights[static_cast<std::size_t>(k)];
    if (wk == 0.0) continue;
    total += wk * wasserstein_power(finite_points(a, k, options), finite_points(b, k, options),
                                    options.order);
  }
  out.distance = std::pow(total, 1.0 / options.order);
  return out;
}

DistanceMatrix diagram_distance_matrix(std::span<const PersistenceDiagram> diagrams,
                                       const TokenDistanceParams& params) {
  const std::size_t n = diagrams.size();
  DistanceMatrix dm;
  dm.values = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) dm.labels.push_back(i + 1);
  std::vector<PersistenceDiagram> filtered;
  if (params.metric == TokenMetric::SingleDim) {
    for (const auto& d : diagrams) filtered.push_back(d.restrict(params.homology_dim));
    diagrams = filtered;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = params.metric == TokenMetric::Twwd
                           ? twwd(diagrams[i], diagrams[j], params.k_max, params.wasserstein).distance
                           : wasserstein(diagrams[i], diagrams[j], params.wasserstein);
      dm.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = d;
      dm.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = d;
    }
  }
  return dm;
}

DistanceMatrix token_distance_matrix(const PatchGrid& grid, const TokenDistanceParams& params) {
  std::size_t n = grid.patch_count();
  if (params.max_tokens > 0) n = std::min(n, params.max_tokens);
  if (n < 2) fail(ErrorCode::InvalidArgument, "token distance matrix needs at least 2 patches");
  RipsOptions rips = params.rips;
  const int needed = params.metric == TokenMetric::Twwd ? params.k_max : params.homology_dim;
  rips.max_dim = std::max(rips.max_dim, needed);
  std::vector<PersistenceDiagram> diagrams;
  diagrams.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    diagrams.push_back(rips_persistence(patch_cloud(grid.patches[j], params.use_rows), rips));
  }
  return diagram_distance_matrix(diagrams, params);
}

std::vector<std::size_t> cluster_tokens(const DistanceMatrix& dm, std::size_t n_clusters) {
  const auto n = static_cast<std::size_t>(dm.values.rows());
  if (dm.values.cols() != dm.values.rows()) {
    fail(ErrorCode::DimensionMismatch, "distance matrix must be square");
  }
  if (n_clusters == 0 || n_clusters > n) {
    fail(ErrorCode::InvalidArgument, "n_clusters=" + std::to_string(n_clusters) +
                                         " must lie in [1, " + std::to_string(n) + "]");
  }
  // Active clusters are keyed by their smallest member index.
  std::vector<std::vector<std::size_t>> members(n);
  std::vector<char> active(n, 1);
  for (std::size_t i = 0; i < n; ++i) members[i] = {i};
  Matrix d = dm.values;
  std::size_t remaining = n;
  while (remaining > n_clusters) {
    double best = kInf;
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!active[j]) continue;
        const double v = d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        if (v < best) {
          best = v;
          bi = i;
          bj = j;
        }
      }
    }
    const double ni = static_cast<double>(members[bi].size());
    const double nj = static_cast<double>(members[bj].size());
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == bi || k == bj) continue;
      const auto ik = static_cast<Eigen::Index>(k);
      const double merged = (ni * d(static_cast<Eigen::Index>(bi), ik) +
                             nj * d(static_cast<Eigen::Index>(bj), ik)) / (ni + nj);
      d(static_cast<Eigen::Index>(bi), ik) = merged;
      d(ik, static_cast<Eigen::Index>(bi)) = merged;
    }
    members[bi].insert(members[bi].end(), members[bj].begin(), members[bj].end());
    members[bj].clear();
    active[bj] = 0;
    --remaining;
  }
  std::vector<std::size_t> labels(n, 0);
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!active[i]) continue;
    for (std::size_t m : members[i]) labels[m] = next;
    ++next;
  }
  return labels;
}

void write_diagram_csv(std::ostream& out, const PersistenceDiagram& diagram) {
  out << "dim,birth,death\n";
  for (const auto& f : diagram.features) {
    out << f.dim << ',' << format_double(f.birth) << ',' << format_double(f.death) << '\n';
  }
}

void write_distance_csv(std::ostream& out, const DistanceMatrix& dm) {
  out << "token";
  for (auto l : dm.labels) out << ",t" << l;
  out << '\n';
  for (Eigen::Index i = 0; i < dm.values.rows(); ++i) {
    out << 't' << dm.labels[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < dm.values.cols(); ++j) {
      out << ',' << format_double(dm.values(i, j));
    }
    out << '\n';
  }
}

}  // namespace ude
