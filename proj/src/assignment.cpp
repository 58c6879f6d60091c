#include "glam/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace glam {

namespace {

void require_positive(const Matrix& m, const char* op) {
  if (m.size() == 0) throw ContractError(std::string(op) + ": empty matrix");
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    if (!(m.data()[k] > 0.0) || !std::isfinite(m.data()[k])) {
      throw ContractError(std::string(op) + ": entries must be finite and strictly positive");
    }
  }
}

void normalize_rows_inplace(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) m.row(r) /= m.row(r).sum();
}

void normalize_cols_inplace(Matrix& m) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) m.col(c) /= m.col(c).sum();
}

// Minimum-cost perfect matching with dual potentials (shortest augmenting
// paths). Returns row -> column and the duals u (rows) and v (cols) with
// cost(i,j) - u[i] - v[j] >= 0, equality on matched pairs.
struct DualSolution {
  std::vector<std::size_t> row_to_col;
  std::vector<double> u, v;
};

DualSolution solve_min_cost(const Matrix& cost) {
  const std::size_t n = static_cast<std::size_t>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based internally; index 0 is the virtual source column.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<bool> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) -
                           u[i0] - v[j];
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
  DualSolution out;
  out.row_to_col.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) out.row_to_col[p[j] - 1] = j - 1;
  out.u.assign(u.begin() + 1, u.end());
  out.v.assign(v.begin() + 1, v.end());
  return out;
}

// Lexicographically smallest perfect matching inside the equality subgraph.
// Every optimal assignment is a perfect matching of that subgraph.
class TightGraphRefiner {
 public:
  TightGraphRefiner(std::vector<std::vector<bool>> tight, std::vector<std::size_t> start)
      : tight_(std::move(tight)), n_(start.size()), row_to_col_(std::move(start)),
        col_to_row_(n_), row_fixed_(n_, false), col_fixed_(n_, false) {
    for (std::size_t i = 0; i < n_; ++i) col_to_row_[row_to_col_[i]] = i;
  }

  std::vector<std::size_t> run() {
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t j = 0; j < n_; ++j) {
        if (!tight_[i][j] || col_fixed_[j]) continue;
        if (row_to_col_[i] == j || try_force(i, j)) {
          row_fixed_[i] = true;
          col_fixed_[j] = true;
          break;
        }
      }
    }
    return row_to_col_;
  }

 private:
  bool try_force(std::size_t i, std::size_t j) {
    const auto saved_rc = row_to_col_;
    const auto saved_cr = col_to_row_;
    const std::size_t freed_col = row_to_col_[i];
    const std::size_t displaced = col_to_row_[j];
    row_to_col_[i] = j;
    col_to_row_[j] = i;
    free_col_ = freed_col;
    forbidden_col_ = j;
    row_fixed_[i] = true;
    visited_.assign(n_, false);
    const bool ok = augment(displaced);
    row_fixed_[i] = false;
    if (!ok) {
      row_to_col_ = saved_rc;
      col_to_row_ = saved_cr;
    }
    return ok;
  }

  bool augment(std::size_t row) {
    for (std::size_t c = 0; c < n_; ++c) {
      if (!tight_[row][c] || col_fixed_[c] || c == forbidden_col_ || visited_[c]) continue;
      visited_[c] = true;
      if (c == free_col_) {
        row_to_col_[row] = c;
        col_to_row_[c] = row;
        return true;
      }
      const std::size_t next = col_to_row_[c];
      if (row_fixed_[next]) continue;
      if (augment(next)) {
        row_to_col_[row] = c;
        col_to_row_[c] = row;
        return true;
      }
    }
    return false;
  }

  std::vector<std::vector<bool>> tight_;
  std::size_t n_;
  std::vector<std::size_t> row_to_col_, col_to_row_;
  std::vector<bool> row_fixed_, col_fixed_, visited_;
  std::size_t free_col_ = 0, forbidden_col_ = 0;
};

}  // namespace

Matrix sinkhorn_normalize(const Matrix& m, int iters) {
  require_positive(m, "sinkhorn_normalize");
  if (iters < 0) throw ContractError("sinkhorn_normalize: negative iteration count");
  Matrix x = m;
  for (int k = 0; k < iters; ++k) {
    normalize_rows_inplace(x);
    normalize_cols_inplace(x);
  }
  normalize_rows_inplace(x);
  return x;
}

Var sinkhorn(Var m, int iters) {
  require_positive(m.matrix(), "sinkhorn");
  if (iters < 0) throw ContractError("sinkhorn: negative iteration count");
  Var x = m;
  for (int k = 0; k < iters; ++k) x = normalize_cols(normalize_rows(x));
  return normalize_rows(x);
}

SinkhornConvergence sinkhorn_to_convergence(const Matrix& m, double tol, int max_iters) {
  require_positive(m, "sinkhorn_to_convergence");
  SinkhornConvergence out;
  Matrix x = m;
  for (int k = 0; k < max_iters; ++k) {
    const Matrix prev = x;
    normalize_rows_inplace(x);
    normalize_cols_inplace(x);
    out.iterations = k + 1;
    out.last_change = (x - prev).cwiseAbs().maxCoeff();
    if (out.last_change < tol) break;
  }
  normalize_rows_inplace(x);
  out.result = std::move(x);
  return out;
}

double assignment_total(const Matrix& scores, const Permutation& p) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    total += scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p.assign[i]));
  return total;
}

Permutation hungarian(const Matrix& scores) {
  if (scores.rows() != scores.cols()) {
    throw ShapeError("hungarian: score matrix must be square, got " +
                     std::to_string(scores.rows()) + "x" + std::to_string(scores.cols()));
  }
  const std::size_t n = static_cast<std::size_t>(scores.rows());
  if (n == 0) return {};
  if (!scores.allFinite()) throw ContractError("hungarian: non-finite score");

  const Matrix cost = Matrix::Constant(scores.rows(), scores.cols(), scores.maxCoeff()) - scores;
  DualSolution sol = solve_min_cost(cost);

  const double scale = std::max(1.0, cost.cwiseAbs().maxCoeff());
  const double eps = 1e-10 * scale * static_cast<double>(n);
  std::vector<std::vector<bool>> tight(n, std::vector<bool>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      tight[i][j] = cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - sol.u[i] -
                        sol.v[j] <= eps;
  for (std::size_t i = 0; i < n; ++i) tight[i][sol.row_to_col[i]] = true;

  Permutation raw{sol.row_to_col};
  Permutation refined{TightGraphRefiner(std::move(tight), sol.row_to_col).run()};
  // Near-ties inside eps must never cost optimality.
  return assignment_total(scores, refined) >= assignment_total(scores, raw) ? refined : raw;
}

PaddedPair pad_to_common_size(const PointFeatureSet& a, const PointFeatureSet& b,
                              const std::optional<Matching>& gt) {
  a.validate();
  b.validate();
  if (a.dim() != b.dim()) {
    throw ShapeError("pad_to_common_size: feature dims differ (" + std::to_string(a.dim()) +
                     " vs " + std::to_string(b.dim()) + ")");
  }
  if (gt && gt->size() != a.size()) {
    throw ShapeError("pad_to_common_size: ground truth has " + std::to_string(gt->size()) +
                     " rows for " + std::to_string(a.size()) + " keypoints");
  }
  const std::size_t n = std::max(a.size(), b.size());
  auto pad = [n](const PointFeatureSet& s, std::vector<bool>& dummy) {
    PointFeatureSet out = s;
    const auto old = static_cast<Eigen::Index>(s.size());
    const auto rows = static_cast<Eigen::Index>(n);
    dummy.assign(n, false);
    if (s.size() == n) return out;
    out.features.conservativeResize(rows, Eigen::NoChange);
    out.features.bottomRows(rows - old).setZero();
    out.positions.conservativeResize(rows, Eigen::NoChange);
    out.positions.bottomRows(rows - old).setConstant(0.5);
    if (!out.labels.empty()) out.labels.resize(n, kDummyLabel);
    for (std::size_t i = s.size(); i < n; ++i) dummy[i] = true;
    return out;
  };
  PaddedPair out;
  out.a = pad(a, out.mask.dummy_a);
  out.b = pad(b, out.mask.dummy_b);
  if (gt) {
    Matching g = *gt;
    g.resize(n, -1);
    out.gt = std::move(g);
  }
  if (out.mask.empty()) out.mask = {};
  return out;
}

Matrix matching_matrix(const Matching& gt, std::size_t rows, std::size_t cols) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < gt.size() && i < rows; ++i) {
    if (gt[i] < 0) continue;
    if (static_cast<std::size_t>(gt[i]) >= cols) throw ShapeError("matching_matrix: column out of range");
    m(static_cast<Eigen::Index>(i), gt[i]) = 1.0;
  }
  return m;
}

Matrix valid_entries(const PaddingMask& mask, std::size_t rows, std::size_t cols) {
  Matrix w = Matrix::Ones(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i)
    if (mask.row_is_dummy(i)) w.row(static_cast<Eigen::Index>(i)).setZero();
  for (std::size_t j = 0; j < cols; ++j)
    if (mask.col_is_dummy(j)) w.col(static_cast<Eigen::Index>(j)).setZero();
  return w;
}

double qap_score(const Permutation& x, const Matrix& unary, const PairwiseAffinity& pairwise) {
  const std::size_t n = x.size();
  if (static_cast<std::size_t>(unary.rows()) != n || static_cast<std::size_t>(unary.cols()) != n) {
    throw ShapeError("qap_score: unary matrix does not match assignment size");
  }
  double h = assignment_total(unary, x);
  if (!pairwise) return h;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) h += pairwise(i, x.assign[i], j, x.assign[j]);
  return h;
}

double qap_score(const Permutation& x, const Matrix& unary, const Matrix& pairwise) {
  const auto n = static_cast<Eigen::Index>(x.size());
  if (pairwise.rows() != n * n || pairwise.cols() != n * n) {
    throw ShapeError("qap_score: pairwise affinity must be n²×n²");
  }
  return qap_score(x, unary, [&pairwise, n](std::size_t i, std::size_t a, std::size_t j, std::size_t b) {
    return pairwise(static_cast<Eigen::Index>(i) * n + static_cast<Eigen::Index>(a),
                    static_cast<Eigen::Index>(j) * n + static_cast<Eigen::Index>(b));
  });
}

double matching_accuracy(const Permutation& pred, const Matching& gt, const PaddingMask& mask) {
  if (pred.size() != gt.size()) {
    throw ShapeError("matching_accuracy: prediction has " + std::to_string(pred.size()) +
                     " rows, ground truth " + std::to_string(gt.size()));
  }
  std::size_t total = 0, correct = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] < 0 || mask.row_is_dummy(i) || mask.col_is_dummy(static_cast<std::size_t>(gt[i]))) continue;
    ++total;
    if (pred.assign[i] == static_cast<std::size_t>(gt[i])) ++correct;
  }
  if (total == 0) throw ContractError("matching_accuracy: no real ground-truth matches");
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace glam
