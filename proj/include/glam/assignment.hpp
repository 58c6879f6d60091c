#pragma once

#include "glam/common.hpp"
#include "glam/diffcore.hpp"
#include "glam/types.hpp"

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

namespace glam {

/// Soft assignment scores with an optional record of dummy rows/columns.
struct SoftAssignment {
  Matrix scores;
  PaddingMask mask;
};

// ---------------------------------------------------------------- Sinkhorn

/// Alternating row/column normalization: `iters` rounds of (rows, cols)
/// followed by one final row normalization, so every row sums to one.
/// Throws ContractError on non-positive entries.
Matrix sinkhorn_normalize(const Matrix& m, int iters);

/// Differentiable variant recorded on the tape of `m`.
Var sinkhorn(Var m, int iters);

struct SinkhornConvergence {
  Matrix result;
  int iterations = 0;
  double last_change = 0.0;
};

/// Runs row/column rounds until the max entry change drops below `tol`,
/// then finishes with a row normalization. Used as a reference in tests.
SinkhornConvergence sinkhorn_to_convergence(const Matrix& m, double tol = 1e-12,
                                            int max_iters = 1000000);

// ---------------------------------------------------------------- Hungarian

/// Maximum-weight perfect matching on a square score matrix.
///
/// Solved as cost minimization over (max(scores) - scores) with the O(n^3)
/// shortest-augmenting-path method. Among all optimal permutations the
/// lexicographically smallest one (by row 0's column, then row 1's, ...) is
/// returned, so all-equal scores yield the identity.
Permutation hungarian(const Matrix& scores);

double assignment_total(const Matrix& scores, const Permutation& p);

// ---------------------------------------------------------------- padding

struct PaddedPair {
  PointFeatureSet a;
  PointFeatureSet b;
  std::optional<Matching> gt;
  PaddingMask mask;
};

/// Pads the smaller set with dummy keypoints (zero features, centroid
/// position, label kDummyLabel) so both sets have the same size.
PaddedPair pad_to_common_size(const PointFeatureSet& a, const PointFeatureSet& b,
                              const std::optional<Matching>& gt = std::nullopt);

/// Binary ground-truth matrix of size rows×cols from a partial matching.
Matrix matching_matrix(const Matching& gt, std::size_t rows, std::size_t cols);

/// 1 where both the row and the column are real keypoints, 0 otherwise.
Matrix valid_entries(const PaddingMask& mask, std::size_t rows, std::size_t cols);

// ---------------------------------------------------------------- diagnostics

/// d(i, a, j, b): affinity between edge (i, j) in A and edge (a, b) in B.
using PairwiseAffinity = std::function<double(std::size_t i, std::size_t a, std::size_t j,
                                              std::size_t b)>;

/// Global consistency H = Σ c_ia X_ia + Σ d_ia,jb X_ia X_jb for a discrete X.
double qap_score(const Permutation& x, const Matrix& unary, const PairwiseAffinity& pairwise);

/// Same, with a dense n²×n² affinity matrix indexed by (i*n + a, j*n + b).
double qap_score(const Permutation& x, const Matrix& unary, const Matrix& pairwise);

/// Fraction of real ground-truth matches reproduced by `pred`.
/// Throws ContractError when there is no real ground-truth match to score.
double matching_accuracy(const Permutation& pred, const Matching& gt, const PaddingMask& mask = {});

}  // namespace glam
