#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace glam {

/// Dense row-major matrix used at module boundaries.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Lower bound for probabilities fed into logarithms and Sinkhorn.
inline constexpr double kProbFloor = 1e-12;

/// Violated precondition or invariant of an operation.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Operand shapes that do not fit together.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// For each row of image A, the matched column in image B, or -1.
using Matching = std::vector<int>;

/// A full one-to-one assignment: row i is matched to column assign[i].
struct Permutation {
  std::vector<std::size_t> assign;

  std::size_t size() const { return assign.size(); }
  bool is_bijective() const;
};

}  // namespace glam
