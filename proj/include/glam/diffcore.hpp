#pragma once

// Define-by-run reverse-mode differentiation over dense double tensors.
//
// A Tape records every operation executed on it. Leaves are either constants
// or references to externally owned parameter tensors; after backward() the
// adjoint of every parameter leaf is added to that tensor's grad buffer.
// A Tape is confined to one thread and must not outlive the parameter
// tensors bound to it.

#include "glam/common.hpp"

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace glam {

using Shape = std::vector<std::size_t>;

struct Tensor {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a backward pass writes to it

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::initializer_list<double> data);

  static Tensor from_matrix(const Matrix& m);
  Matrix to_matrix() const;
  Matrix grad_matrix() const;

  std::size_t size() const { return values.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

  bool has_grad() const { return !grad.empty(); }
  void zero_grad();
};

std::string shape_string(const Shape& s);

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  /// Adjoint after backward(); empty if the node does not need a gradient.
  const std::vector<double>& adjoint() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Matrix matrix() const { return value().to_matrix(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Adds the node's adjoint into its operands' adjoints.
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf holding a private copy; never receives a gradient.
  Var constant(Tensor value);
  Var constant(const Matrix& m) { return constant(Tensor::from_matrix(m)); }
  /// Leaf referencing `param`; backward() accumulates into param.grad.
  Var parameter(Tensor& param);
  /// Leaf referencing `param` without gradient tracking and without a copy.
  Var frozen(const Tensor& param);

  /// Records an interior node. `fn` runs only if some operand needs a gradient.
  Var record(Tensor value, std::initializer_list<std::size_t> operands, Backward fn);
  Var record(Tensor value, std::span<const std::size_t> operands, Backward fn);

  /// Propagates d(loss)/d(node) through the tape. Repeated calls accumulate
  /// into parameter grads.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::vector<double>& adjoint(std::size_t id) { return nodes_[id].adj; }
  const std::vector<double>& adjoint(std::size_t id) const { return nodes_[id].adj; }

 private:
  struct Node {
    Tensor own;
    const Tensor* ref = nullptr;  // leaves bound to external storage
    Tensor* sink = nullptr;       // parameter receiving the gradient
    bool needs_grad = false;
    std::vector<double> adj;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// Operations. All operands must live on the same tape.

Var matmul(Var a, Var b);
/// a · bᵀ
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var hadamard(Var a, Var b);
/// alpha * a + beta, elementwise.
Var affine(Var a, double alpha, double beta = 0.0);
inline Var scale(Var a, double s) { return affine(a, s, 0.0); }
/// Adds a 1×n row vector to every row of an m×n matrix.
Var add_row_broadcast(Var a, Var row);
Var relu(Var a);
/// Logistic function, floored at kProbFloor so the output is strictly positive.
Var sigmoid(Var a);
/// log(clamp(a, lo, hi)); zero gradient where the clamp is active.
Var log_clamped(Var a, double lo = kProbFloor, double hi = 1.0 - kProbFloor);
Var row_softmax(Var a);
/// Divides each row by its sum. Requires strictly positive row sums.
Var normalize_rows(Var a);
/// Divides each column by its sum. Requires strictly positive column sums.
Var normalize_cols(Var a);
Var concat_cols(std::span<const Var> parts);
/// Sum of all entries, as a 1×1 tensor.
Var sum(Var a);

}  // namespace glam
