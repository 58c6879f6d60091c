#include "glam/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace glam {

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

ConstMap view(const Tensor& t) {
  return ConstMap(t.values.data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

MutMap view(std::vector<double>& buf, std::size_t rows, std::size_t cols) {
  return MutMap(buf.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.shape.size() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " +
                     shape_string(t.shape));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape) + " vs " +
                     shape_string(b.shape));
  }
}

void require_same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
}

Tensor like(const Tensor& t) { return Tensor(t.shape); }

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)) {
  const std::size_t n =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  values.assign(n, fill);
}

Tensor::Tensor(std::size_t r, std::size_t c, std::initializer_list<double> data)
    : shape{r, c}, values(data) {
  if (values.size() != r * c) {
    throw ShapeError("Tensor: " + std::to_string(values.size()) + " values for shape " +
                     shape_string(shape));
  }
}

Tensor Tensor::from_matrix(const Matrix& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  std::copy(m.data(), m.data() + m.size(), t.values.begin());
  return t;
}

Matrix Tensor::to_matrix() const { return view(*this); }

Matrix Tensor::grad_matrix() const {
  if (!has_grad()) return Matrix::Zero(static_cast<Eigen::Index>(rows()),
                                       static_cast<Eigen::Index>(cols()));
  return ConstMap(grad.data(), static_cast<Eigen::Index>(rows()),
                  static_cast<Eigen::Index>(cols()));
}

std::size_t Tensor::rows() const {
  if (shape.size() == 2) return shape[0];
  return shape.empty() ? 0 : 1;
}

std::size_t Tensor::cols() const {
  if (shape.size() == 2) return shape[1];
  return shape.empty() ? 0 : shape[0];
}

void Tensor::zero_grad() { grad.assign(values.size(), 0.0); }

std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------- Var / Tape

const Tensor& Var::value() const { return tape_->value(id_); }
const std::vector<double>& Var::adjoint() const { return tape_->adjoint(id_); }

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.own;
}

Var Tape::constant(Tensor value) {
  Node n;
  n.own = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(Tensor& param) {
  Node n;
  n.ref = &param;
  n.sink = &param;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::frozen(const Tensor& param) {
  Node n;
  n.ref = &param;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<std::size_t> operands, Backward fn) {
  return record(std::move(value), std::span<const std::size_t>(operands.begin(), operands.size()),
                std::move(fn));
}

Var Tape::record(Tensor value, std::span<const std::size_t> operands, Backward fn) {
  Node n;
  n.own = std::move(value);
  n.needs_grad = std::any_of(operands.begin(), operands.end(),
                             [this](std::size_t id) { return nodes_[id].needs_grad; });
  if (n.needs_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  const std::size_t root = loss.id();
  if (value(root).size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_string(value(root).shape));
  }
  for (std::size_t i = 0; i <= root; ++i) {
    Node& n = nodes_[i];
    if (n.needs_grad) n.adj.assign(value(i).size(), 0.0);
  }
  if (!nodes_[root].needs_grad) return;
  nodes_[root].adj[0] = 1.0;
  for (std::size_t i = root + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad) continue;
    if (n.backward) {
      n.backward(*this, i);
    } else if (n.sink) {
      if (!n.sink->has_grad()) n.sink->zero_grad();
      for (std::size_t k = 0; k < n.adj.size(); ++k) n.sink->grad[k] += n.adj[k];
    }
  }
}

// ---------------------------------------------------------------- operations

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions disagree " + shape_string(av.shape) + " · " +
                     shape_string(bv.shape));
  }
  const std::size_t m = av.rows(), n = bv.cols();
  Tensor out({m, n});
  view(out.values, m, n).noalias() = view(av) * view(bv);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib, m, n](Tape& t, std::size_t self) {
    const auto g = ConstMap(t.adjoint(self).data(), static_cast<Eigen::Index>(m),
                            static_cast<Eigen::Index>(n));
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    if (t.needs_grad(ia)) view(t.adjoint(ia), A.rows(), A.cols()).noalias() += g * view(B).transpose();
    if (t.needs_grad(ib)) view(t.adjoint(ib), B.rows(), B.cols()).noalias() += view(A).transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul_nt");
  require_matrix(bv, "matmul_nt");
  if (av.cols() != bv.cols()) {
    throw ShapeError("matmul_nt: inner dimensions disagree " + shape_string(av.shape) + " · " +
                     shape_string(bv.shape) + "ᵀ");
  }
  const std::size_t m = av.rows(), n = bv.rows();
  Tensor out({m, n});
  view(out.values, m, n).noalias() = view(av) * view(bv).transpose();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib, m, n](Tape& t, std::size_t self) {
    const auto g = ConstMap(t.adjoint(self).data(), static_cast<Eigen::Index>(m),
                            static_cast<Eigen::Index>(n));
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    if (t.needs_grad(ia)) view(t.adjoint(ia), A.rows(), A.cols()).noalias() += g * view(B);
    if (t.needs_grad(ib)) view(t.adjoint(ib), B.rows(), B.cols()).noalias() += g.transpose() * view(A);
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  require_matrix(av, "transpose");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({n, m});
  view(out.values, n, m) = view(av).transpose();
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, m, n](Tape& t, std::size_t self) {
    const auto g = ConstMap(t.adjoint(self).data(), static_cast<Eigen::Index>(n),
                            static_cast<Eigen::Index>(m));
    view(t.adjoint(ia), m, n) += g.transpose();
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out.grad.clear();
  const auto& bv = b.value().values;
  for (std::size_t k = 0; k < out.size(); ++k) out.values[k] += bv[k];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.adjoint(self);
    for (std::size_t id : {ia, ib}) {
      if (!t.needs_grad(id)) continue;
      auto& d = t.adjoint(id);
      for (std::size_t k = 0; k < g.size(); ++k) d[k] += g[k];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  out.grad.clear();
  const auto& bv = b.value().values;
  for (std::size_t k = 0; k < out.size(); ++k) out.values[k] -= bv[k];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.adjoint(self);
    if (t.needs_grad(ia)) {
      auto& d = t.adjoint(ia);
      for (std::size_t k = 0; k < g.size(); ++k) d[k] += g[k];
    }
    if (t.needs_grad(ib)) {
      auto& d = t.adjoint(ib);
      for (std::size_t k = 0; k < g.size(); ++k) d[k] -= g[k];
    }
  });
}

Var hadamard(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "hadamard");
  Tensor out = like(a.value());
  const auto& av = a.value().values;
  const auto& bv = b.value().values;
  for (std::size_t k = 0; k < out.size(); ++k) out.values[k] = av[k] * bv[k];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.adjoint(self);
    const auto& av = t.value(ia).values;
    const auto& bv = t.value(ib).values;
    if (t.needs_grad(ia)) {
      auto& d = t.adjoint(ia);
      for (std::size_t k = 0; k < g.size(); ++k) d[k] += g[k] * bv[k];
    }
    if (t.needs_grad(ib)) {
      auto& d = t.adjoint(ib);
      for (std::size_t k = 0; k < g.size(); ++k) d[k] += g[k] * av[k];
    }
  });
}

Var affine(Var a, double alpha, double beta) {
  Tensor out = like(a.value());
  const auto& av = a.value().values;
  for (std::size_t k = 0; k < out.size(); ++k) out.values[k] = alpha * av[k] + beta;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, alpha](Tape& t, std::size_t self) {
    const auto& g = t.adjoint(self);
    auto& d = t.adjoint(ia);
    for (std::size_t k = 0; k < g.size(); ++k) d[k] += alpha * g[k];
  });
}

Var add_row_broadcast(Var a, Var row) {
  require_same_tape(a, row);
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  require_matrix(av, "add_row_broadcast");
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw ShapeError("add_row_broadcast: row " + shape_string(rv.shape) + " does not fit " +
                     shape_string(av.shape));
  }
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out = av;
  out.grad.clear();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out.values[r * n + c] += rv.values[c];
  const std::size_t ia = a.id(), ir = row.id();
  return a.tape().record(std::move(out), {ia, ir}, [ia, ir, m, n](Tape& t, std::size_t self) {
    const auto& g = t.adjoint(self);
    if (t.needs_grad(ia)) {
      auto& d = t.adjoint(ia);
      for (std::size_t k = 0; k < g.size(); ++k) d[k] += g[k];
    }
    if (t.needs_grad(ir)) {
      auto& d = t.adjoint(ir);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) d[c] += g[r * n + c];
    }
  });
}

Var relu(Var a) {
  Tensor out = like(a.value());
  const auto& av = a.value().values;
  for (std::size_t k = 0; k < out.size(); ++k) out.values[k] = av[k] > 0.0 ? av[k] : 0.0;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const auto& g = t.adjoint(self);
    const auto& av = t.value(ia).values;
    auto& d = t.adjoint(ia);
    // Subgradient at exactly zero is zero.
    for (std::size_t k = 0; k < g.size(); ++k)
      if (av[k] > 0.0) d[k] += g[k];
  });
}

Var sigmoid(Var a) {
  Tensor out = like(a.value());
  const auto& av = a.value().values;
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double z = av[k];
    const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    out.values[k] = std::max(s, kProbFloor);
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const auto& g = t.adjoint(self);
    const auto& y = t.value(self).values;
    auto& d = t.adjoint(ia);
    for (std::size_t k = 0; k < g.size(); ++k)
      if (y[k] > kProbFloor) d[k] += g[k] * y[k] * (1.0 - y[k]);
  });
}

Var log_clamped(Var a, double lo, double hi) {
  if (!(lo > 0.0) || !(lo <= hi)) throw ContractError("log_clamped: need 0 < lo <= hi");
  Tensor out = like(a.value());
  const auto& av = a.value().values;
  for (std::size_t k = 0; k < out.size(); ++k) out.values[k] = std::log(std::clamp(av[k], lo, hi));
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, lo, hi](Tape& t, std::size_t self) {
    const auto& g = t.adjoint(self);
    const auto& av = t.value(ia).values;
    auto& d = t.adjoint(ia);
    for (std::size_t k = 0; k < g.size(); ++k)
      if (av[k] >= lo && av[k] <= hi) d[k] += g[k] / av[k];
  });
}

Var row_softmax(Var a) {
  const Tensor& av = a.value();
  require_matrix(av, "row_softmax");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({m, n});
  for (std::size_t r = 0; r < m; ++r) {
    const double* in = av.values.data() + r * n;
    double* o = out.values.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < n; ++c) o[c] /= s;
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, m, n](Tape& t, std::size_t self) {
    const auto& g = t.adjoint(self);
    const auto& y = t.value(self).values;
    auto& d = t.adjoint(ia);
    for (std::size_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * y[r * n + c];
      for (std::size_t c = 0; c < n; ++c) d[r * n + c] += y[r * n + c] * (g[r * n + c] - dot);
    }
  });
}

Var normalize_rows(Var a) {
  const Tensor& av = a.value();
  require_matrix(av, "normalize_rows");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({m, n});
  std::vector<double> sums(m, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) sums[r] += av.values[r * n + c];
    if (!(sums[r] > 0.0)) throw ContractError("normalize_rows: non-positive row sum");
    for (std::size_t c = 0; c < n; ++c) out.values[r * n + c] = av.values[r * n + c] / sums[r];
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia},
                         [ia, m, n, sums = std::move(sums)](Tape& t, std::size_t self) {
                           const auto& g = t.adjoint(self);
                           const auto& y = t.value(self).values;
                           auto& d = t.adjoint(ia);
                           for (std::size_t r = 0; r < m; ++r) {
                             double dot = 0.0;
                             for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * y[r * n + c];
                             for (std::size_t c = 0; c < n; ++c)
                               d[r * n + c] += (g[r * n + c] - dot) / sums[r];
                           }
                         });
}

Var normalize_cols(Var a) {
  const Tensor& av = a.value();
  require_matrix(av, "normalize_cols");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({m, n});
  std::vector<double> sums(n, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) sums[c] += av.values[r * n + c];
  for (std::size_t c = 0; c < n; ++c)
    if (!(sums[c] > 0.0)) throw ContractError("normalize_cols: non-positive column sum");
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out.values[r * n + c] = av.values[r * n + c] / sums[c];
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia},
                         [ia, m, n, sums = std::move(sums)](Tape& t, std::size_t self) {
                           const auto& g = t.adjoint(self);
                           const auto& y = t.value(self).values;
                           auto& d = t.adjoint(ia);
                           std::vector<double> dots(n, 0.0);
                           for (std::size_t r = 0; r < m; ++r)
                             for (std::size_t c = 0; c < n; ++c) dots[c] += g[r * n + c] * y[r * n + c];
                           for (std::size_t r = 0; r < m; ++r)
                             for (std::size_t c = 0; c < n; ++c)
                               d[r * n + c] += (g[r * n + c] - dots[c]) / sums[c];
                         });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const std::size_t m = parts.front().rows();
  std::vector<std::size_t> ids, widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p);
    require_matrix(p.value(), "concat_cols");
    if (p.rows() != m) {
      throw ShapeError("concat_cols: row-count mismatch " + std::to_string(p.rows()) + " vs " +
                       std::to_string(m));
    }
    ids.push_back(p.id());
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor out({m, total});
  std::size_t off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& pv = parts[i].value().values;
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(pv.data() + r * widths[i], widths[i], out.values.data() + r * total + off);
    off += widths[i];
  }
  Tape& tape = parts.front().tape();
  return tape.record(std::move(out), ids,
                     [ids, widths, m, total](Tape& t, std::size_t self) {
                       const auto& g = t.adjoint(self);
                       std::size_t off = 0;
                       for (std::size_t i = 0; i < ids.size(); ++i) {
                         if (t.needs_grad(ids[i])) {
                           auto& d = t.adjoint(ids[i]);
                           for (std::size_t r = 0; r < m; ++r)
                             for (std::size_t c = 0; c < widths[i]; ++c)
                               d[r * widths[i] + c] += g[r * total + off + c];
                         }
                         off += widths[i];
                       }
                     });
}

Var sum(Var a) {
  const auto& av = a.value().values;
  Tensor out({1, 1});
  out.values[0] = std::accumulate(av.begin(), av.end(), 0.0);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const double g = t.adjoint(self)[0];
    for (double& d : t.adjoint(ia)) d += g;
  });
}

}  // namespace glam
