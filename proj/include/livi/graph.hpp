#pragma once

// Reverse-mode differentiation over dense tensors.
//
// A Var is a shared handle to a node of a dynamically built computation
// graph. Each op records its parents and a closure that scatters the node's
// gradient into them. backward() sweeps the graph once in reverse
// topological order. Leaf gradients accumulate across sweeps until
// zero_grad() is called; interior gradients are recomputed per sweep.

#include "livi/rng.hpp"
#include "livi/tensor.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string_view>
#include <vector>

namespace livi {

enum class Activation { Identity, Elu, Tanh, Relu, Exp, Log, Square };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view s);

struct Node {
  Tensor value;
  Tensor grad;  // empty until the first backward sweep touches the node
  bool requires_grad = false;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
  Tensor& grad_buffer();
};

class Var {
public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  double item() const { return node_->value.item(); }
  bool requires_grad() const { return node_->requires_grad; }
  std::string_view op() const { return node_->op; }

  bool has_grad() const { return node_->grad.size() != 0; }
  /// Gradient buffer; zeros until a sweep reaches this node.
  const Tensor& grad() const;
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

private:
  std::shared_ptr<Node> node_;
};

namespace ag {

Var constant(Tensor t);
Var constant(double v);
/// Trainable leaf.
Var parameter(Tensor t);

/// Standard normal draws; never differentiable.
Var sample_standard_normal(RngStream& rng, const Shape& shape);

/// [p,q]x[q,r] -> [p,r]. A rank-1 right operand is a column ([p,q]x[q] -> [p]);
/// a rank-1 left operand is a row ([q]x[q,r] -> [r]).
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
/// Matrix [n,k] plus row vector [k] broadcast over rows.
Var add_row(const Var& m, const Var& row);
/// diag(v) * M for v [n], M [n,k]; also accepts M of rank 1 (elementwise).
Var scale_rows(const Var& v, const Var& m);

Var elementwise(const Var& a, Activation fn);
/// Pointwise fn'(a); itself differentiable (uses fn'').
Var activation_derivative(const Var& a, Activation fn);

enum class Reduce { Sum, Mean };
/// Full reduction to a scalar, or along axis 0/1 of a matrix.
Var reduce(const Var& a, Reduce kind, std::optional<std::size_t> axis = std::nullopt);
inline Var sum(const Var& a) { return reduce(a, Reduce::Sum); }
inline Var mean(const Var& a) { return reduce(a, Reduce::Mean); }
Var dot(const Var& a, const Var& b);

/// Contiguous view into the flat storage of a, given a new shape.
Var slice(const Var& a, std::size_t offset, Shape shape);
Var reshape(const Var& a, Shape shape);
/// Flat concatenation of all inputs into a vector.
Var concat(const std::vector<Var>& parts);
/// Stack equally-shaped matrices [r_i, c] vertically.
Var concat_rows(const std::vector<Var>& parts);
/// Stack vectors of equal length n as the columns of an [n, k] matrix.
Var stack_columns(const std::vector<Var>& cols);
/// Column j of a matrix as a vector.
Var column(const Var& m, std::size_t j);

/// a + c*I for a square matrix.
Var add_diagonal(const Var& a, double c);
/// log det of a symmetric positive definite matrix via Cholesky.
Var logdet_spd(const Var& a);

/// Row-wise log-softmax of an [n,k] matrix.
Var log_softmax_rows(const Var& logits);
/// out[i] = m[i, idx[i]].
Var gather_rows(const Var& m, const std::vector<std::size_t>& idx);

/// Kronecker product [p,q] (x) [r,s] -> [pr, qs].
Var kron(const Var& a, const Var& b);

/// While alive, ops on this thread record no parents, so results are
/// plain values even when inputs are trainable.
class NoGradScope {
public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

private:
  bool previous_;
};

/// Single sweep from a scalar root.
void backward(const Var& root);

/// Number of activation derivatives evaluated exactly at a kink (relu/elu
/// at 0) on this thread. The one-sided (left) derivative is used there.
std::size_t& kink_counter();

}  // namespace ag

inline Var operator+(const Var& a, const Var& b) { return ag::add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return ag::sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return ag::mul(a, b); }
inline Var operator*(double c, const Var& a) { return ag::scale(a, c); }
inline Var operator+(const Var& a, double c) { return ag::add_scalar(a, c); }

}  // namespace livi
