#include "livi/graph.hpp"

#include "livi/errors.hpp"

#include <cmath>
#include <string>
#include <unordered_set>

namespace livi {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Elu: return "elu";
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Exp: return "exp";
    case Activation::Log: return "log";
    case Activation::Square: return "square";
  }
  return "identity";
}

Activation activation_from_string(std::string_view s) {
  if (s == "identity") return Activation::Identity;
  if (s == "elu") return Activation::Elu;
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  if (s == "exp") return Activation::Exp;
  if (s == "log") return Activation::Log;
  if (s == "square") return Activation::Square;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

Tensor& Node::grad_buffer() {
  if (grad.size() == 0) grad = Tensor(value.shape(), 0.0);
  return grad;
}

const Tensor& Var::grad() const { return node_->grad_buffer(); }

void Var::zero_grad() {
  if (node_->grad.size() != 0) node_->grad.fill(0.0);
}

namespace ag {
namespace {

using NodePtr = std::shared_ptr<Node>;

bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

Var make(Tensor value, std::string_view op, std::vector<NodePtr> parents,
         std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  bool rg = false;
  if (grad_enabled())
    for (const auto& p : parents) rg = rg || p->requires_grad;
  n->requires_grad = rg;
  if (rg) {
    n->parents = std::move(parents);
    n->backward = std::move(bw);
  }
  return Var(std::move(n));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
}

double act(Activation fn, double x) {
  switch (fn) {
    case Activation::Identity: return x;
    case Activation::Elu: return x > 0.0 ? x : std::expm1(x);
    case Activation::Tanh: return std::tanh(x);
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Exp: return std::exp(x);
    case Activation::Log: return std::log(x);
    case Activation::Square: return x * x;
  }
  return x;
}

double act_d1(Activation fn, double x) {
  switch (fn) {
    case Activation::Identity: return 1.0;
    case Activation::Elu: return x > 0.0 ? 1.0 : std::exp(x);
    case Activation::Tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::Relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::Exp: return std::exp(x);
    case Activation::Log: return 1.0 / x;
    case Activation::Square: return 2.0 * x;
  }
  return 1.0;
}

double act_d2(Activation fn, double x) {
  switch (fn) {
    case Activation::Identity: return 0.0;
    case Activation::Elu: return x > 0.0 ? 0.0 : std::exp(x);
    case Activation::Tanh: {
      const double t = std::tanh(x);
      return -2.0 * t * (1.0 - t * t);
    }
    case Activation::Relu: return 0.0;
    case Activation::Exp: return std::exp(x);
    case Activation::Log: return -1.0 / (x * x);
    case Activation::Square: return 2.0;
  }
  return 0.0;
}

bool has_kink(Activation fn) { return fn == Activation::Relu || fn == Activation::Elu; }

}  // namespace

std::size_t& kink_counter() {
  thread_local std::size_t count = 0;
  return count;
}

Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->op = "constant";
  return Var(std::move(n));
}

Var constant(double v) { return constant(Tensor::scalar(v)); }

Var parameter(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->op = "parameter";
  n->requires_grad = true;
  return Var(std::move(n));
}

Var sample_standard_normal(RngStream& rng, const Shape& shape) {
  Tensor t(shape);
  for (auto& v : t.storage()) v = rng.normal();
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->op = "normal";
  return Var(std::move(n));
}

Var matmul(const Var& a, const Var& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.rank() < 1 || sa.rank() > 2 || sb.rank() < 1 || sb.rank() > 2)
    throw DimensionError("matmul: operands must be rank 1 or 2, got " + sa.str() + " x " + sb.str());
  // Rank-1 left operand acts as a row, rank-1 right operand as a column.
  const std::size_t p = sa.rank() == 1 ? 1 : sa[0];
  const std::size_t q = sa.rank() == 1 ? sa[0] : sa[1];
  const std::size_t q2 = sb[0];
  const std::size_t r = sb.rank() == 1 ? 1 : sb[1];
  if (q != q2) throw DimensionError("matmul: inner dimensions " + sa.str() + " x " + sb.str());

  Shape out_shape = sa.rank() == 1 ? (sb.rank() == 1 ? Shape{} : Shape{r})
                                   : (sb.rank() == 1 ? Shape{p} : Shape{p, r});
  Tensor out(out_shape);
  ConstMatrixMap A(a.value().data().data(), p, q);
  ConstMatrixMap B(b.value().data().data(), q, r);
  MatrixMap C(out.storage().data(), p, r);
  C.noalias() = A * B;

  return make(std::move(out), "matmul", {a.node(), b.node()}, [p, q, r](Node& n) {
    ConstMatrixMap G(n.grad.data().data(), p, r);
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) {
      MatrixMap GA(pa.grad_buffer().storage().data(), p, q);
      ConstMatrixMap B(pb.value.data().data(), q, r);
      GA.noalias() += G * B.transpose();
    }
    if (pb.requires_grad) {
      MatrixMap GB(pb.grad_buffer().storage().data(), q, r);
      ConstMatrixMap A(pa.value.data().data(), p, q);
      GB.noalias() += A.transpose() * G;
    }
  });
}

Var transpose(const Var& a) {
  if (a.shape().rank() != 2) throw DimensionError("transpose: expected a matrix, got " + a.shape().str());
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor out(Shape{c, r});
  out.mat() = a.value().mat().transpose();
  return make(std::move(out), "transpose", {a.node()}, [r, c](Node& n) {
    MatrixMap GA(n.parents[0]->grad_buffer().storage().data(), r, c);
    GA += ConstMatrixMap(n.grad.data().data(), c, r).transpose();
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  out.vec() = a.value().vec() + b.value().vec();
  return make(std::move(out), "add", {a.node(), b.node()}, [](Node& n) {
    for (auto& p : n.parents)
      if (p->requires_grad) p->grad_buffer().vec() += n.grad.vec();
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  out.vec() = a.value().vec() - b.value().vec();
  return make(std::move(out), "sub", {a.node(), b.node()}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->grad_buffer().vec() += n.grad.vec();
    if (n.parents[1]->requires_grad) n.parents[1]->grad_buffer().vec() -= n.grad.vec();
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  out.vec() = a.value().vec().cwiseProduct(b.value().vec());
  return make(std::move(out), "mul", {a.node(), b.node()}, [](Node& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) pa.grad_buffer().vec() += n.grad.vec().cwiseProduct(pb.value.vec());
    if (pb.requires_grad) pb.grad_buffer().vec() += n.grad.vec().cwiseProduct(pa.value.vec());
  });
}

Var scale(const Var& a, double c) {
  Tensor out(a.shape());
  out.vec() = c * a.value().vec();
  return make(std::move(out), "scale", {a.node()},
              [c](Node& n) { n.parents[0]->grad_buffer().vec() += c * n.grad.vec(); });
}

Var add_scalar(const Var& a, double c) {
  Tensor out(a.shape());
  out.vec() = a.value().vec().array() + c;
  return make(std::move(out), "add_scalar", {a.node()},
              [](Node& n) { n.parents[0]->grad_buffer().vec() += n.grad.vec(); });
}

Var add_row(const Var& m, const Var& row) {
  if (m.shape().rank() != 2 || row.shape().rank() != 1 || row.shape()[0] != m.shape()[1])
    throw DimensionError("add_row: " + m.shape().str() + " + " + row.shape().str());
  Tensor out = m.value();
  out.mat().rowwise() += row.value().vec().transpose();
  return make(std::move(out), "add_row", {m.node(), row.node()}, [](Node& n) {
    auto& pm = *n.parents[0];
    auto& pr = *n.parents[1];
    if (pm.requires_grad) pm.grad_buffer().vec() += n.grad.vec();
    if (pr.requires_grad) pr.grad_buffer().vec() += n.grad.mat().colwise().sum().transpose();
  });
}

Var scale_rows(const Var& v, const Var& m) {
  if (v.shape().rank() != 1 || m.shape().rank() < 1 || m.shape().rank() > 2 ||
      m.shape()[0] != v.shape()[0])
    throw DimensionError("scale_rows: " + v.shape().str() + " * " + m.shape().str());
  Tensor out = m.value();
  out.mat().array().colwise() *= v.value().vec().array();
  return make(std::move(out), "scale_rows", {v.node(), m.node()}, [](Node& n) {
    auto& pv = *n.parents[0];
    auto& pm = *n.parents[1];
    if (pv.requires_grad)
      pv.grad_buffer().vec() += n.grad.mat().cwiseProduct(pm.value.mat()).rowwise().sum();
    if (pm.requires_grad) {
      Matrix g = n.grad.mat();
      g.array().colwise() *= pv.value.vec().array();
      pm.grad_buffer().mat() += g;
    }
  });
}

Var elementwise(const Var& a, Activation fn) {
  if (fn == Activation::Log) {
    for (double x : a.value().data())
      if (!(x > 0.0)) throw DomainError("log of non-positive value " + std::to_string(x));
  }
  Tensor out(a.shape());
  const auto in = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = act(fn, in[i]);
  return make(std::move(out), to_string(fn), {a.node()}, [fn](Node& n) {
    auto& p = *n.parents[0];
    auto g = p.grad_buffer().data();
    const auto x = p.value.data();
    const auto up = n.grad.data();
    for (std::size_t i = 0; i < x.size(); ++i) g[i] += up[i] * act_d1(fn, x[i]);
  });
}

Var activation_derivative(const Var& a, Activation fn) {
  Tensor out(a.shape());
  const auto in = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (has_kink(fn) && in[i] == 0.0) ++kink_counter();
    if (fn == Activation::Log && !(in[i] > 0.0))
      throw DomainError("log derivative of non-positive value");
    o[i] = act_d1(fn, in[i]);
  }
  return make(std::move(out), "activation_derivative", {a.node()}, [fn](Node& n) {
    auto& p = *n.parents[0];
    auto g = p.grad_buffer().data();
    const auto x = p.value.data();
    const auto up = n.grad.data();
    for (std::size_t i = 0; i < x.size(); ++i) g[i] += up[i] * act_d2(fn, x[i]);
  });
}

Var reduce(const Var& a, Reduce kind, std::optional<std::size_t> axis) {
  const bool mean = kind == Reduce::Mean;
  if (!axis) {
    const double n = static_cast<double>(a.size());
    const double s = a.value().vec().sum();
    return make(Tensor::scalar(mean ? s / n : s), mean ? "mean" : "sum", {a.node()},
                [mean, n](Node& node) {
                  const double g = node.grad[0] * (mean ? 1.0 / n : 1.0);
                  node.parents[0]->grad_buffer().vec().array() += g;
                });
  }
  const auto& sh = a.shape();
  if (*axis >= sh.rank())
    throw DimensionError("reduce: axis " + std::to_string(*axis) + " out of range for " + sh.str());
  if (sh.rank() == 1) return reduce(a, kind);
  if (sh.rank() != 2) throw DimensionError("reduce: axis reduction supports rank <= 2");
  const std::size_t r = sh[0], c = sh[1];
  Tensor out;
  if (*axis == 0) {
    out = Tensor(Shape{c});
    out.vec() = a.value().mat().colwise().sum().transpose();
    if (mean) out.vec() /= static_cast<double>(r);
  } else {
    out = Tensor(Shape{r});
    out.vec() = a.value().mat().rowwise().sum();
    if (mean) out.vec() /= static_cast<double>(c);
  }
  const std::size_t ax = *axis;
  return make(std::move(out), mean ? "mean_axis" : "sum_axis", {a.node()},
              [ax, mean, r, c](Node& n) {
                auto G = n.parents[0]->grad_buffer().mat();
                if (ax == 0) {
                  const double f = mean ? 1.0 / static_cast<double>(r) : 1.0;
                  G.rowwise() += f * n.grad.vec().transpose();
                } else {
                  const double f = mean ? 1.0 / static_cast<double>(c) : 1.0;
                  G.colwise() += f * n.grad.vec();
                }
              });
}

Var dot(const Var& a, const Var& b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  const double v = a.value().vec().dot(b.value().vec());
  return make(Tensor::scalar(v), "dot", {a.node(), b.node()}, [](Node& n) {
    const double g = n.grad[0];
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) pa.grad_buffer().vec() += g * pb.value.vec();
    if (pb.requires_grad) pb.grad_buffer().vec() += g * pa.value.vec();
  });
}

Var slice(const Var& a, std::size_t offset, Shape shape) {
  const std::size_t len = shape.numel();
  if (offset + len > a.size())
    throw DimensionError("slice: [" + std::to_string(offset) + ", " + std::to_string(offset + len) +
                         ") exceeds length " + std::to_string(a.size()));
  const auto src = a.value().data();
  Tensor out(std::move(shape), std::vector<double>(src.begin() + offset, src.begin() + offset + len));
  return make(std::move(out), "slice", {a.node()}, [offset, len](Node& n) {
    auto g = n.parents[0]->grad_buffer().data();
    const auto up = n.grad.data();
    for (std::size_t i = 0; i < len; ++i) g[offset + i] += up[i];
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make(std::move(out), "reshape", {a.node()},
              [](Node& n) { n.parents[0]->grad_buffer().vec() += n.grad.vec(); });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  std::vector<double> data;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    const auto d = p.value().data();
    data.insert(data.end(), d.begin(), d.end());
    parents.push_back(p.node());
  }
  Tensor out = Tensor::vector(std::move(data));
  return make(std::move(out), "concat", std::move(parents), [](Node& n) {
    std::size_t off = 0;
    const auto up = n.grad.data();
    for (auto& p : n.parents) {
      const std::size_t len = p->value.size();
      if (p->requires_grad) {
        auto g = p->grad_buffer().data();
        for (std::size_t i = 0; i < len; ++i) g[i] += up[off + i];
      }
      off += len;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t c = parts.front().shape().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.shape().rank() != 2 || p.shape()[1] != c)
      throw DimensionError("concat_rows: incompatible part " + p.shape().str());
    rows += p.shape()[0];
  }
  return reshape(concat(parts), Shape{rows, c});
}

Var stack_columns(const std::vector<Var>& cols) {
  if (cols.empty()) throw DimensionError("stack_columns: no inputs");
  const std::size_t n = cols.front().size();
  const std::size_t k = cols.size();
  Tensor out(Shape{n, k});
  std::vector<NodePtr> parents;
  for (std::size_t j = 0; j < k; ++j) {
    if (cols[j].shape().rank() != 1 || cols[j].size() != n)
      throw DimensionError("stack_columns: column " + std::to_string(j) + " has shape " +
                           cols[j].shape().str());
    out.mat().col(static_cast<Eigen::Index>(j)) = cols[j].value().vec();
    parents.push_back(cols[j].node());
  }
  return make(std::move(out), "stack_columns", std::move(parents), [k](Node& n) {
    for (std::size_t j = 0; j < k; ++j) {
      auto& p = *n.parents[j];
      if (p.requires_grad) p.grad_buffer().vec() += n.grad.mat().col(static_cast<Eigen::Index>(j));
    }
  });
}

Var column(const Var& m, std::size_t j) {
  if (m.shape().rank() != 2 || j >= m.shape()[1])
    throw DimensionError("column: index " + std::to_string(j) + " for " + m.shape().str());
  const std::size_t r = m.shape()[0];
  Tensor out(Shape{r});
  out.vec() = m.value().mat().col(static_cast<Eigen::Index>(j));
  return make(std::move(out), "column", {m.node()}, [j](Node& n) {
    n.parents[0]->grad_buffer().mat().col(static_cast<Eigen::Index>(j)) += n.grad.vec();
  });
}

Var add_diagonal(const Var& a, double c) {
  if (a.shape().rank() != 2 || a.shape()[0] != a.shape()[1])
    throw DimensionError("add_diagonal: expected a square matrix, got " + a.shape().str());
  Tensor out = a.value();
  out.mat().diagonal().array() += c;
  return make(std::move(out), "add_diagonal", {a.node()},
              [](Node& n) { n.parents[0]->grad_buffer().vec() += n.grad.vec(); });
}

Var logdet_spd(const Var& a) {
  if (a.shape().rank() != 2 || a.shape()[0] != a.shape()[1])
    throw DimensionError("logdet_spd: expected a square matrix, got " + a.shape().str());
  const Matrix A = a.value().mat();
  Eigen::LLT<Matrix> llt(A);
  if (llt.info() != Eigen::Success) throw DomainError("logdet_spd: matrix is not positive definite");
  const Matrix& L = llt.matrixLLT();
  double ld = 0.0;
  for (Eigen::Index i = 0; i < L.rows(); ++i) ld += std::log(L(i, i));
  ld *= 2.0;
  return make(Tensor::scalar(ld), "logdet_spd", {a.node()}, [llt = std::move(llt)](Node& n) {
    // d logdet(A) / dA = A^{-1} for symmetric A.
    const Eigen::Index k = llt.rows();
    const Matrix inv = llt.solve(Matrix::Identity(k, k));
    n.parents[0]->grad_buffer().mat() += n.grad[0] * inv;
  });
}

Var log_softmax_rows(const Var& logits) {
  if (logits.shape().rank() != 2) throw DimensionError("log_softmax_rows: expected a matrix");
  Tensor out = logits.value();
  auto M = out.mat();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    const double mx = M.row(i).maxCoeff();
    const double lse = mx + std::log((M.row(i).array() - mx).exp().sum());
    M.row(i).array() -= lse;
  }
  return make(std::move(out), "log_softmax", {logits.node()}, [](Node& n) {
    const auto Y = n.value.mat();
    const auto G = n.grad.mat();
    auto GA = n.parents[0]->grad_buffer().mat();
    const Matrix P = Y.array().exp();
    const Vector gs = G.rowwise().sum();
    Matrix contrib = G;
    contrib -= (P.array().colwise() * gs.array()).matrix();
    GA += contrib;
  });
}

Var gather_rows(const Var& m, const std::vector<std::size_t>& idx) {
  if (m.shape().rank() != 2 || idx.size() != m.shape()[0])
    throw DimensionError("gather_rows: index count does not match rows of " + m.shape().str());
  const std::size_t c = m.shape()[1];
  Tensor out(Shape{idx.size()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= c) throw DimensionError("gather_rows: column index out of range");
    out[i] = m.value()[i * c + idx[i]];
  }
  return make(std::move(out), "gather_rows", {m.node()}, [idx, c](Node& n) {
    auto g = n.parents[0]->grad_buffer().data();
    for (std::size_t i = 0; i < idx.size(); ++i) g[i * c + idx[i]] += n.grad[i];
  });
}

Var kron(const Var& a, const Var& b) {
  if (a.shape().rank() != 2 || b.shape().rank() != 2)
    throw DimensionError("kron: expected matrices, got " + a.shape().str() + " and " + b.shape().str());
  const std::size_t p = a.shape()[0], q = a.shape()[1], r = b.shape()[0], s = b.shape()[1];
  Tensor out(Shape{p * r, q * s});
  auto K = out.mat();
  const auto A = a.value().mat();
  const auto B = b.value().mat();
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j)
      K.block(i * r, j * s, r, s) = A(i, j) * B;
  return make(std::move(out), "kron", {a.node(), b.node()}, [p, q, r, s](Node& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    const auto G = n.grad.mat();
    const auto A = pa.value.mat();
    const auto B = pb.value.mat();
    if (pa.requires_grad) {
      auto GA = pa.grad_buffer().mat();
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) GA(i, j) += G.block(i * r, j * s, r, s).cwiseProduct(B).sum();
    }
    if (pb.requires_grad) {
      auto GB = pb.grad_buffer().mat();
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) GB += A(i, j) * G.block(i * r, j * s, r, s);
    }
  });
}

NoGradScope::NoGradScope() : previous_(grad_enabled()) { grad_enabled() = false; }
NoGradScope::~NoGradScope() { grad_enabled() = previous_; }

void backward(const Var& root) {
  if (root.size() != 1) throw ContractError("backward: root must be a scalar, got " + root.shape().str());
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order)
    if (!n->is_leaf()) n->grad = Tensor(n->value.shape(), 0.0);
  root.node()->grad_buffer()[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf() && n->backward) n->backward(*n);
  }
}

}  // namespace ag
}  // namespace livi
