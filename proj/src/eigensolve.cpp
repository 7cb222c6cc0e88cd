#include "livi/eigensolve.hpp"

#include "livi/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace livi {

namespace {

// Orthonormalizes candidate into the basis (two Gram-Schmidt passes),
// carrying the operator image along. Returns false for a numerically
// dependent candidate.
bool append_orthonormal(std::vector<Vector>& basis, std::vector<Vector>& images, Vector v, Vector av) {
  const double n0 = v.norm();
  if (!(n0 > 0.0) || !std::isfinite(n0)) return false;
  for (int pass = 0; pass < 2; ++pass)
    for (std::size_t j = 0; j < basis.size(); ++j) {
      const double c = basis[j].dot(v);
      v -= c * basis[j];
      av -= c * images[j];
    }
  const double n1 = v.norm();
  if (n1 < 1e-10 * n0) return false;
  basis.push_back(v / n1);
  images.push_back(av / n1);
  return true;
}

}  // namespace

LobpcgResult lobpcg_min(const LinearMap& matvec, std::size_t d, RngStream& rng, const LobpcgOptions& opts) {
  if (d == 0) throw DimensionError("lobpcg: dimension must be positive");
  if (!(opts.tol > 0.0)) throw ContractError("lobpcg: tolerance must be positive");

  Vector x(static_cast<Eigen::Index>(d));
  if (opts.initial) {
    if (static_cast<std::size_t>(opts.initial->size()) != d) throw DimensionError("lobpcg: warm start has wrong length");
    x = *opts.initial;
  }
  if (!opts.initial || x.norm() == 0.0)
    for (auto& v : x) v = rng.normal();
  x.normalize();
  Vector ax = matvec(x);
  double lambda = x.dot(ax);
  double scale = std::max(std::abs(lambda), 1e-300);

  LobpcgResult res;
  res.history.push_back(lambda);
  Vector p, ap;
  double second_ritz = std::numeric_limits<double>::infinity();

  for (std::size_t it = 0;; ++it) {
    const Vector r = ax - lambda * x;
    res.residual = r.norm();
    res.iterations = it;
    if (res.residual < opts.tol * scale) {
      res.converged = true;
      break;
    }
    if (it >= opts.max_iter) break;

    Vector w = opts.preconditioner ? opts.preconditioner(r) : r;
    std::vector<Vector> basis{x}, images{ax};
    Vector aw = matvec(w);
    const bool has_w = append_orthonormal(basis, images, w, aw);
    if (p.size() > 0) append_orthonormal(basis, images, p, ap);
    if (!has_w && basis.size() == 1) {
      res.converged = res.residual < opts.tol * scale;
      break;
    }

    const auto k = static_cast<Eigen::Index>(basis.size());
    Matrix s(static_cast<Eigen::Index>(d), k), as(static_cast<Eigen::Index>(d), k);
    for (Eigen::Index j = 0; j < k; ++j) {
      s.col(j) = basis[static_cast<std::size_t>(j)];
      as.col(j) = images[static_cast<std::size_t>(j)];
    }
    Matrix g = s.transpose() * as;
    g = 0.5 * (g + g.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(g);
    const Vector c = eig.eigenvectors().col(0);
    const double ritz = eig.eigenvalues()(0);
    scale = std::max(scale, std::abs(eig.eigenvalues()(k - 1)));
    second_ritz = k > 1 ? eig.eigenvalues()(1) : std::numeric_limits<double>::infinity();

    // New search direction: the part of the update outside the current x.
    Vector c_tail = c;
    c_tail(0) = 0.0;
    p = s * c_tail;
    ap = as * c_tail;
    x = s * c;
    ax = as * c;
    const double nx = x.norm();
    x /= nx;
    ax /= nx;
    lambda = ritz;
    res.history.push_back(lambda);
  }
  res.eigenvalue = std::max(lambda, 0.0);
  res.eigenvector = x;
  res.near_degenerate = second_ritz - lambda < 1e-8 * std::abs(lambda);
  return res;
}

SingularSpectrum dense_svd(const Matrix& j) {
  if (static_cast<std::size_t>(j.size()) > kDenseEntryLimit)
    throw CapacityError("dense_svd: " + std::to_string(j.rows()) + "x" + std::to_string(j.cols()) +
                        " exceeds the dense entry limit");
  Eigen::BDCSVD<Matrix> svd(j, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector sv = svd.singularValues();
  const auto k = sv.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return sv(a) < sv(b); });
  SingularSpectrum out;
  out.left.resize(j.rows(), k);
  out.right.resize(j.cols(), k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto src = order[static_cast<std::size_t>(i)];
    out.values.push_back(sv(src));
    out.left.col(i) = svd.matrixU().col(src);
    out.right.col(i) = svd.matrixV().col(src);
  }
  return out;
}

Var rayleigh_sv_squared(const GeneratorModel& gen, const Vector& z, const Vector& v) {
  const double vv = v.squaredNorm();
  if (!(vv > 0.0)) throw ContractError("rayleigh quotient: frozen vector is zero");
  auto jv = jvp(gen, ag::constant(Tensor::from(z)), ag::constant(Tensor::from(v)));
  return ag::scale(ag::dot(jv, jv), 1.0 / vv);
}

}  // namespace livi
