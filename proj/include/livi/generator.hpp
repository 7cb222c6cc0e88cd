#pragma once

// Hypernetworks g: R^d -> R^m that emit the parameter vector of a target
// model, and their input Jacobians as differentiable graph values.

#include "livi/graph.hpp"
#include "livi/rng.hpp"
#include "livi/tensor.hpp"

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

namespace livi {

enum class LayerKind { Dense, MatMul };

/// One generator layer.
///
/// Dense layers map a vector of `in_rows` entries to `out_rows` entries
/// (the column counts are 1). Matrix-multiplication layers map an
/// in_rows x in_cols matrix X to act(A X B + C) with A: out_rows x in_rows,
/// B: in_cols x out_cols and C: out_rows x out_cols. Inputs and outputs are
/// carried between layers as row-major flattened vectors.
struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  std::size_t in_rows = 1, in_cols = 1, out_rows = 1, out_cols = 1;
  Activation activation = Activation::Identity;

  static LayerSpec dense(std::size_t in, std::size_t out, Activation act);
  static LayerSpec matmul(std::size_t in_rows, std::size_t in_cols, std::size_t out_rows,
                          std::size_t out_cols, Activation act);

  std::size_t in_size() const { return in_rows * in_cols; }
  std::size_t out_size() const { return out_rows * out_cols; }
  std::size_t param_count() const;
};

/// A generator with a trunk and optional disconnected heads.
///
/// Without heads the output is the trunk output. With heads, the trunk
/// output is split into contiguous chunks, one per head, and the head
/// outputs are concatenated. All weights live in a single flat trainable
/// vector; copies of a GeneratorModel share that vector.
class GeneratorModel {
public:
  GeneratorModel(std::size_t latent_dim, std::vector<LayerSpec> trunk,
                 std::vector<std::vector<LayerSpec>> heads = {},
                 std::vector<std::size_t> head_input_sizes = {});

  std::size_t latent_dim() const { return latent_dim_; }
  std::size_t output_dim() const { return output_dim_; }
  const std::vector<LayerSpec>& trunk() const { return trunk_; }
  const std::vector<std::vector<LayerSpec>>& heads() const { return heads_; }
  const std::vector<std::size_t>& head_input_sizes() const { return head_inputs_; }
  std::size_t param_count() const { return param_count_; }
  bool all_dense() const;

  const Var& params() const { return params_; }
  void set_params(const Tensor& values);

  /// Weights ~ N(0, 2/fan_in) * gain, biases zero.
  void initialize(RngStream& rng, double gain = 0.3);

  /// Overwrites the additive term (bias or C) of every final layer so that
  /// g(z) shifts by b - (old terms). Final layers must be linear.
  void set_output_bias(const Vector& b);

  /// Offset of a layer's parameters in the flat vector. `head` = -1 for trunk.
  std::size_t layer_offset(int head, std::size_t layer) const;
  /// Flat range [begin, end) of all parameters of head k.
  std::pair<std::size_t, std::size_t> head_param_range(std::size_t k) const;
  /// Flat output range [begin, end) produced by head k.
  std::pair<std::size_t, std::size_t> head_output_range(std::size_t k) const;

private:
  std::size_t latent_dim_;
  std::size_t output_dim_ = 0;
  std::vector<LayerSpec> trunk_;
  std::vector<std::vector<LayerSpec>> heads_;
  std::vector<std::size_t> head_inputs_;
  std::vector<std::size_t> trunk_offsets_;
  std::vector<std::vector<std::size_t>> head_offsets_;
  std::size_t param_count_ = 0;
  Var params_;
};

/// Plain MLP d -> hidden... -> m; hidden layers use `act`, the output is linear.
GeneratorModel build_mlp(std::size_t latent_dim, const std::vector<std::size_t>& hidden,
                         std::size_t output_dim, Activation act = Activation::Elu);

/// Correlated matrix-multiplication generator: one shared matrix-multiplication
/// trunk whose output rows are split across one head sub-network per target
/// layer.
struct CmmnnConfig {
  std::size_t noise_rows = 8, noise_cols = 8;
  std::size_t trunk_rows = 16, trunk_cols = 16;
  /// Optional hidden matrix layer in each head (rows, cols).
  std::optional<std::pair<std::size_t, std::size_t>> head_hidden;
  /// Number of target parameters produced by each head.
  std::vector<std::size_t> partition;
  Activation activation = Activation::Elu;
};

GeneratorModel build_cmmnn(const CmmnnConfig& config);

/// theta' = g(z) for z of length d; differentiable in z and in the params.
Var forward(const GeneratorModel& gen, const Var& z);
/// Row-wise forward of a batch Z [n, d] -> [n, m].
Var forward_batch(const GeneratorModel& gen, const Var& z_batch);

enum class JacobianPath {
  Auto,        // Chain when every Kronecker block is small, else Columnwise
  Chain,       // explicit product of per-layer linear maps
  Columnwise,  // d graph-level Jacobian-vector products
};

/// m x d input Jacobian at z, differentiable with respect to the params.
struct JacobianView {
  Var matrix;
  Vector at;
};

JacobianView jacobian(const GeneratorModel& gen, const Var& z, JacobianPath path = JacobianPath::Auto);

/// J(z) v as a graph value (differentiable in the params), without forming J.
Var jvp(const GeneratorModel& gen, const Var& z, const Var& v);

/// Plain-value helpers that record no graph.
Vector forward_values(const GeneratorModel& gen, const Vector& z);
Matrix forward_values_batch(const GeneratorModel& gen, const Matrix& z_batch);
Matrix jacobian_values(const GeneratorModel& gen, const Vector& z);

/// Matrix-free access to J(z): products J v and J^T u only.
class JacobianOperator {
public:
  JacobianOperator(const GeneratorModel& gen, Vector z);

  std::size_t rows() const { return gen_.output_dim(); }
  std::size_t cols() const { return gen_.latent_dim(); }
  Vector apply(const Vector& v) const;
  Vector apply_transpose(const Vector& u) const;
  /// J^T J v.
  Vector gram_apply(const Vector& v) const { return apply_transpose(apply(v)); }

private:
  GeneratorModel gen_;
  Vector z_;
};

}  // namespace livi
