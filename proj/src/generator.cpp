#include "livi/generator.hpp"

#include "livi/errors.hpp"

#include <cmath>
#include <string>

namespace livi {

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out, Activation act) {
  return LayerSpec{LayerKind::Dense, in, 1, out, 1, act};
}

LayerSpec LayerSpec::matmul(std::size_t in_rows, std::size_t in_cols, std::size_t out_rows,
                            std::size_t out_cols, Activation act) {
  return LayerSpec{LayerKind::MatMul, in_rows, in_cols, out_rows, out_cols, act};
}

std::size_t LayerSpec::param_count() const {
  if (kind == LayerKind::Dense) return in_rows * out_rows + out_rows;
  return out_rows * in_rows + in_cols * out_cols + out_rows * out_cols;
}

namespace {

void check_chain(const std::vector<LayerSpec>& layers, std::size_t in, const std::string& where) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.in_rows == 0 || l.in_cols == 0 || l.out_rows == 0 || l.out_cols == 0)
      throw ConfigError(where + ": layer " + std::to_string(i) + " has a zero dimension");
    if (l.kind == LayerKind::Dense && (l.in_cols != 1 || l.out_cols != 1))
      throw ConfigError(where + ": dense layer " + std::to_string(i) + " must have unit column dims");
    if (l.in_size() != in)
      throw ConfigError(where + ": layer " + std::to_string(i) + " expects " +
                        std::to_string(l.in_size()) + " inputs but receives " + std::to_string(in));
    in = l.out_size();
  }
}

std::size_t chain_out(const std::vector<LayerSpec>& layers, std::size_t in) {
  return layers.empty() ? in : layers.back().out_size();
}

}  // namespace

GeneratorModel::GeneratorModel(std::size_t latent_dim, std::vector<LayerSpec> trunk,
                               std::vector<std::vector<LayerSpec>> heads,
                               std::vector<std::size_t> head_input_sizes)
    : latent_dim_(latent_dim), trunk_(std::move(trunk)), heads_(std::move(heads)),
      head_inputs_(std::move(head_input_sizes)) {
  if (latent_dim_ == 0) throw ConfigError("generator: latent dimension must be positive");
  if (trunk_.empty()) throw ConfigError("generator: trunk needs at least one layer");
  check_chain(trunk_, latent_dim_, "trunk");
  const std::size_t trunk_out = trunk_.back().out_size();

  if (heads_.empty()) {
    output_dim_ = trunk_out;
  } else {
    if (head_inputs_.empty())
      for (const auto& h : heads_) {
        if (h.empty()) throw ConfigError("generator: empty head");
        head_inputs_.push_back(h.front().in_size());
      }
    if (head_inputs_.size() != heads_.size())
      throw ConfigError("generator: one input size per head is required");
    std::size_t total_in = 0;
    for (std::size_t k = 0; k < heads_.size(); ++k) {
      if (heads_[k].empty()) throw ConfigError("generator: empty head");
      check_chain(heads_[k], head_inputs_[k], "head " + std::to_string(k));
      total_in += head_inputs_[k];
      output_dim_ += chain_out(heads_[k], head_inputs_[k]);
    }
    if (total_in != trunk_out)
      throw ConfigError("generator: head inputs cover " + std::to_string(total_in) +
                        " trunk outputs, trunk produces " + std::to_string(trunk_out));
  }
  if (latent_dim_ > output_dim_)
    throw ConfigError("generator: latent dimension " + std::to_string(latent_dim_) +
                      " exceeds output dimension " + std::to_string(output_dim_));

  std::size_t off = 0;
  for (const auto& l : trunk_) {
    trunk_offsets_.push_back(off);
    off += l.param_count();
  }
  for (const auto& h : heads_) {
    head_offsets_.emplace_back();
    for (const auto& l : h) {
      head_offsets_.back().push_back(off);
      off += l.param_count();
    }
  }
  param_count_ = off;
  params_ = ag::parameter(Tensor(Shape{param_count_}, 0.0));
}

bool GeneratorModel::all_dense() const {
  for (const auto& l : trunk_)
    if (l.kind != LayerKind::Dense) return false;
  for (const auto& h : heads_)
    for (const auto& l : h)
      if (l.kind != LayerKind::Dense) return false;
  return true;
}

void GeneratorModel::set_params(const Tensor& values) {
  if (values.size() != param_count_)
    throw DimensionError("generator: expected " + std::to_string(param_count_) + " parameters, got " +
                         std::to_string(values.size()));
  auto& dst = params_.mutable_value().storage();
  std::copy(values.data().begin(), values.data().end(), dst.begin());
}

void GeneratorModel::set_output_bias(const Vector& b) {
  if (static_cast<std::size_t>(b.size()) != output_dim_)
    throw DimensionError("set_output_bias: expected " + std::to_string(output_dim_) + " values");
  auto write = [&](const LayerSpec& last, std::size_t layer_off, std::size_t out_begin) {
    if (last.activation != Activation::Identity) throw ConfigError("set_output_bias: final layer is not linear");
    const std::size_t at = layer_off + last.param_count() - last.out_size();
    for (std::size_t j = 0; j < last.out_size(); ++j)
      params_.mutable_value()[at + j] = b(static_cast<Eigen::Index>(out_begin + j));
  };
  if (heads_.empty()) {
    write(trunk_.back(), trunk_offsets_.back(), 0);
    return;
  }
  for (std::size_t k = 0; k < heads_.size(); ++k)
    write(heads_[k].back(), head_offsets_[k].back(), head_output_range(k).first);
}

std::size_t GeneratorModel::layer_offset(int head, std::size_t layer) const {
  return head < 0 ? trunk_offsets_.at(layer) : head_offsets_.at(static_cast<std::size_t>(head)).at(layer);
}

std::pair<std::size_t, std::size_t> GeneratorModel::head_param_range(std::size_t k) const {
  const auto& offs = head_offsets_.at(k);
  return {offs.front(), offs.back() + heads_[k].back().param_count()};
}

std::pair<std::size_t, std::size_t> GeneratorModel::head_output_range(std::size_t k) const {
  std::size_t begin = 0;
  for (std::size_t i = 0; i < k; ++i) begin += chain_out(heads_[i], head_inputs_[i]);
  return {begin, begin + chain_out(heads_.at(k), head_inputs_[k])};
}

void GeneratorModel::initialize(RngStream& rng, double gain) {
  auto& p = params_.mutable_value().storage();
  std::fill(p.begin(), p.end(), 0.0);
  auto init_layer = [&](const LayerSpec& l, std::size_t off) {
    if (l.kind == LayerKind::Dense) {
      const double sd = gain * std::sqrt(2.0 / static_cast<double>(l.in_rows));
      for (std::size_t i = 0; i < l.in_rows * l.out_rows; ++i) p[off + i] = sd * rng.normal();
      return;
    }
    // The left factor carries the He gain; the right factor preserves scale.
    const double sd_a = gain * std::sqrt(2.0 / static_cast<double>(l.in_rows));
    const double sd_b = std::sqrt(1.0 / static_cast<double>(l.in_cols));
    const std::size_t na = l.out_rows * l.in_rows;
    const std::size_t nb = l.in_cols * l.out_cols;
    for (std::size_t i = 0; i < na; ++i) p[off + i] = sd_a * rng.normal();
    for (std::size_t i = 0; i < nb; ++i) p[off + na + i] = sd_b * rng.normal();
  };
  for (std::size_t i = 0; i < trunk_.size(); ++i) init_layer(trunk_[i], trunk_offsets_[i]);
  for (std::size_t k = 0; k < heads_.size(); ++k)
    for (std::size_t i = 0; i < heads_[k].size(); ++i) init_layer(heads_[k][i], head_offsets_[k][i]);
}

GeneratorModel build_mlp(std::size_t latent_dim, const std::vector<std::size_t>& hidden,
                         std::size_t output_dim, Activation act) {
  std::vector<LayerSpec> layers;
  std::size_t in = latent_dim;
  for (auto h : hidden) {
    layers.push_back(LayerSpec::dense(in, h, act));
    in = h;
  }
  layers.push_back(LayerSpec::dense(in, output_dim, Activation::Identity));
  return GeneratorModel(latent_dim, std::move(layers));
}

namespace {

// Near-square rows x cols factorization of n with rows >= cols.
std::pair<std::size_t, std::size_t> near_square(std::size_t n) {
  std::size_t c = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
  while (c > 1 && n % c != 0) --c;
  return {n / c, c};
}

}  // namespace

GeneratorModel build_cmmnn(const CmmnnConfig& cfg) {
  if (cfg.partition.empty()) throw ConfigError("cmmnn: partition must name at least one head");
  for (auto p : cfg.partition)
    if (p == 0) throw ConfigError("cmmnn: partition entries must be positive");
  const std::size_t k = cfg.partition.size();
  if (cfg.trunk_rows < k)
    throw ConfigError("cmmnn: trunk has " + std::to_string(cfg.trunk_rows) + " rows for " +
                      std::to_string(k) + " heads");

  std::vector<LayerSpec> trunk{LayerSpec::matmul(cfg.noise_rows, cfg.noise_cols, cfg.trunk_rows,
                                                 cfg.trunk_cols, cfg.activation)};
  std::vector<std::vector<LayerSpec>> heads;
  std::vector<std::size_t> inputs;
  const std::size_t base = cfg.trunk_rows / k, extra = cfg.trunk_rows % k;
  for (std::size_t h = 0; h < k; ++h) {
    const std::size_t rows = base + (h < extra ? 1 : 0);
    std::size_t in_r = rows, in_c = cfg.trunk_cols;
    std::vector<LayerSpec> head;
    if (cfg.head_hidden) {
      head.push_back(LayerSpec::matmul(in_r, in_c, cfg.head_hidden->first, cfg.head_hidden->second,
                                       cfg.activation));
      in_r = cfg.head_hidden->first;
      in_c = cfg.head_hidden->second;
    }
    const auto [out_r, out_c] = near_square(cfg.partition[h]);
    head.push_back(LayerSpec::matmul(in_r, in_c, out_r, out_c, Activation::Identity));
    heads.push_back(std::move(head));
    inputs.push_back(rows * cfg.trunk_cols);
  }
  return GeneratorModel(cfg.noise_rows * cfg.noise_cols, std::move(trunk), std::move(heads),
                        std::move(inputs));
}

namespace {

struct LayerRecord {
  const LayerSpec* spec;
  Var w1, w2;  // dense: W, -; matmul: A, B
  Var pre;
};

// Evaluates one layer on a flat input vector.
Var apply_layer(const LayerSpec& l, const Var& p, std::size_t off, const Var& x, LayerRecord& rec) {
  rec.spec = &l;
  Var pre;
  if (l.kind == LayerKind::Dense) {
    rec.w1 = ag::slice(p, off, Shape{l.out_rows, l.in_rows});
    auto b = ag::slice(p, off + l.out_rows * l.in_rows, Shape{l.out_rows});
    pre = ag::matmul(rec.w1, x) + b;
  } else {
    const std::size_t na = l.out_rows * l.in_rows, nb = l.in_cols * l.out_cols;
    rec.w1 = ag::slice(p, off, Shape{l.out_rows, l.in_rows});
    rec.w2 = ag::slice(p, off + na, Shape{l.in_cols, l.out_cols});
    auto c = ag::slice(p, off + na + nb, Shape{l.out_rows, l.out_cols});
    auto X = ag::reshape(x, Shape{l.in_rows, l.in_cols});
    pre = ag::reshape(ag::matmul(ag::matmul(rec.w1, X), rec.w2) + c, Shape{l.out_size()});
  }
  rec.pre = pre;
  return l.activation == Activation::Identity ? pre : ag::elementwise(pre, l.activation);
}

struct ForwardTrace {
  std::vector<LayerRecord> trunk;
  std::vector<std::vector<LayerRecord>> heads;
  Var output;
};

ForwardTrace trace_forward(const GeneratorModel& gen, const Var& p, const Var& z) {
  if (z.size() != gen.latent_dim() || z.shape().rank() != 1)
    throw DimensionError("generator: latent input has shape " + z.shape().str() + ", expected [" +
                         std::to_string(gen.latent_dim()) + "]");
  ForwardTrace t;
  Var h = z;
  t.trunk.resize(gen.trunk().size());
  for (std::size_t i = 0; i < gen.trunk().size(); ++i)
    h = apply_layer(gen.trunk()[i], p, gen.layer_offset(-1, i), h, t.trunk[i]);
  if (gen.heads().empty()) {
    t.output = h;
    return t;
  }
  std::vector<Var> outs;
  std::size_t in_off = 0;
  t.heads.resize(gen.heads().size());
  for (std::size_t k = 0; k < gen.heads().size(); ++k) {
    const std::size_t len = gen.head_input_sizes()[k];
    Var x = ag::slice(h, in_off, Shape{len});
    in_off += len;
    const auto& head = gen.heads()[k];
    t.heads[k].resize(head.size());
    for (std::size_t i = 0; i < head.size(); ++i)
      x = apply_layer(head[i], p, gen.layer_offset(static_cast<int>(k), i), x, t.heads[k][i]);
    outs.push_back(x);
  }
  t.output = ag::concat(outs);
  return t;
}

// Pushes tangents through a layer: a vector [in] or a matrix [in, k] of
// tangent columns. Matrix tangents through matmul layers use the
// materialized Kronecker map A (x) B^T.
Var push_tangent(const LayerRecord& rec, const Var& t) {
  const LayerSpec& l = *rec.spec;
  Var lin;
  if (l.kind == LayerKind::Dense) {
    lin = ag::matmul(rec.w1, t);
  } else if (t.shape().rank() == 1) {
    auto T = ag::reshape(t, Shape{l.in_rows, l.in_cols});
    lin = ag::reshape(ag::matmul(ag::matmul(rec.w1, T), rec.w2), Shape{l.out_size()});
  } else {
    lin = ag::matmul(ag::kron(rec.w1, ag::transpose(rec.w2)), t);
  }
  if (l.activation == Activation::Identity) return lin;
  return ag::scale_rows(ag::activation_derivative(rec.pre, l.activation), lin);
}

Var push_through(const GeneratorModel& gen, const ForwardTrace& tr, const Var& t0) {
  Var t = t0;
  for (const auto& rec : tr.trunk) t = push_tangent(rec, t);
  if (gen.heads().empty()) return t;
  const bool matrix = t.shape().rank() == 2;
  const std::size_t k = matrix ? t.shape()[1] : 1;
  std::vector<Var> outs;
  std::size_t in_off = 0;
  for (std::size_t h = 0; h < gen.heads().size(); ++h) {
    const std::size_t len = gen.head_input_sizes()[h];
    Var x = matrix ? ag::slice(t, in_off * k, Shape{len, k}) : ag::slice(t, in_off, Shape{len});
    in_off += len;
    for (const auto& rec : tr.heads[h]) x = push_tangent(rec, x);
    outs.push_back(x);
  }
  return matrix ? ag::concat_rows(outs) : ag::concat(outs);
}

bool kron_blocks_small(const GeneratorModel& gen) {
  constexpr std::size_t limit = 1u << 20;
  auto ok = [&](const LayerSpec& l) {
    return l.kind == LayerKind::Dense || l.out_size() * l.in_size() <= limit;
  };
  for (const auto& l : gen.trunk())
    if (!ok(l)) return false;
  for (const auto& h : gen.heads())
    for (const auto& l : h)
      if (!ok(l)) return false;
  return true;
}

Tensor unit_vector(std::size_t n, std::size_t j) {
  Tensor e(Shape{n}, 0.0);
  e[j] = 1.0;
  return e;
}

Tensor identity(std::size_t n) {
  Tensor I(Shape{n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) I[i * n + i] = 1.0;
  return I;
}

}  // namespace

Var forward(const GeneratorModel& gen, const Var& z) {
  return trace_forward(gen, gen.params(), z).output;
}

Var forward_batch(const GeneratorModel& gen, const Var& z_batch) {
  if (z_batch.shape().rank() != 2 || z_batch.shape()[1] != gen.latent_dim())
    throw DimensionError("generator: batch has shape " + z_batch.shape().str() + ", expected [n," +
                         std::to_string(gen.latent_dim()) + "]");
  const std::size_t n = z_batch.shape()[0];
  if (!gen.all_dense() || !gen.heads().empty()) {
    std::vector<Var> rows;
    for (std::size_t i = 0; i < n; ++i) {
      auto zi = ag::slice(z_batch, i * gen.latent_dim(), Shape{gen.latent_dim()});
      rows.push_back(ag::reshape(forward(gen, zi), Shape{1, gen.output_dim()}));
    }
    return ag::concat_rows(rows);
  }
  const Var& p = gen.params();
  Var h = z_batch;
  for (std::size_t i = 0; i < gen.trunk().size(); ++i) {
    const auto& l = gen.trunk()[i];
    const std::size_t off = gen.layer_offset(-1, i);
    auto W = ag::slice(p, off, Shape{l.out_rows, l.in_rows});
    auto b = ag::slice(p, off + l.out_rows * l.in_rows, Shape{l.out_rows});
    h = ag::add_row(ag::matmul(h, ag::transpose(W)), b);
    if (l.activation != Activation::Identity) h = ag::elementwise(h, l.activation);
  }
  return h;
}

JacobianView jacobian(const GeneratorModel& gen, const Var& z, JacobianPath path) {
  const auto tr = trace_forward(gen, gen.params(), z);
  const std::size_t d = gen.latent_dim();
  if (path == JacobianPath::Auto)
    path = kron_blocks_small(gen) ? JacobianPath::Chain : JacobianPath::Columnwise;

  JacobianView view;
  view.at = z.value().vec();
  if (path == JacobianPath::Chain) {
    view.matrix = push_through(gen, tr, ag::constant(identity(d)));
  } else {
    std::vector<Var> cols;
    cols.reserve(d);
    for (std::size_t j = 0; j < d; ++j) cols.push_back(push_through(gen, tr, ag::constant(unit_vector(d, j))));
    view.matrix = ag::stack_columns(cols);
  }
  return view;
}

Var jvp(const GeneratorModel& gen, const Var& z, const Var& v) {
  if (v.shape() != Shape{gen.latent_dim()})
    throw DimensionError("jvp: tangent has shape " + v.shape().str());
  const auto tr = trace_forward(gen, gen.params(), z);
  return push_through(gen, tr, v);
}

Vector forward_values(const GeneratorModel& gen, const Vector& z) {
  ag::NoGradScope guard;
  return forward(gen, ag::constant(Tensor::from(z))).value().vec();
}

Matrix forward_values_batch(const GeneratorModel& gen, const Matrix& z_batch) {
  ag::NoGradScope guard;
  return forward_batch(gen, ag::constant(Tensor::from(z_batch))).value().mat();
}

Matrix jacobian_values(const GeneratorModel& gen, const Vector& z) {
  ag::NoGradScope guard;
  return jacobian(gen, ag::constant(Tensor::from(z))).matrix.value().mat();
}

JacobianOperator::JacobianOperator(const GeneratorModel& gen, Vector z) : gen_(gen), z_(std::move(z)) {
  if (static_cast<std::size_t>(z_.size()) != gen_.latent_dim())
    throw DimensionError("JacobianOperator: latent point has the wrong length");
}

Vector JacobianOperator::apply(const Vector& v) const {
  if (static_cast<std::size_t>(v.size()) != cols()) throw DimensionError("JacobianOperator::apply: bad length");
  ag::NoGradScope guard;
  return jvp(gen_, ag::constant(Tensor::from(z_)), ag::constant(Tensor::from(v))).value().vec();
}

Vector JacobianOperator::apply_transpose(const Vector& u) const {
  if (static_cast<std::size_t>(u.size()) != rows())
    throw DimensionError("JacobianOperator::apply_transpose: bad length");
  // Reverse sweep with respect to z only; the params enter as constants so
  // their gradient buffers are untouched.
  auto p = ag::constant(gen_.params().value());
  auto z = ag::parameter(Tensor::from(z_));
  auto out = trace_forward(gen_, p, z).output;
  ag::backward(ag::dot(ag::constant(Tensor::from(u)), out));
  return z.grad().vec();
}

}  // namespace livi
