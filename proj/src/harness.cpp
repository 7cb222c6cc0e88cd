#include "livi/harness.hpp"

#include "livi/errors.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <sstream>

namespace livi {

using nlohmann::json;
using nlohmann::ordered_json;

GeneratorModel build_generator(const GeneratorSpec& spec, const BnnSpec& bnn) {
  if (spec.architecture == "mlp") return build_mlp(spec.latent_dim, spec.hidden, bnn.param_count(), spec.activation);
  if (spec.architecture == "cmmnn") {
    CmmnnConfig c;
    c.noise_rows = spec.noise_rows;
    c.noise_cols = spec.noise_cols;
    c.trunk_rows = spec.trunk_rows;
    c.trunk_cols = spec.trunk_cols;
    c.partition = bnn.layer_param_counts();
    c.activation = spec.activation;
    return build_cmmnn(c);
  }
  throw ConfigError("generator: unknown architecture '" + spec.architecture + "'");
}

void write_checkpoint(const std::filesystem::path& path, std::span<const double> values, const std::string& sidecar) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("checkpoint: cannot open '" + path.string() + "' for writing");
  for (double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
    out.write(bytes, 8);
  }
  std::ofstream side(path.string() + ".json");
  side << sidecar << '\n';
}

std::vector<double> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("checkpoint: cannot open '" + path.string() + "'");
  std::vector<double> values;
  char bytes[8];
  while (in.read(bytes, 8)) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
    values.push_back(std::bit_cast<double>(bits));
  }
  if (in.gcount() != 0) throw IngestionError("checkpoint: '" + path.string() + "' is not a whole number of float64 values");
  return values;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot open '" + path.string() + "' for writing");
  out << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <class F>
void write_csv(const std::filesystem::path& path, F&& body) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot open '" + path.string() + "' for writing");
  out << std::setprecision(17);
  body(out);
}

ordered_json layer_json(const LayerSpec& l) {
  return {{"kind", l.kind == LayerKind::Dense ? "dense" : "matmul"},
          {"in_rows", l.in_rows},
          {"in_cols", l.in_cols},
          {"out_rows", l.out_rows},
          {"out_cols", l.out_cols},
          {"activation", std::string(to_string(l.activation))}};
}

// Inputs shared by fitting and evaluation.
struct Problem {
  BnnSpec bnn;
  LikelihoodModel lik;
  Dataset train, test, ood;
  double y_scale = 1.0, y_shift = 0.0;
  std::string dataset;
  std::string notes;
};

Problem make_problem(const RunConfig& cfg, std::uint64_t seed) {
  Problem p;
  p.bnn = cfg.bnn;
  const RngStream eval = RngStream(seed).derive("evaluation");
  switch (cfg.experiment) {
    case Experiment::Toy:
    case Experiment::EntropyBench:
    case Experiment::EigenBench: {
      p.train = make_toy_sinusoid(cfg.data.toy, seed).train();
      ToySinusoidConfig t = cfg.data.toy;
      t.n = cfg.eval.toy_test_points;
      p.test = make_toy_sinusoid(t, eval.derive("toy-test").seed()).train();
      p.dataset = "toy-sinusoid";
      p.lik = LikelihoodModel::gaussian(cfg.train.initial_noise_std);
      break;
    }
    case Experiment::UciRegression: {
      DatasetTable table;
      if (cfg.data.source == "csv") {
        table = load_csv(cfg.data.path, cfg.data.target_column, cfg.data.standardize, cfg.data.train_fraction, seed);
        p.dataset = std::filesystem::path(cfg.data.path).stem().string();
      } else {
        table = make_synth_regression(cfg.data.regression, seed);
        p.dataset = "synthetic-regression";
        p.notes = "synthetic regression data (Friedman benchmark) in place of a CSV file";
      }
      p.train = table.train();
      p.test = table.test();
      if (table.standardized) p.y_scale = table.stats.y_std, p.y_shift = table.stats.y_mean;
      p.lik = LikelihoodModel::gaussian(cfg.train.initial_noise_std);
      break;
    }
    case Experiment::SynthClassify: {
      auto [in, ood] = make_synth_classify(cfg.data.classify, seed);
      p.train = in.train();
      p.test = in.test();
      p.ood = ood.all();
      p.dataset = "synth-classify";
      p.lik = LikelihoodModel::categorical(2);
      break;
    }
  }
  p.bnn.input_dim = p.train.features();
  p.bnn.output_dim = p.train.is_classification() ? p.train.num_classes : 1;
  return p;
}

struct Fitted {
  PosteriorSampleSet samples;
  double noise_var = 1.0;
  std::vector<TrainTrace> traces;
  std::map<std::string, double> extra;
  std::string notes;
};

TrainConfig train_config(const RunConfig& cfg, std::uint64_t seed) {
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  tc.bound = cfg.method == Method::LiviL2 ? BoundKind::SvBound : BoundKind::FullJacobian;
  return tc;
}

double log_noise_var_of(const LikelihoodModel& lik) {
  return lik.kind == LikelihoodKind::Gaussian ? lik.log_noise_var.item() : 0.0;
}

std::string livi_sidecar(const RunConfig& cfg, const DlvmConfig& dcfg, std::size_t step, double lnv) {
  ordered_json j;
  j["kind"] = "livi-generator";
  j["step"] = step;
  j["architecture"] = cfg.generator.architecture;
  j["latent_dim"] = dcfg.latent_dim();
  j["output_dim"] = dcfg.output_dim();
  j["sigma2"] = dcfg.sigma2;
  j["log_noise_var"] = lnv;
  j["param_count"] = dcfg.generator.param_count();
  auto& trunk = j["trunk"] = ordered_json::array();
  for (const auto& l : dcfg.generator.trunk()) trunk.push_back(layer_json(l));
  auto& heads = j["heads"] = ordered_json::array();
  for (const auto& h : dcfg.generator.heads()) {
    ordered_json head = ordered_json::array();
    for (const auto& l : h) head.push_back(layer_json(l));
    heads.push_back(head);
  }
  return j.dump(2);
}

std::string samples_sidecar(const PosteriorSampleSet& s) {
  ordered_json j;
  j["kind"] = "samples";
  j["rows"] = s.size();
  j["cols"] = s.dim();
  j["has_log_noise_var"] = s.log_noise_var.has_value();
  return j.dump(2);
}

std::vector<double> flatten_samples(const PosteriorSampleSet& s) {
  std::vector<double> v;
  for (Eigen::Index r = 0; r < s.thetas.rows(); ++r) {
    for (Eigen::Index c = 0; c < s.thetas.cols(); ++c) v.push_back(s.thetas(r, c));
    if (s.log_noise_var) v.push_back((*s.log_noise_var)(r));
  }
  return v;
}

PosteriorSampleSet unflatten_samples(const std::vector<double>& v, std::size_t rows, std::size_t cols, bool lnv) {
  const std::size_t stride = cols + (lnv ? 1 : 0);
  if (v.size() != rows * stride) throw IngestionError("checkpoint: sample array has the wrong length");
  PosteriorSampleSet s;
  s.thetas.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  if (lnv) s.log_noise_var = Vector(static_cast<Eigen::Index>(rows));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c)
      s.thetas(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v[r * stride + c];
    if (lnv) (*s.log_noise_var)(static_cast<Eigen::Index>(r)) = v[r * stride + cols];
  }
  return s;
}

DlvmConfig make_dlvm(const RunConfig& cfg, const BnnSpec& bnn) {
  return DlvmConfig{build_generator(cfg.generator, bnn), cfg.train.sigma2};
}

Fitted fit(const RunConfig& cfg, Problem& p, std::uint64_t seed, const std::filesystem::path& dir) {
  const TrainConfig tc = train_config(cfg, seed);
  RngStream eval = RngStream(seed).derive("evaluation").derive("posterior");
  Fitted f;
  switch (cfg.method) {
    case Method::LiviL1:
    case Method::LiviL2: {
      DlvmConfig dcfg = make_dlvm(cfg, p.bnn);
      CheckpointFn hook;
      if (tc.checkpoint_every)
        hook = [&](std::size_t step, const Tensor& params, double lnv) {
          write_checkpoint(dir / ("checkpoint_step" + std::to_string(step) + ".bin"), params.data(),
                           livi_sidecar(cfg, dcfg, step, lnv));
        };
      auto r = livi_train(dcfg, p.bnn, p.lik, p.train, tc, hook);
      write_checkpoint(dir / "checkpoint.bin", dcfg.generator.params().value().data(),
                       livi_sidecar(cfg, dcfg, r.status.aborted ? r.status.last_good_step : tc.steps,
                                    log_noise_var_of(p.lik)));
      f.traces.push_back(std::move(r.trace));
      if (r.status.aborted) {
        f.notes = "training stopped: " + r.status.reason;
        f.extra["aborted"] = 1.0;
      }
      f.samples = sample(dcfg, cfg.eval.posterior_samples, eval);
      f.noise_var = p.lik.kind == LikelihoodKind::Gaussian ? p.lik.noise_var() : 1.0;
      break;
    }
    case Method::Mfvi: {
      auto r = mfvi_train(p.bnn, p.lik, p.train, tc);
      std::vector<double> flat(r.posterior.mean.data(), r.posterior.mean.data() + r.posterior.mean.size());
      flat.insert(flat.end(), r.posterior.log_std.data(), r.posterior.log_std.data() + r.posterior.log_std.size());
      ordered_json side{{"kind", "mean-field"}, {"dim", r.posterior.mean.size()}, {"log_noise_var", log_noise_var_of(p.lik)}};
      write_checkpoint(dir / "checkpoint.bin", flat, side.dump(2));
      f.traces.push_back(std::move(r.trace));
      if (r.status.aborted) {
        f.notes = "training stopped: " + r.status.reason;
        f.extra["aborted"] = 1.0;
      }
      f.samples = r.posterior.sample(cfg.eval.posterior_samples, eval);
      f.noise_var = p.lik.kind == LikelihoodKind::Gaussian ? p.lik.noise_var() : 1.0;
      break;
    }
    case Method::Hmc: {
      RngStream init = RngStream(seed).derive("init");
      auto map = map_train(p.bnn, p.lik, p.train, tc, init);
      RngStream chain = RngStream(seed).derive("training").derive("hmc");
      auto r = hmc_sample(cfg.hmc, p.bnn, p.lik, p.train, tc.prior_scale, map.theta, map.log_noise_var, chain);
      f.samples = std::move(r.samples);
      f.traces.push_back(std::move(map.trace));
      f.extra["acceptance_rate"] = r.acceptance_rate;
      f.extra["divergences"] = static_cast<double>(r.divergences);
      f.extra["warmup_divergences"] = static_cast<double>(r.warmup_divergences);
      f.extra["step_size"] = r.step_size;
      write_checkpoint(dir / "checkpoint.bin", flatten_samples(f.samples), samples_sidecar(f.samples));
      break;
    }
    case Method::Ensemble: {
      f.samples = ensemble_train(cfg.ensemble_members, p.bnn, p.lik, p.train, tc, &f.traces);
      write_checkpoint(dir / "checkpoint.bin", flatten_samples(f.samples), samples_sidecar(f.samples));
      break;
    }
  }
  return f;
}

// Reconstructs the evaluation posterior of a finished run from its checkpoint.
Fitted restore(const RunConfig& cfg, const Problem& p, std::uint64_t seed, const std::filesystem::path& dir) {
  const auto values = read_checkpoint(dir / "checkpoint.bin");
  json side;
  try {
    side = json::parse(read_text(dir / "checkpoint.bin.json"));
  } catch (const json::exception& e) {
    throw IngestionError(std::string("checkpoint sidecar: ") + e.what());
  }
  RngStream eval = RngStream(seed).derive("evaluation").derive("posterior");
  Fitted f;
  const std::string kind = side.value("kind", "");
  auto noise_from = [&](const json& s) {
    return p.lik.kind == LikelihoodKind::Gaussian ? std::exp(s.value("log_noise_var", 0.0)) : 1.0;
  };
  if (kind == "livi-generator") {
    DlvmConfig dcfg = make_dlvm(cfg, p.bnn);
    dcfg.sigma2 = side.at("sigma2").get<double>();
    if (values.size() != dcfg.generator.param_count()) throw IngestionError("checkpoint: generator size mismatch");
    dcfg.generator.set_params(Tensor::from(Vector(Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size())))));
    f.samples = sample(dcfg, cfg.eval.posterior_samples, eval);
    f.noise_var = noise_from(side);
  } else if (kind == "mean-field") {
    const auto m = side.at("dim").get<std::size_t>();
    if (values.size() != 2 * m) throw IngestionError("checkpoint: mean-field size mismatch");
    MeanFieldPosterior post;
    post.mean = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(m));
    post.log_std = Eigen::Map<const Vector>(values.data() + m, static_cast<Eigen::Index>(m));
    f.samples = post.sample(cfg.eval.posterior_samples, eval);
    f.noise_var = noise_from(side);
  } else if (kind == "samples") {
    f.samples = unflatten_samples(values, side.at("rows").get<std::size_t>(), side.at("cols").get<std::size_t>(),
                                  side.at("has_log_noise_var").get<bool>());
  } else {
    throw IngestionError("checkpoint: unknown kind '" + kind + "'");
  }
  return f;
}

MetricsReport evaluate(const RunConfig& cfg, const Problem& p, const Fitted& f, std::uint64_t seed,
                       const std::filesystem::path* dir) {
  MetricsReport rep;
  rep.dataset = p.dataset;
  rep.method = std::string(to_string(cfg.method));
  rep.seed = seed;
  rep.extra = f.extra;
  rep.notes = p.notes;
  if (!f.notes.empty()) rep.notes += (rep.notes.empty() ? "" : "; ") + f.notes;

  if (p.lik.kind == LikelihoodKind::Gaussian) {
    auto lik = LikelihoodModel::gaussian();
    lik.set_noise_var(f.noise_var);
    const auto pred = predict_regression(p.bnn, f.samples, p.test.x, f.noise_var);
    rep.rmse = rmse(pred.mean, p.test.y, p.y_scale);
    rep.test_ll = test_ll(p.bnn, f.samples, lik, p.test.x, p.test.y, p.y_scale);
    rep.noise_var = pred.noise_var * p.y_scale * p.y_scale;
    if (cfg.experiment == Experiment::Toy) {
      const auto& t = cfg.data.toy;
      const auto n = static_cast<Eigen::Index>(cfg.eval.grid_points);
      Matrix grid(n, 1);
      grid.col(0) = Vector::LinSpaced(n, t.x_min - 1.0, t.x_max + 1.0);
      const auto g = predict_regression(p.bnn, f.samples, grid, f.noise_var);
      double gap_sum = 0.0;
      std::size_t gap_n = 0;
      for (Eigen::Index i = 0; i < n; ++i)
        if (grid(i, 0) > t.gap_lo && grid(i, 0) < t.gap_hi) gap_sum += g.epistemic_std(i), ++gap_n;
      rep.mean_epistemic_std = gap_n ? gap_sum / static_cast<double>(gap_n) : 0.0;
      if (dir)
        write_csv(*dir / "predictive.csv", [&](std::ostream& o) {
          o << "x,mean,epistemic_std,total_std\n";
          for (Eigen::Index i = 0; i < n; ++i)
            o << grid(i, 0) << ',' << g.mean(i) << ',' << g.epistemic_std(i) << ',' << g.total_std(i) << '\n';
        });
    } else {
      rep.mean_epistemic_std = pred.epistemic_std.mean() * p.y_scale;
      if (dir)
        write_csv(*dir / "predictive.csv", [&](std::ostream& o) {
          o << "row,y,mean,epistemic_std,total_std\n";
          for (Eigen::Index i = 0; i < pred.mean.size(); ++i)
            o << i << ',' << p.test.y(i) * p.y_scale + p.y_shift << ',' << pred.mean(i) * p.y_scale + p.y_shift << ','
              << pred.epistemic_std(i) * p.y_scale << ',' << pred.total_std(i) * p.y_scale << '\n';
        });
    }
    return rep;
  }

  const auto in = predict_classification(p.bnn, f.samples, p.test.x);
  const auto out = predict_classification(p.bnn, f.samples, p.ood.x);
  rep.test_ll = test_ll(p.bnn, f.samples, p.lik, p.test.x, p.test.y);
  rep.ece = ece(in.probs, p.test.labels(), cfg.eval.ece_bins);
  const Vector conf_in = confidence(in.probs), conf_out = confidence(out.probs);
  rep.auroc = auroc(conf_in, conf_out);
  rep.mean_confidence = conf_out.mean();
  rep.entropy_cdf = entropy_cdf(out.probs);
  std::size_t correct = 0;
  const auto labels = p.test.labels();
  for (Eigen::Index i = 0; i < in.probs.rows(); ++i) {
    Eigen::Index arg = 0;
    in.probs.row(i).maxCoeff(&arg);
    correct += static_cast<std::size_t>(arg) == labels[static_cast<std::size_t>(i)];
  }
  rep.extra["accuracy"] = static_cast<double>(correct) / static_cast<double>(labels.size());
  rep.extra["mean_confidence_in"] = conf_in.mean();
  rep.extra["mean_entropy_in"] = in.entropy.mean();
  rep.extra["mean_entropy_ood"] = out.entropy.mean();
  if (dir) {
    write_csv(*dir / "entropy_cdf.csv", [&](std::ostream& o) { write_entropy_cdf_csv(rep.entropy_cdf, o); });
    write_csv(*dir / "entropy_cdf_in.csv", [&](std::ostream& o) { write_entropy_cdf_csv(entropy_cdf(in.probs), o); });
    write_csv(*dir / "predictive.csv", [&](std::ostream& o) {
      o << "split,x0,x1,p1,entropy,confidence\n";
      auto rows = [&](const char* split, const Dataset& d, const ClassificationPrediction& c, const Vector& conf) {
        for (Eigen::Index i = 0; i < d.x.rows(); ++i)
          o << split << ',' << d.x(i, 0) << ',' << d.x(i, 1) << ',' << c.probs(i, 1) << ',' << c.entropy(i) << ','
            << conf(i) << '\n';
      };
      rows("in", p.test, in, conf_in);
      rows("ood", p.ood, out, conf_out);
    });
  }
  return rep;
}

void write_traces(const Fitted& f, const std::filesystem::path& dir) {
  for (std::size_t k = 0; k < f.traces.size(); ++k) {
    const std::string suffix = k == 0 ? "" : "_member" + std::to_string(k);
    write_csv(dir / ("trace" + suffix + ".csv"), [&](std::ostream& o) { f.traces[k].write_csv(o); });
    write_csv(dir / ("timing" + suffix + ".csv"), [&](std::ostream& o) { f.traces[k].write_timing_csv(o); });
  }
}

bool all_linear(const GeneratorModel& g) {
  for (const auto& l : g.trunk())
    if (l.activation != Activation::Identity) return false;
  return g.heads().empty();
}

// 1/2 log det(2 pi e (W W^T + sigma^2 I)) through an m x m Cholesky factor.
double linear_closed_form(const Matrix& w, double sigma2) {
  const auto m = w.rows();
  Matrix cov = w * w.transpose();
  cov.diagonal().array() += sigma2;
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) throw DomainError("closed form: covariance is not positive definite");
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return 0.5 * (static_cast<double>(m) * std::log(2.0 * std::numbers::pi * std::numbers::e) + logdet);
}

MetricsReport entropy_bench(const RunConfig& cfg, Problem& p, std::uint64_t seed, const std::filesystem::path& dir) {
  const TrainConfig base = train_config(cfg, seed);
  DlvmConfig dcfg{build_mlp(cfg.bench.latent_dim, cfg.bench.hidden, p.bnn.param_count(), cfg.generator.activation),
                  base.sigma2};
  const bool linear = all_linear(dcfg.generator);
  TrainConfig tc = base;
  tc.checkpoint_every = cfg.bench.every;
  const RngStream bench = RngStream(seed).derive("evaluation").derive("entropy-bench");
  std::vector<std::size_t> steps;
  std::vector<double> full, sv, is, closed;
  CheckpointFn hook = [&](std::size_t step, const Tensor&, double) {
    RngStream rng = bench.derive("draws");
    Matrix zs(static_cast<Eigen::Index>(cfg.bench.n_z), static_cast<Eigen::Index>(dcfg.latent_dim()));
    for (Eigen::Index i = 0; i < zs.size(); ++i) zs(i) = rng.normal();
    steps.push_back(step);
    full.push_back(entropy_full_jacobian(dcfg, zs).value);
    RngStream lrng = rng.derive("lobpcg");
    sv.push_back(entropy_sv_bound(dcfg, zs, lrng).value);
    RngStream irng = rng.derive("importance");
    is.push_back(entropy_importance_sampled(dcfg, cfg.bench.n_z, cfg.bench.n_is, irng).value);
    closed.push_back(linear ? linear_closed_form(jacobian_values(dcfg.generator, Vector::Zero(zs.cols())), dcfg.sigma2)
                            : std::nan(""));
  };
  auto r = livi_train(dcfg, p.bnn, p.lik, p.train, tc, hook);
  Fitted f;
  f.traces.push_back(std::move(r.trace));
  write_traces(f, dir);
  write_csv(dir / "bench.csv", [&](std::ostream& o) {
    o << "step,full_jacobian,sv_bound,importance_sampled,closed_form\n";
    for (std::size_t i = 0; i < steps.size(); ++i) {
      o << steps[i] << ',' << full[i] << ',' << sv[i] << ',' << is[i] << ',';
      if (linear) o << closed[i];
      o << '\n';
    }
  });
  MetricsReport rep;
  rep.dataset = p.dataset;
  rep.method = std::string(to_string(cfg.method));
  rep.seed = seed;
  rep.notes = "entropy-bench";
  std::size_t violations = 0;
  double closed_err = 0.0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    violations += sv[i] > full[i];
    if (linear) closed_err = std::max(closed_err, std::abs(full[i] - closed[i]));
  }
  rep.extra["checkpoints"] = static_cast<double>(steps.size());
  rep.extra["sv_violations"] = static_cast<double>(violations);
  if (linear) rep.extra["max_closed_form_error"] = closed_err;
  if (steps.size() >= 2) {
    const auto fv = Eigen::Map<const Vector>(full.data(), static_cast<Eigen::Index>(full.size()));
    const auto iv = Eigen::Map<const Vector>(is.data(), static_cast<Eigen::Index>(is.size()));
    if ((fv.array() != fv(0)).any() && (iv.array() != iv(0)).any()) rep.extra["pearson_full_vs_is"] = pearson(fv, iv);
  }
  if (r.status.aborted) rep.notes += "; training stopped: " + r.status.reason;
  return rep;
}

MetricsReport eigen_bench(const RunConfig& cfg, std::uint64_t seed, const std::filesystem::path& dir) {
  const RngStream root = RngStream(seed).derive("evaluation").derive("eigenbench");
  LobpcgOptions opts;
  opts.tol = cfg.bench.lobpcg_tol;
  opts.max_iter = cfg.bench.lobpcg_max_iter;
  std::size_t converged = 0;
  double max_err = 0.0;
  write_csv(dir / "trace.csv", [&](std::ostream& o) {
    o << "trial,m,d,lobpcg,dense,rel_err,iterations,converged\n";
    for (std::size_t t = 0; t < cfg.bench.trials; ++t) {
      RngStream rng = root.derive(t);
      const std::size_t m = 20 + rng.below(cfg.bench.max_output - 19);
      const std::size_t d = 1 + rng.below(std::min(cfg.bench.max_latent, m));
      auto gen = build_mlp(d, {2 * d}, m, Activation::Tanh);
      gen.initialize(rng, 1.0);
      Vector z(static_cast<Eigen::Index>(d));
      for (auto& v : z) v = rng.normal();
      const JacobianOperator op(gen, z);
      const auto lo = lobpcg_min([&](const Vector& v) { return op.gram_apply(v); }, d, rng, opts);
      const double s1 = dense_svd(jacobian_values(gen, z)).values.front();
      const double dense = s1 * s1;
      const double err = std::abs(lo.eigenvalue - dense) / dense;
      if (lo.converged) ++converged, max_err = std::max(max_err, err);
      o << t << ',' << m << ',' << d << ',' << lo.eigenvalue << ',' << dense << ',' << err << ',' << lo.iterations
        << ',' << (lo.converged ? 1 : 0) << '\n';
    }
  });
  MetricsReport rep;
  rep.dataset = "random-tanh-generators";
  rep.method = "lobpcg";
  rep.seed = seed;
  rep.notes = "eigenbench";
  rep.extra["trials"] = static_cast<double>(cfg.bench.trials);
  rep.extra["convergence_rate"] = static_cast<double>(converged) / static_cast<double>(cfg.bench.trials);
  rep.extra["max_rel_err_converged"] = max_err;
  return rep;
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const DimensionError*>(&e)) return "DimensionError";
  if (dynamic_cast<const DomainError*>(&e)) return "DomainError";
  if (dynamic_cast<const ContractError*>(&e)) return "ContractError";
  if (dynamic_cast<const ConfigError*>(&e)) return "ConfigError";
  if (dynamic_cast<const CapacityError*>(&e)) return "CapacityError";
  if (dynamic_cast<const EstimatorError*>(&e)) return "EstimatorError";
  if (dynamic_cast<const IngestionError*>(&e)) return "IngestionError";
  if (dynamic_cast<const Error*>(&e)) return "Error";
  return "std::exception";
}

std::filesystem::path seed_dir(const RunConfig& cfg, std::uint64_t seed) {
  return cfg.output_dir / ("seed_" + std::to_string(seed));
}

RunConfig seed_snapshot(const RunConfig& cfg, std::uint64_t seed) {
  RunConfig c = cfg;
  c.seeds = {seed};
  return c;
}

}  // namespace

RunSummary run(const RunConfig& cfg, bool force, std::ostream& log) {
  RunSummary summary;
  auto log_error = [&](std::optional<std::uint64_t> seed, const std::string& kind, const std::string& msg) {
    json j{{"level", "error"}, {"kind", kind}, {"message", msg}};
    if (seed) j["seed"] = *seed;
    log << j.dump() << std::endl;
  };
  try {
    cfg.validate();
    if (cfg.output_dir.empty()) throw ConfigError("run: no output directory");
    for (auto seed : cfg.seeds) {
      const auto dir = seed_dir(cfg, seed);
      if (std::filesystem::exists(dir) && !force)
        throw ConfigError("run: '" + dir.string() + "' already exists (use --force to overwrite)");
    }
    std::filesystem::create_directories(cfg.output_dir);
    write_text(cfg.output_dir / "config.json", cfg.to_json());
  } catch (const std::exception& e) {
    log_error(std::nullopt, error_kind(e), e.what());
    summary.exit_code = 1;
    return summary;
  }

  std::vector<MetricsReport> reports;
  for (auto seed : cfg.seeds) {
    SeedOutcome out;
    out.seed = seed;
    out.dir = seed_dir(cfg, seed);
    try {
      std::filesystem::remove_all(out.dir);
      std::filesystem::create_directories(out.dir);
      write_text(out.dir / "config.json", seed_snapshot(cfg, seed).to_json());
      Problem p = make_problem(cfg, seed);
      if (cfg.experiment == Experiment::EntropyBench) {
        out.report = entropy_bench(cfg, p, seed, out.dir);
      } else if (cfg.experiment == Experiment::EigenBench) {
        out.report = eigen_bench(cfg, seed, out.dir);
      } else {
        const Fitted f = fit(cfg, p, seed, out.dir);
        write_traces(f, out.dir);
        out.report = evaluate(cfg, p, f, seed, &out.dir);
      }
      write_text(out.dir / "report.json", out.report.to_json() + "\n");
      if (out.report.extra.count("aborted")) throw EstimatorError(out.report.notes);
      out.ok = true;
      reports.push_back(out.report);
    } catch (const std::exception& e) {
      out.error = e.what();
      const std::string kind = error_kind(e);
      log_error(seed, kind, out.error);
      try {
        write_text(out.dir / "error.json", json{{"seed", seed}, {"kind", kind}, {"message", out.error}}.dump(2) + "\n");
      } catch (const std::exception&) {
      }
      summary.exit_code = 1;
    }
    summary.seeds.push_back(std::move(out));
  }

  ordered_json s;
  s["experiment"] = std::string(to_string(cfg.experiment));
  s["method"] = std::string(to_string(cfg.method));
  s["seeds_completed"] = reports.size();
  s["seeds_failed"] = cfg.seeds.size() - reports.size();
  for (const auto& [name, spread] : summarize(reports))
    s["metrics"][name] = {{"n", spread.n}, {"mean", spread.mean}, {"std", spread.std}};
  try {
    write_text(cfg.output_dir / "summary.json", s.dump(2) + "\n");
  } catch (const std::exception& e) {
    log_error(std::nullopt, error_kind(e), e.what());
    summary.exit_code = 1;
  }
  return summary;
}

MetricsReport evaluate_run_dir(const std::filesystem::path& dir) {
  const RunConfig cfg = RunConfig::load(dir / "config.json");
  if (cfg.seeds.size() != 1) throw ConfigError("eval: '" + dir.string() + "' is not a seed directory");
  if (cfg.experiment == Experiment::EntropyBench || cfg.experiment == Experiment::EigenBench)
    throw ConfigError("eval: bench runs have no posterior to evaluate");
  const auto seed = cfg.seeds.front();
  const Problem p = make_problem(cfg, seed);
  const Fitted f = restore(cfg, p, seed, dir);
  MetricsReport rep = evaluate(cfg, p, f, seed, nullptr);
  // Sampler diagnostics live only in the original report.
  if (std::filesystem::exists(dir / "report.json")) rep.extra = MetricsReport::from_json(read_text(dir / "report.json")).extra;
  return rep;
}

std::map<std::string, MetricSpread> summarize(const std::vector<MetricsReport>& reports) {
  std::map<std::string, std::vector<double>> values;
  for (const auto& r : reports) {
    auto add = [&](const char* name, const std::optional<double>& v) {
      if (v) values[name].push_back(*v);
    };
    add("rmse", r.rmse);
    add("test_ll", r.test_ll);
    add("ece", r.ece);
    add("auroc", r.auroc);
    add("mean_confidence", r.mean_confidence);
    add("mean_epistemic_std", r.mean_epistemic_std);
    add("noise_var", r.noise_var);
    for (const auto& [k, v] : r.extra) values[k].push_back(v);
  }
  std::map<std::string, MetricSpread> out;
  for (const auto& [name, v] : values) {
    MetricSpread s;
    s.n = v.size();
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(s.n);
    for (double x : v) s.std += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(s.std / static_cast<double>(s.n));
    out[name] = s;
  }
  return out;
}

void write_comparison(const std::vector<MetricsReport>& reports, std::ostream& out) {
  static const char* metrics[] = {"rmse", "test_ll", "ece", "auroc", "mean_confidence", "mean_epistemic_std", "noise_var"};
  std::map<std::pair<std::string, std::string>, std::vector<MetricsReport>> groups;
  for (const auto& r : reports) groups[{r.dataset, r.method}].push_back(r);
  out << "dataset,method,seeds";
  for (const char* m : metrics) out << ',' << m << "_mean," << m << "_std";
  out << '\n' << std::setprecision(17);
  for (const auto& [key, rs] : groups) {
    const auto s = summarize(rs);
    out << key.first << ',' << key.second << ',' << rs.size();
    for (const char* m : metrics) {
      const auto it = s.find(m);
      if (it == s.end()) out << ",,";
      else out << ',' << it->second.mean << ',' << it->second.std;
    }
    out << '\n';
  }
}

}  // namespace livi
