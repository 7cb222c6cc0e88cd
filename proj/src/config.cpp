#include "livi/errors.hpp"
#include "livi/harness.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

namespace livi {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(Experiment e) {
  switch (e) {
    case Experiment::Toy: return "toy";
    case Experiment::UciRegression: return "uci-regression";
    case Experiment::SynthClassify: return "synth-classify";
    case Experiment::EntropyBench: return "entropy-bench";
    case Experiment::EigenBench: return "eigenbench";
  }
  return "?";
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::LiviL1: return "livi-l1";
    case Method::LiviL2: return "livi-l2";
    case Method::Mfvi: return "mfvi";
    case Method::Hmc: return "hmc";
    case Method::Ensemble: return "ensemble";
  }
  return "?";
}

Experiment experiment_from_string(std::string_view s) {
  for (auto e : {Experiment::Toy, Experiment::UciRegression, Experiment::SynthClassify, Experiment::EntropyBench,
                 Experiment::EigenBench})
    if (to_string(e) == s) return e;
  throw ConfigError("unknown experiment '" + std::string(s) +
                    "' (expected toy, uci-regression, synth-classify, entropy-bench or eigenbench)");
}

Method method_from_string(std::string_view s) {
  for (auto m : {Method::LiviL1, Method::LiviL2, Method::Mfvi, Method::Hmc, Method::Ensemble})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown method '" + std::string(s) + "' (expected livi-l1, livi-l2, mfvi, hmc or ensemble)");
}

namespace {

TrainConfig toy_train_defaults() {
  TrainConfig t;
  t.elbo_samples = 8;
  t.sigma2 = 1e-3;
  t.optimizer.lr = 3e-3;
  t.steps = 5000;
  t.init_gain = 0.3;
  return t;
}

HmcConfig toy_hmc_defaults() {
  HmcConfig h;
  h.n_samples = 2000;
  h.n_warmup = 1000;
  return h;
}

// Reads keys of one JSON object, remembering which were consumed so that
// leftovers can be reported as unknown.
class Reader {
public:
  Reader(json j, std::string path) : j_(std::move(j)), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    try {
      if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_unsigned()) throw ConfigError(where(key) + ": expected a non-negative integer");
      }
      if constexpr (std::is_same_v<T, std::vector<std::size_t>> || std::is_same_v<T, std::vector<std::uint64_t>>) {
        for (const auto& e : v)
          if (!e.is_number_unsigned()) throw ConfigError(where(key) + ": expected non-negative integers");
      }
      out = v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  void activation(const char* key, Activation& out) {
    std::string s(to_string(out));
    get(key, s);
    out = activation_from_string(s);
  }

  Reader sub(const char* key) {
    seen_.insert(key);
    return Reader(j_.contains(key) ? j_.at(key) : json::object(), where(key));
  }

  void done() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + where(k.c_str()) + "'");
  }

private:
  std::string where(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  json j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

void RunConfig::validate() const {
  if (seeds.empty()) throw ConfigError("config: at least one seed is required");
  if (generator.architecture != "mlp" && generator.architecture != "cmmnn")
    throw ConfigError("config: generator.architecture must be mlp or cmmnn");
  if (generator.latent_dim == 0) throw ConfigError("config: generator.latent_dim must be positive");
  train.validate();
  if (method == Method::Hmc) hmc.validate();
  if (method == Method::Ensemble && ensemble_members < 2) throw ConfigError("config: ensemble_members must be >= 2");
  if (eval.posterior_samples == 0 || eval.ece_bins == 0 || eval.grid_points < 2 || eval.toy_test_points == 0)
    throw ConfigError("config: eval sizes must be positive (grid_points >= 2)");
  if (experiment == Experiment::UciRegression) {
    if (data.source == "csv") {
      if (data.path.empty()) throw ConfigError("config: data.path is required for a csv source");
      if (!std::filesystem::exists(data.path)) throw ConfigError("config: data.path '" + data.path + "' does not exist");
      if (data.target_column.empty()) throw ConfigError("config: data.target_column is required for a csv source");
      if (!(data.train_fraction > 0.0 && data.train_fraction < 1.0))
        throw ConfigError("config: data.train_fraction must be in (0, 1)");
    } else if (data.source != "synthetic") {
      throw ConfigError("config: data.source must be csv or synthetic");
    }
  }
  if (experiment == Experiment::EntropyBench && (bench.every == 0 || bench.n_z == 0 || bench.n_is == 0 || bench.latent_dim == 0))
    throw ConfigError("config: bench.every, bench.n_z, bench.n_is and bench.latent_dim must be positive");
  if (experiment == Experiment::EigenBench &&
      (bench.trials == 0 || bench.max_latent == 0 || bench.max_output < 20 || bench.max_latent > bench.max_output ||
       !(bench.lobpcg_tol > 0.0) || bench.lobpcg_max_iter == 0))
    throw ConfigError("config: eigenbench needs trials > 0 and 1 <= max_latent <= max_output, max_output >= 20");
}

std::string RunConfig::to_json() const {
  ordered_json j;
  j["experiment"] = std::string(to_string(experiment));
  j["method"] = std::string(to_string(method));
  j["seeds"] = seeds;
  j["output_dir"] = output_dir.string();

  auto& d = j["data"];
  d["source"] = data.source;
  d["path"] = data.path;
  d["target_column"] = data.target_column;
  d["train_fraction"] = data.train_fraction;
  d["standardize"] = data.standardize;
  d["toy"] = {{"n", data.toy.n},         {"noise", data.toy.noise},   {"x_min", data.toy.x_min},
              {"x_max", data.toy.x_max}, {"gap_lo", data.toy.gap_lo}, {"gap_hi", data.toy.gap_hi},
              {"mean_function", "sin"}};
  d["classify"] = {{"n_in", data.classify.n_in},
                   {"n_ood", data.classify.n_ood},
                   {"clusters_per_class", data.classify.clusters_per_class},
                   {"radius", data.classify.radius},
                   {"cluster_std", data.classify.cluster_std},
                   {"ood_factor", data.classify.ood_factor}};
  d["regression"] = {{"n", data.regression.n},
                     {"features", data.regression.features},
                     {"noise", data.regression.noise},
                     {"train_fraction", data.regression.train_fraction}};

  j["bnn"] = {{"hidden", bnn.hidden}, {"activation", std::string(to_string(bnn.activation))}};

  j["generator"] = {{"architecture", generator.architecture},
                    {"latent_dim", generator.latent_dim},
                    {"hidden", generator.hidden},
                    {"activation", std::string(to_string(generator.activation))},
                    {"noise_rows", generator.noise_rows},
                    {"noise_cols", generator.noise_cols},
                    {"trunk_rows", generator.trunk_rows},
                    {"trunk_cols", generator.trunk_cols}};

  auto& t = j["train"];
  t["elbo_samples"] = train.elbo_samples;
  t["sigma2"] = train.sigma2;
  t["steps"] = train.steps;
  t["batch_size"] = train.batch_size;
  t["prior_scale"] = train.prior_scale;
  t["learn_noise"] = train.learn_noise;
  t["initial_noise_std"] = train.initial_noise_std;
  t["init_gain"] = train.init_gain;
  t["init_output_from_network"] = train.init_output_from_network;
  t["mfvi_initial_std"] = train.mfvi_initial_std;
  t["kl_warmup_fraction"] = train.kl_warmup_fraction;
  t["checkpoint_every"] = train.checkpoint_every;
  t["optimizer"] = {{"lr", train.optimizer.lr},
                    {"beta1", train.optimizer.beta1},
                    {"beta2", train.optimizer.beta2},
                    {"eps", train.optimizer.eps},
                    {"weight_decay", train.optimizer.weight_decay},
                    {"cosine_decay", train.optimizer.cosine_decay},
                    {"final_lr_fraction", train.optimizer.final_lr_fraction}};
  t["lobpcg"] = {{"tol", train.lobpcg.tol}, {"max_iter", train.lobpcg.max_iter}};

  j["hmc"] = {{"step_size", hmc.step_size},       {"leapfrog_steps", hmc.leapfrog_steps},
              {"n_samples", hmc.n_samples},       {"n_warmup", hmc.n_warmup},
              {"mass", hmc.mass},                 {"adapt_step_size", hmc.adapt_step_size},
              {"target_accept", hmc.target_accept}, {"divergence_threshold", hmc.divergence_threshold}};
  j["ensemble_members"] = ensemble_members;
  j["eval"] = {{"posterior_samples", eval.posterior_samples},
               {"ece_bins", eval.ece_bins},
               {"grid_points", eval.grid_points},
               {"toy_test_points", eval.toy_test_points}};
  j["bench"] = {{"latent_dim", bench.latent_dim}, {"hidden", bench.hidden},   {"every", bench.every},
                {"n_z", bench.n_z},               {"n_is", bench.n_is},       {"trials", bench.trials},
                {"max_output", bench.max_output}, {"max_latent", bench.max_latent},
                {"lobpcg_tol", bench.lobpcg_tol}, {"lobpcg_max_iter", bench.lobpcg_max_iter}};
  return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  RunConfig c = toy_defaults();
  Reader r(root, "");
  std::string s(to_string(c.experiment));
  r.get("experiment", s);
  c.experiment = experiment_from_string(s);
  s = to_string(c.method);
  r.get("method", s);
  c.method = method_from_string(s);
  r.get("seeds", c.seeds);
  std::string out = c.output_dir.string();
  r.get("output_dir", out);
  c.output_dir = out;

  {
    Reader d = r.sub("data");
    d.get("source", c.data.source);
    d.get("path", c.data.path);
    d.get("target_column", c.data.target_column);
    d.get("train_fraction", c.data.train_fraction);
    d.get("standardize", c.data.standardize);
    Reader toy = d.sub("toy");
    toy.get("n", c.data.toy.n);
    toy.get("noise", c.data.toy.noise);
    toy.get("x_min", c.data.toy.x_min);
    toy.get("x_max", c.data.toy.x_max);
    toy.get("gap_lo", c.data.toy.gap_lo);
    toy.get("gap_hi", c.data.toy.gap_hi);
    std::string fn = "sin";
    toy.get("mean_function", fn);
    if (fn != "sin") throw ConfigError("config: data.toy.mean_function must be sin");
    toy.done();
    Reader cl = d.sub("classify");
    cl.get("n_in", c.data.classify.n_in);
    cl.get("n_ood", c.data.classify.n_ood);
    cl.get("clusters_per_class", c.data.classify.clusters_per_class);
    cl.get("radius", c.data.classify.radius);
    cl.get("cluster_std", c.data.classify.cluster_std);
    cl.get("ood_factor", c.data.classify.ood_factor);
    cl.done();
    Reader rg = d.sub("regression");
    rg.get("n", c.data.regression.n);
    rg.get("features", c.data.regression.features);
    rg.get("noise", c.data.regression.noise);
    rg.get("train_fraction", c.data.regression.train_fraction);
    rg.done();
    d.done();
  }
  {
    Reader b = r.sub("bnn");
    b.get("hidden", c.bnn.hidden);
    b.activation("activation", c.bnn.activation);
    b.done();
  }
  {
    Reader g = r.sub("generator");
    g.get("architecture", c.generator.architecture);
    g.get("latent_dim", c.generator.latent_dim);
    g.get("hidden", c.generator.hidden);
    g.activation("activation", c.generator.activation);
    g.get("noise_rows", c.generator.noise_rows);
    g.get("noise_cols", c.generator.noise_cols);
    g.get("trunk_rows", c.generator.trunk_rows);
    g.get("trunk_cols", c.generator.trunk_cols);
    g.done();
  }
  {
    Reader t = r.sub("train");
    t.get("elbo_samples", c.train.elbo_samples);
    t.get("sigma2", c.train.sigma2);
    t.get("steps", c.train.steps);
    t.get("batch_size", c.train.batch_size);
    t.get("prior_scale", c.train.prior_scale);
    t.get("learn_noise", c.train.learn_noise);
    t.get("initial_noise_std", c.train.initial_noise_std);
    t.get("init_gain", c.train.init_gain);
    t.get("init_output_from_network", c.train.init_output_from_network);
    t.get("mfvi_initial_std", c.train.mfvi_initial_std);
    t.get("kl_warmup_fraction", c.train.kl_warmup_fraction);
    t.get("checkpoint_every", c.train.checkpoint_every);
    Reader o = t.sub("optimizer");
    o.get("lr", c.train.optimizer.lr);
    o.get("beta1", c.train.optimizer.beta1);
    o.get("beta2", c.train.optimizer.beta2);
    o.get("eps", c.train.optimizer.eps);
    o.get("weight_decay", c.train.optimizer.weight_decay);
    o.get("cosine_decay", c.train.optimizer.cosine_decay);
    o.get("final_lr_fraction", c.train.optimizer.final_lr_fraction);
    o.done();
    Reader l = t.sub("lobpcg");
    l.get("tol", c.train.lobpcg.tol);
    l.get("max_iter", c.train.lobpcg.max_iter);
    l.done();
    t.done();
  }
  {
    Reader h = r.sub("hmc");
    h.get("step_size", c.hmc.step_size);
    h.get("leapfrog_steps", c.hmc.leapfrog_steps);
    h.get("n_samples", c.hmc.n_samples);
    h.get("n_warmup", c.hmc.n_warmup);
    h.get("mass", c.hmc.mass);
    h.get("adapt_step_size", c.hmc.adapt_step_size);
    h.get("target_accept", c.hmc.target_accept);
    h.get("divergence_threshold", c.hmc.divergence_threshold);
    h.done();
  }
  r.get("ensemble_members", c.ensemble_members);
  {
    Reader e = r.sub("eval");
    e.get("posterior_samples", c.eval.posterior_samples);
    e.get("ece_bins", c.eval.ece_bins);
    e.get("grid_points", c.eval.grid_points);
    e.get("toy_test_points", c.eval.toy_test_points);
    e.done();
  }
  {
    Reader b = r.sub("bench");
    b.get("latent_dim", c.bench.latent_dim);
    b.get("hidden", c.bench.hidden);
    b.get("every", c.bench.every);
    b.get("n_z", c.bench.n_z);
    b.get("n_is", c.bench.n_is);
    b.get("trials", c.bench.trials);
    b.get("max_output", c.bench.max_output);
    b.get("max_latent", c.bench.max_latent);
    b.get("lobpcg_tol", c.bench.lobpcg_tol);
    b.get("lobpcg_max_iter", c.bench.lobpcg_max_iter);
    b.done();
  }
  r.done();
  c.train.bound = c.method == Method::LiviL2 ? BoundKind::SvBound : BoundKind::FullJacobian;
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

RunConfig toy_defaults() {
  RunConfig c;
  c.train = toy_train_defaults();
  c.hmc = toy_hmc_defaults();
  return c;
}

}  // namespace livi
