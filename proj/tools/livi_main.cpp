#include "livi/errors.hpp"
#include "livi/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace livi;

constexpr int kUsageError = 2;

struct CommonOptions {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::string method;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool with_method) {
  cmd->add_option("--config", o.config, "run config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seeds, "seed list, e.g. 0,1,2")->delimiter(',');
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_flag("--force", o.force, "overwrite existing seed directories");
  if (with_method)
    cmd->add_option("--method", o.method, "livi-l1, livi-l2, mfvi, hmc or ensemble")
        ->check(CLI::IsMember({"livi-l1", "livi-l2", "mfvi", "hmc", "ensemble"}));
}

void log_error(const std::string& kind, const std::string& msg) {
  std::cerr << nlohmann::json{{"level", "error"}, {"kind", kind}, {"message", msg}}.dump() << std::endl;
}

RunConfig resolve(const CommonOptions& o, std::optional<Experiment> forced) {
  RunConfig cfg = o.config.empty() ? toy_defaults() : RunConfig::load(o.config);
  if (forced) cfg.experiment = *forced;
  if (!o.method.empty()) {
    cfg.method = method_from_string(o.method);
    cfg.train.bound = cfg.method == Method::LiviL2 ? BoundKind::SvBound : BoundKind::FullJacobian;
  }
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (cfg.experiment == Experiment::UciRegression && cfg.data.source == "csv" && cfg.data.path.empty())
    if (const char* env = std::getenv("LIVI_CONCRETE_CSV")) cfg.data.path = env;
  if (!o.out.empty()) {
    cfg.output_dir = o.out;
  } else if (cfg.output_dir.empty()) {
    const char* root = std::getenv("LIVI_OUT_ROOT");
    cfg.output_dir = std::filesystem::path(root ? root : "runs") /
                     (std::string(to_string(cfg.experiment)) + "-" + std::string(to_string(cfg.method)));
  }
  return cfg;
}

int run_experiment(const CommonOptions& o, std::optional<Experiment> forced) {
  RunConfig cfg;
  try {
    cfg = resolve(o, forced);
    cfg.validate();
  } catch (const ConfigError& e) {
    log_error("ConfigError", e.what());
    return kUsageError;
  }
  const auto summary = run(cfg, o.force, std::cerr);
  for (const auto& s : summary.seeds) {
    std::cout << "seed " << s.seed << ": " << (s.ok ? "ok" : "failed") << "  " << s.dir.string() << '\n';
    if (s.ok) {
      const auto& r = s.report;
      if (r.rmse) std::cout << "  rmse " << *r.rmse << '\n';
      if (r.test_ll) std::cout << "  test_ll " << *r.test_ll << '\n';
      if (r.auroc) std::cout << "  auroc " << *r.auroc << '\n';
      for (const auto& [k, v] : r.extra) std::cout << "  " << k << ' ' << v << '\n';
    }
  }
  return summary.exit_code;
}

std::vector<std::filesystem::path> seed_dirs(const std::vector<std::string>& roots) {
  std::vector<std::filesystem::path> dirs;
  for (const auto& r : roots) {
    const std::filesystem::path root(r);
    if (std::filesystem::exists(root / "report.json") || std::filesystem::exists(root / "checkpoint.bin")) {
      dirs.push_back(root);
      continue;
    }
    std::vector<std::filesystem::path> found;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root))
      if (e.is_regular_file() && e.path().filename() == "report.json") found.push_back(e.path().parent_path());
    std::sort(found.begin(), found.end());
    dirs.insert(dirs.end(), found.begin(), found.end());
  }
  return dirs;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw IngestionError("cannot open '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linearised implicit variational inference experiments"};
  app.require_subcommand(1);

  CommonOptions train_o, bench_o, eigen_o, toy_o;
  auto* train = app.add_subcommand("train", "run the experiment described by a config");
  add_common(train, train_o, true);
  auto* entropy = app.add_subcommand("entropy-bench", "log entropy estimators along a LIVI training run");
  add_common(entropy, bench_o, true);
  auto* eigen = app.add_subcommand("eigenbench", "LOBPCG against the dense spectrum on random Jacobians");
  add_common(eigen, eigen_o, false);
  auto* toy = app.add_subcommand("toy-demo", "toy sinusoid regression with a gap");
  add_common(toy, toy_o, true);

  std::vector<std::string> eval_dirs;
  std::string eval_out;
  auto* eval = app.add_subcommand("eval", "recompute reports from run checkpoints");
  eval->add_option("dirs", eval_dirs, "run or seed directories")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--out", eval_out, "write the reports here as JSON lines");

  std::vector<std::string> compare_dirs;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "tabulate reports across methods");
  compare->add_option("dirs", compare_dirs, "run directories")->required()->check(CLI::ExistingDirectory);
  compare->add_option("--out", compare_out, "write the CSV here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return run_experiment(train_o, std::nullopt);
    if (*entropy) return run_experiment(bench_o, Experiment::EntropyBench);
    if (*eigen) return run_experiment(eigen_o, Experiment::EigenBench);
    if (*toy) return run_experiment(toy_o, Experiment::Toy);
    if (*eval) {
      std::ofstream file;
      if (!eval_out.empty()) file.open(eval_out);
      std::ostream& out = eval_out.empty() ? std::cout : file;
      for (const auto& d : seed_dirs(eval_dirs))
        out << nlohmann::json::parse(evaluate_run_dir(d).to_json()).dump() << '\n';
      return 0;
    }
    if (*compare) {
      std::vector<MetricsReport> reports;
      for (const auto& d : seed_dirs(compare_dirs)) reports.push_back(MetricsReport::from_json(read_file(d / "report.json")));
      if (reports.empty()) throw IngestionError("compare: no report.json found");
      if (compare_out.empty()) {
        write_comparison(reports, std::cout);
      } else {
        std::ofstream f(compare_out);
        write_comparison(reports, f);
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    log_error("ConfigError", e.what());
    return kUsageError;
  } catch (const std::exception& e) {
    log_error("Error", e.what());
    return 1;
  }
  return 0;
}
