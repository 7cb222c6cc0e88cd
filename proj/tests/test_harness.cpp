#include "livi/errors.hpp"
#include "livi/harness.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace livi {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("livi_harness_" + name);
  fs::remove_all(d);
  return d;
}

RunConfig quick_toy(const fs::path& out) {
  RunConfig c = toy_defaults();
  c.train.steps = 60;
  c.eval.posterior_samples = 50;
  c.output_dir = out;
  return c;
}

TEST(RunConfig, SnapshotRoundTripsEveryField) {
  RunConfig c = toy_defaults();
  c.method = Method::LiviL2;
  c.seeds = {3, 5};
  c.train.sigma2 = 0.1 + 0.2;
  c.train.optimizer.lr = 1.0 / 3.0;
  c.bench.hidden = {4, 5};
  c.generator.architecture = "cmmnn";
  c.data.toy.noise = 0.25;
  const auto text = c.to_json();
  const auto back = RunConfig::from_json(text);
  EXPECT_EQ(back.to_json(), text);
  EXPECT_EQ(back.train.bound, BoundKind::SvBound);
  EXPECT_EQ(back.train.sigma2, c.train.sigma2);
  EXPECT_EQ(back.seeds, c.seeds);
  // The snapshot spells out defaults.
  EXPECT_NE(text.find("\"kl_warmup_fraction\""), std::string::npos);
  EXPECT_NE(text.find("\"mean_function\": \"sin\""), std::string::npos);
}

TEST(RunConfig, EmptyObjectGivesToyDefaults) {
  const auto c = RunConfig::from_json("{}");
  EXPECT_EQ(c.to_json(), toy_defaults().to_json());
  EXPECT_EQ(c.bnn.param_count(), 105u);
}

TEST(RunConfig, RejectsUnknownKeysBadTypesAndNames) {
  EXPECT_THROW(RunConfig::from_json(R"({"method": "bogus"})"), ConfigError);
  EXPECT_THROW(RunConfig::from_json(R"({"experiment": "mnist"})"), ConfigError);
  EXPECT_THROW(RunConfig::from_json(R"({"train": {"stepz": 3}})"), ConfigError);
  EXPECT_THROW(RunConfig::from_json(R"({"train": {"steps": -3}})"), ConfigError);
  EXPECT_THROW(RunConfig::from_json(R"({"train": {"sigma2": "small"}})"), ConfigError);
  EXPECT_THROW(RunConfig::from_json(R"({"bnn": {"activation": "swish"}})"), ConfigError);
  EXPECT_THROW(RunConfig::from_json("{"), ConfigError);
  try {
    RunConfig::from_json(R"({"train": {"optimizer": {"lrr": 1}}})");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.optimizer.lrr"), std::string::npos);
  }
}

TEST(RunConfig, ValidationChecksReferencedPathsAndMethodFields) {
  RunConfig c = toy_defaults();
  c.experiment = Experiment::UciRegression;
  c.data.path = "/nonexistent/concrete.csv";
  c.data.target_column = "strength";
  EXPECT_THROW(c.validate(), ConfigError);
  c.data.source = "synthetic";
  EXPECT_NO_THROW(c.validate());
  c.method = Method::Ensemble;
  c.ensemble_members = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c.ensemble_members = 2;
  c.seeds.clear();
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Checkpoint, LittleEndianFloat64RoundTrip) {
  const auto dir = fresh_dir("ckpt");
  fs::create_directories(dir);
  const std::vector<double> v{1.0, -0.0, 1e-310, 3.141592653589793, -2.5e300};
  write_checkpoint(dir / "c.bin", v, R"({"kind": "test"})");
  EXPECT_EQ(read_checkpoint(dir / "c.bin"), v);
  EXPECT_EQ(fs::file_size(dir / "c.bin"), 8 * v.size());
  const auto bytes = slurp(dir / "c.bin");
  // 1.0 = 0x3FF0000000000000, least significant byte first.
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 0xF0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[7]), 0x3F);
  EXPECT_TRUE(fs::exists(dir / "c.bin.json"));
  std::ofstream(dir / "bad.bin", std::ios::binary) << "abc";
  EXPECT_THROW(read_checkpoint(dir / "bad.bin"), IngestionError);
}

TEST(Run, ToyArtifactsDeterminismOverwriteGuardAndEval) {
  const auto out = fresh_dir("toy");
  RunConfig c = quick_toy(out);
  c.seeds = {0, 1, 2};
  c.train.checkpoint_every = 25;
  std::ostringstream log;
  const auto s = run(c, false, log);
  ASSERT_EQ(s.exit_code, 0) << log.str();
  ASSERT_EQ(s.seeds.size(), 3u);
  for (const auto& o : s.seeds) {
    EXPECT_TRUE(o.ok);
    for (const char* f : {"config.json", "trace.csv", "timing.csv", "report.json", "checkpoint.bin",
                          "checkpoint.bin.json", "predictive.csv", "checkpoint_step25.bin", "checkpoint_step50.bin"})
      EXPECT_TRUE(fs::exists(o.dir / f)) << o.dir / f;
    ASSERT_TRUE(o.report.rmse.has_value());
    EXPECT_TRUE(std::isfinite(*o.report.rmse));
  }
  EXPECT_TRUE(fs::exists(out / "summary.json"));
  EXPECT_NE(slurp(out / "summary.json").find("\"rmse\""), std::string::npos);

  // Predictive CSV covers the grid with four columns.
  const auto pred = slurp(out / "seed_0" / "predictive.csv");
  EXPECT_EQ(pred.substr(0, pred.find('\n')), "x,mean,epistemic_std,total_std");
  EXPECT_EQ(std::count(pred.begin(), pred.end(), '\n'), 201);

  // Refuses to overwrite, then reproduces byte-identical traces when forced.
  const auto first = slurp(out / "seed_1" / "trace.csv");
  std::ostringstream log2;
  const auto again = run(c, false, log2);
  EXPECT_NE(again.exit_code, 0);
  EXPECT_NE(log2.str().find("already exists"), std::string::npos);
  const auto forced = run(c, true, log2);
  EXPECT_EQ(forced.exit_code, 0);
  EXPECT_EQ(slurp(out / "seed_1" / "trace.csv"), first);
  EXPECT_EQ(slurp(out / "seed_1" / "report.json"), s.seeds[1].report.to_json() + "\n");

  // eval rebuilds the posterior from the checkpoint alone.
  const auto re = evaluate_run_dir(out / "seed_2");
  EXPECT_EQ(re.to_json(), s.seeds[2].report.to_json());
}

TEST(Run, EveryMethodCompletesAndEvalMatches) {
  for (auto m : {Method::LiviL2, Method::Mfvi, Method::Hmc, Method::Ensemble}) {
    const auto out = fresh_dir(std::string("method_") + std::string(to_string(m)));
    RunConfig c = quick_toy(out);
    c.method = m;
    c.ensemble_members = 2;
    c.hmc.n_samples = 40;
    c.hmc.n_warmup = 20;
    std::ostringstream log;
    const auto s = run(c, false, log);
    ASSERT_EQ(s.exit_code, 0) << to_string(m) << ": " << log.str();
    EXPECT_EQ(evaluate_run_dir(s.seeds[0].dir).to_json(), s.seeds[0].report.to_json()) << to_string(m);
    if (m == Method::Hmc) EXPECT_TRUE(s.seeds[0].report.extra.count("acceptance_rate"));
    if (m == Method::Ensemble) EXPECT_TRUE(fs::exists(s.seeds[0].dir / "trace_member1.csv"));
  }
}

TEST(Run, EntropyBenchLinearColumnEqualsClosedForm) {
  const auto out = fresh_dir("ebench");
  RunConfig c = toy_defaults();
  c.experiment = Experiment::EntropyBench;
  c.train.steps = 60;
  c.bench.every = 20;
  c.bench.n_is = 16;
  c.output_dir = out;
  std::ostringstream log;
  const auto s = run(c, false, log);
  ASSERT_EQ(s.exit_code, 0) << log.str();
  const auto& r = s.seeds[0].report;
  EXPECT_EQ(r.extra.at("checkpoints"), 3.0);
  EXPECT_LT(r.extra.at("max_closed_form_error"), 1e-8);
  EXPECT_EQ(r.extra.at("sv_violations"), 0.0);
  std::ifstream in(s.seeds[0].dir / "bench.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,full_jacobian,sv_bound,importance_sampled,closed_form");
  int rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ls(line);
    std::vector<double> v;
    for (std::string cell; std::getline(ls, cell, ',');) v.push_back(std::stod(cell));
    ASSERT_EQ(v.size(), 5u);
    EXPECT_NEAR(v[1], v[4], 1e-8);
    EXPECT_LE(v[2], v[1]);
    ++rows;
  }
  EXPECT_EQ(rows, 3);
}

TEST(Run, EigenBenchReportsConvergence) {
  const auto out = fresh_dir("eig");
  RunConfig c = toy_defaults();
  c.experiment = Experiment::EigenBench;
  c.bench.trials = 5;
  c.bench.max_output = 60;
  c.bench.max_latent = 10;
  c.output_dir = out;
  std::ostringstream log;
  const auto s = run(c, false, log);
  ASSERT_EQ(s.exit_code, 0) << log.str();
  EXPECT_EQ(s.seeds[0].report.extra.at("convergence_rate"), 1.0);
  EXPECT_LT(s.seeds[0].report.extra.at("max_rel_err_converged"), 1e-6);
}

TEST(Run, ModuleErrorsGiveNonzeroExitAndStructuredLog) {
  const auto out = fresh_dir("err");
  fs::create_directories(out);
  std::ofstream(out / "broken.csv") << "a,b\n1,2\n3,x\n";
  RunConfig c = toy_defaults();
  c.experiment = Experiment::UciRegression;
  c.data.path = (out / "broken.csv").string();
  c.data.target_column = "b";
  c.output_dir = out / "run";
  std::ostringstream log;
  const auto s = run(c, false, log);
  EXPECT_NE(s.exit_code, 0);
  EXPECT_NE(log.str().find("\"kind\":\"IngestionError\""), std::string::npos);
  EXPECT_NE(log.str().find("row"), std::string::npos);
  EXPECT_TRUE(fs::exists(out / "run" / "seed_0" / "error.json"));

  RunConfig bad = toy_defaults();
  bad.output_dir = out / "bad";
  bad.train.steps = 0;
  std::ostringstream log2;
  EXPECT_NE(run(bad, false, log2).exit_code, 0);
  EXPECT_NE(log2.str().find("ConfigError"), std::string::npos);
}

TEST(Compare, GroupsByDatasetAndMethodWithSpread) {
  std::vector<MetricsReport> reps(3);
  for (int i = 0; i < 3; ++i) {
    reps[i].dataset = "toy";
    reps[i].method = i < 2 ? "livi-l1" : "mfvi";
    reps[i].rmse = 1.0 + i;
  }
  const auto s = summarize({reps[0], reps[1]});
  EXPECT_EQ(s.at("rmse").n, 2u);
  EXPECT_DOUBLE_EQ(s.at("rmse").mean, 1.5);
  EXPECT_DOUBLE_EQ(s.at("rmse").std, 0.5);
  std::ostringstream os;
  write_comparison(reps, os);
  const auto text = os.str();
  EXPECT_NE(text.find("toy,livi-l1,2,1.5,0.5"), std::string::npos);
  EXPECT_NE(text.find("toy,mfvi,1,3,0"), std::string::npos);
}

}  // namespace
}  // namespace livi
