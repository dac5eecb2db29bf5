#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include "egsde/experiment.hpp"

using namespace egsde;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.data.samples_per_domain = 200;
  c.experiment.test_per_domain = 40;
  c.experiment.sources = 24;
  c.experiment.repeat_seeds = {1, 2};
  c.translation.steps = 10;
  c.translation.threads = 1;
  c.translation.filter_factor = 2;
  c.classifier.hyper.epochs = 1;
  c.classifier.hyper.iterations_per_epoch = 5;
  c.classifier.hyper.batch = 32;
  c.classifier.arch.width = 16;
  c.classifier.arch.embed_dim = 8;
  c.classifier.arch.feature_channels = 4;
  return c;
}

// Workspace with data and classifiers, built once per test binary.
const Workspace& prepared() {
  static const Workspace ws = [] {
    Workspace w{fs::temp_directory_path() / "egsde_experiment_test"};
    fs::remove_all(w.root);
    generate_data(small_config(), w);
    train_classifiers(small_config(), w);
    return w;
  }();
  return ws;
}

}  // namespace

TEST(Experiment, MissingCheckpointIsReported) {
  const Workspace ws{fs::temp_directory_path() / "egsde_experiment_empty"};
  fs::remove_all(ws.root);
  generate_data(small_config(), ws);
  EXPECT_THROW(run_experiment(small_config(), ws), MissingArtifact);
  auto cfg = small_config();
  cfg.score.model = ScoreModelKind::network;
  train_classifiers(cfg, ws);
  EXPECT_THROW(run_experiment(cfg, ws), MissingArtifact);
}

TEST(Experiment, EvaluatorSeesTheFullInput) {
  const auto cfg = small_config();
  ASSERT_GT(cfg.classifier.arch.highpass_factor, 0u);
  const auto models = load_models(cfg, prepared());
  EXPECT_EQ(models.classifier.arch.highpass_factor, cfg.classifier.arch.highpass_factor);
  EXPECT_EQ(models.evaluator.arch.highpass_factor, 0u);
}

TEST(Experiment, MissingDataIsReported) {
  const Workspace ws{fs::temp_directory_path() / "egsde_experiment_nodata"};
  fs::remove_all(ws.root);
  EXPECT_THROW(load_inputs(small_config(), ws), MissingArtifact);
}

TEST(Experiment, RepeatedSeedGivesIdenticalRows) {
  auto cfg = small_config();
  cfg.experiment.repeat_seeds = {5, 5};
  const auto res = run_experiment(cfg, prepared());
  ASSERT_EQ(res.outputs.size(), 2u);
  EXPECT_EQ(res.outputs[0], res.outputs[1]);
  ASSERT_EQ(res.report.batches.size(), 2u);
  EXPECT_EQ(res.report.batches[0].frechet, res.report.batches[1].frechet);
  EXPECT_EQ(res.report.l2.std, 0.0);
}

TEST(Experiment, ZeroWeightsMatchSdeditReport) {
  auto a = small_config();
  a.translation.lambda_s = 0.0;
  a.translation.lambda_i = 0.0;
  auto b = a;
  b.translation.sampler = SamplerKind::sdedit;
  const auto ra = run_experiment(a, prepared()).report;
  const auto rb = run_experiment(b, prepared()).report;
  ASSERT_EQ(ra.rows.size(), rb.rows.size());
  for (std::size_t i = 0; i < ra.rows.size(); ++i) EXPECT_EQ(ra.rows[i].l2, rb.rows[i].l2);
  EXPECT_EQ(ra.frechet.mean, rb.frechet.mean);
}

TEST(Experiment, ReportRoundTripAndAggregates) {
  const auto dir = prepared().root / "runs" / "rt";
  RunOptions opt;
  opt.out_dir = dir;
  opt.write_trajectories = true;
  const auto res = run_experiment(small_config(), prepared(), opt);
  EXPECT_EQ(res.report.rows.size(), 48u);
  for (const auto& b : res.report.batches) EXPECT_GE(b.frechet, 0.0);
  const auto back = read_report(dir / "report.csv");
  EXPECT_EQ(back.rows.size(), res.report.rows.size());
  EXPECT_EQ(back.l2.mean, res.report.l2.mean);
  EXPECT_EQ(back.frechet.std, res.report.frechet.std);
  // Aggregates follow from the rows.
  auto copy = back;
  copy.recompute();
  EXPECT_EQ(copy.l2.mean, back.l2.mean);
  EXPECT_TRUE(fs::exists(dir / "seed_1" / "samples.csv"));
  EXPECT_TRUE(fs::exists(dir / "seed_1" / "trajectory.csv"));
  EXPECT_TRUE(fs::exists(dir / "config.ini"));
  EXPECT_EQ(to_ini(load_config(dir / "config.ini")), to_ini(small_config()));
}

TEST(Experiment, TamperedReportIsRejected) {
  const auto dir = prepared().root / "runs" / "tamper";
  RunOptions opt;
  opt.out_dir = dir;
  run_experiment(small_config(), prepared(), opt);
  auto text = io::read_text(dir / "report.csv");
  const auto pos = text.find("\nmean,");
  ASSERT_NE(pos, std::string::npos);
  text.insert(pos + 9, "9");
  io::write_text(dir / "bad.csv", text);
  EXPECT_THROW(read_report(dir / "bad.csv"), io::FormatError);
}

TEST(Experiment, MeanStdUsesSampleStd) {
  const auto ms = mean_std({1.0, 2.0, 3.0});
  EXPECT_DOUBLE_EQ(ms.mean, 2.0);
  EXPECT_DOUBLE_EQ(ms.std, 1.0);
  EXPECT_EQ(mean_std({4.0}).std, 0.0);
}

TEST(Experiment, AblationWritesOneCellPerValue) {
  const auto& ws = prepared();
  auto cfg = small_config();
  cfg.translation.steps = 100;  // explicit steps need h * beta * lambda_i small
  const auto models = load_models(cfg, ws);
  const auto in = load_inputs(cfg, ws);
  RunOptions opt;
  opt.out_dir = ws.root / "runs" / "abl";
  const auto cells = run_ablation(cfg, models, in, "lambda_i", {"0", "5"}, opt, 2);
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_GT(cells[0].report.l2.mean, cells[1].report.l2.mean);
  write_summary(*opt.out_dir / "summary.csv", cells);
  const auto text = io::read_text(*opt.out_dir / "summary.csv");
  EXPECT_EQ(text.rfind("# egsde-summary v1\n", 0), 0u);
  EXPECT_NE(text.find("\nlambda_i,5,2,"), std::string::npos);
  EXPECT_TRUE(fs::exists(*opt.out_dir / "lambda_i_0" / "report.csv"));
  // Running the same cells serially gives the same numbers.
  const auto serial = run_ablation(cfg, models, in, "lambda_i", {"0", "5"}, {}, 1);
  EXPECT_EQ(serial[1].report.l2.mean, cells[1].report.l2.mean);
  EXPECT_THROW(run_ablation(cfg, models, in, "gamma", {"1"}), ConfigError);
}

TEST(Experiment, SourceBatchSplitsOverSourceDomains) {
  auto cfg = small_config();
  cfg.data.num_domains = 3;
  cfg.experiment.sources = 5;
  std::vector<Grid> sets{Grid({40, 2}, 0.0), Grid({40, 2}, 1.0), Grid({40, 2}, 2.0)};
  const Grid b = source_batch(cfg, sets);
  ASSERT_EQ(b.rows(), 5u);
  EXPECT_EQ(b.at(2, 0), 0.0);
  EXPECT_EQ(b.at(3, 0), 1.0);
}

TEST(Experiment, OutputRootHonoursEnvironment) {
  EXPECT_EQ(output_root(fs::path("explicit")), fs::path("explicit"));
  ::setenv(kOutputRootEnv, "/tmp/from_env", 1);
  EXPECT_EQ(output_root(), fs::path("/tmp/from_env"));
  ::unsetenv(kOutputRootEnv);
  EXPECT_EQ(output_root(), fs::path("egsde_out"));
}
