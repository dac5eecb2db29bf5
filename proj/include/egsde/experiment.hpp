#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "egsde/config.hpp"
#include "egsde/extractors.hpp"
#include "egsde/io.hpp"
#include "egsde/metrics.hpp"
#include "egsde/samplers.hpp"
#include "egsde/score_models.hpp"
#include "egsde/toy_data.hpp"

namespace egsde {

namespace fs = std::filesystem;

class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kOutputRootEnv = "EGSDE_OUT";

// Explicit path, else $EGSDE_OUT, else ./egsde_out.
inline fs::path output_root(const std::optional<fs::path>& explicit_root = std::nullopt) {
  if (explicit_root && !explicit_root->empty()) return *explicit_root;
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
  return "egsde_out";
}

// On-disk layout shared by every subcommand.
struct Workspace {
  fs::path root;

  fs::path train_set(std::size_t d) const { return root / "data" / "train" / ("domain_" + std::to_string(d) + ".csv"); }
  fs::path test_set(std::size_t d) const { return root / "data" / "test" / ("domain_" + std::to_string(d) + ".csv"); }
  fs::path score_checkpoint() const { return root / "models" / "score.ckpt"; }
  fs::path classifier_checkpoint() const { return root / "models" / "classifier.ckpt"; }
  fs::path eval_classifier_checkpoint() const { return root / "models" / "eval_classifier.ckpt"; }
};

inline void require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw MissingArtifact(std::string("missing ") + what + ": " + p.string());
}

// ---------------------------------------------------------------------------
// Data

struct ToySplits {
  std::vector<ToyDomain> train;
  std::vector<ToyDomain> test;
};

inline ToySplits make_splits(const ExperimentConfig& cfg) {
  ToyDomainSpec test_spec = cfg.data;
  test_spec.samples_per_domain = cfg.experiment.test_per_domain;
  // Test rows come from an unrelated counter range of the same generator.
  return {make_toy_domains(cfg.data, cfg.experiment.data_seed),
          make_toy_domains(test_spec, cfg.experiment.data_seed ^ 0x7e57'0000'0000'0000ULL)};
}

inline void write_sheet(const fs::path& path, const Grid& rows, const ImageGeometry& g,
                        const metrics::ValueRange& range, std::size_t max_rows = 64) {
  if (g.height < 2) return;  // point clouds have no picture
  std::vector<std::size_t> idx(std::min(max_rows, rows.rows()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  io::write_contact_sheet(path, select_rows(rows, idx), g, 8, range.lo, range.hi);
}

inline ToySplits generate_data(const ExperimentConfig& cfg, const Workspace& ws) {
  auto splits = make_splits(cfg);
  const auto g = cfg.data.geometry();
  for (std::size_t d = 0; d < cfg.data.num_domains; ++d) {
    io::write_dataset(ws.train_set(d), {splits.train[d].samples, g, d, cfg.experiment.data_seed});
    io::write_dataset(ws.test_set(d), {splits.test[d].samples, g, d, cfg.experiment.data_seed});
    write_sheet(ws.root / "data" / ("domain_" + std::to_string(d) + ".pgm"), splits.train[d].samples, g,
                cfg.metrics.range);
  }
  return splits;
}

inline std::vector<Grid> load_sets(const ExperimentConfig& cfg, const Workspace& ws, bool test) {
  std::vector<Grid> sets;
  for (std::size_t d = 0; d < cfg.data.num_domains; ++d) {
    const auto p = test ? ws.test_set(d) : ws.train_set(d);
    require_file(p, "dataset (run gen-data first)");
    auto ds = io::read_dataset(p);
    if (ds.geometry != cfg.data.geometry())
      throw io::FormatError(p.string() + ": geometry does not match the config");
    sets.push_back(std::move(ds.samples));
  }
  return sets;
}

// The first `sources` test rows, split as evenly as possible over the source
// domains (earlier domains take the remainder).
inline Grid source_batch(const ExperimentConfig& cfg, const std::vector<Grid>& test_sets) {
  const auto domains = cfg.source_domains();
  const std::size_t n = cfg.experiment.sources, per = n / domains.size(), extra = n % domains.size();
  Grid out;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    const Grid& set = test_sets.at(domains[i]);
    const std::size_t take = per + (i < extra ? 1 : 0);
    if (take > set.rows()) throw std::invalid_argument("source_batch: not enough test rows");
    std::vector<std::size_t> idx(take);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Grid part = select_rows(set, idx);
    out = out.size() == 0 ? std::move(part) : concat_rows(out, part);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

using EpochLog = std::function<void(const std::string&, std::size_t, double)>;

inline ScoreTrainResult train_score(const ExperimentConfig& cfg, const Workspace& ws,
                                    const EpochLog& log = {}) {
  const auto sets = load_sets(cfg, ws, false);
  auto result = train_noise_predictor(sets.at(cfg.target()), cfg.schedule, cfg.score.hyper, cfg.score.arch,
                                      [&](std::size_t e, double l) {
                                        if (log) log("score", e, l);
                                      });
  io::save_checkpoint(ws.score_checkpoint(), result.model);
  return result;
}

inline ClassifierArch classifier_arch(const ExperimentConfig& cfg, bool evaluator = false) {
  ClassifierArch a = cfg.classifier.arch;
  if (evaluator) a.highpass_factor = 0;
  a.data_dim = cfg.data.geometry().size();
  a.num_domains = cfg.data.num_domains;
  a.input_geometry = a.highpass_factor > 0 ? cfg.data.geometry() : ImageGeometry{};
  return a;
}

// Trains the guidance classifier and the independently seeded evaluator.
inline std::pair<DomainClassifier, DomainClassifier> train_classifiers(const ExperimentConfig& cfg,
                                                                       const Workspace& ws,
                                                                       const EpochLog& log = {}) {
  const auto sets = load_sets(cfg, ws, false);
  auto run = [&](std::uint64_t seed, double weight_decay, bool evaluator, const std::string& name) {
    ClassifierTrainHyper h = cfg.classifier.hyper;
    h.seed = seed;
    h.weight_decay = weight_decay;
    return train_domain_classifier(sets, cfg.schedule, h, classifier_arch(cfg, evaluator),
                                   [&](std::size_t e, double l) {
                                     if (log) log(name, e, l);
                                   })
        .model;
  };
  auto guide = run(cfg.classifier.hyper.seed, cfg.classifier.hyper.weight_decay, false, "classifier");
  auto eval = run(cfg.classifier.eval_seed, cfg.classifier.eval_weight_decay, true, "eval_classifier");
  io::save_checkpoint(ws.classifier_checkpoint(), guide);
  io::save_checkpoint(ws.eval_classifier_checkpoint(), eval);
  return {std::move(guide), std::move(eval)};
}

// ---------------------------------------------------------------------------
// Models

struct LoadedModels {
  ScoreField score;
  DomainClassifier classifier;
  DomainClassifier evaluator;
  ImageGeometry geometry;
  VpSchedule schedule;

  TranslationModels view() const { return {score, &classifier, geometry, schedule}; }
};

inline ScoreField load_score(const ExperimentConfig& cfg, const Workspace& ws) {
  if (cfg.score.model == ScoreModelKind::analytic) return ScoreField(toy_mixture(cfg.data, cfg.target()));
  require_file(ws.score_checkpoint(), "score checkpoint (run train-score first)");
  auto net = io::load_noise_predictor(ws.score_checkpoint());
  if (net.arch.data_dim != cfg.data.geometry().size())
    throw io::FormatError("score checkpoint was trained on different data");
  return ScoreField(std::move(net));
}

inline DomainClassifier load_classifier(const fs::path& p, const ExperimentConfig& cfg) {
  require_file(p, "classifier checkpoint (run train-classifier first)");
  auto clf = io::load_domain_classifier(p);
  if (clf.arch.data_dim != cfg.data.geometry().size() || clf.arch.num_domains != cfg.data.num_domains)
    throw io::FormatError(p.string() + ": classifier does not match the configured data");
  return clf;
}

inline LoadedModels load_models(const ExperimentConfig& cfg, const Workspace& ws) {
  return {load_score(cfg, ws), load_classifier(ws.classifier_checkpoint(), cfg),
          load_classifier(ws.eval_classifier_checkpoint(), cfg), cfg.data.geometry(), cfg.schedule};
}

// ---------------------------------------------------------------------------
// Metrics

// Realism features: the evaluator's penultimate layer at t = 0 for images,
// raw coordinates for point data.
inline Grid realism_features(const DomainClassifier& evaluator, const Grid& x, const ImageGeometry& g) {
  if (g.height < 2) return x.as_matrix();
  return domain_features(evaluator, x, 0.0);
}

struct SampleRow {
  std::uint64_t seed = 0;
  std::size_t id = 0;
  double l2 = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct BatchSummary {
  std::uint64_t seed = 0;
  double l2 = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double frechet = 0.0;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample std over batches, 0 for one batch
};

inline MeanStd mean_std(const std::vector<double>& v) {
  if (v.empty()) return {};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() == 1) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

struct MetricReport {
  std::vector<SampleRow> rows;
  std::vector<BatchSummary> batches;
  MeanStd l2, psnr, ssim, frechet;

  // Batch means from rows (in batch order), then mean +- std across batches.
  // Only rows and per-batch frechet values are primary data.
  void recompute() {
    for (auto& b : batches) {
      double l = 0, p = 0, s = 0;
      std::size_t n = 0;
      for (const auto& r : rows)
        if (r.seed == b.seed) l += r.l2, p += r.psnr, s += r.ssim, ++n;
      if (n == 0) throw std::logic_error("MetricReport: batch without rows");
      b.l2 = l / static_cast<double>(n);
      b.psnr = p / static_cast<double>(n);
      b.ssim = s / static_cast<double>(n);
    }
    auto col = [&](double BatchSummary::*m) {
      std::vector<double> v;
      for (const auto& b : batches) v.push_back(b.*m);
      return mean_std(v);
    };
    l2 = col(&BatchSummary::l2);
    psnr = col(&BatchSummary::psnr);
    ssim = col(&BatchSummary::ssim);
    frechet = col(&BatchSummary::frechet);
  }

  void append(const MetricReport& other) {
    rows.insert(rows.end(), other.rows.begin(), other.rows.end());
    batches.insert(batches.end(), other.batches.begin(), other.batches.end());
  }
};

struct EvalContext {
  ImageGeometry geometry;
  MetricOptions options;
  const DomainClassifier* evaluator = nullptr;
  metrics::Moments reference;  // realism features of the target reference set
};

inline EvalContext make_eval_context(const ExperimentConfig& cfg, const DomainClassifier& evaluator,
                                     const Grid& target_ref) {
  const auto g = cfg.data.geometry();
  return {g, cfg.metrics, &evaluator, metrics::moments(realism_features(evaluator, target_ref, g))};
}

// Scores one translated batch against its sources. Rows with the same seed
// in one report must come from one call. SSIM is NaN for point data.
inline MetricReport evaluate_batch(const Grid& translated, const Grid& source, std::uint64_t seed,
                                   const EvalContext& ctx) {
  require_same_shape(translated, source, "evaluate_batch");
  const Grid a = metrics::to_pixels(translated.as_matrix(), ctx.options.range);
  const Grid b = metrics::to_pixels(source.as_matrix(), ctx.options.range);
  const bool spatial = ctx.geometry.height >= ctx.options.ssim_window && ctx.geometry.width >= ctx.options.ssim_window;
  metrics::SsimOptions so{ctx.geometry.height, ctx.geometry.width, ctx.geometry.channels, ctx.options.ssim_window,
                          metrics::kPeak};
  MetricReport rep;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double l = metrics::l2(a.row_span(i), b.row_span(i));
    rep.rows.push_back({seed, i, l, metrics::psnr_from_rmse(l),
                        spatial ? metrics::ssim(a.row_span(i), b.row_span(i), so)
                                : std::numeric_limits<double>::quiet_NaN()});
  }
  const auto feats = realism_features(*ctx.evaluator, translated, ctx.geometry);
  rep.batches.push_back({seed, 0, 0, 0, metrics::frechet_from_moments(metrics::moments(feats), ctx.reference)});
  rep.recompute();
  return rep;
}

// ---------------------------------------------------------------------------
// Report CSV (versioned; columns fixed)
//
//   # egsde-report v1
//   kind,seed,id,l2,psnr,ssim,frechet
//   sample,<seed>,<id>,<l2>,<psnr>,<ssim>,
//   batch,<seed>,,<l2>,<psnr>,<ssim>,<frechet>
//   mean,,,<l2>,<psnr>,<ssim>,<frechet>
//   std,,,<l2>,<psnr>,<ssim>,<frechet>

inline constexpr const char* kReportHeader = "# egsde-report v1";
inline constexpr const char* kReportColumns = "kind,seed,id,l2,psnr,ssim,frechet";

inline void write_report(const fs::path& path, const MetricReport& r) {
  using io::format_double;
  io::atomic_write(path, [&](std::ostream& os) {
    os << kReportHeader << '\n' << kReportColumns << '\n';
    for (const auto& s : r.rows)
      os << io::csv_row({"sample", std::to_string(s.seed), std::to_string(s.id), format_double(s.l2),
                         format_double(s.psnr), format_double(s.ssim), ""});
    for (const auto& b : r.batches)
      os << io::csv_row({"batch", std::to_string(b.seed), "", format_double(b.l2), format_double(b.psnr),
                         format_double(b.ssim), format_double(b.frechet)});
    os << io::csv_row({"mean", "", "", format_double(r.l2.mean), format_double(r.psnr.mean),
                       format_double(r.ssim.mean), format_double(r.frechet.mean)});
    os << io::csv_row({"std", "", "", format_double(r.l2.std), format_double(r.psnr.std),
                       format_double(r.ssim.std), format_double(r.frechet.std)});
  });
}

// Reads rows and batch frechet values; aggregates are recomputed and must
// agree with the stored ones.
inline MetricReport read_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("cannot open report " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kReportHeader)
    throw io::FormatError(path.string() + ": not an egsde-report v1 file");
  if (!std::getline(in, line) || line != kReportColumns)
    throw io::FormatError(path.string() + ": unexpected columns");
  MetricReport r;
  std::vector<std::vector<std::string>> agg;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> c;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) c.push_back(cell);
    if (!line.empty() && line.back() == ',') c.emplace_back();
    if (c.size() != 7) throw io::FormatError(path.string() + ": bad row '" + line + "'");
    auto num = [](const std::string& s) { return io::parse_double(s); };
    auto u64 = [](const std::string& s) { return config_detail::Codec<std::uint64_t>::parse(s); };
    if (c[0] == "sample") r.rows.push_back({u64(c[1]), u64(c[2]), num(c[3]), num(c[4]), num(c[5])});
    else if (c[0] == "batch") r.batches.push_back({u64(c[1]), num(c[3]), num(c[4]), num(c[5]), num(c[6])});
    else if (c[0] == "mean" || c[0] == "std") agg.push_back(c);
    else throw io::FormatError(path.string() + ": unknown row kind '" + c[0] + "'");
  }
  const auto stored = r.batches;
  r.recompute();
  auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
  for (std::size_t i = 0; i < stored.size(); ++i)
    if (!same(stored[i].l2, r.batches[i].l2) || !same(stored[i].psnr, r.batches[i].psnr) ||
        !same(stored[i].ssim, r.batches[i].ssim))
      throw io::FormatError(path.string() + ": batch means disagree with sample rows");
  for (const auto& c : agg) {
    const bool mean = c[0] == "mean";
    const double v[4] = {mean ? r.l2.mean : r.l2.std, mean ? r.psnr.mean : r.psnr.std,
                         mean ? r.ssim.mean : r.ssim.std, mean ? r.frechet.mean : r.frechet.std};
    for (int k = 0; k < 4; ++k)
      if (!same(v[k], io::parse_double(c[3 + k])))
        throw io::FormatError(path.string() + ": aggregate row disagrees with sample rows");
  }
  return r;
}

// ---------------------------------------------------------------------------
// Experiments

struct RunOptions {
  std::optional<fs::path> out_dir;  // per-seed samples, sheets and report; none = in memory only
  bool write_trajectories = false;
  std::function<void(const std::string&)> log;
};

struct ExperimentResult {
  MetricReport report;
  std::vector<Grid> outputs;  // one per repeat seed
};

struct ExperimentInputs {
  Grid sources;
  Grid target_ref;
};

inline ExperimentInputs load_inputs(const ExperimentConfig& cfg, const Workspace& ws) {
  auto test = load_sets(cfg, ws, true);
  return {source_batch(cfg, test), test.at(cfg.target())};
}

// Translates the source batch once per repeat seed and scores it.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const LoadedModels& models,
                                       const ExperimentInputs& in, const RunOptions& opt = {}) {
  cfg.validate();
  const auto ctx = make_eval_context(cfg, models.evaluator, in.target_ref);
  const auto g = cfg.data.geometry();
  ExperimentResult res;
  for (std::uint64_t seed : cfg.experiment.repeat_seeds) {
    TranslationConfig tc = cfg.translation;
    tc.seed = seed;
    auto tr = translate(in.sources, tc, models.view());
    auto rep = evaluate_batch(tr.output, in.sources, seed, ctx);
    if (opt.log)
      opt.log("seed " + std::to_string(seed) + ": l2=" + io::format_double(rep.l2.mean) +
              " frechet=" + io::format_double(rep.frechet.mean));
    if (opt.out_dir) {
      const auto dir = *opt.out_dir / ("seed_" + std::to_string(seed));
      io::write_dataset(dir / "samples.csv", {tr.output, g, cfg.target(), seed});
      write_sheet(dir / "sheet.pgm", tr.output, g, cfg.metrics.range);
      if (opt.write_trajectories) io::write_trajectory_csv(dir / "trajectory.csv", tr.trajectory);
    }
    res.report.append(rep);
    res.outputs.push_back(std::move(tr.output));
  }
  res.report.recompute();
  if (opt.out_dir) {
    io::write_text(*opt.out_dir / "config.ini", to_ini(cfg));
    write_report(*opt.out_dir / "report.csv", res.report);
  }
  return res;
}

// Loads checkpoints and test data from the workspace; throws MissingArtifact
// when something has not been produced yet.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const Workspace& ws,
                                       const RunOptions& opt = {}) {
  cfg.validate();
  const auto models = load_models(cfg, ws);
  return run_experiment(cfg, models, load_inputs(cfg, ws), opt);
}

// ---------------------------------------------------------------------------
// Ablations

// Short names accepted by sweeps, mapped onto config keys.
inline std::string ablation_key(const std::string& param) {
  static const std::vector<std::pair<std::string, std::string>> map{
      {"lambda_s", "energy.lambda_s"}, {"lambda_i", "energy.lambda_i"}, {"m_frac", "schedule.m_frac"},
      {"K", "sampler.k"},              {"k", "sampler.k"},              {"sim_s", "energy.sim_s"},
      {"sim_i", "energy.sim_i"},       {"noise_free", "energy.noise_free"}};
  for (const auto& [k, v] : map)
    if (k == param) return v;
  throw ConfigError("cannot sweep '" + param + "' (lambda_s | lambda_i | m_frac | K | sim_s | sim_i | noise_free)");
}

struct AblationCell {
  std::string param;
  std::string value;
  MetricReport report;
};

// One cell per value. Cells run concurrently, each with its own config copy
// and output directory; only the summary is written at the end.
inline std::vector<AblationCell> run_ablation(const ExperimentConfig& base, const LoadedModels& models,
                                              const ExperimentInputs& in, const std::string& param,
                                              const std::vector<std::string>& values,
                                              const RunOptions& opt = {}, std::size_t workers = 0) {
  const std::string key = ablation_key(param);
  std::vector<ExperimentConfig> cfgs;
  for (const auto& v : values) {
    auto c = base;
    set_option(c, key, v);
    c.validate();
    cfgs.push_back(std::move(c));
  }
  std::vector<AblationCell> cells(values.size());
  std::vector<std::exception_ptr> errors(values.size());
  std::mutex log_mutex;
  auto run_cell = [&](std::size_t i) {
    try {
      RunOptions o = opt;
      if (opt.out_dir) o.out_dir = *opt.out_dir / (param + "_" + values[i]);
      if (opt.log)
        o.log = [&, i](const std::string& msg) {
          std::lock_guard lock(log_mutex);
          opt.log(param + "=" + values[i] + " " + msg);
        };
      cells[i] = {param, values[i], run_experiment(cfgs[i], models, in, o).report};
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, values.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < values.size(); ++i) run_cell(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < values.size(); i += workers) run_cell(i);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return cells;
}

// # egsde-summary v1, one line per cell.
inline constexpr const char* kSummaryHeader = "# egsde-summary v1";
inline constexpr const char* kSummaryColumns =
    "param,value,batches,l2_mean,l2_std,psnr_mean,psnr_std,ssim_mean,ssim_std,frechet_mean,frechet_std";

inline void write_summary(const fs::path& path, const std::vector<AblationCell>& cells) {
  using io::format_double;
  io::atomic_write(path, [&](std::ostream& os) {
    os << kSummaryHeader << '\n' << kSummaryColumns << '\n';
    for (const auto& c : cells) {
      const auto& r = c.report;
      os << io::csv_row({c.param, c.value, std::to_string(r.batches.size()), format_double(r.l2.mean),
                         format_double(r.l2.std), format_double(r.psnr.mean), format_double(r.psnr.std),
                         format_double(r.ssim.mean), format_double(r.ssim.std), format_double(r.frechet.mean),
                         format_double(r.frechet.std)});
    }
  });
}

}  // namespace egsde
