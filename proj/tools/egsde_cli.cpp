// egsde: command-line driver for the toy translation workbench.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "egsde/egsde.hpp"

namespace {

using namespace egsde;

struct Common {
  std::string config;
  std::string root;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  std::optional<std::size_t> num_domains;
  std::optional<std::size_t> filter_factor;
};

void add_common(CLI::App* app, Common& c, const std::string& seed_help) {
  app->add_option("--config", c.config, "INI experiment config (defaults when omitted)");
  app->add_option("--root", c.root, std::string("output root (default $") + kOutputRootEnv + " or ./egsde_out)");
  app->add_option("--seed", c.seed, seed_help);
  app->add_option("--set", c.overrides, "override a config key: section.key=value (repeatable)");
  app->add_option("--num-domains", c.num_domains, "number of toy domains (2 or 3)");
  app->add_option("--filter-factor", c.filter_factor, "low-pass factor of the faithful expert and ILVR");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  if (c.num_domains) set_option(cfg, "data.num_domains", std::to_string(*c.num_domains));
  if (c.filter_factor) set_option(cfg, "sampler.filter_factor", std::to_string(*c.filter_factor));
  for (const auto& o : c.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + o + "'");
    set_option(cfg, o.substr(0, eq), o.substr(eq + 1));
  }
  return cfg;
}

Workspace workspace(const Common& c) {
  return {output_root(c.root.empty() ? std::nullopt : std::optional<fs::path>(c.root))};
}

void log_epoch(const std::string& what, std::size_t epoch, double loss) {
  std::fprintf(stderr, "%s epoch %zu loss %.6f\n", what.c_str(), epoch, loss);
}

// A sample directory holds samples.csv; a plain file is read as is.
io::Dataset read_samples(const std::string& where) {
  fs::path p(where);
  if (fs::is_directory(p)) p /= "samples.csv";
  if (!fs::exists(p)) throw MissingArtifact("no samples at " + p.string());
  return io::read_dataset(p);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != ' ') {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"egsde: energy-guided SDE translation on toy domains"};
  app.require_subcommand(1);

  // gen-data
  Common gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate train/test splits of the toy domains");
  add_common(gen_cmd, gen, "dataset seed");
  gen_cmd->callback([&] {
    auto cfg = resolve(gen);
    if (gen.seed) cfg.experiment.data_seed = *gen.seed;
    cfg.validate();
    const auto ws = workspace(gen);
    generate_data(cfg, ws);
    io::write_text(ws.root / "data" / "config.ini", to_ini(cfg));
    std::printf("wrote %zu domains x (%zu train, %zu test) to %s\n", cfg.data.num_domains,
                cfg.data.samples_per_domain, cfg.experiment.test_per_domain, (ws.root / "data").c_str());
  });

  // train-score
  Common ts;
  auto* ts_cmd = app.add_subcommand("train-score", "train the noise predictor on the target domain");
  add_common(ts_cmd, ts, "training seed");
  ts_cmd->callback([&] {
    auto cfg = resolve(ts);
    if (ts.seed) cfg.score.hyper.seed = *ts.seed;
    cfg.validate();
    const auto ws = workspace(ts);
    auto res = train_score(cfg, ws, log_epoch);
    std::printf("final loss %.6f -> %s\n", res.epoch_loss.empty() ? 0.0 : res.epoch_loss.back(),
                ws.score_checkpoint().c_str());
  });

  // train-classifier
  Common tc;
  std::optional<std::uint64_t> eval_seed;
  auto* tc_cmd = app.add_subcommand("train-classifier", "train the guidance classifier and the evaluator");
  add_common(tc_cmd, tc, "guidance classifier seed");
  tc_cmd->add_option("--eval-seed", eval_seed, "seed of the evaluation classifier");
  tc_cmd->callback([&] {
    auto cfg = resolve(tc);
    if (tc.seed) cfg.classifier.hyper.seed = *tc.seed;
    if (eval_seed) cfg.classifier.eval_seed = *eval_seed;
    cfg.validate();
    const auto ws = workspace(tc);
    auto [guide, eval] = train_classifiers(cfg, ws, log_epoch);
    const auto sets = load_sets(cfg, ws, true);
    std::printf("test accuracy at t=0: classifier %.4f, evaluator %.4f\n",
                classifier_accuracy(guide, sets, cfg.schedule, 0.0, 1),
                classifier_accuracy(eval, sets, cfg.schedule, 0.0, 1));
  });

  // translate
  Common tr;
  std::string sampler, score_ckpt, clf_ckpt, in_path, out_dir;
  std::optional<double> lambda_s, lambda_i, m_frac;
  std::optional<std::size_t> steps, k;
  auto* tr_cmd = app.add_subcommand("translate", "translate source samples to the target domain");
  add_common(tr_cmd, tr, "trajectory seed");
  tr_cmd->add_option("--sampler", sampler, "egsde_em | egsde_vp | sdedit | ilvr");
  tr_cmd->add_option("--lambda-s", lambda_s, "weight of the realistic expert");
  tr_cmd->add_option("--lambda-i", lambda_i, "weight of the faithful expert");
  tr_cmd->add_option("--m-frac", m_frac, "start time M as a fraction of T");
  tr_cmd->add_option("--steps", steps, "denoising steps N over [0, T]");
  tr_cmd->add_option("--k", k, "number of repeats K");
  tr_cmd->add_option("--score-ckpt", score_ckpt, "noise predictor checkpoint (default: per config)");
  tr_cmd->add_option("--clf-ckpt", clf_ckpt, "domain classifier checkpoint");
  tr_cmd->add_option("--in", in_path, "source samples (csv or directory; default: workspace test sources)");
  tr_cmd->add_option("--out", out_dir, "output directory")->required();
  tr_cmd->callback([&] {
    auto cfg = resolve(tr);
    auto& t = cfg.translation;
    if (!sampler.empty()) t.sampler = parse_sampler(sampler);
    if (lambda_s) t.lambda_s = *lambda_s;
    if (lambda_i) t.lambda_i = *lambda_i;
    if (m_frac) t.m_frac = *m_frac;
    if (steps) t.steps = *steps;
    if (k) t.k_repeats = *k;
    t.seed = tr.seed.value_or(cfg.experiment.repeat_seeds.front());
    cfg.validate();
    const auto ws = workspace(tr);
    ScoreField score;
    if (!score_ckpt.empty()) {
      require_file(score_ckpt, "score checkpoint");
      score = ScoreField(io::load_noise_predictor(score_ckpt));
    } else {
      score = load_score(cfg, ws);
    }
    const auto clf = load_classifier(clf_ckpt.empty() ? ws.classifier_checkpoint() : fs::path(clf_ckpt), cfg);
    const Grid src = in_path.empty() ? load_inputs(cfg, ws).sources : read_samples(in_path).samples;
    const TranslationModels models{score, &clf, cfg.data.geometry(), cfg.schedule};
    auto res = translate(src, t, models);
    const fs::path out(out_dir);
    io::write_dataset(out / "samples.csv", {res.output, cfg.data.geometry(), cfg.target(), t.seed});
    io::write_trajectory_csv(out / "trajectory.csv", res.trajectory);
    write_sheet(out / "sheet.pgm", res.output, cfg.data.geometry(), cfg.metrics.range);
    io::write_dataset(out / "source.csv", {src, cfg.data.geometry(), 0, t.seed});
    write_sheet(out / "source.pgm", src, cfg.data.geometry(), cfg.metrics.range);
    io::write_text(out / "config.ini", to_ini(cfg));
    std::printf("translated %zu samples with %s -> %s\n", src.rows(), to_string(t.sampler), out.c_str());
  });

  // evaluate
  Common ev;
  std::vector<std::string> translated;
  std::string source_dir, ref_dir, report_out, eval_ckpt;
  auto* ev_cmd = app.add_subcommand("evaluate", "score translated samples (L2, PSNR, SSIM, Frechet)");
  add_common(ev_cmd, ev, "accepted for a uniform interface; evaluation draws no randomness");
  ev_cmd->add_option("--translated", translated, "translated sample directories, one per seed")->required();
  ev_cmd->add_option("--source", source_dir, "source samples (csv or directory)")->required();
  ev_cmd->add_option("--target-ref", ref_dir, "target reference samples (csv or directory)")->required();
  ev_cmd->add_option("--eval-clf-ckpt", eval_ckpt, "feature network for the Frechet distance");
  ev_cmd->add_option("--out", report_out, "report csv")->required();
  ev_cmd->callback([&] {
    auto cfg = resolve(ev);
    cfg.validate();
    const auto ws = workspace(ev);
    const auto evaluator =
        load_classifier(eval_ckpt.empty() ? ws.eval_classifier_checkpoint() : fs::path(eval_ckpt), cfg);
    const auto src = read_samples(source_dir);
    const auto ctx = make_eval_context(cfg, evaluator, read_samples(ref_dir).samples);
    MetricReport rep;
    for (const auto& dir : translated) {
      const auto out = read_samples(dir);
      rep.append(evaluate_batch(out.samples, src.samples, out.seed, ctx));
    }
    rep.recompute();
    write_report(report_out, rep);
    std::printf("l2 %.4f +- %.4f  psnr %.3f  ssim %.4f  frechet %.4f +- %.4f -> %s\n", rep.l2.mean, rep.l2.std,
                rep.psnr.mean, rep.ssim.mean, rep.frechet.mean, rep.frechet.std, report_out.c_str());
  });

  // verify-poe
  std::uint64_t poe_seed = 0;
  std::string curvatures = "0.0001,0.001,0.01,0.1,1", vars = "0.01,0.1,1", poe_out;
  double poe_mu = 0.5;
  std::size_t draws = 0;
  auto* poe_cmd = app.add_subcommand("verify-poe", "exact product of experts vs the guided Gaussian step");
  poe_cmd->add_option("--seed", poe_seed, "seed of the empirical draws");
  poe_cmd->add_option("--curvatures", curvatures, "comma list of energy curvatures k");
  poe_cmd->add_option("--vars", vars, "comma list of step variances");
  poe_cmd->add_option("--mu", poe_mu, "mean of the score kernel");
  poe_cmd->add_option("--draws", draws, "empirical draws per cell (0: skip)");
  poe_cmd->add_option("--out", poe_out, "report csv")->required();
  poe_cmd->callback([&] {
    io::atomic_write(poe_out, [&](std::ostream& os) {
      os << "# egsde-poe v1\ncurvature,var,k_times_var,mu,tv_exact_vs_gaussian,tv_empirical\n";
      for (const auto& ks : split_list(curvatures))
        for (const auto& vs : split_list(vars)) {
          const double kk = io::parse_double(ks), v = io::parse_double(vs);
          auto cell = poe::quadratic_cell(poe_mu, v, kk);
          if (draws > 0)
            cell.tv_empirical = poe::empirical_tv(poe_mu, v, poe::ScalarEnergy::quadratic(kk), draws, poe_seed);
          os << io::csv_row({io::format_double(kk), io::format_double(v), io::format_double(kk * v),
                             io::format_double(poe_mu), io::format_double(cell.tv_exact_vs_approx),
                             draws > 0 ? io::format_double(cell.tv_empirical) : ""});
          std::printf("k=%-8g var=%-6g tv=%.3e\n", kk, v, cell.tv_exact_vs_approx);
        }
    });
  });

  // ablate
  Common ab;
  std::string param, values, ab_out;
  std::size_t workers = 0, repeats = 0;
  auto* ab_cmd = app.add_subcommand("ablate", "sweep one hyperparameter over repeat seeds");
  add_common(ab_cmd, ab, "first repeat seed (seeds are consecutive)");
  ab_cmd->add_option("--param", param, "lambda_s | lambda_i | m_frac | K | sim_s | sim_i | noise_free")->required();
  ab_cmd->add_option("--values", values, "comma list of values")->required();
  ab_cmd->add_option("--repeats", repeats, "number of repeat seeds (default: config)");
  ab_cmd->add_option("--workers", workers, "cells run concurrently (0: hardware)");
  ab_cmd->add_option("--out", ab_out, "output directory (default ROOT/ablate_PARAM)");
  ab_cmd->callback([&] {
    auto cfg = resolve(ab);
    auto& seeds = cfg.experiment.repeat_seeds;
    const std::size_t n = repeats ? repeats : seeds.size();
    const std::uint64_t first = ab.seed.value_or(seeds.front());
    if (ab.seed || repeats) {
      seeds.clear();
      for (std::size_t i = 0; i < n; ++i) seeds.push_back(first + i);
    }
    cfg.validate();
    const auto ws = workspace(ab);
    const fs::path out = ab_out.empty() ? ws.root / ("ablate_" + param) : fs::path(ab_out);
    const auto models = load_models(cfg, ws);
    RunOptions opt{out, false, [](const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); }};
    auto cells = run_ablation(cfg, models, load_inputs(cfg, ws), param, split_list(values), opt, workers);
    write_summary(out / "summary.csv", cells);
    for (const auto& c : cells)
      std::printf("%s=%-8s l2 %9.4f +- %-8.4f frechet %9.4f +- %.4f\n", c.param.c_str(), c.value.c_str(),
                  c.report.l2.mean, c.report.l2.std, c.report.frechet.mean, c.report.frechet.std);
  });

  // report
  std::vector<std::string> reports;
  std::string rep_out;
  std::uint64_t rep_seed = 0;
  auto* rep_cmd = app.add_subcommand("report", "collect report.csv files into one summary");
  rep_cmd->add_option("--seed", rep_seed, "accepted for a uniform interface; unused");
  rep_cmd->add_option("--in", reports, "report csv files or directories holding report.csv")->required();
  rep_cmd->add_option("--out", rep_out, "summary csv");
  rep_cmd->callback([&] {
    std::vector<AblationCell> cells;
    for (const auto& r : reports) {
      fs::path p(r);
      if (fs::is_directory(p)) p /= "report.csv";
      // dir/report.csv is labelled by dir, anything else by its own name
      const std::string label =
          p.filename() == "report.csv" ? p.parent_path().filename().string() : p.stem().string();
      cells.push_back({"run", label, read_report(p)});
      const auto& m = cells.back().report;
      std::printf("%-24s batches %zu  l2 %9.4f +- %-8.4f psnr %7.3f  ssim %.4f  frechet %9.4f +- %.4f\n",
                  label.c_str(), m.batches.size(), m.l2.mean, m.l2.std, m.psnr.mean, m.ssim.mean,
                  m.frechet.mean, m.frechet.std);
    }
    if (!rep_out.empty()) write_summary(rep_out, cells);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
