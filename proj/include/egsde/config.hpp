#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "egsde/extractors.hpp"
#include "egsde/io.hpp"
#include "egsde/metrics.hpp"
#include "egsde/samplers.hpp"
#include "egsde/score_models.hpp"
#include "egsde/sde.hpp"
#include "egsde/toy_data.hpp"

namespace egsde {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ScoreModelKind { analytic, network };

inline const char* to_string(ScoreModelKind k) { return k == ScoreModelKind::analytic ? "analytic" : "network"; }

inline ScoreModelKind parse_score_model(const std::string& s) {
  if (s == "analytic") return ScoreModelKind::analytic;
  if (s == "network") return ScoreModelKind::network;
  throw std::invalid_argument("unknown score model '" + s + "' (analytic | network)");
}

struct ScoreOptions {
  // analytic: exact score of the target domain's Gaussian mixture.
  // network: a trained noise predictor loaded from the workspace.
  ScoreModelKind model = ScoreModelKind::analytic;
  NoisePredictorArch arch{};
  ScoreTrainHyper hyper{};
};

struct ClassifierOptions {
  // The guidance classifier only sees what the low-pass filter throws away.
  ClassifierArch arch{.data_dim = 64, .feature_channels = 16, .feature_height = 2, .feature_width = 2,
                      .highpass_factor = 2};
  // Weight decay keeps the guidance features smooth in y. Well below 1 the
  // realistic expert finds adversarial directions; from ~1.5 the classifier
  // collapses to constant features.
  ClassifierTrainHyper hyper{.epochs = 10, .weight_decay = 1.0, .seed = 3};
  // The second classifier, whose features define the realism proxy. Same
  // architecture but always on the full input.
  std::uint64_t eval_seed = 8;
  double eval_weight_decay = 1.0;
};

struct MetricOptions {
  metrics::ValueRange range{-12.0, 12.0};
  std::size_t ssim_window = 8;
};

struct ExperimentOptions {
  std::uint64_t data_seed = 1;
  std::size_t test_per_domain = 600;
  std::size_t sources = 200;
  std::vector<std::size_t> source_domains;  // empty: every domain but the target
  std::optional<std::size_t> target_domain;  // empty: the last domain
  std::vector<std::uint64_t> repeat_seeds{11, 12, 13, 14, 15};
};

// Two 8x8 domains sharing shape position, 2x2 block brightness and a fine
// detail pattern; each domain adds its own texture at amplitude 1 or 2.
inline ToyDomainSpec default_toy_spec() {
  ToyDomainSpec s;
  s.samples_per_domain = 2000;
  s.coarse_std = 3.0;
  s.coarse_factor = 2;
  s.detail_std = 1.0;
  s.amplitudes = {1.0, 2.0};
  return s;
}

inline TranslationConfig default_translation() {
  TranslationConfig t;
  t.filter_factor = 2;  // matches the block size of the shared content
  return t;
}

struct ExperimentConfig {
  ToyDomainSpec data = default_toy_spec();
  VpSchedule schedule{};
  ScoreOptions score{};
  ClassifierOptions classifier{};
  TranslationConfig translation = default_translation();
  MetricOptions metrics{};
  ExperimentOptions experiment{};

  std::size_t target() const { return experiment.target_domain.value_or(data.num_domains - 1); }

  std::vector<std::size_t> source_domains() const {
    if (!experiment.source_domains.empty()) return experiment.source_domains;
    std::vector<std::size_t> out;
    for (std::size_t d = 0; d < data.num_domains; ++d)
      if (d != target()) out.push_back(d);
    return out;
  }

  void validate() const {
    data.validate();
    schedule.validate();
    translation.validate();
    if (target() >= data.num_domains) throw ConfigError("experiment.target_domain out of range");
    for (auto d : source_domains()) {
      if (d >= data.num_domains) throw ConfigError("experiment.source_domains: domain out of range");
      if (d == target()) throw ConfigError("experiment.source_domains: contains the target domain");
    }
    if (experiment.repeat_seeds.empty()) throw ConfigError("experiment.repeat_seeds is empty");
    if (experiment.sources == 0 || experiment.sources > experiment.test_per_domain * source_domains().size())
      throw ConfigError("experiment.sources must lie in 1..test_per_domain * #source domains");
    if (!(metrics.range.hi > metrics.range.lo)) throw ConfigError("metrics: value_hi must exceed value_lo");
    if (translation.guidance_class && *translation.guidance_class >= data.num_domains)
      throw ConfigError("energy.guidance_class out of range");
    if (data.kind == ToyKind::points2d && classifier.arch.highpass_factor > 0)
      throw ConfigError("classifier.highpass_factor needs image data (set it to 0 for points2d)");
  }
};

namespace config_detail {

template <typename T>
struct Codec;

template <>
struct Codec<double> {
  static double parse(std::string_view s) { return io::parse_double(s); }
  static std::string format(double v) { return io::format_double(v); }
};

template <>
struct Codec<std::uint64_t> {
  static std::uint64_t parse(std::string_view s) {
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || end != s.data() + s.size())
      throw std::invalid_argument("not a non-negative integer: '" + std::string(s) + "'");
    return v;
  }
  static std::string format(std::uint64_t v) { return std::to_string(v); }
};

template <>
struct Codec<bool> {
  static bool parse(std::string_view s) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw std::invalid_argument("expected true or false, got '" + std::string(s) + "'");
  }
  static std::string format(bool v) { return v ? "true" : "false"; }
};

template <typename T>
struct Codec<std::vector<T>> {
  static std::vector<T> parse(std::string_view s) {
    std::vector<T> out;
    if (s.empty()) return out;
    std::size_t start = 0;
    while (true) {
      const auto comma = s.find(',', start);
      auto item = s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
      while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
      while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
      out.push_back(Codec<T>::parse(item));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    return out;
  }
  static std::string format(const std::vector<T>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + Codec<T>::format(v[i]);
    return out;
  }
};

template <typename T>
struct Codec<std::optional<T>> {
  static std::optional<T> parse(std::string_view s) {
    if (s.empty()) return std::nullopt;
    return Codec<T>::parse(s);
  }
  static std::string format(const std::optional<T>& v) { return v ? Codec<T>::format(*v) : ""; }
};

template <typename E, auto Parse>
struct EnumCodec {
  static E parse(std::string_view s) { return Parse(std::string(s)); }
  static std::string format(E v) { return to_string(v); }
};

template <>
struct Codec<ToyKind> : EnumCodec<ToyKind, parse_toy_kind> {};
template <>
struct Codec<SamplerKind> : EnumCodec<SamplerKind, parse_sampler> {};
template <>
struct Codec<Similarity> : EnumCodec<Similarity, parse_similarity> {};
template <>
struct Codec<ScoreModelKind> : EnumCodec<ScoreModelKind, parse_score_model> {};

struct Field {
  std::string section;
  std::string key;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename Access>
Field field(std::string section, std::string key, Access access) {
  using T = std::remove_cvref_t<decltype(access(std::declval<ExperimentConfig&>()))>;
  return {std::move(section), std::move(key),
          [access](ExperimentConfig& c, std::string_view text) { access(c) = Codec<T>::parse(text); },
          [access](const ExperimentConfig& c) {
            return Codec<T>::format(access(const_cast<ExperimentConfig&>(c)));
          }};
}

// Every accepted key, in the order the resolved file is written.
inline const std::vector<Field>& schema() {
  using C = ExperimentConfig;
  static const std::vector<Field> fields{
      field("data", "kind", [](C& c) -> auto& { return c.data.kind; }),
      field("data", "num_domains", [](C& c) -> auto& { return c.data.num_domains; }),
      field("data", "samples_per_domain", [](C& c) -> auto& { return c.data.samples_per_domain; }),
      field("data", "noise", [](C& c) -> auto& { return c.data.noise; }),
      field("data", "background", [](C& c) -> auto& { return c.data.background; }),
      field("data", "foreground", [](C& c) -> auto& { return c.data.foreground; }),
      field("data", "positions_per_axis", [](C& c) -> auto& { return c.data.positions_per_axis; }),
      field("data", "coarse_std", [](C& c) -> auto& { return c.data.coarse_std; }),
      field("data", "coarse_factor", [](C& c) -> auto& { return c.data.coarse_factor; }),
      field("data", "detail_std", [](C& c) -> auto& { return c.data.detail_std; }),
      field("data", "domain_offsets", [](C& c) -> auto& { return c.data.domain_offsets; }),
      field("data", "amplitudes", [](C& c) -> auto& { return c.data.amplitudes; }),
      field("data", "spokes", [](C& c) -> auto& { return c.data.spokes; }),
      field("data", "radii", [](C& c) -> auto& { return c.data.radii; }),
      field("data", "seed", [](C& c) -> auto& { return c.experiment.data_seed; }),
      field("data", "test_per_domain", [](C& c) -> auto& { return c.experiment.test_per_domain; }),

      field("schedule", "beta_min", [](C& c) -> auto& { return c.schedule.beta_min; }),
      field("schedule", "beta_max", [](C& c) -> auto& { return c.schedule.beta_max; }),
      field("schedule", "steps", [](C& c) -> auto& { return c.translation.steps; }),
      field("schedule", "m_frac", [](C& c) -> auto& { return c.translation.m_frac; }),

      field("energy", "lambda_s", [](C& c) -> auto& { return c.translation.lambda_s; }),
      field("energy", "lambda_i", [](C& c) -> auto& { return c.translation.lambda_i; }),
      field("energy", "sim_s", [](C& c) -> auto& { return c.translation.sim_s; }),
      field("energy", "sim_i", [](C& c) -> auto& { return c.translation.sim_i; }),
      field("energy", "noise_free", [](C& c) -> auto& { return c.translation.noise_free; }),
      field("energy", "guidance_class", [](C& c) -> auto& { return c.translation.guidance_class; }),
      field("energy", "guidance_lambda", [](C& c) -> auto& { return c.translation.guidance_lambda; }),
      field("energy", "mc_samples", [](C& c) -> auto& { return c.translation.mc_samples; }),

      field("sampler", "kind", [](C& c) -> auto& { return c.translation.sampler; }),
      field("sampler", "k", [](C& c) -> auto& { return c.translation.k_repeats; }),
      field("sampler", "filter_factor", [](C& c) -> auto& { return c.translation.filter_factor; }),
      field("sampler", "range_t", [](C& c) -> auto& { return c.translation.range_t; }),
      field("sampler", "retain_every", [](C& c) -> auto& { return c.translation.retain_every; }),
      field("sampler", "threads", [](C& c) -> auto& { return c.translation.threads; }),

      field("score", "model", [](C& c) -> auto& { return c.score.model; }),
      field("score", "hidden_layers", [](C& c) -> auto& { return c.score.arch.hidden_layers; }),
      field("score", "width", [](C& c) -> auto& { return c.score.arch.width; }),
      field("score", "embed_dim", [](C& c) -> auto& { return c.score.arch.embed_dim; }),
      field("score", "epochs", [](C& c) -> auto& { return c.score.hyper.epochs; }),
      field("score", "iterations_per_epoch", [](C& c) -> auto& { return c.score.hyper.iterations_per_epoch; }),
      field("score", "batch", [](C& c) -> auto& { return c.score.hyper.batch; }),
      field("score", "learning_rate", [](C& c) -> auto& { return c.score.hyper.learning_rate; }),
      field("score", "momentum", [](C& c) -> auto& { return c.score.hyper.momentum; }),
      field("score", "seed", [](C& c) -> auto& { return c.score.hyper.seed; }),

      field("classifier", "hidden_layers", [](C& c) -> auto& { return c.classifier.arch.hidden_layers; }),
      field("classifier", "width", [](C& c) -> auto& { return c.classifier.arch.width; }),
      field("classifier", "embed_dim", [](C& c) -> auto& { return c.classifier.arch.embed_dim; }),
      field("classifier", "feature_channels", [](C& c) -> auto& { return c.classifier.arch.feature_channels; }),
      field("classifier", "feature_height", [](C& c) -> auto& { return c.classifier.arch.feature_height; }),
      field("classifier", "feature_width", [](C& c) -> auto& { return c.classifier.arch.feature_width; }),
      field("classifier", "highpass_factor", [](C& c) -> auto& { return c.classifier.arch.highpass_factor; }),
      field("classifier", "epochs", [](C& c) -> auto& { return c.classifier.hyper.epochs; }),
      field("classifier", "iterations_per_epoch",
            [](C& c) -> auto& { return c.classifier.hyper.iterations_per_epoch; }),
      field("classifier", "batch", [](C& c) -> auto& { return c.classifier.hyper.batch; }),
      field("classifier", "learning_rate", [](C& c) -> auto& { return c.classifier.hyper.learning_rate; }),
      field("classifier", "momentum", [](C& c) -> auto& { return c.classifier.hyper.momentum; }),
      field("classifier", "weight_decay", [](C& c) -> auto& { return c.classifier.hyper.weight_decay; }),
      field("classifier", "seed", [](C& c) -> auto& { return c.classifier.hyper.seed; }),
      field("classifier", "eval_seed", [](C& c) -> auto& { return c.classifier.eval_seed; }),
      field("classifier", "eval_weight_decay", [](C& c) -> auto& { return c.classifier.eval_weight_decay; }),

      field("metrics", "value_lo", [](C& c) -> auto& { return c.metrics.range.lo; }),
      field("metrics", "value_hi", [](C& c) -> auto& { return c.metrics.range.hi; }),
      field("metrics", "ssim_window", [](C& c) -> auto& { return c.metrics.ssim_window; }),

      field("experiment", "sources", [](C& c) -> auto& { return c.experiment.sources; }),
      field("experiment", "source_domains", [](C& c) -> auto& { return c.experiment.source_domains; }),
      field("experiment", "target_domain", [](C& c) -> auto& { return c.experiment.target_domain; }),
      field("experiment", "repeat_seeds", [](C& c) -> auto& { return c.experiment.repeat_seeds; }),
  };
  return fields;
}

inline const Field* find_field(std::string_view section, std::string_view key) {
  for (const auto& f : schema())
    if (f.section == section && f.key == key) return &f;
  return nullptr;
}

}  // namespace config_detail

// Sets "section.key" from text, with the same checks as the file parser.
inline void set_option(ExperimentConfig& cfg, std::string_view dotted, std::string_view value) {
  const auto dot = dotted.find('.');
  if (dot == std::string_view::npos) throw ConfigError("option '" + std::string(dotted) + "' is not section.key");
  const auto* f = config_detail::find_field(dotted.substr(0, dot), dotted.substr(dot + 1));
  if (!f) throw ConfigError("unknown config key '" + std::string(dotted) + "'");
  try {
    f->set(cfg, value);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string(dotted) + ": " + e.what());
  } catch (const io::FormatError& e) {
    throw ConfigError(std::string(dotted) + ": " + e.what());
  }
}

inline std::string get_option(const ExperimentConfig& cfg, std::string_view dotted) {
  const auto dot = dotted.find('.');
  const auto* f = dot == std::string_view::npos
                      ? nullptr
                      : config_detail::find_field(dotted.substr(0, dot), dotted.substr(dot + 1));
  if (!f) throw ConfigError("unknown config key '" + std::string(dotted) + "'");
  return f->get(cfg);
}

// Keys absent from the text keep their defaults; unknown sections or keys
// are errors.
inline ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>") {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  ExperimentConfig cfg;
  for (const auto& [section, body] : tree) {
    if (!body.data().empty())
      throw ConfigError(origin + ": key '" + section + "' outside any section");
    bool known = false;
    for (const auto& f : config_detail::schema()) known = known || f.section == section;
    if (!known) throw ConfigError(origin + ": unknown section [" + section + "]");
    for (const auto& [key, node] : body) {
      if (!config_detail::find_field(section, key))
        throw ConfigError(origin + ": unknown key [" + section + "] " + key);
      set_option(cfg, section + "." + key, node.data());
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config(io::read_text(path), path.string());
}

// Fully resolved config; parse_config(to_ini(c)) reproduces c.
inline std::string to_ini(const ExperimentConfig& cfg) {
  std::string out, section;
  for (const auto& f : config_detail::schema()) {
    if (f.section != section) {
      out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

}  // namespace egsde
