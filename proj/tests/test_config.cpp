#include <gtest/gtest.h>

#include <filesystem>

#include "egsde/config.hpp"
#include "egsde/io.hpp"

using namespace egsde;

TEST(Config, DefaultsFollowTheReferenceSetup) {
  const ExperimentConfig c;
  EXPECT_EQ(c.translation.lambda_s, 500.0);
  EXPECT_EQ(c.translation.lambda_i, 2.0);
  EXPECT_EQ(c.translation.m_frac, 0.5);
  EXPECT_EQ(c.translation.steps, 500u);
  EXPECT_EQ(c.translation.k_repeats, 1u);
  EXPECT_EQ(c.experiment.repeat_seeds.size(), 5u);
  EXPECT_EQ(c.translation.sim_s, Similarity::cosine);
  EXPECT_EQ(c.translation.sim_i, Similarity::neg_sq_l2);
  EXPECT_EQ(c.schedule.beta_min, 0.1);
  EXPECT_EQ(c.schedule.beta_max, 20.0);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, ToyDefaultsKeepTexturesOutOfTheLowPass) {
  const ExperimentConfig c;
  // Shared block content lives on the filter's grid, textures average out.
  EXPECT_EQ(c.translation.filter_factor, c.data.coarse_factor);
  EXPECT_EQ(c.data.amplitudes, (std::vector<double>{1.0, 2.0}));
  EXPECT_GT(c.data.coarse_std, 0.0);
  EXPECT_GT(c.data.detail_std, 0.0);
  auto d = c;
  set_option(d, "classifier.eval_weight_decay", "0.5");
  EXPECT_EQ(d.classifier.eval_weight_decay, 0.5);
  EXPECT_EQ(d.classifier.hyper.weight_decay, c.classifier.hyper.weight_decay);
}

TEST(Config, IniRoundTripReproducesEveryKey) {
  ExperimentConfig c;
  set_option(c, "energy.lambda_s", "123.5");
  set_option(c, "data.num_domains", "3");
  set_option(c, "experiment.source_domains", "0,1");
  set_option(c, "experiment.repeat_seeds", "4,5,6");
  set_option(c, "energy.guidance_class", "2");
  set_option(c, "data.amplitudes", "0.1,0.7");
  const auto text = to_ini(c);
  const auto back = parse_config(text);
  EXPECT_EQ(to_ini(back), text);
  EXPECT_EQ(back.translation.lambda_s, 123.5);
  EXPECT_EQ(back.experiment.repeat_seeds, (std::vector<std::uint64_t>{4, 5, 6}));
  EXPECT_EQ(*back.translation.guidance_class, 2u);
}

TEST(Config, PartialFileKeepsDefaults) {
  const auto c = parse_config("[energy]\nlambda_i = 5\n\n[sampler]\nk = 2\n");
  EXPECT_EQ(c.translation.lambda_i, 5.0);
  EXPECT_EQ(c.translation.k_repeats, 2u);
  EXPECT_EQ(c.translation.lambda_s, 500.0);
}

TEST(Config, UnknownKeysAndSectionsAreErrors) {
  EXPECT_THROW(parse_config("[energy]\nlambda_x = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[nope]\na = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("lambda_s = 1\n"), ConfigError);
  ExperimentConfig c;
  EXPECT_THROW(set_option(c, "energy.unknown", "1"), ConfigError);
  EXPECT_THROW(set_option(c, "lambda_s", "1"), ConfigError);
}

TEST(Config, BadValuesAreErrors) {
  EXPECT_THROW(parse_config("[energy]\nlambda_s = abc\n"), ConfigError);
  EXPECT_THROW(parse_config("[energy]\nlambda_s = -1\n"), ConfigError);
  EXPECT_THROW(parse_config("[schedule]\nm_frac = 1.5\n"), ConfigError);
  EXPECT_THROW(parse_config("[sampler]\nk = -2\n"), ConfigError);
  EXPECT_THROW(parse_config("[sampler]\nkind = euler\n"), ConfigError);
  EXPECT_THROW(parse_config("[energy]\nnoise_free = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("[data]\nnum_domains = 5\n"), ConfigError);
  EXPECT_THROW(parse_config("[experiment]\ntarget_domain = 1\nsource_domains = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[experiment]\nrepeat_seeds =\n"), ConfigError);
}

TEST(Config, TargetAndSourcesDefaults) {
  ExperimentConfig c;
  set_option(c, "data.num_domains", "3");
  EXPECT_EQ(c.target(), 2u);
  EXPECT_EQ(c.source_domains(), (std::vector<std::size_t>{0, 1}));
  set_option(c, "experiment.target_domain", "0");
  EXPECT_EQ(c.source_domains(), (std::vector<std::size_t>{1, 2}));
}

TEST(Config, GetOptionMatchesSetOption) {
  ExperimentConfig c;
  set_option(c, "sampler.filter_factor", "4");
  EXPECT_EQ(get_option(c, "sampler.filter_factor"), "4");
  set_option(c, "energy.noise_free", "true");
  EXPECT_EQ(get_option(c, "energy.noise_free"), "true");
  EXPECT_THROW(get_option(c, "sampler.nothing"), ConfigError);
}

TEST(Config, LoadFromFile) {
  const auto p = std::filesystem::temp_directory_path() / "egsde_cfg_test.ini";
  io::write_text(p, "[schedule]\nsteps = 50\n");
  EXPECT_EQ(load_config(p).translation.steps, 50u);
  std::filesystem::remove(p);
  EXPECT_THROW(load_config(p), ConfigError);
}
