#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <utility>

#include "egsde/io.hpp"
#include "egsde/random.hpp"

using namespace egsde;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("egsde_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool has_tmp_files(const fs::path& dir) {
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.path().extension() == ".tmp") return true;
  return false;
}

DomainClassifier make_classifier() {
  ClassifierArch arch;
  arch.data_dim = 16;
  arch.width = 8;
  arch.embed_dim = 4;
  arch.feature_channels = 3;
  arch.feature_height = 2;
  arch.feature_width = 1;
  arch.num_domains = 3;
  arch.highpass_factor = 2;
  arch.input_geometry = {1, 4, 4};
  return DomainClassifier::init(arch, 21);
}

}  // namespace

TEST(Checkpoint, NoisePredictorRoundTripIsBitExact) {
  const auto dir = scratch("np");
  auto model = NoisePredictor::init({5, 2, 12, 6}, 3);
  // Awkward values survive too.
  model.net.parameters()[0]->values()[0] = std::numeric_limits<double>::denorm_min();
  model.net.parameters()[0]->values()[1] = -0.0;
  io::save_checkpoint(dir / "m.ckpt", model);
  const auto back = io::load_noise_predictor(dir / "m.ckpt");
  EXPECT_TRUE(back == model);
  EXPECT_EQ(back.arch.width, 12u);
  const auto a = std::as_const(model.net).parameters();
  const auto b = std::as_const(back.net).parameters();
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_EQ(std::memcmp(a[i]->values().data(), b[i]->values().data(), a[i]->size() * sizeof(double)), 0);
  EXPECT_FALSE(has_tmp_files(dir));
}

TEST(Checkpoint, ClassifierRoundTripKeepsArchitecture) {
  const auto dir = scratch("clf");
  const auto clf = make_classifier();
  io::save_checkpoint(dir / "c.ckpt", clf);
  const auto back = io::load_domain_classifier(dir / "c.ckpt");
  EXPECT_TRUE(back == clf);
  EXPECT_EQ(back.arch.num_domains, 3u);
  EXPECT_EQ(back.arch.input_geometry, (ImageGeometry{1, 4, 4}));
}

TEST(Checkpoint, StartsWithMagicAndLittleEndianVersion) {
  const auto dir = scratch("magic");
  io::save_checkpoint(dir / "m.ckpt", NoisePredictor::init({2, 1, 4, 2}, 1));
  const auto bytes = io::read_text(dir / "m.ckpt");
  ASSERT_GT(bytes.size(), 12u);
  EXPECT_EQ(bytes.substr(0, 8), std::string("EGSDEck\0", 8));
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[9], 0);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  const auto dir = scratch("bad");
  io::save_checkpoint(dir / "m.ckpt", NoisePredictor::init({2, 1, 4, 2}, 1));
  auto bytes = io::read_text(dir / "m.ckpt");

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  io::write_text(dir / "magic.ckpt", bad_magic);
  EXPECT_THROW(io::load_noise_predictor(dir / "magic.ckpt"), io::FormatError);

  io::write_text(dir / "short.ckpt", bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(io::load_noise_predictor(dir / "short.ckpt"), io::FormatError);

  io::write_text(dir / "long.ckpt", bytes + "x");
  EXPECT_THROW(io::load_noise_predictor(dir / "long.ckpt"), io::FormatError);

  auto bad_version = bytes;
  bad_version[8] = 9;
  io::write_text(dir / "ver.ckpt", bad_version);
  EXPECT_THROW(io::load_noise_predictor(dir / "ver.ckpt"), io::FormatError);

  // A classifier file is not a noise predictor.
  io::save_checkpoint(dir / "c.ckpt", make_classifier());
  EXPECT_THROW(io::load_noise_predictor(dir / "c.ckpt"), io::FormatError);
  EXPECT_THROW(io::load_noise_predictor(dir / "missing.ckpt"), std::runtime_error);
}

TEST(Dataset, RoundTripIsExact) {
  const auto dir = scratch("ds");
  RandomStream rs(1, 0);
  io::Dataset d{rs.gaussian({7, 12}), {3, 2, 2}, 1, 99};
  d.samples[0] = 1.0 / 3.0;
  d.samples[1] = -1e-300;
  io::write_dataset(dir / "d.csv", d);
  const auto back = io::read_dataset(dir / "d.csv");
  EXPECT_EQ(back.samples, d.samples);
  EXPECT_EQ(back.geometry, d.geometry);
  EXPECT_EQ(back.label, 1u);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_FALSE(has_tmp_files(dir));
}

TEST(Dataset, MalformedFilesAreRejected) {
  const auto dir = scratch("dsbad");
  io::write_text(dir / "nohdr.csv", "1,2\n");
  EXPECT_THROW(io::read_dataset(dir / "nohdr.csv"), io::FormatError);
  io::write_text(dir / "rows.csv",
                 "# egsde-dataset v1 rows=2 channels=1 height=1 width=2 label=0 seed=0\n1,2\n");
  EXPECT_THROW(io::read_dataset(dir / "rows.csv"), io::FormatError);
  io::write_text(dir / "cols.csv",
                 "# egsde-dataset v1 rows=1 channels=1 height=1 width=2 label=0 seed=0\n1,2,3\n");
  EXPECT_THROW(io::read_dataset(dir / "cols.csv"), io::FormatError);
  io::write_text(dir / "num.csv",
                 "# egsde-dataset v1 rows=1 channels=1 height=1 width=2 label=0 seed=0\n1,abc\n");
  EXPECT_THROW(io::read_dataset(dir / "num.csv"), io::FormatError);
}

TEST(Images, PgmHeaderAndSize) {
  const auto dir = scratch("img");
  std::vector<double> v(16);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i) / 15.0;
  io::write_image(dir / "a.pgm", v, {1, 4, 4}, 0.0, 1.0);
  const auto bytes = io::read_text(dir / "a.pgm");
  EXPECT_EQ(bytes.substr(0, 2), "P5");
  EXPECT_EQ(static_cast<unsigned char>(bytes.back()), 255);
  std::vector<double> rgb(3 * 4);
  io::write_image(dir / "b.ppm", rgb, {3, 2, 2}, 0.0, 1.0);
  EXPECT_EQ(io::read_text(dir / "b.ppm").substr(0, 2), "P6");
}

TEST(Doubles, FormatParsesBack) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-310, 1e300, 123456789.123456789}) {
    EXPECT_EQ(io::parse_double(io::format_double(v)), v);
  }
  EXPECT_TRUE(std::isnan(io::parse_double(io::format_double(std::nan("")))));
  EXPECT_THROW(io::parse_double("1.5x"), io::FormatError);
}

TEST(AtomicWrite, FailedFillLeavesOldFileAndNoTmp) {
  const auto dir = scratch("atomic");
  io::write_text(dir / "f.txt", "old");
  EXPECT_THROW(io::atomic_write(dir / "f.txt", [](std::ostream&) { throw std::runtime_error("boom"); }),
               std::runtime_error);
  EXPECT_EQ(io::read_text(dir / "f.txt"), "old");
  EXPECT_FALSE(has_tmp_files(dir));
}
