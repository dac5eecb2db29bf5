#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "egsde/extractors.hpp"
#include "egsde/grid.hpp"
#include "egsde/samplers.hpp"
#include "egsde/score_models.hpp"

namespace egsde::io {

namespace fs = std::filesystem;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Writes through `path.tmp` and renames, so readers never see a torn file.
template <typename Fn>
void atomic_write(const fs::path& path, Fn&& fill, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  try {
    std::ofstream out(tmp, mode | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    fill(out);
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
  fs::rename(tmp, path);
}

inline void write_text(const fs::path& path, const std::string& text) {
  atomic_write(path, [&](std::ostream& os) { os << text; });
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf.data(), end);
}

inline double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size())
    throw FormatError("not a number: '" + std::string(s) + "'");
  return v;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   magic    8 bytes  "EGSDEck\0"
//   version  u32      1
//   kind     u32      1 = noise predictor, 2 = domain classifier
//   nmeta    u32      then nmeta x u64 architecture fields
//   ntensor  u32      then per tensor: rank u32, rank x u64 dims
//   payload           all tensor values, f64, in table order
//
// Every integer and float is little-endian.

inline constexpr std::array<char, 8> kMagic{'E', 'G', 'S', 'D', 'E', 'c', 'k', '\0'};
inline constexpr std::uint32_t kVersion = 1;
enum class CheckpointKind : std::uint32_t { noise_predictor = 1, domain_classifier = 2 };

namespace detail {

template <typename T>
void put_le(std::ostream& os, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U u = std::bit_cast<U>(v);
  std::array<char, sizeof(U)> b{};
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xFF);
  os.write(b.data(), b.size());
}

template <typename T>
T get_le(std::istream& is, const char* what) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  std::array<unsigned char, sizeof(U)> b{};
  is.read(reinterpret_cast<char*>(b.data()), b.size());
  if (!is) throw FormatError(std::string("checkpoint truncated while reading ") + what);
  U u = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) u |= static_cast<U>(b[i]) << (8 * i);
  return std::bit_cast<T>(u);
}

inline void write_checkpoint(std::ostream& os, CheckpointKind kind,
                             const std::vector<std::uint64_t>& meta,
                             const std::vector<const Grid*>& tensors) {
  os.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(os, kVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(kind));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(meta.size()));
  for (auto m : meta) put_le<std::uint64_t>(os, m);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const Grid* t : tensors) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t->rank()));
    for (auto d : t->shape()) put_le<std::uint64_t>(os, d);
  }
  for (const Grid* t : tensors)
    for (double v : t->values()) put_le<double>(os, v);
}

struct RawCheckpoint {
  CheckpointKind kind{};
  std::vector<std::uint64_t> meta;
  std::vector<Grid> tensors;
};

inline RawCheckpoint read_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw FormatError("not an egsde checkpoint (bad magic)");
  const auto version = get_le<std::uint32_t>(is, "version");
  if (version != kVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  RawCheckpoint raw;
  raw.kind = static_cast<CheckpointKind>(get_le<std::uint32_t>(is, "kind"));
  const auto nmeta = get_le<std::uint32_t>(is, "meta count");
  if (nmeta > 64) throw FormatError("implausible meta count");
  for (std::uint32_t i = 0; i < nmeta; ++i) raw.meta.push_back(get_le<std::uint64_t>(is, "meta"));
  const auto ntensor = get_le<std::uint32_t>(is, "tensor count");
  if (ntensor > 4096) throw FormatError("implausible tensor count");
  std::vector<Shape> shapes(ntensor);
  for (auto& s : shapes) {
    const auto rank = get_le<std::uint32_t>(is, "rank");
    if (rank == 0 || rank > 8) throw FormatError("implausible tensor rank");
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = get_le<std::uint64_t>(is, "dimension");
      if (d == 0 || d > (1u << 26)) throw FormatError("implausible tensor dimension");
      s.push_back(static_cast<std::size_t>(d));
    }
  }
  for (auto& s : shapes) {
    Grid g(s);
    for (double& v : g.values()) v = get_le<double>(is, "values");
    raw.tensors.push_back(std::move(g));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint");
  return raw;
}

inline void fill_mlp(Mlp& net, std::vector<Grid>::const_iterator& it,
                     std::vector<Grid>::const_iterator end) {
  for (Grid* p : net.parameters()) {
    if (it == end) throw FormatError("checkpoint holds too few tensors");
    if (it->shape() != p->shape())
      throw FormatError("tensor shape " + shape_string(it->shape()) + " does not match " +
                        shape_string(p->shape()));
    *p = *it++;
  }
}

}  // namespace detail

inline void save_checkpoint(const fs::path& path, const NoisePredictor& model) {
  const auto& a = model.arch;
  atomic_write(
      path,
      [&](std::ostream& os) {
        detail::write_checkpoint(os, CheckpointKind::noise_predictor,
                                 {a.data_dim, a.hidden_layers, a.width, a.embed_dim},
                                 model.net.parameters());
      },
      std::ios::out | std::ios::binary);
}

inline void save_checkpoint(const fs::path& path, const DomainClassifier& clf) {
  const auto& a = clf.arch;
  auto tensors = clf.trunk.parameters();
  for (auto* t : clf.head.parameters()) tensors.push_back(t);
  atomic_write(
      path,
      [&](std::ostream& os) {
        detail::write_checkpoint(os, CheckpointKind::domain_classifier,
                                 {a.data_dim, a.embed_dim, a.hidden_layers, a.width,
                                  a.feature_channels, a.feature_height, a.feature_width,
                                  a.num_domains, a.highpass_factor, a.input_geometry.channels,
                                  a.input_geometry.height, a.input_geometry.width},
                                 tensors);
      },
      std::ios::out | std::ios::binary);
}

inline detail::RawCheckpoint open_checkpoint(const fs::path& path, CheckpointKind want,
                                             std::size_t meta_fields) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing checkpoint: " + path.string());
  auto raw = detail::read_checkpoint(in);
  if (raw.kind != want) throw FormatError(path.string() + ": checkpoint holds a different model kind");
  if (raw.meta.size() != meta_fields) throw FormatError(path.string() + ": bad architecture header");
  return raw;
}

inline NoisePredictor load_noise_predictor(const fs::path& path) {
  auto raw = open_checkpoint(path, CheckpointKind::noise_predictor, 4);
  NoisePredictorArch arch{raw.meta[0], raw.meta[1], raw.meta[2], raw.meta[3]};
  auto model = NoisePredictor::init(arch, 0);
  auto it = raw.tensors.cbegin();
  detail::fill_mlp(model.net, it, raw.tensors.cend());
  if (it != raw.tensors.cend()) throw FormatError("checkpoint holds too many tensors");
  return model;
}

inline DomainClassifier load_domain_classifier(const fs::path& path) {
  auto raw = open_checkpoint(path, CheckpointKind::domain_classifier, 12);
  ClassifierArch arch;
  arch.data_dim = raw.meta[0];
  arch.embed_dim = raw.meta[1];
  arch.hidden_layers = raw.meta[2];
  arch.width = raw.meta[3];
  arch.feature_channels = raw.meta[4];
  arch.feature_height = raw.meta[5];
  arch.feature_width = raw.meta[6];
  arch.num_domains = raw.meta[7];
  arch.highpass_factor = raw.meta[8];
  arch.input_geometry = {raw.meta[9], raw.meta[10], raw.meta[11]};
  auto clf = DomainClassifier::init(arch, 0);
  auto it = raw.tensors.cbegin();
  detail::fill_mlp(clf.trunk, it, raw.tensors.cend());
  detail::fill_mlp(clf.head, it, raw.tensors.cend());
  if (it != raw.tensors.cend()) throw FormatError("checkpoint holds too many tensors");
  return clf;
}

// ---------------------------------------------------------------------------
// Datasets: a header line, then one sample per line.
//
//   # egsde-dataset v1 rows=N channels=C height=H width=W label=L seed=S
//   v,v,v,...

struct Dataset {
  Grid samples;  // [N, C*H*W]
  ImageGeometry geometry;
  std::size_t label = 0;
  std::uint64_t seed = 0;  // generator / translation seed that produced the rows
};

inline void write_dataset(const fs::path& path, const Dataset& d) {
  const Grid m = d.samples.as_matrix();
  if (m.cols() != d.geometry.size()) throw std::invalid_argument("write_dataset: geometry mismatch");
  atomic_write(path, [&](std::ostream& os) {
    os << "# egsde-dataset v1 rows=" << m.rows() << " channels=" << d.geometry.channels
       << " height=" << d.geometry.height << " width=" << d.geometry.width << " label=" << d.label
       << " seed=" << d.seed << '\n';
    for (std::size_t r = 0; r < m.rows(); ++r) {
      auto row = m.row_span(r);
      for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << format_double(row[c]);
      os << '\n';
    }
  });
}

inline Dataset read_dataset(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::string hash, tag, version;
  hs >> hash >> tag >> version;
  if (hash != "#" || tag != "egsde-dataset" || version != "v1")
    throw FormatError(path.string() + ": missing dataset header");
  std::size_t rows = 0;
  Dataset d;
  std::string field;
  while (hs >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw FormatError("bad header field '" + field + "'");
    const std::string key = field.substr(0, eq);
    std::uint64_t value = 0;
    const std::string text = field.substr(eq + 1);
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || end != text.data() + text.size())
      throw FormatError("bad header value '" + field + "'");
    if (key == "rows") rows = value;
    else if (key == "channels") d.geometry.channels = value;
    else if (key == "height") d.geometry.height = value;
    else if (key == "width") d.geometry.width = value;
    else if (key == "label") d.label = value;
    else if (key == "seed") d.seed = value;
    else throw FormatError("unknown header field '" + key + "'");
  }
  const std::size_t cols = d.geometry.size();
  std::vector<double> values;
  values.reserve(rows * cols);
  std::string line;
  std::size_t seen = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t start = 0, count = 0;
    while (true) {
      const auto comma = line.find(',', start);
      values.push_back(parse_double(std::string_view(line).substr(
          start, comma == std::string::npos ? std::string::npos : comma - start)));
      ++count;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (count != cols)
      throw FormatError(path.string() + ": line " + std::to_string(seen + 2) + " has " +
                        std::to_string(count) + " values, expected " + std::to_string(cols));
    ++seen;
  }
  if (seen != rows)
    throw FormatError(path.string() + ": header promises " + std::to_string(rows) + " rows, found " +
                      std::to_string(seen));
  d.samples = Grid({rows, cols}, std::move(values));
  return d;
}

// ---------------------------------------------------------------------------
// Images: binary PGM for one channel, PPM for three. Values in [lo, hi] map
// linearly onto 0..255 and are clamped.

inline void write_image(const fs::path& path, std::span<const double> values, const ImageGeometry& g,
                        double lo, double hi) {
  if (values.size() != g.size()) throw std::invalid_argument("write_image: size mismatch");
  if (g.channels != 1 && g.channels != 3)
    throw std::invalid_argument("write_image: only 1 or 3 channels");
  auto byte = [&](double v) {
    const double p = std::round((v - lo) / (hi - lo) * 255.0);
    return static_cast<char>(static_cast<unsigned char>(std::clamp(p, 0.0, 255.0)));
  };
  atomic_write(
      path,
      [&](std::ostream& os) {
        os << (g.channels == 1 ? "P5" : "P6") << '\n' << g.width << ' ' << g.height << "\n255\n";
        const std::size_t plane = g.height * g.width;
        for (std::size_t p = 0; p < plane; ++p)
          for (std::size_t c = 0; c < g.channels; ++c) os.put(byte(values[c * plane + p]));
      },
      std::ios::out | std::ios::binary);
}

// Lays rows of `samples` out on a cols-wide sheet with a 1-pixel gutter.
inline void write_contact_sheet(const fs::path& path, const Grid& samples, const ImageGeometry& g,
                                std::size_t cols, double lo, double hi) {
  const Grid m = samples.as_matrix();
  const std::size_t n = m.rows();
  if (n == 0 || cols == 0) throw std::invalid_argument("write_contact_sheet: nothing to draw");
  cols = std::min(cols, n);
  const std::size_t rows = (n + cols - 1) / cols;
  ImageGeometry sheet{g.channels, rows * (g.height + 1) + 1, cols * (g.width + 1) + 1};
  std::vector<double> v(sheet.size(), lo);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r0 = 1 + (i / cols) * (g.height + 1), c0 = 1 + (i % cols) * (g.width + 1);
    for (std::size_t c = 0; c < g.channels; ++c)
      for (std::size_t y = 0; y < g.height; ++y)
        for (std::size_t x = 0; x < g.width; ++x)
          v[(c * sheet.height + r0 + y) * sheet.width + c0 + x] =
              m.at(i, (c * g.height + y) * g.width + x);
  }
  write_image(path, v, sheet, lo, hi);
}

// ---------------------------------------------------------------------------
// CSV helpers

inline std::string csv_row(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    out += cells[i];
  }
  return out + '\n';
}

// sample,step,t,energy,grad_norm; one line per sample and update.
inline void write_trajectory_csv(const fs::path& path, const Trajectory& traj) {
  atomic_write(path, [&](std::ostream& os) {
    os << "sample,step,t,energy,grad_norm\n";
    const std::size_t steps = traj.energy.rows(), batch = traj.energy.cols();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t s = 0; s < steps; ++s)
        os << b << ',' << (s + 1) << ',' << format_double(traj.times[s]) << ','
           << format_double(traj.energy.at(s, b)) << ',' << format_double(traj.grad_norm.at(s, b))
           << '\n';
  });
}

}  // namespace egsde::io
