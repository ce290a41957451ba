#include "gist/datagen.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "gist/binary_io.hpp"
#include "gist/config.hpp"
#include "gist/error.hpp"
#include "gist/numeric.hpp"
#include "gist/rng.hpp"

namespace gist {

namespace {

constexpr std::string_view kDatasetMagic = "GISTDS1";
constexpr std::uint64_t kDataStream = 100;

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T, typename F>
std::string join(const std::vector<T>& values, F&& to_text) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += to_text(values[i]);
  }
  return out;
}

std::string join_doubles(std::span<const double> values) {
  return join(std::vector<double>(values.begin(), values.end()), fmt_double);
}

// Samples x = mu + Q diag(sigma) z, and returns Sigma = Q diag(sigma^2) Q^T.
struct Gaussian {
  Matrix factor;
  Matrix covariance;
};

Gaussian anisotropic_gaussian(const DataConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.input_dim;
  const Matrix q = random_orthogonal(d, rng);
  Vector sigma(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double t = d == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(d - 1);
    sigma[i] = cfg.sigma_max * std::pow(cfg.sigma_min / cfg.sigma_max, t);
  }
  Gaussian g{Matrix(d, d), Matrix(d, d)};
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) g.factor(r, c) = q(c, r) * sigma[c];
  g.covariance = matmul_nt(g.factor, g.factor);
  return g;
}

void draw_class(const Vector& mean, const Matrix& factor, std::size_t count, int label,
                Rng& rng, LongTailDataset& ds, std::size_t& row) {
  const std::size_t d = mean.size();
  Vector z(d);
  for (std::size_t n = 0; n < count; ++n, ++row) {
    for (auto& x : z) x = rng.normal();
    auto out = ds.samples.row(row);
    for (std::size_t r = 0; r < d; ++r) out[r] = mean[r] + dot(factor.row(r), z);
    ds.labels[row] = label;
  }
}

}  // namespace

Split split_for_count(std::size_t n) {
  if (n > 100) return Split::many;
  if (n > 20) return Split::medium;
  return Split::few;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::many: return "many";
    case Split::medium: return "medium";
    case Split::few: return "few";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "many") return Split::many;
  if (name == "medium") return Split::medium;
  if (name == "few") return Split::few;
  throw ContractError("unknown split '" + name + "'");
}

void DataConfig::validate() const {
  require(num_classes >= 2, "data: classes must be at least 2");
  require(input_dim >= 2, "data: input_dim must be at least 2");
  require(n_min >= 2 && n_max >= n_min, "data: need n_max >= n_min >= 2");
  require(pareto_alpha > 0.0, "data: pareto_alpha must be positive");
  require(test_per_class >= 1, "data: test_per_class must be positive");
  require(mean_radius >= 0.0, "data: mean_radius must be non-negative");
  require(sigma_max >= sigma_min, "data: sigma_max must be at least sigma_min");
  require(sigma_min > 0.0, "data: singular covariance (sigma_min must be positive)");
}

const std::set<std::string>& DataConfig::keys() {
  static const std::set<std::string> k{"classes",    "input_dim",      "n_max",     "n_min",
                                       "pareto_alpha", "test_per_class", "mean_radius", "sigma_max",
                                       "sigma_min",  "covariance",     "seed"};
  return k;
}

DataConfig DataConfig::from(const KeyValues& kv) {
  DataConfig c;
  c.num_classes = kv.get_size("classes");
  c.input_dim = kv.get_size("input_dim");
  c.n_max = kv.get_size("n_max");
  c.n_min = kv.get_size("n_min");
  c.pareto_alpha = kv.get_double("pareto_alpha");
  c.test_per_class = kv.get_size("test_per_class");
  c.mean_radius = kv.get_double("mean_radius");
  c.sigma_max = kv.get_double("sigma_max");
  c.sigma_min = kv.get_double("sigma_min");
  const auto cov = kv.get_string("covariance");
  if (cov == "shared") c.covariance = CovarianceMode::shared;
  else if (cov == "per_class") c.covariance = CovarianceMode::per_class;
  else throw ConfigError("covariance", 0, kv.source() + ": field 'covariance': expected shared|per_class");
  c.seed = kv.get_u64("seed");
  return c;
}

std::string DataConfig::to_text() const {
  std::ostringstream s;
  s << "classes = " << num_classes << "\n"
    << "input_dim = " << input_dim << "\n"
    << "n_max = " << n_max << "\n"
    << "n_min = " << n_min << "\n"
    << "pareto_alpha = " << fmt_double(pareto_alpha) << "\n"
    << "test_per_class = " << test_per_class << "\n"
    << "mean_radius = " << fmt_double(mean_radius) << "\n"
    << "sigma_max = " << fmt_double(sigma_max) << "\n"
    << "sigma_min = " << fmt_double(sigma_min) << "\n"
    << "covariance = " << (covariance == CovarianceMode::shared ? "shared" : "per_class") << "\n"
    << "seed = " << seed << "\n";
  return s.str();
}

std::uint64_t DataConfig::hash() const { return fnv1a(to_text()); }

bool LongTailDataset::balanced() const {
  for (auto c : class_counts)
    if (c != class_counts.front()) return false;
  return true;
}

std::vector<std::vector<std::size_t>> LongTailDataset::class_indices() const {
  std::vector<std::vector<std::size_t>> out(num_classes());
  for (std::size_t i = 0; i < labels.size(); ++i) out[static_cast<std::size_t>(labels[i])].push_back(i);
  return out;
}

LabeledBatch LongTailDataset::gather(std::span<const std::size_t> indices) const {
  LabeledBatch b{Matrix(indices.size(), dim()), std::vector<int>(indices.size())};
  for (std::size_t r = 0; r < indices.size(); ++r) {
    require(indices[r] < size(), "gather: index out of range");
    const auto src = samples.row(indices[r]);
    std::copy(src.begin(), src.end(), b.inputs.row(r).begin());
    b.labels[r] = labels[indices[r]];
  }
  return b;
}

void LongTailDataset::validate() const {
  if (samples.rows() != labels.size())
    throw FormatError("dataset: sample and label counts differ");
  if (split.size() != class_counts.size())
    throw FormatError("dataset: split tags do not cover every class");
  std::vector<std::size_t> seen(class_counts.size(), 0);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= class_counts.size())
      throw FormatError("dataset: label " + std::to_string(y) + " out of range");
    ++seen[static_cast<std::size_t>(y)];
  }
  if (seen != class_counts) throw FormatError("dataset: labels disagree with class counts");
  if (!samples.all_finite()) throw FormatError("dataset: non-finite sample");
}

std::vector<std::size_t> pareto_counts(std::size_t num_classes, std::size_t n_max,
                                       std::size_t n_min, double alpha) {
  require(num_classes >= 2, "pareto_counts: need at least 2 classes");
  require(n_min >= 2 && n_max >= n_min, "pareto_counts: need n_max >= n_min >= 2");
  require(alpha > 0.0, "pareto_counts: alpha must be positive");
  std::vector<std::size_t> counts(num_classes);
  const double span = static_cast<double>(n_max - n_min);
  for (std::size_t k = 0; k < num_classes; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(num_classes - 1);
    const double profile = std::pow(1.0 - t, alpha);
    counts[k] = n_min + static_cast<std::size_t>(std::llround(span * profile));
  }
  counts.front() = n_max;
  counts.back() = n_min;
  return counts;
}

DatasetPair generate(const DataConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t num_classes = cfg.num_classes;
  const std::size_t d = cfg.input_dim;
  const auto train_counts = pareto_counts(num_classes, cfg.n_max, cfg.n_min, cfg.pareto_alpha);

  GroundTruth truth{Matrix(num_classes, d), {}};
  for (std::size_t k = 0; k < num_classes; ++k) {
    const auto mu = random_direction(d, cfg.mean_radius, rng);
    std::copy(mu.begin(), mu.end(), truth.means.row(k).begin());
  }
  std::vector<Matrix> factors;
  const std::size_t num_cov = cfg.covariance == CovarianceMode::shared ? 1 : num_classes;
  for (std::size_t c = 0; c < num_cov; ++c) {
    auto g = anisotropic_gaussian(cfg, rng);
    factors.push_back(std::move(g.factor));
    truth.covariances.push_back(std::move(g.covariance));
  }

  std::vector<Split> split(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) split[k] = split_for_count(train_counts[k]);

  const auto make_set = [&](const std::vector<std::size_t>& counts, Rng& stream) {
    LongTailDataset ds;
    std::size_t n = 0;
    for (auto c : counts) n += c;
    ds.samples = Matrix(n, d);
    ds.labels.assign(n, 0);
    ds.class_counts = counts;
    ds.split = split;
    ds.truth = truth;
    ds.seed = cfg.seed;
    ds.config_hash = cfg.hash();
    std::size_t row = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
      const Vector mean(truth.means.row(k).begin(), truth.means.row(k).end());
      draw_class(mean, factors[num_cov == 1 ? 0 : k], counts[k], static_cast<int>(k), stream, ds,
                 row);
    }
    return ds;
  };

  // Independent streams keep the test set fixed when training counts change.
  Rng train_stream = rng.split(1);
  Rng test_stream = rng.split(2);
  DatasetPair out;
  out.train = make_set(train_counts, train_stream);
  out.test = make_set(std::vector<std::size_t>(num_classes, cfg.test_per_class), test_stream);
  return out;
}

DatasetPair generate(const DataConfig& config) {
  Rng rng = Rng(config.seed).split(kDataStream);
  return generate(config, rng);
}

std::vector<std::uint8_t> encode_dataset(const LongTailDataset& ds) {
  ds.validate();
  ByteWriter w;
  w.put_magic(kDatasetMagic, 8);
  w.put_u32(static_cast<std::uint32_t>(ds.num_classes()));
  w.put_u32(static_cast<std::uint32_t>(ds.dim()));
  w.put_u64(ds.size());
  for (auto c : ds.class_counts) w.put_u64(c);
  w.put_u64(ds.seed);
  w.put_f64s(ds.samples.data());
  for (int y : ds.labels) w.put_i32(y);
  return w.take();
}

LongTailDataset decode_dataset(std::span<const std::uint8_t> bytes, const std::string& what) {
  ByteReader r(bytes, what);
  r.expect_magic(kDatasetMagic, 8);
  const auto num_classes = r.get_u32();
  const auto d = r.get_u32();
  const auto n = r.get_u64();
  LongTailDataset ds;
  ds.class_counts.resize(num_classes);
  for (auto& c : ds.class_counts) c = r.get_u64();
  ds.seed = r.get_u64();
  if (d == 0 || n > r.remaining() / (8 * static_cast<std::uint64_t>(d) + 4))
    throw FormatError(what + ": header sizes exceed the file");
  ds.samples = Matrix(n, d);
  r.get_f64s(ds.samples.data());
  ds.labels.resize(n);
  for (auto& y : ds.labels) y = r.get_i32();
  r.expect_end();
  ds.split.resize(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) ds.split[k] = split_for_count(ds.class_counts[k]);
  ds.validate();
  return ds;
}

void save_dataset(const std::filesystem::path& path, const LongTailDataset& ds) {
  write_file_atomic(path, encode_dataset(ds));
  std::ostringstream meta;
  meta << "# gistlab dataset sidecar\n"
       << "format = GISTDS1\n"
       << "classes = " << ds.num_classes() << "\n"
       << "dim = " << ds.dim() << "\n"
       << "samples = " << ds.size() << "\n"
       << "seed = " << ds.seed << "\n"
       << "config_hash = " << hex64(ds.config_hash) << "\n"
       << "counts = " << join(ds.class_counts, [](std::size_t c) { return std::to_string(c); }) << "\n"
       << "split = " << join(ds.split, [](Split s) { return to_string(s); }) << "\n";
  if (!ds.truth.means.empty()) {
    meta << "covariances = " << ds.truth.covariances.size() << "\n";
    for (std::size_t k = 0; k < ds.truth.means.rows(); ++k)
      meta << "mean." << k << " = " << join_doubles(ds.truth.means.row(k)) << "\n";
    for (std::size_t c = 0; c < ds.truth.covariances.size(); ++c)
      meta << "covariance." << c << " = " << join_doubles(ds.truth.covariances[c].data()) << "\n";
  }
  auto meta_path = path;
  meta_path += ".meta";
  write_text_atomic(meta_path, meta.str());
}

LongTailDataset load_dataset(const std::filesystem::path& path) {
  auto ds = decode_dataset(read_file(path), path.string());
  auto meta_path = path;
  meta_path += ".meta";
  if (!std::filesystem::exists(meta_path)) return ds;

  const auto kv = KeyValues::load(meta_path);
  const auto fail = [&](const std::string& why) {
    throw FormatError(meta_path.string() + ": " + why);
  };
  if (kv.get_size("classes") != ds.num_classes() || kv.get_size("dim") != ds.dim() ||
      kv.get_size("samples") != ds.size())
    fail("sidecar shape does not match the binary file");
  const auto tags = kv.get_string("split");
  std::vector<Split> split;
  std::stringstream ss(tags);
  for (std::string t; std::getline(ss, t, ',');) split.push_back(parse_split(t));
  if (split.size() != ds.num_classes()) fail("split list length differs from class count");
  ds.split = std::move(split);
  ds.config_hash = std::stoull(kv.get_string("config_hash"), nullptr, 16);
  if (kv.has("covariances")) {
    const auto d = ds.dim();
    ds.truth.means = Matrix(ds.num_classes(), d);
    for (std::size_t k = 0; k < ds.num_classes(); ++k) {
      const auto v = kv.get_double_list("mean." + std::to_string(k));
      if (v.size() != d) fail("mean." + std::to_string(k) + " has the wrong length");
      std::copy(v.begin(), v.end(), ds.truth.means.row(k).begin());
    }
    const auto num_cov = kv.get_size("covariances");
    for (std::size_t c = 0; c < num_cov; ++c) {
      auto v = kv.get_double_list("covariance." + std::to_string(c));
      if (v.size() != d * d) fail("covariance." + std::to_string(c) + " has the wrong length");
      ds.truth.covariances.emplace_back(d, d, std::move(v));
    }
  }
  return ds;
}

}  // namespace gist
