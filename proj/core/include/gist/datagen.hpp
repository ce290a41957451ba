#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "gist/matrix.hpp"
#include "gist/model.hpp"

namespace gist {

class KeyValues;
class Rng;

/// Class partition by training count: many > 100, medium in (20, 100], few <= 20.
enum class Split : std::uint8_t { many = 0, medium = 1, few = 2 };

Split split_for_count(std::size_t train_count);
std::string to_string(Split s);
Split parse_split(const std::string& name);

enum class CovarianceMode : std::uint8_t { shared = 0, per_class = 1 };

struct DataConfig {
  std::size_t num_classes = 20;
  std::size_t input_dim = 16;
  std::size_t n_max = 500;
  std::size_t n_min = 5;
  double pareto_alpha = 6.0;
  std::size_t test_per_class = 100;
  double mean_radius = 4.0;
  // Standard deviations along the principal axes, log-spaced max -> min.
  double sigma_max = 6.0;
  double sigma_min = 0.3;
  CovarianceMode covariance = CovarianceMode::shared;
  std::uint64_t seed = 1;

  void validate() const;
  /// Canonical `key = value` text; hash() is its FNV-1a.
  std::string to_text() const;
  std::uint64_t hash() const;

  static DataConfig from(const KeyValues& kv);
  static const std::set<std::string>& keys();
};

/// Generative parameters: class means and covariance(s). covariances holds
/// one matrix when shared, else one per class.
struct GroundTruth {
  Matrix means;
  std::vector<Matrix> covariances;

  const Matrix& covariance(std::size_t k) const {
    return covariances.size() == 1 ? covariances.front() : covariances.at(k);
  }
  bool operator==(const GroundTruth&) const = default;
};

struct LongTailDataset {
  Matrix samples;                         // N x D
  std::vector<int> labels;                // N
  std::vector<std::size_t> class_counts;  // n_k of this set
  std::vector<Split> split;               // from the training counts
  GroundTruth truth;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t num_classes() const noexcept { return class_counts.size(); }
  std::size_t dim() const noexcept { return samples.cols(); }
  bool balanced() const;

  /// Indices of each class's samples, in file order.
  std::vector<std::vector<std::size_t>> class_indices() const;
  LabeledBatch gather(std::span<const std::size_t> indices) const;

  /// Shape and label consistency; throws ContractError or FormatError.
  void validate() const;
  bool operator==(const LongTailDataset&) const = default;
};

/// n_k = n_min + (n_max - n_min) (1 - k/(K-1))^alpha, rounded; monotone
/// non-increasing with n_0 = n_max and n_{K-1} = n_min.
std::vector<std::size_t> pareto_counts(std::size_t num_classes, std::size_t n_max,
                                       std::size_t n_min, double alpha);

struct DatasetPair {
  LongTailDataset train;
  LongTailDataset test;
};

/// Pareto-sized training set and balanced test set drawn from the same
/// Gaussian classes. Means lie on a sphere of radius mean_radius.
DatasetPair generate(const DataConfig& config, Rng& rng);
/// Uses the generator stream derived from config.seed.
DatasetPair generate(const DataConfig& config);

/// Binary file (magic "GISTDS1", K, D, N, counts, seed, samples, labels)
/// plus a text sidecar `<path>.meta` with split tags, hash and truth.
void save_dataset(const std::filesystem::path& path, const LongTailDataset& ds);
LongTailDataset load_dataset(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_dataset(const LongTailDataset& ds);
LongTailDataset decode_dataset(std::span<const std::uint8_t> bytes, const std::string& what);

}  // namespace gist
