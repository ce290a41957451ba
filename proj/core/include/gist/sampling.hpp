#pragma once

#include <cstdint>
#include <vector>

#include "gist/rng.hpp"

namespace gist {

class ByteWriter;
class ByteReader;

enum class SamplingRegime : std::uint8_t { random = 0, class_balanced = 1 };

struct BatchSpec {
  SamplingRegime regime = SamplingRegime::random;
  std::size_t batch_size = 128;      // b
  std::size_t classes_per_batch = 4;  // b_c
  std::size_t per_class = 32;         // b_n

  /// b_c * b_n must equal b in both regimes so the two batches are comparable.
  void validate() const;
};

/// Uniform random mini-batches: each epoch walks a fresh permutation of the
/// dataset in chunks of b; the final chunk of an epoch may be shorter.
class RandomSampler {
 public:
  RandomSampler(std::size_t dataset_size, std::size_t batch_size, Rng rng);

  /// Next batch of indices, starting a new epoch permutation when needed.
  std::vector<std::size_t> next();
  /// True when the current permutation is exhausted (or none drawn yet).
  bool at_epoch_boundary() const noexcept { return cursor_ >= order_.size(); }
  std::size_t batches_per_epoch() const noexcept {
    return (size_ + batch_size_ - 1) / batch_size_;
  }
  std::size_t batch_size() const noexcept { return batch_size_; }

  void save(ByteWriter& out) const;
  void load(ByteReader& in);
  bool operator==(const RandomSampler&) const = default;

 private:
  std::size_t size_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Class-balanced mini-batches: b_c distinct classes taken from a running
/// queue of class permutations, then b_n samples per class (without
/// replacement when the class is large enough, with replacement otherwise).
class BalancedSampler {
 public:
  BalancedSampler(std::vector<std::vector<std::size_t>> class_members,
                  std::size_t classes_per_batch, std::size_t per_class, Rng rng);

  struct Batch {
    std::vector<std::size_t> indices;  // grouped by class, b_n each
    std::vector<std::size_t> classes;  // the b_c selected classes
  };
  Batch next();

  std::size_t num_classes() const noexcept { return members_.size(); }
  std::size_t classes_per_batch() const noexcept { return classes_per_batch_; }
  std::size_t per_class() const noexcept { return per_class_; }

  void save(ByteWriter& out) const;
  void load(ByteReader& in);
  bool operator==(const BalancedSampler&) const = default;

 private:
  void refill();

  std::vector<std::vector<std::size_t>> members_;
  std::size_t classes_per_batch_;
  std::size_t per_class_;
  Rng rng_;
  std::vector<std::uint32_t> queue_;  // remaining classes of the current permutation
};

}  // namespace gist
