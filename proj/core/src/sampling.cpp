#include "gist/sampling.hpp"

#include <algorithm>
#include <numeric>
#include <span>

#include "gist/binary_io.hpp"
#include "gist/error.hpp"

namespace gist {

namespace {

void save_rng(ByteWriter& out, const Rng& rng) {
  out.put_u64(rng.seed());
  for (auto w : rng.state()) out.put_u64(w);
}

Rng load_rng(ByteReader& in) {
  const auto seed = in.get_u64();
  Rng::State s{};
  for (auto& w : s) w = in.get_u64();
  return Rng::from_state(s, seed);
}

}  // namespace

void BatchSpec::validate() const {
  require(batch_size > 0, "batch size must be positive");
  require(classes_per_batch * per_class == batch_size,
          "class-balanced batch: b_c * b_n must equal b");
}

RandomSampler::RandomSampler(std::size_t dataset_size, std::size_t batch_size, Rng rng)
    : size_(dataset_size), batch_size_(batch_size), rng_(rng) {
  require(batch_size > 0, "RandomSampler: batch size must be positive");
  require(batch_size <= dataset_size, "RandomSampler: batch size " + std::to_string(batch_size) +
                                          " exceeds dataset size " +
                                          std::to_string(dataset_size));
}

std::vector<std::size_t> RandomSampler::next() {
  if (at_epoch_boundary()) {
    order_.resize(size_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(std::span<std::size_t>(order_));
    cursor_ = 0;
  }
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return batch;
}

void RandomSampler::save(ByteWriter& out) const {
  out.put_u64(size_);
  out.put_u64(batch_size_);
  save_rng(out, rng_);
  out.put_u64(order_.size());
  for (auto i : order_) out.put_u64(i);
  out.put_u64(cursor_);
}

void RandomSampler::load(ByteReader& in) {
  if (in.get_u64() != size_ || in.get_u64() != batch_size_)
    throw FormatError("random sampler state does not match the dataset or batch size");
  rng_ = load_rng(in);
  const auto n = in.get_u64();
  if (n != 0 && n != size_) throw FormatError("random sampler permutation has the wrong length");
  order_.resize(n);
  for (auto& i : order_) {
    i = in.get_u64();
    if (i >= size_) throw FormatError("random sampler permutation index out of range");
  }
  cursor_ = in.get_u64();
  if (cursor_ > order_.size()) throw FormatError("random sampler cursor out of range");
}

BalancedSampler::BalancedSampler(std::vector<std::vector<std::size_t>> class_members,
                                 std::size_t classes_per_batch, std::size_t per_class, Rng rng)
    : members_(std::move(class_members)),
      classes_per_batch_(classes_per_batch),
      per_class_(per_class),
      rng_(rng) {
  require(classes_per_batch > 0 && per_class > 0, "BalancedSampler: b_c and b_n must be positive");
  require(classes_per_batch <= members_.size(),
          "BalancedSampler: b_c = " + std::to_string(classes_per_batch) +
              " exceeds the number of classes " + std::to_string(members_.size()));
  for (std::size_t k = 0; k < members_.size(); ++k)
    require(!members_[k].empty(), "BalancedSampler: class " + std::to_string(k) + " is empty");
}

void BalancedSampler::refill() {
  // New permutation appended behind whatever is left of the current one.
  std::vector<std::uint32_t> perm(members_.size());
  std::iota(perm.begin(), perm.end(), 0u);
  rng_.shuffle(std::span<std::uint32_t>(perm));
  queue_.insert(queue_.end(), perm.begin(), perm.end());
}

BalancedSampler::Batch BalancedSampler::next() {
  Batch batch;
  batch.classes.reserve(classes_per_batch_);
  // Take classes in queue order, skipping ones already chosen for this
  // batch. Skipped classes stay at the front, so every prefix of the
  // stream has consumed whole permutations plus part of one.
  while (batch.classes.size() < classes_per_batch_) {
    auto it = std::find_if(queue_.begin(), queue_.end(), [&](std::uint32_t k) {
      return std::find(batch.classes.begin(), batch.classes.end(), k) == batch.classes.end();
    });
    if (it == queue_.end()) {
      refill();
      continue;
    }
    batch.classes.push_back(*it);
    queue_.erase(it);
  }

  batch.indices.reserve(classes_per_batch_ * per_class_);
  std::vector<std::size_t> pool;
  for (auto k : batch.classes) {
    const auto& members = members_[k];
    if (members.size() >= per_class_) {
      // Partial Fisher-Yates: b_n distinct members.
      pool = members;
      for (std::size_t i = 0; i < per_class_; ++i) {
        const auto j = i + static_cast<std::size_t>(rng_.below(pool.size() - i));
        std::swap(pool[i], pool[j]);
        batch.indices.push_back(pool[i]);
      }
    } else {
      for (std::size_t i = 0; i < per_class_; ++i)
        batch.indices.push_back(members[static_cast<std::size_t>(rng_.below(members.size()))]);
    }
  }
  return batch;
}

void BalancedSampler::save(ByteWriter& out) const {
  out.put_u64(members_.size());
  out.put_u64(classes_per_batch_);
  out.put_u64(per_class_);
  save_rng(out, rng_);
  out.put_u64(queue_.size());
  for (auto k : queue_) out.put_u32(k);
}

void BalancedSampler::load(ByteReader& in) {
  if (in.get_u64() != members_.size() || in.get_u64() != classes_per_batch_ ||
      in.get_u64() != per_class_)
    throw FormatError("balanced sampler state does not match the dataset or batch shape");
  rng_ = load_rng(in);
  const auto n = in.get_u64();
  if (n > 2 * members_.size()) throw FormatError("balanced sampler queue too long");
  queue_.resize(n);
  for (auto& k : queue_) {
    k = in.get_u32();
    if (k >= members_.size()) throw FormatError("balanced sampler class out of range");
  }
}

}  // namespace gist
