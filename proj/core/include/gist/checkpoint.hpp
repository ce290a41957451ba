#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gist/model.hpp"
#include "gist/optimizer.hpp"
#include "gist/train_config.hpp"

namespace gist {

class ByteWriter;
class ByteReader;

/// Complete training state at an epoch boundary.
struct Checkpoint {
  std::string config_text;       // canonical TrainConfig text
  std::uint64_t config_hash = 0;
  std::uint64_t data_hash = 0;   // config hash of the training set
  std::uint64_t epoch = 0;       // epochs completed
  Phase phase = Phase::pretrain;
  Model model;
  MomentumBuffers momentum;
  std::vector<std::uint8_t> sampler_state;

  TrainConfig config() const { return TrainConfig::from_text(config_text); }
  bool operator==(const Checkpoint&) const = default;
};

/// "GISTCK1", config hash, epoch, then config text, model blocks (embedding,
/// W, V, displacements, tau, mlp), momentum in the same order, sampler
/// state, and a trailing FNV-1a of everything before it.
std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(std::span<const std::uint8_t> bytes, const std::string& what = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a of the serialized bytes.
std::uint64_t fingerprint(const Checkpoint& ckpt);

void write_model(ByteWriter& out, const Model& model);
Model read_model(ByteReader& in);

}  // namespace gist
