#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gist/constellation.hpp"
#include "gist/datagen.hpp"
#include "gist/model.hpp"
#include "gist/train_config.hpp"

namespace gist {

struct Checkpoint;

/// Accuracy over all classes and per split; a split with no classes in the
/// test set has no value.
struct SplitAccuracy {
  double overall = 0.0;
  std::array<std::optional<double>, 3> by_split{};  // indexed by Split

  std::optional<double> operator[](Split s) const { return by_split[static_cast<std::size_t>(s)]; }
};

struct EvalReport {
  SplitAccuracy accuracy;
  std::vector<double> per_class_acc;
  std::vector<Split> split;
  UsageReport usage;
  std::size_t samples = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

/// The deployable part of a trained model: embedding, W, displacements,
/// tau. The auxiliary centers are not carried over.
class InferenceModel {
 public:
  explicit InferenceModel(const Model& trained);

  struct Prediction {
    Matrix features;
    LogitResult logits;
    std::vector<int> predicted;
  };
  Prediction predict(const Matrix& inputs) const;

  const EmbeddingNet& embedding() const noexcept { return embedding_; }
  const ConstellationClassifier& classifier() const noexcept { return classifier_; }
  Scoring scoring() const noexcept { return scoring_; }

 private:
  EmbeddingNet embedding_;
  ConstellationClassifier classifier_;
  Scoring scoring_;
};

/// Split-wise accuracy on a balanced test set. Prediction is the argmax of
/// the constellation logits (lowest class index on ties).
EvalReport evaluate(const InferenceModel& model, const LongTailDataset& test,
                    std::uint64_t config_hash = 0, std::uint64_t seed = 0);
EvalReport evaluate(const Checkpoint& ckpt, const LongTailDataset& test);

/// Flat `key = value` text.
std::string format_report(const EvalReport& r);
/// Overall / Many / Medium / Few columns, then the member usage histogram.
std::string format_table(const EvalReport& r);

struct AblationVariant {
  std::string name;
  TrainConfig config;
};

/// The eight ablation rows derived from a base configuration.
std::vector<AblationVariant> ablation_variants(const TrainConfig& base);
/// Full GIST with each of the given displacement counts.
std::vector<AblationVariant> m_sweep_variants(const TrainConfig& base,
                                              const std::vector<std::size_t>& counts);

struct AblationResult {
  std::string name;
  TrainConfig config;
  EvalReport report;
  std::uint64_t fingerprint = 0;  // of the final checkpoint
};

/// Trains and evaluates every variant on the same data. Rows sharing a
/// first phase reuse one pretraining run. Up to `jobs` rows run at once;
/// results do not depend on jobs.
std::vector<AblationResult> run_ablation(const DatasetPair& data,
                                         const std::vector<AblationVariant>& variants,
                                         std::size_t jobs = 1);

struct BatteryRow {
  std::string name;
  std::vector<EvalReport> per_seed;

  double mean_overall() const;
  double spread_overall() const;
  /// NaN when the split is missing for some seed.
  double mean(Split s) const;
  double spread(Split s) const;
};

/// run_ablation once per seed: data and training both take the seed.
std::vector<BatteryRow> run_ablation_battery(const DataConfig& data,
                                             const std::vector<AblationVariant>& variants,
                                             const std::vector<std::uint64_t>& seeds,
                                             std::size_t jobs = 1);

std::string format_ablation(const std::vector<BatteryRow>& rows);
std::string ablation_csv(const std::vector<BatteryRow>& rows);

/// A subset of classes, parsed from "all", "classes:0,3,7", or split
/// quotas like "many:5,few:5" (the first n classes of each split).
struct ClassSelection {
  std::vector<std::size_t> classes;

  static ClassSelection parse(const std::string& text, const LongTailDataset& ds);
};

/// One row per selected sample, in dataset order.
struct EmbeddingDump {
  Matrix features;
  std::vector<int> labels;
  std::vector<Split> split;
  std::vector<int> predicted;
  std::vector<std::uint32_t> member;  // argmax member of the true class

  std::size_t rows() const noexcept { return labels.size(); }
  bool operator==(const EmbeddingDump&) const = default;
};

EmbeddingDump dump_embeddings(const InferenceModel& model, const LongTailDataset& ds,
                              const ClassSelection& selection);
/// Columnar binary: "GISTEM1", rows, dim, then each column in turn.
void save_embedding_dump(const std::filesystem::path& path, const EmbeddingDump& dump);
EmbeddingDump load_embedding_dump(const std::filesystem::path& path);

}  // namespace gist
