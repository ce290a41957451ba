#pragma once

#include <vector>

#include "gist/constellation.hpp"
#include "gist/embedding.hpp"

namespace gist {

/// Embedding f_phi followed by the constellation head.
struct Model {
  EmbeddingNet embedding;
  ConstellationClassifier classifier;
  Scoring scoring = Scoring::cosine;

  bool operator==(const Model&) const = default;
};

struct LabeledBatch {
  Matrix inputs;
  std::vector<int> labels;
};

}  // namespace gist
