#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gist/matrix.hpp"

namespace gist {

class Rng;

enum class Activation : std::uint8_t { relu = 0, tanh = 1 };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

/// weight is (out x in); output = input * weight^T + bias.
struct DenseLayer {
  Matrix weight;
  Vector bias;

  bool operator==(const DenseLayer&) const = default;
};

/// Same layout as the network's layers, holding gradients.
using LayerGrads = std::vector<DenseLayer>;

/// Intermediate values recorded by EmbeddingNet::forward for backward.
struct ForwardTape {
  std::vector<Matrix> inputs;          // input to each layer
  std::vector<Matrix> pre_activation;  // layer output before the nonlinearity
  std::uint64_t net_version = 0;
  std::size_t batch_rows = 0;
};

/// The feature extractor: a stack of fully connected layers. The activation
/// follows every hidden layer; the output layer is linear unless
/// activate_output is set.
class EmbeddingNet {
 public:
  EmbeddingNet() = default;
  EmbeddingNet(std::vector<DenseLayer> layers, Activation activation, bool activate_output = false);

  /// Uniform Glorot initialization, zero biases.
  static EmbeddingNet make(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                           std::size_t feature_dim, Activation activation, Rng& rng,
                           bool activate_output = false);

  std::size_t input_dim() const;
  std::size_t feature_dim() const;
  std::size_t num_layers() const noexcept { return layers_.size(); }
  Activation activation() const noexcept { return activation_; }
  bool activate_output() const noexcept { return activate_output_; }

  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  /// Mutable access invalidates every outstanding ForwardTape.
  std::vector<DenseLayer>& mutable_layers() {
    ++version_;
    return layers_;
  }
  std::uint64_t version() const noexcept { return version_; }

  struct Forward {
    Matrix features;
    ForwardTape tape;
  };
  Forward forward(const Matrix& batch) const;
  /// Forward pass without recording a tape.
  Matrix infer(const Matrix& batch) const;

  struct Backward {
    LayerGrads params;
    Matrix input;
  };
  Backward backward(const ForwardTape& tape, const Matrix& grad_features) const;

  LayerGrads zero_grads() const;

  bool operator==(const EmbeddingNet& other) const {
    return layers_ == other.layers_ && activation_ == other.activation_ &&
           activate_output_ == other.activate_output_;
  }

 private:
  Matrix run(const Matrix& batch, ForwardTape* tape) const;
  bool activated(std::size_t layer) const {
    return layer + 1 < layers_.size() || activate_output_;
  }

  std::vector<DenseLayer> layers_;
  Activation activation_ = Activation::relu;
  bool activate_output_ = false;
  std::uint64_t version_ = 0;
};

}  // namespace gist
