#include "gist/embedding.hpp"

#include <cmath>

#include "gist/error.hpp"
#include "gist/rng.hpp"

namespace gist {

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw ContractError("unknown activation '" + name + "'");
}

EmbeddingNet::EmbeddingNet(std::vector<DenseLayer> layers, Activation activation,
                           bool activate_output)
    : layers_(std::move(layers)), activation_(activation), activate_output_(activate_output) {
  require(!layers_.empty(), "EmbeddingNet: at least one layer required");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    require(l.bias.size() == l.weight.rows(), "EmbeddingNet: bias length differs from layer width");
    if (i > 0)
      require(l.weight.cols() == layers_[i - 1].weight.rows(),
              "EmbeddingNet: layer " + std::to_string(i) + " does not compose with its input");
  }
}

EmbeddingNet EmbeddingNet::make(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                                std::size_t feature_dim, Activation activation, Rng& rng,
                                bool activate_output) {
  std::vector<std::size_t> widths{input_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(feature_dim);
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const auto fan_in = widths[i];
    const auto fan_out = widths[i + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    DenseLayer layer{Matrix(fan_out, fan_in), Vector(fan_out, 0.0)};
    for (auto& w : layer.weight.data()) w = rng.uniform(-limit, limit);
    layers.push_back(std::move(layer));
  }
  return EmbeddingNet(std::move(layers), activation, activate_output);
}

std::size_t EmbeddingNet::input_dim() const {
  return layers_.empty() ? 0 : layers_.front().weight.cols();
}

std::size_t EmbeddingNet::feature_dim() const {
  return layers_.empty() ? 0 : layers_.back().weight.rows();
}

Matrix EmbeddingNet::run(const Matrix& batch, ForwardTape* tape) const {
  require(!layers_.empty(), "EmbeddingNet: empty network");
  require(batch.cols() == input_dim(), "EmbeddingNet::forward: batch has " +
                                           std::to_string(batch.cols()) + " columns, expected " +
                                           std::to_string(input_dim()));
  if (tape) {
    tape->inputs.clear();
    tape->pre_activation.clear();
    tape->net_version = version_;
    tape->batch_rows = batch.rows();
  }
  Matrix x = batch;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const auto& layer = layers_[li];
    Matrix z = matmul_nt(x, layer.weight);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      auto row = z.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += layer.bias[c];
    }
    Matrix a = z;
    if (activated(li)) {
      for (auto& v : a.data())
        v = activation_ == Activation::relu ? (v > 0.0 ? v : 0.0) : std::tanh(v);
    }
    if (tape) {
      tape->inputs.push_back(std::move(x));
      tape->pre_activation.push_back(std::move(z));
    }
    x = std::move(a);
  }
  return x;
}

EmbeddingNet::Forward EmbeddingNet::forward(const Matrix& batch) const {
  Forward out;
  out.features = run(batch, &out.tape);
  return out;
}

Matrix EmbeddingNet::infer(const Matrix& batch) const { return run(batch, nullptr); }

LayerGrads EmbeddingNet::zero_grads() const {
  LayerGrads g;
  for (const auto& l : layers_)
    g.push_back({Matrix(l.weight.rows(), l.weight.cols()), Vector(l.bias.size(), 0.0)});
  return g;
}

EmbeddingNet::Backward EmbeddingNet::backward(const ForwardTape& tape,
                                              const Matrix& grad_features) const {
  require(tape.net_version == version_, "EmbeddingNet::backward: stale tape");
  require(tape.inputs.size() == layers_.size() && tape.pre_activation.size() == layers_.size(),
          "EmbeddingNet::backward: tape does not match network depth");
  require(grad_features.rows() == tape.batch_rows && grad_features.cols() == feature_dim(),
          "EmbeddingNet::backward: gradient shape does not match tape");

  Backward out;
  out.params = zero_grads();
  Matrix grad = grad_features;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const auto& layer = layers_[li];
    const auto& z = tape.pre_activation[li];
    require(z.rows() == grad.rows() && z.cols() == grad.cols(),
            "EmbeddingNet::backward: tape does not match network shapes");
    if (activated(li)) {
      auto g = grad.data();
      const auto zd = z.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (activation_ == Activation::relu) {
          if (!(zd[i] > 0.0)) g[i] = 0.0;
        } else {
          const double t = std::tanh(zd[i]);
          g[i] *= 1.0 - t * t;
        }
      }
    }
    auto& gl = out.params[li];
    gl.weight = matmul_tn(grad, tape.inputs[li]);
    for (std::size_t r = 0; r < grad.rows(); ++r) {
      const auto row = grad.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) gl.bias[c] += row[c];
    }
    grad = matmul(grad, layer.weight);
  }
  out.input = std::move(grad);
  return out;
}

}  // namespace gist
