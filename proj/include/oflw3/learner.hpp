#pragma once

// Multi-layer perceptron: ReLU hidden layers, softmax output, trained with
// plain mini-batch gradient descent on mean cross-entropy.
//
// Wire format (all integers and floats little-endian):
//   "OFLW"            4 bytes magic
//   version           u16 (= 1)
//   width count       u16 (= number of layer widths, >= 2)
//   widths            u32 each
//   parameter count   u32 (total floats that follow)
//   W1, b1, W2, b2 ... float32, weights row-major (out x in)
// A (784, 100, 10) model is 24 + 4 x 79,510 = 318,064 bytes.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "oflw3/bytes.hpp"
#include "oflw3/dataset.hpp"

namespace oflw3::learner {

struct MlpArch {
  std::vector<std::size_t> dims{784, 100, 10};

  void validate() const;  // throws kShapeMismatch
  std::size_t input_width() const { return dims.front(); }
  std::size_t output_width() const { return dims.back(); }
  std::size_t layer_count() const { return dims.size() - 1; }
  std::size_t parameter_count() const;

  bool operator==(const MlpArch&) const = default;
};

struct DenseLayer {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  std::vector<float> weights;  // outputs x inputs, row-major
  std::vector<float> bias;     // outputs

  float* row(std::size_t out) { return weights.data() + out * inputs; }
  const float* row(std::size_t out) const { return weights.data() + out * inputs; }

  bool operator==(const DenseLayer&) const = default;
};

struct ModelWeights {
  MlpArch arch;
  std::vector<DenseLayer> layers;

  static ModelWeights zeros(const MlpArch& arch);
  // Shapes consistent with arch (kShapeMismatch) and every value finite
  // (kInvalidArgument).
  void validate() const;

  bool operator==(const ModelWeights&) const = default;
};

struct Hyperparams {
  std::size_t batch_size = 64;
  double learning_rate = 0.001;
  std::size_t local_epochs = 10;
  std::uint64_t seed = 0;

  void validate() const;  // throws kInvalidArgument
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)) per layer, zero biases.
ModelWeights init_weights(const MlpArch& arch, std::uint64_t seed);

std::vector<float> forward(const ModelWeights& w, std::span<const float> x);
std::vector<float> softmax(std::span<const float> logits);
// Argmax of the logits; ties go to the lower class index.
std::size_t predict(const ModelWeights& w, std::span<const float> x);

// Mean cross-entropy over `rows` (all rows when empty) and its gradient
// with the same shape as `w`.
struct LossGradient {
  double loss = 0.0;
  ModelWeights gradient;
};
LossGradient loss_gradient(const ModelWeights& w, const Dataset& data,
                           std::span<const std::size_t> rows = {});

// Deterministic: identical inputs give bitwise-identical weights. Throws
// kTrainingDiverged on a non-finite loss, kShapeMismatch on incompatible
// data.
ModelWeights train(const ModelWeights& init, const Dataset& data, const Hyperparams& hp);

double evaluate(const ModelWeights& w, const Dataset& test);
std::size_t count_correct(const ModelWeights& w, const Dataset& test);

std::size_t serialized_size(const MlpArch& arch);
Bytes serialize(const ModelWeights& w);
// Throws kBadMagic, kTruncatedPayload, kShapeMismatch, kInvalidArgument.
ModelWeights deserialize(ByteView bytes);

// Auxiliary JSON that travels next to a model payload.
struct ModelSidecar {
  MlpArch arch;
  Hyperparams hyperparams;
  std::string owner;  // 0x-prefixed address
};

void to_json(nlohmann::json& j, const MlpArch& a);
void from_json(const nlohmann::json& j, MlpArch& a);
void to_json(nlohmann::json& j, const Hyperparams& h);
void from_json(const nlohmann::json& j, Hyperparams& h);
void to_json(nlohmann::json& j, const ModelSidecar& s);
void from_json(const nlohmann::json& j, ModelSidecar& s);

}  // namespace oflw3::learner
