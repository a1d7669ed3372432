#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace oflw3::learner {

struct Dataset {
  std::size_t dim = 0;
  std::vector<float> features;        // size() x dim, row-major, values in [0, 1]
  std::vector<std::uint32_t> labels;  // in [0, classes)

  std::size_t size() const { return labels.size(); }
  std::span<const float> row(std::size_t i) const {
    return {features.data() + i * dim, dim};
  }
  Dataset subset(std::span<const std::size_t> rows) const;
  // One past the largest label.
  std::size_t class_count() const;
  std::vector<std::size_t> class_histogram(std::size_t classes) const;
};

// Label-skewed split: for each class a proportion vector over owners is
// drawn from a symmetric Dirichlet(skew). Rows within a partition keep
// their input order. Throws kInvalidArgument when owners > rows or
// skew <= 0.
std::vector<Dataset> partition(const Dataset& data, std::size_t owners, double skew,
                               std::uint64_t seed);

// Surrogate for 28x28 digit images: each class has a blob prototype built
// from a few Gaussian strokes; samples are jittered, rescaled and noised.
struct SyntheticSpec {
  std::size_t samples = 1000;
  std::size_t classes = 10;
  std::size_t side = 28;  // dim = side * side
  std::uint64_t prototype_seed = 1;
  std::uint64_t sample_seed = 2;
  double noise = 0.25;
  int max_shift = 2;
};

Dataset make_synthetic(const SyntheticSpec& spec);

// Uncompressed MNIST IDX files. Pixels scaled to [0, 1].
Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                       std::optional<std::size_t> limit = std::nullopt);

// Descriptor carried in job metadata so the buyer can rebuild its test set:
//   {"kind": "synthetic", "samples", "classes", "side", "prototype_seed",
//    "sample_seed", "noise", "max_shift"}
//   {"kind": "mnist", "images": path, "labels": path, "limit": n}
Dataset load_dataset(const nlohmann::json& descriptor);
nlohmann::json describe(const SyntheticSpec& spec);

}  // namespace oflw3::learner
