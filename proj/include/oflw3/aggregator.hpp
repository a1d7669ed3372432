#pragma once

// One-shot fusion of owner models.
//
// naive:    coordinate-wise mean; every model must share one arch.
// matched:  sequential neuron matching. Global hidden units start as model
//           0's units; each further model's hidden units are assigned to
//           global units (or to fresh ones at cost spawn_penalty) by an exact
//           rectangular assignment on squared Euclidean distance over
//           [incoming || bias || outgoing]. Hidden units average with running
//           counts; the output layer is the member mean of the mapped output
//           weights, so unmatched units contribute 1/n of their logits.
// ensemble: mean of member softmax outputs (no single model).

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oflw3/dataset.hpp"
#include "oflw3/learner.hpp"

namespace oflw3::aggregator {

using learner::Dataset;
using learner::ModelWeights;

enum class Method { kNaive, kMatched, kEnsemble };

std::string to_string(Method m);
Method method_from_string(const std::string& s);  // throws kInvalidConfig

struct MatchConfig {
  // Unset: median cost of the pairs in the optimal assignment between the
  // first hidden layers of models 0 and 1 (see default_spawn_penalty).
  std::optional<double> spawn_penalty;
  // Unset: sum of member hidden widths (no cap).
  std::optional<std::size_t> max_global_width;

  bool operator==(const MatchConfig&) const = default;
};

void to_json(nlohmann::json& j, const MatchConfig& c);
void from_json(const nlohmann::json& j, MatchConfig& c);

// Minimum-cost assignment of every row to a distinct column; requires
// rows <= cols. Returns the column chosen for each row.
std::vector<std::size_t> solve_assignment(const std::vector<double>& cost, std::size_t rows,
                                          std::size_t cols);

ModelWeights aggregate_naive(std::span<const ModelWeights> models);

// Fills in unset fields of cfg for this model list and validates it
// (kInvalidConfig). The result is what gets recorded on the job.
MatchConfig resolve(const MatchConfig& cfg, std::span<const ModelWeights> models);
double default_spawn_penalty(std::span<const ModelWeights> models);

ModelWeights aggregate_matched(std::span<const ModelWeights> models, const MatchConfig& cfg);

std::vector<float> ensemble_predict(std::span<const ModelWeights> models, std::span<const float> x);

// Accuracy of the aggregate produced by `method` on `test`.
double aggregate_accuracy(std::span<const ModelWeights> models, Method method,
                          const MatchConfig& cfg, const Dataset& test);

}  // namespace oflw3::aggregator
