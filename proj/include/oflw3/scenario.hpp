#pragma once

// Seeded desk-scale federated scenario: a synthetic digit surrogate split
// across owners with label skew, a buyer-held test set drawn from the same
// prototypes, and one locally trained model per owner from a common init.

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "oflw3/dataset.hpp"
#include "oflw3/learner.hpp"

namespace oflw3::scenario {

struct ScenarioSpec {
  std::size_t owners = 10;
  std::size_t train_samples = 3000;
  std::size_t test_samples = 1000;
  double skew = 0.5;
  double noise = 0.25;
  std::uint64_t seed = 42;
  learner::MlpArch arch;
  // Plain gradient descent needs a larger step than the 0.001 library
  // default to learn anything in 10 epochs on a few hundred rows.
  learner::Hyperparams hyperparams{64, 0.2, 10, 0};
};

void to_json(nlohmann::json& j, const ScenarioSpec& s);
void from_json(const nlohmann::json& j, ScenarioSpec& s);

// All seeds derive from spec.seed.
learner::SyntheticSpec train_data_spec(const ScenarioSpec& s);
learner::SyntheticSpec test_data_spec(const ScenarioSpec& s);
std::uint64_t init_seed(const ScenarioSpec& s);
std::uint64_t owner_train_seed(const ScenarioSpec& s, std::size_t owner);

struct Scenario {
  std::vector<learner::Dataset> partitions;
  learner::Dataset test;
  learner::ModelWeights init;
};

Scenario build(const ScenarioSpec& s);

// Trains every owner from `init` on its partition, one thread per owner up to
// `threads` (0 = hardware concurrency). Output order follows partitions.
std::vector<learner::ModelWeights> train_all(const Scenario& sc, const ScenarioSpec& s,
                                             unsigned threads = 0);

}  // namespace oflw3::scenario
