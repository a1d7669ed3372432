#include "oflw3/scenario.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

#include "oflw3/error.hpp"

namespace oflw3::scenario {

void to_json(nlohmann::json& j, const ScenarioSpec& s) {
  j = {{"owners", s.owners},
       {"train_samples", s.train_samples},
       {"test_samples", s.test_samples},
       {"skew", s.skew},
       {"noise", s.noise},
       {"seed", s.seed},
       {"arch", s.arch},
       {"hyperparams", s.hyperparams}};
}

void from_json(const nlohmann::json& j, ScenarioSpec& s) {
  s = {};
  s.owners = j.value("owners", s.owners);
  s.train_samples = j.value("train_samples", s.train_samples);
  s.test_samples = j.value("test_samples", s.test_samples);
  s.skew = j.value("skew", s.skew);
  s.noise = j.value("noise", s.noise);
  s.seed = j.value("seed", s.seed);
  if (j.contains("arch")) s.arch = j.at("arch").get<learner::MlpArch>();
  if (j.contains("hyperparams")) s.hyperparams = j.at("hyperparams").get<learner::Hyperparams>();
}

learner::SyntheticSpec train_data_spec(const ScenarioSpec& s) {
  learner::SyntheticSpec d;
  d.samples = s.train_samples;
  d.classes = s.arch.output_width();
  d.prototype_seed = s.seed;
  d.sample_seed = s.seed * 4 + 1;
  d.noise = s.noise;
  return d;
}

learner::SyntheticSpec test_data_spec(const ScenarioSpec& s) {
  learner::SyntheticSpec d = train_data_spec(s);
  d.samples = s.test_samples;
  d.sample_seed = s.seed * 4 + 2;
  return d;
}

std::uint64_t init_seed(const ScenarioSpec& s) { return s.seed * 4 + 3; }

std::uint64_t owner_train_seed(const ScenarioSpec& s, std::size_t owner) {
  return s.hyperparams.seed + 1000 * (s.seed + 1) + owner;
}

Scenario build(const ScenarioSpec& s) {
  s.arch.validate();
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(double(s.arch.input_width()))));
  if (side * side != s.arch.input_width()) {
    throw Error(Errc::kInvalidConfig, "synthetic data needs a square input width");
  }
  auto train_spec = train_data_spec(s);
  auto test_spec = test_data_spec(s);
  train_spec.side = test_spec.side = side;
  Scenario sc;
  sc.partitions = learner::partition(learner::make_synthetic(train_spec), s.owners, s.skew, s.seed);
  sc.test = learner::make_synthetic(test_spec);
  sc.init = learner::init_weights(s.arch, init_seed(s));
  return sc;
}

std::vector<learner::ModelWeights> train_all(const Scenario& sc, const ScenarioSpec& s,
                                             unsigned threads) {
  const std::size_t n = sc.partitions.size();
  std::vector<learner::ModelWeights> out(n);
  std::vector<std::exception_ptr> errors(n);
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        learner::Hyperparams hp = s.hyperparams;
        hp.seed = owner_train_seed(s, i);
        out[i] = learner::train(sc.init, sc.partitions[i], hp);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const auto count = std::min<std::size_t>(threads, n);
  for (std::size_t t = 1; t < count; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace oflw3::scenario
