#include "oflw3/learner.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "oflw3/error.hpp"
#include "oflw3/random.hpp"

namespace oflw3::learner {
namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::kInvalidArgument;
}

// Labels only; the single feature encodes the row index so partitions can
// be checked for duplicates.
Dataset indexed_labels(std::size_t n, std::size_t classes) {
  Dataset d;
  d.dim = 1;
  for (std::size_t i = 0; i < n; ++i) {
    d.features.push_back(static_cast<float>(i));
    d.labels.push_back(static_cast<std::uint32_t>(i % classes));
  }
  return d;
}

// 2-class set: class 0 is bright on the first half of the features, class 1
// on the second half.
Dataset two_class_toy(std::size_t n, std::uint64_t seed, std::size_t dim = 100) {
  Rng rng(seed);
  Dataset d;
  d.dim = dim;
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<std::uint32_t>(rng.below(2));
    for (std::size_t j = 0; j < d.dim; ++j) {
      const bool bright = (j < d.dim / 2) == (label == 0);
      d.features.push_back(static_cast<float>(bright ? rng.uniform(0.6, 1.0) : rng.uniform(0.0, 0.4)));
    }
    d.labels.push_back(label);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Independent oracle: double-precision forward pass written directly from
// the definition (ReLU hidden layers, softmax cross-entropy).

double oracle_loss(const ModelWeights& w, const std::vector<std::vector<double>>& wd,
                   const std::vector<std::vector<double>>& bd, const Dataset& data) {
  double total = 0.0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    std::vector<double> a(data.row(r).begin(), data.row(r).end());
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
      const auto& layer = w.layers[l];
      std::vector<double> z(layer.outputs);
      for (std::size_t o = 0; o < layer.outputs; ++o) {
        double s = bd[l][o];
        for (std::size_t i = 0; i < layer.inputs; ++i) s += wd[l][o * layer.inputs + i] * a[i];
        z[o] = (l + 1 < w.layers.size()) ? std::max(0.0, s) : s;
      }
      a = std::move(z);
    }
    double m = *std::max_element(a.begin(), a.end());
    double denom = 0.0;
    for (double v : a) denom += std::exp(v - m);
    total += std::log(denom) + m - a[data.labels[r]];
  }
  return total / static_cast<double>(data.size());
}

TEST(GradientCheck, MatchesCentralDifferences) {
  const MlpArch arch{{4, 3, 2}};
  const ModelWeights w = init_weights(arch, 5);
  Rng rng(9);
  Dataset data;
  data.dim = 4;
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 4; ++j) data.features.push_back(static_cast<float>(rng.uniform01()));
    data.labels.push_back(static_cast<std::uint32_t>(rng.below(2)));
  }

  const LossGradient analytic = loss_gradient(w, data);

  std::vector<std::vector<double>> wd, bd;
  for (const auto& layer : w.layers) {
    wd.emplace_back(layer.weights.begin(), layer.weights.end());
    bd.emplace_back(layer.bias.begin(), layer.bias.end());
  }
  EXPECT_NEAR(analytic.loss, oracle_loss(w, wd, bd, data), 1e-6);

  constexpr double h = 1e-5;
  double worst = 0.0;
  auto check = [&](double& param, float analytic_value) {
    const double saved = param;
    param = saved + h;
    const double up = oracle_loss(w, wd, bd, data);
    param = saved - h;
    const double down = oracle_loss(w, wd, bd, data);
    param = saved;
    const double numeric = (up - down) / (2 * h);
    const double denom = std::max({std::abs(numeric), std::abs(double{analytic_value}), 1e-4});
    worst = std::max(worst, std::abs(numeric - analytic_value) / denom);
  };
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    for (std::size_t k = 0; k < wd[l].size(); ++k) check(wd[l][k], analytic.gradient.layers[l].weights[k]);
    for (std::size_t k = 0; k < bd[l].size(); ++k) check(bd[l][k], analytic.gradient.layers[l].bias[k]);
  }
  EXPECT_LE(worst, 1e-3);
}

TEST(SoftmaxTest, IsProbabilityVector) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<float> logits(1 + rng.below(12));
    for (auto& v : logits) v = static_cast<float>(rng.uniform(-50, 50));
    const auto p = softmax(logits);
    double sum = 0.0;
    for (float v : p) {
      EXPECT_GE(v, 0.0f);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-5);
  }
}

TEST(TrainTest, ZeroEpochsReturnsInit) {
  const ModelWeights init = init_weights({{100, 8, 2}}, 1);
  Hyperparams hp;
  hp.local_epochs = 0;
  EXPECT_EQ(serialize(train(init, two_class_toy(50, 1), hp)), serialize(init));
}

TEST(TrainTest, SameSeedIsBitwiseIdentical) {
  const ModelWeights init = init_weights({{100, 8, 2}}, 1);
  const Dataset data = two_class_toy(120, 2);
  Hyperparams hp;
  hp.seed = 77;
  EXPECT_EQ(serialize(train(init, data, hp)), serialize(train(init, data, hp)));
  Hyperparams other = hp;
  other.seed = 78;
  EXPECT_NE(serialize(train(init, data, hp)), serialize(train(init, data, other)));
}

TEST(TrainTest, SeparableToyReachesHighAccuracyWithDefaults) {
  const Dataset data = two_class_toy(200, 2024, 784);
  const ModelWeights init = init_weights({{784, 100, 2}}, 2024);
  const ModelWeights trained = train(init, data, Hyperparams{});
  EXPECT_GE(evaluate(trained, data), 0.95);
}

TEST(TrainTest, DivergenceDetected) {
  const Dataset data = two_class_toy(64, 3);
  const ModelWeights init = init_weights({{100, 8, 2}}, 3);
  Hyperparams hp;
  hp.learning_rate = 1e30;
  EXPECT_EQ(code_of([&] { train(init, data, hp); }), Errc::kTrainingDiverged);
}

TEST(TrainTest, IncompatibleDataRejected) {
  const ModelWeights init = init_weights({{3, 2, 2}}, 3);
  EXPECT_EQ(code_of([&] { train(init, two_class_toy(8, 1), Hyperparams{}); }),
            Errc::kShapeMismatch);
}

TEST(EvaluateTest, ZeroWeightsPredictClassZero) {
  const ModelWeights zero = ModelWeights::zeros({{6, 4, 3}});
  Dataset test;
  test.dim = 6;
  const std::uint32_t labels[] = {0, 2, 1, 0, 2, 2, 0};
  for (auto l : labels) {
    test.labels.push_back(l);
    for (int j = 0; j < 6; ++j) test.features.push_back(0.3f * static_cast<float>(j));
  }
  EXPECT_DOUBLE_EQ(evaluate(zero, test), 3.0 / 7.0);
}

TEST(EvaluateTest, MemorizesFourPoints) {
  Dataset four;
  four.dim = 2;
  four.features = {0, 0, 0, 1, 1, 0, 1, 1};
  four.labels = {0, 1, 1, 0};  // XOR needs the hidden layer
  Hyperparams hp;
  hp.learning_rate = 0.5;
  hp.batch_size = 4;
  hp.local_epochs = 2000;
  const ModelWeights trained = train(init_weights({{2, 8, 2}}, 11), four, hp);
  EXPECT_DOUBLE_EQ(evaluate(trained, four), 1.0);
}

TEST(PartitionTest, SingleOwnerGetsEverything) {
  const Dataset d = indexed_labels(37, 4);
  const auto parts = partition(d, 1, 0.5, 1);
  ASSERT_EQ(parts.size(), 1u);
  EXPECT_EQ(parts[0].features, d.features);
  EXPECT_EQ(parts[0].labels, d.labels);
}

TEST(PartitionTest, SoundAndDeterministic) {
  const Dataset d = indexed_labels(1000, 10);
  for (double skew : {0.1, 0.5, 5.0}) {
    const auto parts = partition(d, 10, skew, 42);
    std::set<float> seen;
    std::size_t total = 0;
    for (const auto& p : parts) {
      EXPECT_GE(p.size(), 1u);
      total += p.size();
      for (float f : p.features) EXPECT_TRUE(seen.insert(f).second);
    }
    EXPECT_EQ(total, d.size());
    const auto again = partition(d, 10, skew, 42);
    for (std::size_t i = 0; i < parts.size(); ++i) EXPECT_EQ(parts[i].features, again[i].features);
  }
}

TEST(PartitionTest, HugeConcentrationIsNearUniform) {
  const Dataset d = indexed_labels(20'000, 10);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (const auto& p : partition(d, 10, 1e6, seed)) {
      const auto h = p.class_histogram(10);
      for (auto c : h) {
        EXPECT_NEAR(static_cast<double>(c) / static_cast<double>(p.size()), 0.1, 0.05);
      }
    }
  }
}

TEST(PartitionTest, SmallConcentrationDropsClasses) {
  const Dataset d = indexed_labels(5'000, 10);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    bool someone_missing_a_class = false;
    for (const auto& p : partition(d, 10, 0.1, seed)) {
      const auto h = p.class_histogram(10);
      someone_missing_a_class |= std::count(h.begin(), h.end(), 0u) > 0;
    }
    EXPECT_TRUE(someone_missing_a_class) << "seed " << seed;
  }
}

TEST(PartitionTest, Errors) {
  const Dataset d = indexed_labels(5, 2);
  EXPECT_EQ(code_of([&] { partition(d, 6, 1.0, 0); }), Errc::kInvalidArgument);
  EXPECT_EQ(code_of([&] { partition(d, 2, 0.0, 0); }), Errc::kInvalidArgument);
  EXPECT_EQ(code_of([&] { partition(d, 0, 1.0, 0); }), Errc::kInvalidArgument);
}

TEST(SerializeTest, ReferenceArchSize) {
  // 4 x (784*100 + 100 + 100*10 + 10) = 318,040 payload bytes + 24 header.
  const MlpArch arch;
  EXPECT_EQ(arch.parameter_count(), 79'510u);
  EXPECT_EQ(serialized_size(arch), 318'064u);
  EXPECT_EQ(serialize(init_weights(arch, 1)).size(), 318'064u);
}

TEST(SerializeTest, RoundTripIsBitwise) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    MlpArch arch;
    arch.dims.clear();
    const auto depth = 2 + rng.below(3);
    for (std::uint64_t i = 0; i < depth; ++i) arch.dims.push_back(1 + rng.below(9));
    ModelWeights w = ModelWeights::zeros(arch);
    for (auto& layer : w.layers) {
      for (auto& v : layer.weights) v = static_cast<float>(rng.normal() * 1e3);
      for (auto& v : layer.bias) v = static_cast<float>(rng.normal());
    }
    const Bytes bytes = serialize(w);
    const ModelWeights back = deserialize(bytes);
    EXPECT_EQ(back, w);
    EXPECT_EQ(serialize(back), bytes);
  }
}

TEST(SerializeTest, CorruptionsAreClassified) {
  const Bytes good = serialize(init_weights({{5, 4, 3}}, 2));
  Bytes bad_magic = good;
  bad_magic[0] ^= 0xff;
  EXPECT_EQ(code_of([&] { deserialize(bad_magic); }), Errc::kBadMagic);
  EXPECT_EQ(code_of([&] { deserialize(as_bytes("garbage bytes")); }), Errc::kBadMagic);

  const Bytes truncated(good.begin(), good.end() - 3);
  EXPECT_EQ(code_of([&] { deserialize(truncated); }), Errc::kTruncatedPayload);
  EXPECT_EQ(code_of([&] { deserialize(ByteView(good).first(10)); }), Errc::kTruncatedPayload);

  Bytes wrong_count = good;
  wrong_count[20] ^= 1;  // parameter count field
  EXPECT_EQ(code_of([&] { deserialize(wrong_count); }), Errc::kShapeMismatch);

  Bytes trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(code_of([&] { deserialize(trailing); }), Errc::kShapeMismatch);
}

TEST(SidecarTest, JsonRoundTrip) {
  ModelSidecar s{{{784, 100, 10}}, Hyperparams{}, "0x00000000000000000000000000000000000000aa"};
  s.hyperparams.seed = 99;
  const nlohmann::json j = s;
  const auto back = j.get<ModelSidecar>();
  EXPECT_EQ(back.arch, s.arch);
  EXPECT_EQ(back.hyperparams.seed, 99u);
  EXPECT_EQ(back.owner, s.owner);
  EXPECT_EQ(j.at("arch"), nlohmann::json({784, 100, 10}));
}

TEST(SyntheticTest, DeterministicAndInRange) {
  SyntheticSpec spec;
  spec.samples = 50;
  const Dataset a = make_synthetic(spec);
  EXPECT_EQ(a.dim, 784u);
  EXPECT_EQ(a.features, make_synthetic(spec).features);
  for (float v : a.features) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_EQ(a.class_histogram(10), std::vector<std::size_t>(10, 5));
  EXPECT_EQ(load_dataset(describe(spec)).features, a.features);
}

}  // namespace
}  // namespace oflw3::learner
