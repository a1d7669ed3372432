#include "oflw3/learner.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

#include "oflw3/error.hpp"
#include "oflw3/random.hpp"

namespace oflw3::learner {

static_assert(std::endian::native == std::endian::little,
              "float payload encoding assumes a little-endian host");

void MlpArch::validate() const {
  if (dims.size() < 2) throw Error(Errc::kShapeMismatch, "arch needs at least two widths");
  for (auto d : dims) {
    if (d == 0) throw Error(Errc::kShapeMismatch, "layer widths must be >= 1");
  }
}

std::size_t MlpArch::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) n += dims[l + 1] * (dims[l] + 1);
  return n;
}

ModelWeights ModelWeights::zeros(const MlpArch& arch) {
  arch.validate();
  ModelWeights w;
  w.arch = arch;
  for (std::size_t l = 0; l < arch.layer_count(); ++l) {
    DenseLayer layer;
    layer.inputs = arch.dims[l];
    layer.outputs = arch.dims[l + 1];
    layer.weights.assign(layer.inputs * layer.outputs, 0.0f);
    layer.bias.assign(layer.outputs, 0.0f);
    w.layers.push_back(std::move(layer));
  }
  return w;
}

void ModelWeights::validate() const {
  arch.validate();
  if (layers.size() != arch.layer_count()) {
    throw Error(Errc::kShapeMismatch, "layer count does not match arch");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.inputs != arch.dims[l] || layer.outputs != arch.dims[l + 1] ||
        layer.weights.size() != layer.inputs * layer.outputs ||
        layer.bias.size() != layer.outputs) {
      throw Error(Errc::kShapeMismatch, "layer " + std::to_string(l) + " shape mismatch");
    }
    auto finite = [](float v) { return std::isfinite(v); };
    if (!std::all_of(layer.weights.begin(), layer.weights.end(), finite) ||
        !std::all_of(layer.bias.begin(), layer.bias.end(), finite)) {
      throw Error(Errc::kInvalidArgument, "non-finite parameter");
    }
  }
}

void Hyperparams::validate() const {
  if (batch_size == 0) throw Error(Errc::kInvalidArgument, "batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw Error(Errc::kInvalidArgument, "learning_rate must be > 0");
}

ModelWeights init_weights(const MlpArch& arch, std::uint64_t seed) {
  ModelWeights w = ModelWeights::zeros(arch);
  Rng rng(seed);
  for (auto& layer : w.layers) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.inputs + layer.outputs));
    for (auto& v : layer.weights) v = static_cast<float>(rng.uniform(-limit, limit));
  }
  return w;
}

namespace {

// Per-model scratch space. Weights are kept transposed (in x out) so the
// forward pass is a sequence of contiguous axpy updates; the summation
// order for every output is bias first, then inputs in ascending order.
class Network {
 public:
  explicit Network(const ModelWeights& w) : w_(&w) {
    transposed_.resize(w.layers.size());
    acts_.resize(w.layers.size() + 1);
    for (std::size_t l = 0; l < w.layers.size(); ++l) acts_[l + 1].resize(w.layers[l].outputs);
    refresh();
  }

  void refresh() {
    for (std::size_t l = 0; l < w_->layers.size(); ++l) {
      const auto& layer = w_->layers[l];
      auto& t = transposed_[l];
      t.resize(layer.weights.size());
      for (std::size_t o = 0; o < layer.outputs; ++o) {
        const float* src = layer.row(o);
        for (std::size_t i = 0; i < layer.inputs; ++i) t[i * layer.outputs + o] = src[i];
      }
    }
  }

  // Returns the output logits; hidden activations stay in acts_.
  std::span<const float> run(std::span<const float> x) {
    acts_[0].assign(x.begin(), x.end());
    const std::size_t last = w_->layers.size() - 1;
    for (std::size_t l = 0; l < w_->layers.size(); ++l) {
      const auto& layer = w_->layers[l];
      const float* t = transposed_[l].data();
      const float* in = acts_[l].data();
      float* z = acts_[l + 1].data();
      std::copy(layer.bias.begin(), layer.bias.end(), z);
      const std::size_t n_out = layer.outputs;
      for (std::size_t i = 0; i < layer.inputs; ++i) {
        const float a = in[i];
        if (a == 0.0f) continue;
        const float* col = t + i * n_out;
        for (std::size_t o = 0; o < n_out; ++o) z[o] += a * col[o];
      }
      if (l != last) {
        for (std::size_t o = 0; o < n_out; ++o) z[o] = z[o] > 0.0f ? z[o] : 0.0f;
      }
    }
    return acts_.back();
  }

  const std::vector<float>& activation(std::size_t l) const { return acts_[l]; }

 private:
  const ModelWeights* w_;
  std::vector<std::vector<float>> transposed_;
  std::vector<std::vector<float>> acts_;
};

std::size_t argmax(std::span<const float> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

void check_compatible(const ModelWeights& w, const Dataset& data) {
  if (data.dim != w.arch.input_width()) {
    throw Error(Errc::kShapeMismatch, "dataset width " + std::to_string(data.dim) +
                                          " != model input width " +
                                          std::to_string(w.arch.input_width()));
  }
  for (auto l : data.labels) {
    if (l >= w.arch.output_width()) {
      throw Error(Errc::kShapeMismatch, "label outside model output range");
    }
  }
}

// Accumulates the summed (not averaged) cross-entropy gradient of `rows`
// into `grad`; returns the summed loss.
double accumulate_gradient(Network& net, const ModelWeights& w, const Dataset& data,
                           std::span<const std::size_t> rows, ModelWeights& grad,
                           std::vector<std::vector<float>>& deltas) {
  const std::size_t n_layers = w.layers.size();
  double loss = 0.0;
  for (std::size_t r : rows) {
    const auto logits = net.run(data.row(r));
    const std::size_t label = data.labels[r];

    // softmax in double, log-sum-exp for the loss
    const double peak = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (float z : logits) denom += std::exp(static_cast<double>(z) - peak);
    loss += std::log(denom) + peak - static_cast<double>(logits[label]);

    auto& top = deltas[n_layers - 1];
    for (std::size_t o = 0; o < logits.size(); ++o) {
      const double p = std::exp(static_cast<double>(logits[o]) - peak) / denom;
      top[o] = static_cast<float>(p - (o == label ? 1.0 : 0.0));
    }

    for (std::size_t l = n_layers; l-- > 0;) {
      const auto& layer = w.layers[l];
      auto& g = grad.layers[l];
      const auto& delta = deltas[l];
      const auto& in = net.activation(l);
      for (std::size_t o = 0; o < layer.outputs; ++o) {
        const float d = delta[o];
        g.bias[o] += d;
        if (d == 0.0f) continue;
        float* grow = g.row(o);
        for (std::size_t i = 0; i < layer.inputs; ++i) grow[i] += d * in[i];
      }
      if (l == 0) break;
      auto& below = deltas[l - 1];
      std::fill(below.begin(), below.end(), 0.0f);
      for (std::size_t o = 0; o < layer.outputs; ++o) {
        const float d = delta[o];
        if (d == 0.0f) continue;
        const float* wrow = layer.row(o);
        for (std::size_t i = 0; i < layer.inputs; ++i) below[i] += d * wrow[i];
      }
      // ReLU derivative; the stored activation is post-ReLU.
      for (std::size_t i = 0; i < layer.inputs; ++i) {
        if (!(in[i] > 0.0f)) below[i] = 0.0f;
      }
    }
  }
  return loss;
}

std::vector<std::vector<float>> make_deltas(const ModelWeights& w) {
  std::vector<std::vector<float>> deltas;
  for (const auto& layer : w.layers) deltas.emplace_back(layer.outputs, 0.0f);
  return deltas;
}

void zero(ModelWeights& g) {
  for (auto& layer : g.layers) {
    std::fill(layer.weights.begin(), layer.weights.end(), 0.0f);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0f);
  }
}

}  // namespace

std::vector<float> forward(const ModelWeights& w, std::span<const float> x) {
  if (x.size() != w.arch.input_width()) {
    throw Error(Errc::kShapeMismatch, "input width mismatch");
  }
  Network net(w);
  const auto logits = net.run(x);
  return {logits.begin(), logits.end()};
}

std::vector<float> softmax(std::span<const float> logits) {
  std::vector<float> out(logits.size());
  if (logits.empty()) return out;
  const double peak = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (float z : logits) denom += std::exp(static_cast<double>(z) - peak);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = static_cast<float>(std::exp(static_cast<double>(logits[i]) - peak) / denom);
  }
  return out;
}

std::size_t predict(const ModelWeights& w, std::span<const float> x) {
  return argmax(forward(w, x));
}

LossGradient loss_gradient(const ModelWeights& w, const Dataset& data,
                           std::span<const std::size_t> rows) {
  check_compatible(w, data);
  std::vector<std::size_t> all;
  if (rows.empty()) {
    all.resize(data.size());
    std::iota(all.begin(), all.end(), 0);
    rows = all;
  }
  LossGradient out;
  out.gradient = ModelWeights::zeros(w.arch);
  Network net(w);
  auto deltas = make_deltas(w);
  const double n = static_cast<double>(rows.size());
  out.loss = accumulate_gradient(net, w, data, rows, out.gradient, deltas) / n;
  for (auto& layer : out.gradient.layers) {
    for (auto& v : layer.weights) v = static_cast<float>(v / n);
    for (auto& v : layer.bias) v = static_cast<float>(v / n);
  }
  return out;
}

ModelWeights train(const ModelWeights& init, const Dataset& data, const Hyperparams& hp) {
  hp.validate();
  init.validate();
  check_compatible(init, data);
  ModelWeights w = init;
  if (hp.local_epochs == 0 || data.size() == 0) return w;

  ModelWeights grad = ModelWeights::zeros(w.arch);
  Network net(w);
  auto deltas = make_deltas(w);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(hp.seed);

  for (std::size_t epoch = 0; epoch < hp.local_epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
      const std::size_t end = std::min(order.size(), start + hp.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      zero(grad);
      net.refresh();
      const double loss = accumulate_gradient(net, w, data, batch, grad, deltas);
      if (!std::isfinite(loss)) {
        throw Error(Errc::kTrainingDiverged, "non-finite loss in epoch " + std::to_string(epoch));
      }
      const float step = static_cast<float>(hp.learning_rate / static_cast<double>(batch.size()));
      for (std::size_t l = 0; l < w.layers.size(); ++l) {
        auto& layer = w.layers[l];
        const auto& g = grad.layers[l];
        for (std::size_t k = 0; k < layer.weights.size(); ++k) layer.weights[k] -= step * g.weights[k];
        for (std::size_t k = 0; k < layer.bias.size(); ++k) layer.bias[k] -= step * g.bias[k];
      }
    }
  }
  for (const auto& layer : w.layers) {
    for (float v : layer.weights) {
      if (!std::isfinite(v)) throw Error(Errc::kTrainingDiverged, "non-finite weight");
    }
  }
  return w;
}

std::size_t count_correct(const ModelWeights& w, const Dataset& test) {
  check_compatible(w, test);
  Network net(w);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < test.size(); ++r) {
    if (argmax(net.run(test.row(r))) == test.labels[r]) ++correct;
  }
  return correct;
}

double evaluate(const ModelWeights& w, const Dataset& test) {
  if (test.size() == 0) return 0.0;
  return static_cast<double>(count_correct(w, test)) / static_cast<double>(test.size());
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr char kMagic[4] = {'O', 'F', 'L', 'W'};
constexpr std::uint16_t kFormatVersion = 1;

class Reader {
 public:
  explicit Reader(ByteView bytes) : bytes_(bytes) {}

  template <typename T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(T{bytes_[pos_ + i]} << (8 * i));
    pos_ += sizeof(T);
    return v;
  }

  void floats(std::vector<float>& out) {
    need(out.size() * sizeof(float));
    if (!out.empty()) std::memcpy(out.data(), bytes_.data() + pos_, out.size() * sizeof(float));
    pos_ += out.size() * sizeof(float);
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(Errc::kTruncatedPayload, "model payload truncated");
  }

  ByteView bytes_;
  std::size_t pos_ = 0;
};

void put_floats(Bytes& out, const std::vector<float>& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
  out.insert(out.end(), p, p + v.size() * sizeof(float));
}

}  // namespace

std::size_t serialized_size(const MlpArch& arch) {
  return 4 + 2 + 2 + 4 * arch.dims.size() + 4 + 4 * arch.parameter_count();
}

Bytes serialize(const ModelWeights& w) {
  w.validate();
  Bytes out;
  out.reserve(serialized_size(w.arch));
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_le<std::uint16_t>(out, kFormatVersion);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(w.arch.dims.size()));
  for (auto d : w.arch.dims) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.arch.parameter_count()));
  for (const auto& layer : w.layers) {
    put_floats(out, layer.weights);
    put_floats(out, layer.bias);
  }
  return out;
}

ModelWeights deserialize(ByteView bytes) {
  const std::size_t probe = std::min<std::size_t>(bytes.size(), 4);
  if (!std::equal(bytes.begin(), bytes.begin() + probe, std::begin(kMagic))) {
    throw Error(Errc::kBadMagic, "payload is not an OFLW model");
  }
  Reader in(bytes);
  in.le<std::uint32_t>();  // magic, checked above
  if (in.le<std::uint16_t>() != kFormatVersion) {
    throw Error(Errc::kBadMagic, "unsupported OFLW format version");
  }
  MlpArch arch;
  arch.dims.resize(in.le<std::uint16_t>());
  for (auto& d : arch.dims) d = in.le<std::uint32_t>();
  arch.validate();
  if (in.le<std::uint32_t>() != arch.parameter_count()) {
    throw Error(Errc::kShapeMismatch, "parameter count does not match widths");
  }
  if (in.remaining() < 4 * arch.parameter_count()) {
    throw Error(Errc::kTruncatedPayload, "model payload truncated");
  }
  if (in.remaining() > 4 * arch.parameter_count()) {
    throw Error(Errc::kShapeMismatch, "trailing bytes after model payload");
  }
  ModelWeights w = ModelWeights::zeros(arch);
  for (auto& layer : w.layers) {
    in.floats(layer.weights);
    in.floats(layer.bias);
  }
  w.validate();
  return w;
}

// ---------------------------------------------------------------------------
// JSON

void to_json(nlohmann::json& j, const MlpArch& a) { j = a.dims; }
void from_json(const nlohmann::json& j, MlpArch& a) {
  a.dims = j.get<std::vector<std::size_t>>();
  a.validate();
}

void to_json(nlohmann::json& j, const Hyperparams& h) {
  j = {{"batch_size", h.batch_size},
       {"learning_rate", h.learning_rate},
       {"local_epochs", h.local_epochs},
       {"seed", h.seed}};
}

void from_json(const nlohmann::json& j, Hyperparams& h) {
  h = Hyperparams{};
  h.batch_size = j.value("batch_size", h.batch_size);
  h.learning_rate = j.value("learning_rate", h.learning_rate);
  h.local_epochs = j.value("local_epochs", h.local_epochs);
  h.seed = j.value("seed", h.seed);
  h.validate();
}

void to_json(nlohmann::json& j, const ModelSidecar& s) {
  j = {{"format", "OFLW/1"}, {"arch", s.arch}, {"hyperparams", s.hyperparams}, {"owner", s.owner}};
}

void from_json(const nlohmann::json& j, ModelSidecar& s) {
  s.arch = j.at("arch").get<MlpArch>();
  s.hyperparams = j.at("hyperparams").get<Hyperparams>();
  s.owner = j.at("owner").get<std::string>();
}

}  // namespace oflw3::learner
