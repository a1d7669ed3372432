#include "oflw3/aggregator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "oflw3/error.hpp"

namespace oflw3::aggregator {

std::string to_string(Method m) {
  switch (m) {
    case Method::kNaive: return "naive";
    case Method::kMatched: return "matched";
    case Method::kEnsemble: return "ensemble";
  }
  return "unknown";
}

Method method_from_string(const std::string& s) {
  if (s == "naive") return Method::kNaive;
  if (s == "matched") return Method::kMatched;
  if (s == "ensemble" || s == "ensemble-eval") return Method::kEnsemble;
  throw Error(Errc::kInvalidConfig, "unknown aggregator '" + s + "'");
}

void to_json(nlohmann::json& j, const MatchConfig& c) {
  j = nlohmann::json::object();
  j["spawn_penalty"] = c.spawn_penalty ? nlohmann::json(*c.spawn_penalty) : nlohmann::json();
  j["max_global_width"] =
      c.max_global_width ? nlohmann::json(*c.max_global_width) : nlohmann::json();
}

void from_json(const nlohmann::json& j, MatchConfig& c) {
  c = {};
  if (j.contains("spawn_penalty") && !j.at("spawn_penalty").is_null()) {
    c.spawn_penalty = j.at("spawn_penalty").get<double>();
  }
  if (j.contains("max_global_width") && !j.at("max_global_width").is_null()) {
    c.max_global_width = j.at("max_global_width").get<std::size_t>();
  }
}

std::vector<std::size_t> solve_assignment(const std::vector<double>& cost, std::size_t rows,
                                          std::size_t cols) {
  if (rows > cols) throw Error(Errc::kInvalidArgument, "assignment needs rows <= cols");
  if (cost.size() != rows * cols) throw Error(Errc::kInvalidArgument, "cost matrix size");
  if (rows == 0) return {};
  // Shortest augmenting path with potentials, 1-based with a sentinel
  // column 0.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(rows + 1, 0.0), v(cols + 1, 0.0);
  std::vector<std::size_t> p(cols + 1, 0), way(cols + 1, 0);
  for (std::size_t i = 1; i <= rows; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(cols + 1, kInf);
    std::vector<char> used(cols + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= cols; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * cols + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= cols; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> out(rows);
  for (std::size_t j = 1; j <= cols; ++j) {
    if (p[j] != 0) out[p[j] - 1] = j - 1;
  }
  return out;
}

namespace {

void require_nonempty(std::span<const ModelWeights> models) {
  if (models.empty()) throw Error(Errc::kInvalidArgument, "no models to aggregate");
  for (const auto& m : models) m.validate();
}

// Input width, output width and depth must agree; hidden widths may differ.
void require_compatible(std::span<const ModelWeights> models) {
  require_nonempty(models);
  const auto& a = models.front().arch;
  for (const auto& m : models) {
    if (m.arch.dims.size() != a.dims.size() || m.arch.input_width() != a.input_width() ||
        m.arch.output_width() != a.output_width()) {
      throw Error(Errc::kArchMismatch, "models disagree on input/output width or depth");
    }
  }
}

std::size_t hidden_sum(std::span<const ModelWeights> models, std::size_t layer) {
  std::size_t s = 0;
  for (const auto& m : models) s += m.arch.dims[layer + 1];
  return s;
}

struct GlobalUnit {
  std::vector<double> in_sum;
  double bias_sum = 0.0;
  std::vector<double> out_sum;  // last hidden layer only
  std::size_t count = 0;
};

// Local unit j of hidden layer l, expressed in global coordinates.
struct LocalUnit {
  std::vector<double> in;
  double bias = 0.0;
  std::vector<double> out;
};

LocalUnit local_unit(const ModelWeights& m, std::size_t l, std::size_t j,
                     const std::vector<std::size_t>& prev_map, std::size_t prev_width,
                     bool last_hidden) {
  const auto& layer = m.layers[l];
  LocalUnit u;
  u.in.assign(prev_width, 0.0);
  const float* row = layer.row(j);
  for (std::size_t i = 0; i < layer.inputs; ++i) u.in[prev_map[i]] += row[i];
  u.bias = layer.bias[j];
  if (last_hidden) {
    const auto& next = m.layers[l + 1];
    u.out.resize(next.outputs);
    for (std::size_t c = 0; c < next.outputs; ++c) u.out[c] = next.row(c)[j];
  }
  return u;
}

double match_cost(const LocalUnit& a, const GlobalUnit& g) {
  const double n = static_cast<double>(g.count);
  double s = 0.0;
  for (std::size_t i = 0; i < a.in.size(); ++i) {
    const double mean = i < g.in_sum.size() ? g.in_sum[i] / n : 0.0;
    const double d = a.in[i] - mean;
    s += d * d;
  }
  const double db = a.bias - g.bias_sum / n;
  s += db * db;
  for (std::size_t c = 0; c < a.out.size(); ++c) {
    const double d = a.out[c] - g.out_sum[c] / n;
    s += d * d;
  }
  return s;
}

GlobalUnit spawn(LocalUnit&& u) {
  GlobalUnit g;
  g.in_sum = std::move(u.in);
  g.bias_sum = u.bias;
  g.out_sum = std::move(u.out);
  g.count = 1;
  return g;
}

void absorb(GlobalUnit& g, const LocalUnit& u) {
  if (g.in_sum.size() < u.in.size()) g.in_sum.resize(u.in.size(), 0.0);
  for (std::size_t i = 0; i < u.in.size(); ++i) g.in_sum[i] += u.in[i];
  g.bias_sum += u.bias;
  for (std::size_t c = 0; c < u.out.size(); ++c) g.out_sum[c] += u.out[c];
  ++g.count;
}

std::vector<std::size_t> identity(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

ModelWeights aggregate_naive(std::span<const ModelWeights> models) {
  require_nonempty(models);
  const auto& arch = models.front().arch;
  for (const auto& m : models) {
    if (m.arch != arch) throw Error(Errc::kArchMismatch, "naive averaging needs one arch");
  }
  ModelWeights out = ModelWeights::zeros(arch);
  const double n = static_cast<double>(models.size());
  auto mean_into = [&](auto member, std::vector<float>& dst) {
    for (std::size_t k = 0; k < dst.size(); ++k) {
      double s = 0.0;
      for (const auto& m : models) s += member(m)[k];
      dst[k] = static_cast<float>(s / n);
    }
  };
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    mean_into([l](const ModelWeights& m) -> const std::vector<float>& { return m.layers[l].weights; },
              out.layers[l].weights);
    mean_into([l](const ModelWeights& m) -> const std::vector<float>& { return m.layers[l].bias; },
              out.layers[l].bias);
  }
  return out;
}

double default_spawn_penalty(std::span<const ModelWeights> models) {
  require_compatible(models);
  if (models.size() < 2 || models.front().arch.layer_count() < 2) return 0.0;
  const bool last_hidden = models.front().arch.layer_count() == 2;
  const auto in_map = identity(models.front().arch.input_width());
  const std::size_t in_width = in_map.size();
  const auto& a = models[0];
  const auto& b = models[1];
  std::vector<GlobalUnit> globals;
  for (std::size_t j = 0; j < a.arch.dims[1]; ++j) {
    globals.push_back(spawn(local_unit(a, 0, j, in_map, in_width, last_hidden)));
  }
  // Cost of each pair in the optimal assignment of the smaller model's
  // units onto the larger one's.
  std::vector<LocalUnit> units;
  for (std::size_t j = 0; j < b.arch.dims[1]; ++j) {
    units.push_back(local_unit(b, 0, j, in_map, in_width, last_hidden));
  }
  const std::size_t rows = std::min(units.size(), globals.size());
  const std::size_t cols = std::max(units.size(), globals.size());
  const bool b_rows = units.size() <= globals.size();
  std::vector<double> cost(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      cost[r * cols + c] = b_rows ? match_cost(units[r], globals[c]) : match_cost(units[c], globals[r]);
    }
  }
  const auto pick = solve_assignment(cost, rows, cols);
  std::vector<double> costs(rows);
  for (std::size_t r = 0; r < rows; ++r) costs[r] = cost[r * cols + pick[r]];
  std::sort(costs.begin(), costs.end());
  const std::size_t h = rows / 2;
  return rows % 2 == 1 ? costs[h] : 0.5 * (costs[h - 1] + costs[h]);
}

MatchConfig resolve(const MatchConfig& cfg, std::span<const ModelWeights> models) {
  require_compatible(models);
  MatchConfig out = cfg;
  if (!out.spawn_penalty) out.spawn_penalty = default_spawn_penalty(models);
  if (!(*out.spawn_penalty >= 0.0) || !std::isfinite(*out.spawn_penalty)) {
    throw Error(Errc::kInvalidConfig, "spawn_penalty must be finite and >= 0");
  }
  std::size_t widest = 0, total = 0;
  for (std::size_t l = 0; l + 1 < models.front().arch.layer_count(); ++l) {
    for (const auto& m : models) widest = std::max(widest, m.arch.dims[l + 1]);
    total = std::max(total, hidden_sum(models, l));
  }
  if (!out.max_global_width) out.max_global_width = total;
  if (*out.max_global_width < widest) {
    throw Error(Errc::kInvalidConfig, "max_global_width below a member hidden width");
  }
  return out;
}

ModelWeights aggregate_matched(std::span<const ModelWeights> models, const MatchConfig& cfg) {
  const MatchConfig rc = resolve(cfg, models);
  if (models.size() == 1) return models.front();
  const auto& first = models.front().arch;
  const std::size_t hidden_layers = first.layer_count() - 1;
  if (hidden_layers == 0) return aggregate_naive(models);
  const double penalty = *rc.spawn_penalty;
  const std::size_t cap = *rc.max_global_width;
  const std::size_t outputs = first.output_width();

  std::vector<std::vector<GlobalUnit>> global(hidden_layers);
  std::vector<double> out_bias_sum(outputs, 0.0);

  for (const auto& m : models) {
    std::vector<std::size_t> prev_map = identity(first.input_width());
    std::size_t prev_width = first.input_width();
    for (std::size_t l = 0; l < hidden_layers; ++l) {
      const bool last_hidden = l + 1 == hidden_layers;
      const std::size_t width = m.arch.dims[l + 1];
      std::vector<LocalUnit> units;
      units.reserve(width);
      for (std::size_t j = 0; j < width; ++j) {
        units.push_back(local_unit(m, l, j, prev_map, prev_width, last_hidden));
      }
      auto& g = global[l];
      const std::size_t existing = g.size();
      const std::size_t spawns = std::min(width, cap - std::min(cap, existing));
      const std::size_t cols = existing + spawns;
      std::vector<std::size_t> map(width);
      if (existing == 0) {
        for (std::size_t j = 0; j < width; ++j) map[j] = j;
        for (auto& u : units) g.push_back(spawn(std::move(u)));
      } else {
        std::vector<double> cost(width * cols, penalty);
        for (std::size_t j = 0; j < width; ++j) {
          for (std::size_t k = 0; k < existing; ++k) cost[j * cols + k] = match_cost(units[j], g[k]);
        }
        const auto pick = solve_assignment(cost, width, cols);
        // Matches first so spawned units do not shift the indices of existing
        // ones; spawned units are appended in local index order.
        for (std::size_t j = 0; j < width; ++j) {
          if (pick[j] < existing) {
            absorb(g[pick[j]], units[j]);
            map[j] = pick[j];
          }
        }
        for (std::size_t j = 0; j < width; ++j) {
          if (pick[j] >= existing) {
            map[j] = g.size();
            g.push_back(spawn(std::move(units[j])));
          }
        }
      }
      prev_map = std::move(map);
      prev_width = g.size();
    }
    const auto& out_layer = m.layers.back();
    for (std::size_t c = 0; c < outputs; ++c) out_bias_sum[c] += out_layer.bias[c];
  }

  learner::MlpArch arch;
  arch.dims.clear();
  arch.dims.push_back(first.input_width());
  for (const auto& g : global) arch.dims.push_back(g.size());
  arch.dims.push_back(outputs);
  ModelWeights out = ModelWeights::zeros(arch);
  const double n = static_cast<double>(models.size());
  for (std::size_t l = 0; l < hidden_layers; ++l) {
    auto& layer = out.layers[l];
    for (std::size_t k = 0; k < global[l].size(); ++k) {
      const auto& u = global[l][k];
      const double count = static_cast<double>(u.count);
      float* row = layer.row(k);
      for (std::size_t i = 0; i < u.in_sum.size(); ++i) row[i] = static_cast<float>(u.in_sum[i] / count);
      layer.bias[k] = static_cast<float>(u.bias_sum / count);
    }
  }
  auto& last = out.layers.back();
  const auto& tail = global.back();
  for (std::size_t c = 0; c < outputs; ++c) {
    float* row = last.row(c);
    for (std::size_t k = 0; k < tail.size(); ++k) row[k] = static_cast<float>(tail[k].out_sum[c] / n);
    last.bias[c] = static_cast<float>(out_bias_sum[c] / n);
  }
  return out;
}

namespace {

std::vector<float> mean_softmax(std::span<const ModelWeights> models, std::span<const float> x) {
  std::vector<double> acc(models.front().arch.output_width(), 0.0);
  for (const auto& m : models) {
    const auto p = learner::softmax(learner::forward(m, x));
    for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += p[c];
  }
  std::vector<float> out(acc.size());
  for (std::size_t c = 0; c < acc.size(); ++c) {
    out[c] = static_cast<float>(acc[c] / static_cast<double>(models.size()));
  }
  return out;
}

}  // namespace

std::vector<float> ensemble_predict(std::span<const ModelWeights> models,
                                    std::span<const float> x) {
  require_compatible(models);
  if (x.size() != models.front().arch.input_width()) {
    throw Error(Errc::kArchMismatch, "feature width does not match the ensemble");
  }
  return mean_softmax(models, x);
}

double aggregate_accuracy(std::span<const ModelWeights> models, Method method,
                          const MatchConfig& cfg, const Dataset& test) {
  switch (method) {
    case Method::kNaive: return learner::evaluate(aggregate_naive(models), test);
    case Method::kMatched: return learner::evaluate(aggregate_matched(models, cfg), test);
    case Method::kEnsemble: {
      require_compatible(models);
      if (test.dim != models.front().arch.input_width()) {
        throw Error(Errc::kArchMismatch, "test set width does not match the ensemble");
      }
      if (test.size() == 0) return 0.0;
      std::size_t correct = 0;
      for (std::size_t r = 0; r < test.size(); ++r) {
        const auto p = mean_softmax(models, test.row(r));
        const auto best = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
        if (best == test.labels[r]) ++correct;
      }
      return static_cast<double>(correct) / static_cast<double>(test.size());
    }
  }
  return 0.0;
}

}  // namespace oflw3::aggregator
