#include "oflw3/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "oflw3/error.hpp"
#include "oflw3/random.hpp"

namespace oflw3::learner {

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.dim = dim;
  out.features.reserve(rows.size() * dim);
  out.labels.reserve(rows.size());
  for (std::size_t r : rows) {
    const auto x = row(r);
    out.features.insert(out.features.end(), x.begin(), x.end());
    out.labels.push_back(labels[r]);
  }
  return out;
}

std::size_t Dataset::class_count() const {
  if (labels.empty()) return 0;
  return *std::max_element(labels.begin(), labels.end()) + 1;
}

std::vector<std::size_t> Dataset::class_histogram(std::size_t classes) const {
  std::vector<std::size_t> h(classes, 0);
  for (auto l : labels) {
    if (l < classes) ++h[l];
  }
  return h;
}

namespace {

std::vector<double> dirichlet(Rng& rng, std::size_t n, double concentration) {
  std::vector<double> p(n);
  double sum = 0.0;
  for (auto& v : p) {
    v = rng.gamma(concentration);
    sum += v;
  }
  if (!(sum > 0.0)) {
    // Every draw underflowed (tiny concentration): all mass on one owner.
    std::fill(p.begin(), p.end(), 0.0);
    p[rng.below(n)] = 1.0;
    return p;
  }
  for (auto& v : p) v /= sum;
  return p;
}

}  // namespace

std::vector<Dataset> partition(const Dataset& data, std::size_t owners, double skew,
                               std::uint64_t seed) {
  if (owners == 0) throw Error(Errc::kInvalidArgument, "need at least one owner");
  if (!(skew > 0.0)) throw Error(Errc::kInvalidArgument, "skew must be positive");
  if (owners > data.size()) {
    throw Error(Errc::kInvalidArgument, "more owners than samples");
  }

  const std::size_t classes = data.class_count();
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);

  Rng rng(seed);
  std::vector<std::vector<std::size_t>> buckets;
  constexpr int kAttempts = 100;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    buckets.assign(owners, {});
    for (auto rows : by_class) {
      if (rows.empty()) continue;
      rng.shuffle(rows.begin(), rows.end());
      const auto p = dirichlet(rng, owners, skew);
      double cumulative = 0.0;
      std::size_t start = 0;
      for (std::size_t o = 0; o < owners; ++o) {
        cumulative += p[o];
        std::size_t end = o + 1 == owners
                              ? rows.size()
                              : static_cast<std::size_t>(std::floor(cumulative * rows.size()));
        end = std::clamp(end, start, rows.size());
        buckets[o].insert(buckets[o].end(), rows.begin() + start, rows.begin() + end);
        start = end;
      }
    }
    const bool all_nonempty =
        std::all_of(buckets.begin(), buckets.end(), [](const auto& b) { return !b.empty(); });
    if (all_nonempty) break;
  }
  // Still an empty owner after every attempt: move one row from the largest
  // bucket (lowest index on ties).
  for (auto& b : buckets) {
    if (!b.empty()) continue;
    auto largest = std::max_element(buckets.begin(), buckets.end(),
                                    [](const auto& x, const auto& y) { return x.size() < y.size(); });
    b.push_back(largest->back());
    largest->pop_back();
  }

  std::vector<Dataset> out;
  out.reserve(owners);
  for (auto& b : buckets) {
    std::sort(b.begin(), b.end());
    out.push_back(data.subset(b));
  }
  return out;
}

Dataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.classes == 0 || spec.side == 0 || spec.samples == 0) {
    throw Error(Errc::kInvalidArgument, "synthetic dataset needs classes, side and samples");
  }
  const std::size_t side = spec.side;
  const std::size_t dim = side * side;

  // Prototypes: a few Gaussian strokes each, peak-normalized to 1.
  std::vector<std::vector<double>> prototypes(spec.classes, std::vector<double>(dim, 0.0));
  Rng proto_rng(spec.prototype_seed);
  for (auto& proto : prototypes) {
    const int strokes = 3 + static_cast<int>(proto_rng.below(3));
    for (int s = 0; s < strokes; ++s) {
      const double cx = proto_rng.uniform(0.2, 0.8) * side;
      const double cy = proto_rng.uniform(0.2, 0.8) * side;
      const double sx = proto_rng.uniform(0.04, 0.18) * side;
      const double sy = proto_rng.uniform(0.04, 0.18) * side;
      for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
          const double dx = (x - cx) / sx;
          const double dy = (y - cy) / sy;
          proto[y * side + x] += std::exp(-0.5 * (dx * dx + dy * dy));
        }
      }
    }
    const double peak = *std::max_element(proto.begin(), proto.end());
    for (auto& v : proto) v /= peak;
  }

  Dataset out;
  out.dim = dim;
  out.features.resize(spec.samples * dim);
  out.labels.resize(spec.samples);
  Rng rng(spec.sample_seed);
  const int span = 2 * spec.max_shift + 1;
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const auto label = static_cast<std::uint32_t>(i % spec.classes);
    out.labels[i] = label;
    const int shift_x = static_cast<int>(rng.below(span)) - spec.max_shift;
    const int shift_y = static_cast<int>(rng.below(span)) - spec.max_shift;
    const double intensity = rng.uniform(0.6, 1.0);
    float* dst = out.features.data() + i * dim;
    const auto& proto = prototypes[label];
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const long sx = static_cast<long>(x) - shift_x;
        const long sy = static_cast<long>(y) - shift_y;
        double v = 0.0;
        if (sx >= 0 && sy >= 0 && sx < static_cast<long>(side) && sy < static_cast<long>(side)) {
          v = intensity * proto[static_cast<std::size_t>(sy) * side + static_cast<std::size_t>(sx)];
        }
        v += spec.noise * rng.normal();
        dst[y * side + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

namespace {

std::uint32_t read_be32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw Error(Errc::kTruncatedPayload, "truncated IDX header");
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
         (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

}  // namespace

Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                       std::optional<std::size_t> limit) {
  std::ifstream img(images, std::ios::binary);
  std::ifstream lab(labels, std::ios::binary);
  if (!img || !lab) throw Error(Errc::kNotFound, "cannot open IDX files");
  if (read_be32(img) != 0x00000803 || read_be32(lab) != 0x00000801) {
    throw Error(Errc::kBadMagic, "not an IDX image/label pair");
  }
  std::size_t n = read_be32(img);
  const std::size_t rows = read_be32(img);
  const std::size_t cols = read_be32(img);
  if (read_be32(lab) != n) throw Error(Errc::kShapeMismatch, "IDX count mismatch");
  if (limit) n = std::min(n, *limit);

  Dataset out;
  out.dim = rows * cols;
  out.features.resize(n * out.dim);
  out.labels.resize(n);
  std::vector<unsigned char> buf(out.dim);
  for (std::size_t i = 0; i < n; ++i) {
    if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
      throw Error(Errc::kTruncatedPayload, "truncated IDX images");
    }
    for (std::size_t j = 0; j < out.dim; ++j) {
      out.features[i * out.dim + j] = static_cast<float>(buf[j]) / 255.0f;
    }
    char l;
    if (!lab.get(l)) throw Error(Errc::kTruncatedPayload, "truncated IDX labels");
    out.labels[i] = static_cast<unsigned char>(l);
  }
  return out;
}

nlohmann::json describe(const SyntheticSpec& spec) {
  return {{"kind", "synthetic"},
          {"samples", spec.samples},
          {"classes", spec.classes},
          {"side", spec.side},
          {"prototype_seed", spec.prototype_seed},
          {"sample_seed", spec.sample_seed},
          {"noise", spec.noise},
          {"max_shift", spec.max_shift}};
}

Dataset load_dataset(const nlohmann::json& d) {
  const auto kind = d.at("kind").get<std::string>();
  if (kind == "synthetic") {
    SyntheticSpec spec;
    spec.samples = d.at("samples").get<std::size_t>();
    spec.classes = d.value("classes", spec.classes);
    spec.side = d.value("side", spec.side);
    spec.prototype_seed = d.at("prototype_seed").get<std::uint64_t>();
    spec.sample_seed = d.at("sample_seed").get<std::uint64_t>();
    spec.noise = d.value("noise", spec.noise);
    spec.max_shift = d.value("max_shift", spec.max_shift);
    return make_synthetic(spec);
  }
  if (kind == "mnist") {
    std::optional<std::size_t> limit;
    if (d.contains("limit")) limit = d.at("limit").get<std::size_t>();
    return load_mnist_idx(d.at("images").get<std::string>(), d.at("labels").get<std::string>(),
                          limit);
  }
  throw Error(Errc::kInvalidArgument, "unknown dataset kind " + kind);
}

}  // namespace oflw3::learner
