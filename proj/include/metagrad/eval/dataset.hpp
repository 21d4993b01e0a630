#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "metagrad/core/rng.hpp"
#include "metagrad/core/tensor.hpp"
#include "metagrad/nn/classifier.hpp"
#include "metagrad/nn/training.hpp"

namespace metagrad::eval {

class DatasetMissingError : public DataError {
 public:
  using DataError::DataError;
};

class DatasetCorruptError : public DataError {
 public:
  using DataError::DataError;
};

/// Images [N,C,H,W] in 0..255. `ids` are positions in the source the
/// images came from and key every per-image random stream.
struct EvalDataset {
  Tensor images;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> targets;  // empty unless assigned
  std::vector<std::size_t> ids;
  std::string source;

  std::size_t size() const { return labels.size(); }
  bool has_targets() const { return !targets.empty(); }

  Tensor image(std::size_t i) const {
    Shape s = images.shape();
    s[0] = 1;
    auto v = images.sample(i);
    return Tensor(s, std::vector<float>(v.begin(), v.end()));
  }

  EvalDataset subset(const std::vector<std::size_t>& indices) const {
    const nn::LabeledSet part = nn::LabeledSet{images, labels}.subset(indices);
    EvalDataset out{part.images, part.labels, {}, {}, source};
    for (auto i : indices) {
      out.ids.push_back(ids.at(i));
      if (has_targets()) out.targets.push_back(targets[i]);
    }
    return out;
  }

  EvalDataset head(std::size_t count) const {
    std::vector<std::size_t> idx(std::min(count, size()));
    std::iota(idx.begin(), idx.end(), 0);
    return subset(idx);
  }
};

inline EvalDataset from_labeled(const nn::LabeledSet& set, std::string source) {
  EvalDataset d{set.images, set.labels, {}, std::vector<std::size_t>(set.size()), std::move(source)};
  std::iota(d.ids.begin(), d.ids.end(), 0);
  return d;
}

// ---------------------------------------------------------------- synthetic

struct SyntheticOptions {
  std::size_t classes = 10;
  std::size_t side = 16;
  std::size_t train = 4000;
  std::size_t test = 1000;  // accuracy split recorded in model files
  std::size_t eval = 600;   // attack pool, filtered later
};

struct SyntheticData {
  nn::LabeledSet train;
  nn::LabeledSet test;
  EvalDataset eval;
};

namespace detail {

/// Membership of pixel offset (dx, dy) from the shape centre in class c at radius r.
inline bool shape_mask(std::size_t c, double dx, double dy, double r) {
  const double ax = std::fabs(dx), ay = std::fabs(dy), d = std::hypot(dx, dy);
  switch (c) {
    case 0: return ax <= 0.8 * r && ay <= 0.8 * r;
    case 1: { const double m = std::max(ax, ay); return m <= 0.8 * r && m >= 0.8 * r - 1.6; }
    case 2: return d <= r;
    case 3: return d <= r && d >= r - 1.6;
    case 4: return ay <= 1.3 && ax <= r;
    case 5: return ax <= 1.3 && ay <= r;
    case 6: return (ax <= 1.0 && ay <= r) || (ay <= 1.0 && ax <= r);
    case 7: return std::fabs(ax - ay) <= 1.0 && ax <= 0.85 * r;
    case 8: return dy >= -r && dy <= 0.7 * r && ax <= (dy + r) * 0.55;
    case 9: return std::hypot(ax - 0.6 * r, dy) <= 1.7;
    default: return false;
  }
}

inline void draw_shape(float* img, std::size_t side, std::size_t cls, Rng& rng) {
  const std::size_t plane = side * side;
  const double s = static_cast<double>(side);
  double bg[3], fg[3];
  for (double& v : bg) v = rng.uniform(10.0, 130.0);
  for (double& v : fg) v = rng.uniform(0.0, 255.0);
  const bool brighter = rng.bernoulli(0.5);
  // keep the shape separable from its background in at least one channel
  const std::size_t key = static_cast<std::size_t>(rng.uniform_int(0, 2));
  fg[key] = brighter ? rng.uniform(190.0, 255.0) : rng.uniform(0.0, 20.0);
  if (!brighter) bg[key] = rng.uniform(120.0, 220.0);
  const double r = rng.uniform(0.22 * s, 0.34 * s);
  const double cx = rng.uniform(0.35 * s, 0.65 * s), cy = rng.uniform(0.35 * s, 0.65 * s);
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const bool on = shape_mask(cls, static_cast<double>(x) + 0.5 - cx, static_cast<double>(y) + 0.5 - cy, r);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double v = (on ? fg[ch] : bg[ch]) + 10.0 * rng.normal();
        img[ch * plane + y * side + x] = static_cast<float>(std::clamp(std::round(v), 0.0, 255.0));
      }
    }
}

inline nn::LabeledSet synthetic_split(std::uint64_t seed, std::uint64_t split, std::size_t count,
                                      const SyntheticOptions& opt) {
  Rng rng = Rng::derive(seed, split, 20);
  std::vector<std::size_t> labels(count);
  for (std::size_t i = 0; i < count; ++i) labels[i] = i % opt.classes;
  for (std::size_t i = count; i > 1; --i) {
    std::swap(labels[i - 1], labels[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  }
  Tensor images({count, 3, opt.side, opt.side});
  for (std::size_t i = 0; i < count; ++i) draw_shape(images.data() + i * images.sample_size(), opt.side, labels[i], rng);
  return {std::move(images), std::move(labels)};
}

}  // namespace detail

/// Coloured shapes on noisy backgrounds, 3 x side x side, integer pixels.
/// Deterministic in `seed`; each split is balanced to within one image per class.
inline SyntheticData make_synthetic(std::uint64_t seed, const SyntheticOptions& opt = {}) {
  if (opt.classes < 2 || opt.classes > 10) throw ConfigError("synthetic: classes must lie in [2,10]");
  if (opt.side < 8) throw ConfigError("synthetic: side must be at least 8");
  SyntheticData d;
  d.train = detail::synthetic_split(seed, 0, opt.train, opt);
  d.test = detail::synthetic_split(seed, 1, opt.test, opt);
  d.eval = from_labeled(detail::synthetic_split(seed, 2, opt.eval, opt), "synthetic(" + std::to_string(seed) + ")");
  return d;
}

inline SyntheticData make_synthetic(std::uint64_t seed, std::size_t eval_count, std::size_t classes) {
  SyntheticOptions opt;
  opt.eval = eval_count;
  opt.classes = classes;
  return make_synthetic(seed, opt);
}

// ----------------------------------------------------------------- CIFAR-10

inline constexpr std::size_t kCifarRecord = 3073;

/// One binary batch: records of 1 label byte then 1024 R, 1024 G, 1024 B bytes.
inline nn::LabeledSet load_cifar10_batch(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DatasetMissingError("CIFAR-10 batch not found: " + file.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
    throw DatasetCorruptError("CIFAR-10 batch " + file.string() + ": size " + std::to_string(bytes.size()) +
                              " is not a positive multiple of 3073");
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  Tensor images({n, 3, 32, 32});
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* rec = reinterpret_cast<const unsigned char*>(bytes.data() + i * kCifarRecord);
    if (rec[0] > 9) {
      throw DatasetCorruptError("CIFAR-10 batch " + file.string() + ": record " + std::to_string(i) + " has label " +
                                std::to_string(rec[0]));
    }
    labels[i] = rec[0];
    float* dst = images.data() + i * 3072;
    for (std::size_t k = 0; k < 3072; ++k) dst[k] = static_cast<float>(rec[1 + k]);
  }
  return {std::move(images), std::move(labels)};
}

inline std::filesystem::path cifar_file(const std::filesystem::path& root, const std::string& name) {
  if (std::filesystem::is_regular_file(root)) return root;
  for (const auto& dir : {root, root / "cifar-10-batches-bin"}) {
    if (std::filesystem::exists(dir / name)) return dir / name;
  }
  return root / name;
}

/// Seeded subsample of the test batch; the whole set in file order when
/// count covers it. Indices are kept in ascending order.
inline EvalDataset load_cifar10_subset(const std::filesystem::path& path, std::size_t count, std::uint64_t seed) {
  const nn::LabeledSet all = load_cifar10_batch(cifar_file(path, "test_batch.bin"));
  std::vector<std::size_t> idx(all.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (count < all.size()) {
    Rng rng = Rng::derive(seed, 0, 30);
    for (std::size_t i = 0; i < count; ++i) {
      std::swap(idx[i], idx[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                                       static_cast<std::int64_t>(idx.size()) - 1))]);
    }
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
  }
  EvalDataset d = from_labeled(all, "cifar10-subset(" + std::to_string(seed) + ")");
  return d.subset(idx);
}

inline nn::LabeledSet load_cifar10_train(const std::filesystem::path& root) {
  std::vector<Tensor> parts;
  std::vector<std::size_t> labels;
  for (int b = 1; b <= 5; ++b) {
    nn::LabeledSet s = load_cifar10_batch(cifar_file(root, "data_batch_" + std::to_string(b) + ".bin"));
    parts.push_back(std::move(s.images));
    labels.insert(labels.end(), s.labels.begin(), s.labels.end());
  }
  return {concat_batch(parts), std::move(labels)};
}

// ---------------------------------------------------------------- filtering

struct FilterReport {
  std::size_t kept = 0;
  std::size_t dropped = 0;
};

/// Keeps only images every model classifies correctly.
inline FilterReport filter_correct(EvalDataset& data, const std::vector<const nn::Classifier*>& models,
                                   std::size_t chunk = 256) {
  std::vector<bool> ok(data.size(), true);
  for (const auto* m : models) {
    for (std::size_t start = 0; start < data.size(); start += chunk) {
      std::vector<std::size_t> idx(std::min(chunk, data.size() - start));
      std::iota(idx.begin(), idx.end(), start);
      const auto pred = m->predict(data.subset(idx).images);
      for (std::size_t i = 0; i < pred.size(); ++i) ok[start + i] = ok[start + i] && pred[i] == data.labels[start + i];
    }
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ok.size(); ++i) if (ok[i]) keep.push_back(i);
  FilterReport rep{keep.size(), data.size() - keep.size()};
  data = data.subset(keep);
  return rep;
}

/// Target class per image, uniform over the non-true classes, keyed by image id.
inline void assign_targets(EvalDataset& data, std::size_t classes, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("targets: need at least two classes");
  data.targets.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    Rng rng = Rng::derive(seed, data.ids[i], 2);
    auto t = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(classes) - 2));
    if (t >= data.labels[i]) ++t;
    data.targets[i] = t;
  }
}

}  // namespace metagrad::eval
