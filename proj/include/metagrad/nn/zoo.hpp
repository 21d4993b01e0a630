#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "metagrad/core/hash.hpp"
#include "metagrad/nn/serialize.hpp"
#include "metagrad/nn/training.hpp"

namespace metagrad::nn {

enum class ModelRole { WhiteBox, BlackBox };

inline const char* role_name(ModelRole r) { return r == ModelRole::WhiteBox ? "white" : "black"; }

/// One planned zoo member.
struct ZooBlueprint {
  ArchitectureSpec spec;
  ModelRole role = ModelRole::WhiteBox;
  bool adversarial = false;
};

/// Ordered classifiers partitioned into white-box (attackable) and
/// black-box (held-out) index sets.
class ModelZoo {
 public:
  ModelZoo() = default;

  ModelZoo(std::vector<Classifier> models, std::vector<std::size_t> white, std::vector<std::size_t> black)
      : models_(std::move(models)), white_(std::move(white)), black_(std::move(black)) {
    std::set<std::size_t> seen;
    for (auto i : white_) {
      if (i >= models_.size() || !seen.insert(i).second) throw ConfigError("zoo: bad white-box index " + std::to_string(i));
    }
    for (auto i : black_) {
      if (i >= models_.size() || !seen.insert(i).second) throw ConfigError("zoo: bad black-box index " + std::to_string(i));
    }
    if (seen.size() != models_.size()) throw ConfigError("zoo: index sets do not cover every model");
  }

  std::size_t size() const { return models_.size(); }
  const Classifier& operator[](std::size_t i) const { return models_.at(i); }
  const std::vector<Classifier>& models() const { return models_; }
  const std::vector<std::size_t>& white_box() const { return white_; }
  const std::vector<std::size_t>& black_box() const { return black_; }

  ModelRole role(std::size_t i) const {
    for (auto w : white_) if (w == i) return ModelRole::WhiteBox;
    return ModelRole::BlackBox;
  }

  std::vector<const Classifier*> pointers(const std::vector<std::size_t>& indices) const {
    std::vector<const Classifier*> out;
    for (auto i : indices) out.push_back(&models_.at(i));
    return out;
  }

  /// Hash over every member's serialized bytes, in order.
  std::string fingerprint() const {
    std::uint64_t h = fnv1a64("metagrad-zoo");
    for (const auto& m : models_) h = fnv1a64(to_bytes(m), h);
    return hex64(h);
  }

 private:
  std::vector<Classifier> models_;
  std::vector<std::size_t> white_;
  std::vector<std::size_t> black_;
};

/// Coarse architecture signature used for the heterogeneity check:
/// depth, channel widths and pooling placement.
inline std::string architecture_signature(const ArchitectureSpec& spec) {
  std::string widths, pooling;
  std::size_t convs = 0;
  for (const Layer& l : spec.layers) {
    if (l.kind == LayerKind::Conv || l.kind == LayerKind::Dense) {
      ++convs;
      widths += std::to_string(l.units) + "/" + std::to_string(l.kernel) + ",";
    }
    if (l.kind == LayerKind::MaxPool || l.kind == LayerKind::GlobalAvgPool || l.kind == LayerKind::Flatten) {
      pooling += l.text() + "@" + std::to_string(convs) + ",";
    }
  }
  return std::to_string(convs) + "|" + widths + "|" + pooling;
}

/// The desk-scale zoo: 8 plain + 2 FGSM-trained white-box members and
/// 2 plain + 1 FGSM-trained black-box members, all with distinct layouts.
inline std::vector<ZooBlueprint> default_blueprint(std::size_t channels = 3, std::size_t side = 16,
                                                   std::size_t classes = 10) {
  const std::string head = ";input=" + std::to_string(channels) + "x" + std::to_string(side) + "x" +
                           std::to_string(side) + ";classes=" + std::to_string(classes) + ";layers=normalize ";
  const std::string out = " dense(" + std::to_string(classes) + ")";
  auto make = [&](const std::string& name, const std::string& body, ModelRole role, bool adv) {
    return ZooBlueprint{ArchitectureSpec::parse("name=" + name + head + body + out), role, adv};
  };
  using R = ModelRole;
  return {
      make("wb_c2_gap", "conv(8,3) relu maxpool(2) conv(16,3) relu gap", R::WhiteBox, false),
      make("wb_c3_gap", "conv(8,3) relu maxpool(2) conv(16,3) relu maxpool(2) conv(32,3) relu gap", R::WhiteBox, false),
      make("wb_c2_flat", "conv(8,3) relu maxpool(2) conv(8,3) relu maxpool(2) flatten", R::WhiteBox, false),
      make("wb_wide", "conv(16,3) relu maxpool(2) conv(32,3) relu gap", R::WhiteBox, false),
      make("wb_k5", "conv(8,5) relu maxpool(4) conv(16,3) relu gap", R::WhiteBox, false),
      make("wb_deep4", "conv(8,3) relu conv(8,3) relu maxpool(2) conv(16,3) relu maxpool(2) conv(16,3) relu gap", R::WhiteBox, false),
      make("wb_mlp_head", "conv(8,3) relu maxpool(2) conv(16,3) relu maxpool(2) flatten dense(32) relu", R::WhiteBox, false),
      make("wb_late_pool", "conv(8,3) relu conv(16,3) relu maxpool(4) flatten", R::WhiteBox, false),
      make("wb_adv_c2", "conv(12,3) relu maxpool(2) conv(24,3) relu gap", R::WhiteBox, true),
      make("wb_adv_flat", "conv(12,3) relu maxpool(2) conv(12,3) relu maxpool(2) flatten", R::WhiteBox, true),
      make("bb_c3_wide", "conv(12,3) relu maxpool(2) conv(24,3) relu maxpool(2) conv(24,3) relu gap", R::BlackBox, false),
      make("bb_k5_flat", "conv(12,5) relu maxpool(2) conv(16,3) relu maxpool(2) flatten", R::BlackBox, false),
      make("bb_adv_deep", "conv(8,3) relu conv(16,3) relu maxpool(2) conv(24,3) relu gap", R::BlackBox, true),
  };
}

inline nlohmann::json manifest_json(const ModelZoo& zoo, const std::vector<std::string>& files) {
  nlohmann::json j;
  j["format"] = "metagrad-zoo-manifest";
  j["version"] = 1;
  j["fingerprint"] = zoo.fingerprint();
  j["models"] = nlohmann::json::array();
  for (std::size_t i = 0; i < zoo.size(); ++i) {
    const auto& m = zoo[i];
    j["models"].push_back({{"name", m.name()},
                           {"file", files.at(i)},
                           {"role", role_name(zoo.role(i))},
                           {"adversarially_trained", m.record().adversarially_trained},
                           {"adv_epsilon", m.record().adv_epsilon},
                           {"accuracy", m.record().accuracy},
                           {"parameters", m.spec().parameter_count()},
                           {"architecture", m.spec().text()},
                           {"hash", hex64(fnv1a64(to_bytes(m)))}});
  }
  return j;
}

/// Writes `<dir>/<NN>_<name>.mgm` per member plus `<dir>/manifest.json`.
inline void save_zoo(const ModelZoo& zoo, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> files;
  for (std::size_t i = 0; i < zoo.size(); ++i) {
    char prefix[8];
    std::snprintf(prefix, sizeof prefix, "%02zu_", i);
    files.push_back(prefix + zoo[i].name() + ".mgm");
    save(zoo[i], (dir / files.back()).string());
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw DataError("cannot write manifest in " + dir.string());
  out << manifest_json(zoo, files).dump(2) << "\n";
}

/// Reads models back from a manifest, refusing files whose hash differs.
inline ModelZoo load_zoo(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file((dir / "manifest.json").string()));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("zoo manifest in " + dir.string() + " is not valid JSON: " + e.what());
  }
  if (j.value("format", "") != "metagrad-zoo-manifest") throw DataError("zoo manifest: unknown format");
  std::vector<Classifier> models;
  std::vector<std::size_t> white, black;
  for (const auto& e : j.at("models")) {
    const std::string file = e.at("file").get<std::string>();
    const std::string bytes = read_file((dir / file).string());
    const std::string hash = hex64(fnv1a64(bytes));
    if (hash != e.at("hash").get<std::string>()) {
      throw DataError("zoo: hash mismatch for " + file + " (manifest " + e.at("hash").get<std::string>() +
                      ", file " + hash + ")");
    }
    (e.at("role").get<std::string>() == "white" ? white : black).push_back(models.size());
    models.push_back(from_bytes(bytes));
  }
  ModelZoo zoo(std::move(models), std::move(white), std::move(black));
  if (j.contains("fingerprint") && j["fingerprint"].get<std::string>() != zoo.fingerprint()) {
    throw DataError("zoo: fingerprint mismatch in " + dir.string());
  }
  return zoo;
}

}  // namespace metagrad::nn
