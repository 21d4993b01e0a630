#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "metagrad/core/tensor.hpp"
#include "metagrad/nn/serialize.hpp"

namespace metagrad::eval {

/// Adversarial batch on disk: "MGAT", u32 version, u32 rank, u64 extents,
/// u64 image count, then per image u64 id, u32 label, i32 target (-1 when
/// untargeted), then the little-endian float32 pixels.
struct AdversarialFile {
  Tensor images;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> targets;  // empty when untargeted
};

namespace detail {

template <class T>
void put(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

template <class T>
T get(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw DataError("adversarial file truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace detail

inline std::string to_bytes(const AdversarialFile& f) {
  using detail::put;
  std::string out = "MGAT";
  put<std::uint32_t>(out, 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(f.images.rank()));
  for (auto d : f.images.shape()) put<std::uint64_t>(out, d);
  put<std::uint64_t>(out, f.ids.size());
  for (std::size_t i = 0; i < f.ids.size(); ++i) {
    put<std::uint64_t>(out, f.ids[i]);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(f.labels[i]));
    put<std::int32_t>(out, f.targets.empty() ? -1 : static_cast<std::int32_t>(f.targets[i]));
  }
  for (float v : f.images.values()) put<float>(out, v);
  return out;
}

inline AdversarialFile adversarial_from_bytes(const std::string& in) {
  using detail::get;
  if (in.size() < 4 || in.compare(0, 4, "MGAT") != 0) throw DataError("not an adversarial tensor file");
  std::size_t pos = 4;
  if (get<std::uint32_t>(in, pos) != 1) throw DataError("adversarial file: unsupported version");
  const auto rank = get<std::uint32_t>(in, pos);
  if (rank != 4) throw DataError("adversarial file: expected rank 4");
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(get<std::uint64_t>(in, pos));
  const auto count = get<std::uint64_t>(in, pos);
  if (count != shape[0]) throw DataError("adversarial file: image count disagrees with tensor shape");
  AdversarialFile f;
  bool targeted = false;
  for (std::uint64_t i = 0; i < count; ++i) {
    f.ids.push_back(get<std::uint64_t>(in, pos));
    f.labels.push_back(get<std::uint32_t>(in, pos));
    const auto t = get<std::int32_t>(in, pos);
    if (t >= 0) targeted = true;
    f.targets.push_back(t < 0 ? 0 : static_cast<std::size_t>(t));
  }
  if (!targeted) f.targets.clear();
  const std::size_t n = element_count(shape);
  if (in.size() - pos != n * sizeof(float)) throw DataError("adversarial file: pixel blob has the wrong size");
  std::vector<float> v(n);
  std::memcpy(v.data(), in.data() + pos, n * sizeof(float));
  f.images = Tensor(shape, std::move(v));
  return f;
}

inline void save_adversarial(const AdversarialFile& f, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  const std::string bytes = to_bytes(f);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("cannot write " + path.string());
}

inline AdversarialFile load_adversarial(const std::filesystem::path& path) {
  return adversarial_from_bytes(nn::read_file(path.string()));
}

}  // namespace metagrad::eval
