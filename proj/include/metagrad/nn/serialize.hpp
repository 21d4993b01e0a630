#pragma once

// Model file layout (all integers little-endian):
//
//   magic      4 bytes  "MGZM"
//   version    u32      kModelFormatVersion
//   spec       u32 length + canonical ArchitectureSpec text
//   record     u32 length + TrainingRecord text (key=value;...)
//   count      u64      total number of parameter floats
//   blob       count x IEEE-754 float32, parameters in declaration order

#include <bit>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "metagrad/nn/classifier.hpp"

namespace metagrad::nn {

inline constexpr char kModelMagic[4] = {'M', 'G', 'Z', 'M'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

/// Bad magic number or unsupported format version.
class ModelVersionError : public DataError {
 public:
  using DataError::DataError;
};

/// File ends before the declared content.
class ModelTruncatedError : public DataError {
 public:
  using DataError::DataError;
};

/// Parameter blob disagrees with the shapes implied by the header.
class ModelShapeError : public DataError {
 public:
  using DataError::DataError;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string format_float(float v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& s, const std::string& key) {
  T v{};
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw DataError("model record: bad value '" + s + "' for " + key);
  }
  return v;
}

inline std::string record_text(const TrainingRecord& r) {
  return "seed=" + std::to_string(r.seed) + ";data_seed=" + std::to_string(r.data_seed) +
         ";epochs=" + std::to_string(r.epochs) + ";accuracy=" + format_double(r.accuracy) +
         ";adversarially_trained=" + (r.adversarially_trained ? "1" : "0") +
         ";adv_epsilon=" + format_float(r.adv_epsilon);
}

inline TrainingRecord parse_record(const std::string& text) {
  TrainingRecord r;
  std::stringstream ss(text);
  std::string field;
  while (std::getline(ss, field, ';')) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw DataError("model record: malformed field '" + field + "'");
    const std::string k = field.substr(0, eq), v = field.substr(eq + 1);
    if (k == "seed") r.seed = parse_number<std::uint64_t>(v, k);
    else if (k == "data_seed") r.data_seed = parse_number<std::uint64_t>(v, k);
    else if (k == "epochs") r.epochs = parse_number<std::uint32_t>(v, k);
    else if (k == "accuracy") r.accuracy = parse_number<double>(v, k);
    else if (k == "adversarially_trained") r.adversarially_trained = v == "1";
    else if (k == "adv_epsilon") r.adv_epsilon = parse_number<float>(v, k);
    else throw DataError("model record: unknown field '" + k + "'");
  }
  return r;
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw ModelTruncatedError(std::string("model file truncated while reading ") + what);
    }
  }
  std::uint64_t uint(int width, const char* what) {
    need(static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::string text(const char* what) {
    const auto n = static_cast<std::size_t>(uint(4, what));
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Serialized bytes of a classifier (see layout above).
inline std::string to_bytes(const Classifier& model) {
  std::string out(kModelMagic, 4);
  detail::put_u32(out, kModelFormatVersion);
  const std::string spec = model.spec().text();
  detail::put_u32(out, static_cast<std::uint32_t>(spec.size()));
  out += spec;
  const std::string rec = detail::record_text(model.record());
  detail::put_u32(out, static_cast<std::uint32_t>(rec.size()));
  out += rec;
  std::uint64_t count = 0;
  for (const Tensor& p : model.parameters()) count += p.size();
  detail::put_u64(out, count);
  for (const Tensor& p : model.parameters()) {
    for (float v : p.values()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline Classifier from_bytes(const std::string& bytes) {
  detail::Reader in(bytes);
  in.need(4, "magic");
  if (bytes.compare(0, 4, kModelMagic, 4) != 0) {
    throw ModelVersionError("model file: bad magic number (not a model file)");
  }
  in.uint(4, "magic");
  const auto version = in.uint(4, "version");
  if (version != kModelFormatVersion) {
    throw ModelVersionError("model file: unsupported format version " + std::to_string(version) +
                            " (expected " + std::to_string(kModelFormatVersion) + ")");
  }
  ArchitectureSpec spec;
  try {
    spec = ArchitectureSpec::parse(in.text("architecture"));
    spec.validate();
  } catch (const ConfigError& e) {
    throw ModelShapeError(std::string("model file: invalid architecture header: ") + e.what());
  }
  const TrainingRecord record = detail::parse_record(in.text("training record"));
  const std::uint64_t count = in.uint(8, "parameter count");
  const auto infos = spec.parameters();
  std::uint64_t expected = 0;
  for (const auto& i : infos) expected += element_count(i.shape);
  if (count != expected) {
    throw ModelShapeError("model file: header declares " + std::to_string(count) +
                          " parameters but architecture '" + spec.name + "' needs " +
                          std::to_string(expected));
  }
  in.need(count * 4, "parameter blob");
  if (in.remaining() != count * 4) {
    throw ModelShapeError("model file: " + std::to_string(in.remaining() - count * 4) +
                          " trailing bytes after parameter blob");
  }
  std::vector<Tensor> params;
  for (const auto& info : infos) {
    Tensor t(info.shape);
    for (float& v : t.values()) v = std::bit_cast<float>(static_cast<std::uint32_t>(in.uint(4, "parameter blob")));
    params.push_back(std::move(t));
  }
  return Classifier(std::move(spec), std::move(params), record);
}

inline void save(const Classifier& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  const std::string bytes = to_bytes(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing '" + path + "'");
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Classifier load(const std::string& path) {
  try {
    return from_bytes(read_file(path));
  } catch (const ModelVersionError& e) {
    throw ModelVersionError(path + ": " + e.what());
  } catch (const ModelTruncatedError& e) {
    throw ModelTruncatedError(path + ": " + e.what());
  } catch (const ModelShapeError& e) {
    throw ModelShapeError(path + ": " + e.what());
  }
}

}  // namespace metagrad::nn
