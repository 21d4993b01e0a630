#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "metagrad/core/error.hpp"

namespace metagrad::eval {

/// One (method, model, setting) entry.
struct ResultRow {
  std::string run_id;
  std::string method;
  std::string mgaa;        // on | off | w/o-meta-test | w/o-meta-train
  std::string model;
  std::string model_role;  // white | black
  double epsilon = 0;
  std::size_t T = 0, K = 0, n = 0;
  double success_rate = 0;
  double mean_linf = 0, mean_l1 = 0, mean_l2 = 0;
  double wall_ms = 0;
  std::uint64_t seed = 0;
  std::size_t images = 0;
  std::optional<std::size_t> censored;
  std::optional<double> mean_l1_raw, mean_l2_raw, cosine;
};

inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols = {
      "run_id", "method", "mgaa", "model", "model_role", "epsilon", "T", "K", "n", "success_rate",
      "mean_linf", "mean_l1", "mean_l2", "wall_ms", "seed", "images", "censored", "mean_l1_raw", "mean_l2_raw",
      "cosine"};
  return cols;
}

inline constexpr const char* kNormComment =
    "# norms: mean_linf in 0-255 pixel units; mean_l1 and mean_l2 are per-image L1/L2 norms divided by the "
    "element count C*H*W, averaged over images; *_raw columns are the undivided norms";

struct ResultTable {
  std::vector<ResultRow> rows;

  void append(const ResultTable& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }

  /// Mean success rate over rows with the given role that satisfy `keep`.
  template <class Pred>
  double average(const std::string& role, Pred keep) const {
    double total = 0;
    std::size_t count = 0;
    for (const auto& r : rows) {
      if (r.model_role == role && keep(r)) {
        total += r.success_rate;
        ++count;
      }
    }
    return count ? total / static_cast<double>(count) : std::nan("");
  }
};

namespace detail {

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

template <class T>
T parse_number(const std::string& s, const std::string& column) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError("csv: column " + column + ": cannot parse '" + s + "'");
  }
  return v;
}

inline void check_field(const std::string& v) {
  if (v.find_first_of(",\n\r") != std::string::npos) throw ConfigError("csv: field contains a separator: " + v);
}

}  // namespace detail

inline std::string to_csv(const ResultTable& table) {
  using detail::fixed;
  std::string out = std::string(kNormComment) + "\n";
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
  out += "\n";
  for (const auto& r : table.rows) {
    for (const auto* f : {&r.run_id, &r.method, &r.mgaa, &r.model, &r.model_role}) detail::check_field(*f);
    const std::vector<std::string> fields = {
        r.run_id, r.method, r.mgaa, r.model, r.model_role, detail::shortest(r.epsilon), std::to_string(r.T),
        std::to_string(r.K), std::to_string(r.n), fixed(r.success_rate, 6), fixed(r.mean_linf, 6),
        fixed(r.mean_l1, 6), fixed(r.mean_l2, 6), fixed(r.wall_ms, 3), std::to_string(r.seed),
        std::to_string(r.images), r.censored ? std::to_string(*r.censored) : "",
        r.mean_l1_raw ? fixed(*r.mean_l1_raw, 6) : "", r.mean_l2_raw ? fixed(*r.mean_l2_raw, 6) : "",
        r.cosine ? fixed(*r.cosine, 6) : ""};
    for (std::size_t i = 0; i < fields.size(); ++i) out += (i ? "," : "") + fields[i];
    out += "\n";
  }
  return out;
}

inline ResultTable parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> header;
  ResultTable t;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto f = detail::split(line, ',');
    if (header.empty()) {
      header = f;
      if (header != csv_columns()) throw DataError("csv: unexpected header '" + line + "'");
      continue;
    }
    if (f.size() != header.size()) {
      throw DataError("csv: row has " + std::to_string(f.size()) + " fields, header has " +
                      std::to_string(header.size()));
    }
    using detail::parse_number;
    ResultRow r;
    r.run_id = f[0];
    r.method = f[1];
    r.mgaa = f[2];
    r.model = f[3];
    r.model_role = f[4];
    r.epsilon = parse_number<double>(f[5], "epsilon");
    r.T = parse_number<std::size_t>(f[6], "T");
    r.K = parse_number<std::size_t>(f[7], "K");
    r.n = parse_number<std::size_t>(f[8], "n");
    r.success_rate = parse_number<double>(f[9], "success_rate");
    r.mean_linf = parse_number<double>(f[10], "mean_linf");
    r.mean_l1 = parse_number<double>(f[11], "mean_l1");
    r.mean_l2 = parse_number<double>(f[12], "mean_l2");
    r.wall_ms = parse_number<double>(f[13], "wall_ms");
    r.seed = parse_number<std::uint64_t>(f[14], "seed");
    r.images = parse_number<std::size_t>(f[15], "images");
    if (!f[16].empty()) r.censored = parse_number<std::size_t>(f[16], "censored");
    if (!f[17].empty()) r.mean_l1_raw = parse_number<double>(f[17], "mean_l1_raw");
    if (!f[18].empty()) r.mean_l2_raw = parse_number<double>(f[18], "mean_l2_raw");
    if (!f[19].empty()) r.cosine = parse_number<double>(f[19], "cosine");
    t.rows.push_back(std::move(r));
  }
  if (header.empty()) throw DataError("csv: missing header");
  return t;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

inline void emit_csv(const ResultTable& table, const std::filesystem::path& path) { write_text(path, to_csv(table)); }

/// `<csv>.json` next to the CSV.
inline void emit_sidecar(const nlohmann::json& meta, const std::filesystem::path& csv_path) {
  write_text(csv_path.string() + ".json", meta.dump(2) + "\n");
}

}  // namespace metagrad::eval
