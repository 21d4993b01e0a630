#pragma once

#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "metagrad/core/error.hpp"
#include "metagrad/core/tensor.hpp"

namespace metagrad::nn {

enum class LayerKind { Normalize, Conv, Relu, MaxPool, GlobalAvgPool, Flatten, Dense };

/// One layer of a sequential classifier.
///   normalize      x / 127.5 - 1 (maps the 0..255 pixel domain to [-1, 1])
///   conv(F,k)      k x k same-padded convolution with F filters, plus bias
///   relu
///   maxpool(w)     non-overlapping w x w max pooling
///   gap            global average pooling [C,H,W] -> [C]
///   flatten        [C,H,W] -> [C*H*W]
///   dense(O)       fully connected layer with O outputs, plus bias
struct Layer {
  LayerKind kind = LayerKind::Relu;
  std::size_t units = 0;   // conv filters / dense outputs
  std::size_t kernel = 0;  // conv kernel side
  std::size_t window = 0;  // maxpool window

  static Layer normalize() { return {LayerKind::Normalize}; }
  static Layer conv(std::size_t filters, std::size_t k) { return {LayerKind::Conv, filters, k}; }
  static Layer relu() { return {LayerKind::Relu}; }
  static Layer maxpool(std::size_t w) { return {LayerKind::MaxPool, 0, 0, w}; }
  static Layer gap() { return {LayerKind::GlobalAvgPool}; }
  static Layer flatten() { return {LayerKind::Flatten}; }
  static Layer dense(std::size_t outputs) { return {LayerKind::Dense, outputs}; }

  std::string text() const {
    switch (kind) {
      case LayerKind::Normalize: return "normalize";
      case LayerKind::Conv:
        return "conv(" + std::to_string(units) + "," + std::to_string(kernel) + ")";
      case LayerKind::Relu: return "relu";
      case LayerKind::MaxPool: return "maxpool(" + std::to_string(window) + ")";
      case LayerKind::GlobalAvgPool: return "gap";
      case LayerKind::Flatten: return "flatten";
      case LayerKind::Dense: return "dense(" + std::to_string(units) + ")";
    }
    return "?";
  }

  bool operator==(const Layer&) const = default;
};

/// Shape of one parameter tensor, in declaration order.
struct ParamInfo {
  std::string name;
  Shape shape;
  std::size_t fan_in = 0;  // 0 for biases
};

struct ArchitectureSpec {
  std::string name;
  Shape input;  // [C,H,W]
  std::size_t classes = 0;
  std::vector<Layer> layers;

  /// Canonical single-line text, e.g.
  /// "name=a;input=3x16x16;classes=10;layers=normalize conv(8,3) relu gap dense(10)".
  std::string text() const {
    std::string s = "name=" + name + ";input=";
    for (std::size_t i = 0; i < input.size(); ++i) s += (i ? "x" : "") + std::to_string(input[i]);
    s += ";classes=" + std::to_string(classes) + ";layers=";
    for (std::size_t i = 0; i < layers.size(); ++i) s += (i ? " " : "") + layers[i].text();
    return s;
  }

  static ArchitectureSpec parse(const std::string& text);

  /// Walks the layer chain; throws ConfigError naming the offending layer.
  /// Returns the per-layer output shapes (without batch axis).
  std::vector<Shape> validate() const;

  std::vector<ParamInfo> parameters() const;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += element_count(p.shape);
    return n;
  }

  bool operator==(const ArchitectureSpec&) const = default;
};

namespace detail {

inline std::string layer_label(std::size_t i, const Layer& l) {
  return "layer " + std::to_string(i) + " '" + l.text() + "'";
}

inline std::size_t parse_size(const std::string& s, const std::string& context) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("architecture: bad number '" + s + "' in " + context);
  }
  return std::stoull(s);
}

inline Layer parse_layer(const std::string& tok) {
  const auto open = tok.find('(');
  const std::string head = tok.substr(0, open);
  std::vector<std::size_t> args;
  if (open != std::string::npos) {
    if (tok.back() != ')') throw ConfigError("architecture: malformed layer '" + tok + "'");
    std::stringstream ss(tok.substr(open + 1, tok.size() - open - 2));
    std::string a;
    while (std::getline(ss, a, ',')) args.push_back(parse_size(a, tok));
  }
  auto want = [&](std::size_t n) {
    if (args.size() != n) throw ConfigError("architecture: layer '" + tok + "' takes " + std::to_string(n) + " arguments");
  };
  if (head == "normalize") { want(0); return Layer::normalize(); }
  if (head == "relu") { want(0); return Layer::relu(); }
  if (head == "gap") { want(0); return Layer::gap(); }
  if (head == "flatten") { want(0); return Layer::flatten(); }
  if (head == "conv") { want(2); return Layer::conv(args[0], args[1]); }
  if (head == "maxpool") { want(1); return Layer::maxpool(args[0]); }
  if (head == "dense") { want(1); return Layer::dense(args[0]); }
  throw ConfigError("architecture: unknown layer '" + tok + "'");
}

}  // namespace detail

inline ArchitectureSpec ArchitectureSpec::parse(const std::string& text) {
  ArchitectureSpec spec;
  bool has_name = false, has_input = false, has_classes = false, has_layers = false;
  std::stringstream fields(text);
  std::string field;
  while (std::getline(fields, field, ';')) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw ConfigError("architecture: field without '=': " + field);
    const std::string key = field.substr(0, eq);
    const std::string val = field.substr(eq + 1);
    if (key == "name") {
      spec.name = val;
      has_name = true;
    } else if (key == "input") {
      std::stringstream ss(val);
      std::string d;
      while (std::getline(ss, d, 'x')) spec.input.push_back(detail::parse_size(d, "input"));
      has_input = true;
    } else if (key == "classes") {
      spec.classes = detail::parse_size(val, "classes");
      has_classes = true;
    } else if (key == "layers") {
      std::stringstream ss(val);
      std::string tok;
      while (ss >> tok) spec.layers.push_back(detail::parse_layer(tok));
      has_layers = true;
    } else {
      throw ConfigError("architecture: unknown field '" + key + "'");
    }
  }
  if (!has_name || !has_input || !has_classes || !has_layers) {
    throw ConfigError("architecture: missing field in '" + text + "'");
  }
  return spec;
}

inline std::vector<Shape> ArchitectureSpec::validate() const {
  if (input.size() != 3 || element_count(input) == 0) {
    throw ConfigError("architecture '" + name + "': input must be [C,H,W], got " + to_string(input));
  }
  if (classes < 2) throw ConfigError("architecture '" + name + "': need at least 2 classes");
  if (layers.empty()) throw ConfigError("architecture '" + name + "': no layers");
  std::vector<Shape> shapes;
  Shape cur = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    auto fail = [&](const std::string& why) {
      throw ConfigError("architecture '" + name + "': " + detail::layer_label(i, l) + ": " + why +
                        " (input shape " + to_string(cur) + ")");
    };
    switch (l.kind) {
      case LayerKind::Normalize:
      case LayerKind::Relu:
        break;
      case LayerKind::Conv:
        if (cur.size() != 3) fail("needs a [C,H,W] input");
        if (l.units == 0) fail("needs at least one filter");
        if (l.kernel == 0 || l.kernel % 2 == 0) fail("kernel side must be odd");
        cur = {l.units, cur[1], cur[2]};
        break;
      case LayerKind::MaxPool:
        if (cur.size() != 3) fail("needs a [C,H,W] input");
        if (l.window == 0 || l.window > cur[1] || l.window > cur[2]) fail("window larger than spatial extent");
        if (cur[1] % l.window || cur[2] % l.window) fail("window does not divide spatial extent");
        cur = {cur[0], cur[1] / l.window, cur[2] / l.window};
        break;
      case LayerKind::GlobalAvgPool:
        if (cur.size() != 3) fail("needs a [C,H,W] input");
        cur = {cur[0]};
        break;
      case LayerKind::Flatten:
        cur = {element_count(cur)};
        break;
      case LayerKind::Dense:
        if (cur.size() != 1) fail("needs a flat input; add 'flatten' or 'gap' first");
        if (l.units == 0) fail("needs at least one output");
        cur = {l.units};
        break;
    }
    shapes.push_back(cur);
  }
  if (cur.size() != 1 || cur[0] != classes) {
    throw ConfigError("architecture '" + name + "': " +
                      detail::layer_label(layers.size() - 1, layers.back()) + " emits " +
                      to_string(cur) + " but " + std::to_string(classes) + " logits are required");
  }
  return shapes;
}

inline std::vector<ParamInfo> ArchitectureSpec::parameters() const {
  validate();
  std::vector<ParamInfo> params;
  Shape cur = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    const std::string p = "layer" + std::to_string(i);
    if (l.kind == LayerKind::Conv) {
      const std::size_t fan_in = cur[0] * l.kernel * l.kernel;
      params.push_back({p + ".weight", {l.units, cur[0], l.kernel, l.kernel}, fan_in});
      params.push_back({p + ".bias", {l.units}, 0});
      cur = {l.units, cur[1], cur[2]};
    } else if (l.kind == LayerKind::Dense) {
      params.push_back({p + ".weight", {cur[0], l.units}, cur[0]});
      params.push_back({p + ".bias", {l.units}, 0});
      cur = {l.units};
    } else if (l.kind == LayerKind::MaxPool) {
      cur = {cur[0], cur[1] / l.window, cur[2] / l.window};
    } else if (l.kind == LayerKind::GlobalAvgPool) {
      cur = {cur[0]};
    } else if (l.kind == LayerKind::Flatten) {
      cur = {element_count(cur)};
    }
  }
  return params;
}

}  // namespace metagrad::nn
