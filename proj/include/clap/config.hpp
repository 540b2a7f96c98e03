// Model configuration and the "key = value" text format used to echo
// configurations into checkpoints and run directories.
#pragma once

#include <charconv>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "clap/errors.hpp"
#include "clap/layers.hpp"
#include "clap/sepconv.hpp"

namespace clap {

// Ordered key/value pairs; lines are "key = value".
class KeyValues {
 public:
  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  void set(const std::string& key, const char* value) { entries_[key] = value; }
  template <typename Num>
    requires std::is_arithmetic_v<Num>
  void set(const std::string& key, Num value) {
    if constexpr (std::is_floating_point_v<Num>) {
      char buf[64];
      auto r = std::to_chars(buf, buf + sizeof buf, value);  // shortest round-trip form
      entries_[key] = std::string(buf, r.ptr);
    } else {
      entries_[key] = std::to_string(value);
    }
  }

  bool contains(const std::string& key) const { return entries_.contains(key); }

  const std::string& get(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw InvalidConfig("missing key '" + key + "'");
    return it->second;
  }

  template <typename Num>
  Num get_number(const std::string& key) const {
    const std::string& s = get(key);
    Num v{};
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
      throw InvalidConfig("key '" + key + "' has non-numeric value '" + s + "'");
    }
    return v;
  }

  template <typename Num>
  Num get_number(const std::string& key, Num fallback) const {
    return contains(key) ? get_number<Num>(key) : fallback;
  }

  const std::map<std::string, std::string>& entries() const { return entries_; }

  // Copies entries under `prefix.` into a fresh KeyValues without the prefix.
  KeyValues section(const std::string& prefix) const {
    KeyValues out;
    const std::string p = prefix + ".";
    for (const auto& [k, v] : entries_)
      if (k.rfind(p, 0) == 0) out.entries_[k.substr(p.size())] = v;
    return out;
  }

  void merge(const std::string& prefix, const KeyValues& other) {
    for (const auto& [k, v] : other.entries_) entries_[prefix + "." + k] = v;
  }

  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
    return out;
  }

  static KeyValues parse(const std::string& text) {
    KeyValues kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) throw InvalidConfig("malformed config line '" + line + "'");
      kv.entries_[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return kv;
  }

  bool operator==(const KeyValues&) const = default;

 private:
  std::map<std::string, std::string> entries_;
};

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto comma = s.find(',', pos);
    const std::string tok = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    std::size_t v = 0;
    auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || r.ec != std::errc() || r.ptr != tok.data() + tok.size()) {
      throw InvalidConfig("bad integer list '" + s + "'");
    }
    out.push_back(v);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------

enum class Variant { encoder_only, decoder_i, full };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::encoder_only: return "encoder_only";
    case Variant::decoder_i: return "decoder_i";
    case Variant::full: return "full";
  }
  return "full";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "encoder_only") return Variant::encoder_only;
  if (s == "decoder_i") return Variant::decoder_i;
  if (s == "full") return Variant::full;
  throw InvalidConfig("unknown variant '" + s + "'");
}

inline const char* to_string(BnOrder o) { return o == BnOrder::literal ? "literal" : "conventional"; }

inline BnOrder parse_bn_order(const std::string& s) {
  if (s == "literal") return BnOrder::literal;
  if (s == "conventional") return BnOrder::conventional;
  throw InvalidConfig("unknown bn order '" + s + "'");
}

struct ModelConfig {
  std::size_t input_height = 224;
  std::size_t input_width = 224;
  std::size_t input_channels = 3;
  std::vector<std::size_t> encoder_widths{32, 64, 128, 256, 512, 1024};
  std::size_t encoder_kernel = 3;
  std::size_t decoder_kernel_a = 3;
  std::size_t decoder_kernel_b = 5;
  std::size_t decoder_width = 1024;
  std::size_t num_classes = 22;
  Variant variant = Variant::full;
  double dropout_rate = 0.2;
  BnOrder bn_order = BnOrder::literal;
  std::uint64_t seed = 0;

  std::size_t decoder_stages() const {
    switch (variant) {
      case Variant::encoder_only: return 0;
      case Variant::decoder_i: return 1;
      case Variant::full: return 2;
    }
    return 2;
  }

  // Spatial extent after every encoder pooling stage (ceil semantics).
  std::size_t bottleneck_height() const { return halve(input_height, encoder_widths.size()); }
  std::size_t bottleneck_width() const { return halve(input_width, encoder_widths.size()); }

  static std::size_t halve(std::size_t extent, std::size_t times) {
    for (std::size_t i = 0; i < times; ++i) extent = pooled_extent(extent, 2, 2, true);
    return extent;
  }

  void validate() const {
    if (encoder_widths.empty()) throw InvalidConfig("encoder_widths must not be empty");
    for (std::size_t i = 0; i < encoder_widths.size(); ++i) {
      if (encoder_widths[i] == 0) throw InvalidConfig("encoder widths must be positive");
      if (i && encoder_widths[i] <= encoder_widths[i - 1]) {
        throw InvalidConfig("encoder_widths must be strictly increasing");
      }
    }
    if (input_height < 2 || input_width < 2 || input_channels == 0) {
      throw InvalidConfig("input extents too small");
    }
    // Each pooling stage needs at least two cells to shrink, otherwise the
    // map has collapsed to a single cell and further stages are meaningless.
    std::size_t h = input_height, w = input_width;
    for (std::size_t i = 0; i < encoder_widths.size(); ++i) {
      if (h < 2 || w < 2) {
        throw InvalidConfig("input " + std::to_string(input_height) + "x" +
                            std::to_string(input_width) + " collapses before encoder stage " +
                            std::to_string(i));
      }
      h = pooled_extent(h, 2, 2, true);
      w = pooled_extent(w, 2, 2, true);
    }
    for (auto k : {encoder_kernel, decoder_kernel_a, decoder_kernel_b}) {
      if (k == 0 || k % 2 == 0) throw InvalidConfig("kernel sizes must be odd");
    }
    if (decoder_width == 0) throw InvalidConfig("decoder_width must be positive");
    if (num_classes < 2) throw InvalidConfig("num_classes must be at least 2");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
      throw InvalidConfig("dropout rate must lie in [0, 1)");
    }
  }

  KeyValues to_kv() const {
    KeyValues kv;
    kv.set("input_height", input_height);
    kv.set("input_width", input_width);
    kv.set("input_channels", input_channels);
    kv.set("encoder_widths", join_sizes(encoder_widths));
    kv.set("encoder_kernel", encoder_kernel);
    kv.set("decoder_kernel_a", decoder_kernel_a);
    kv.set("decoder_kernel_b", decoder_kernel_b);
    kv.set("decoder_width", decoder_width);
    kv.set("num_classes", num_classes);
    kv.set("variant", to_string(variant));
    kv.set("dropout_rate", dropout_rate);
    kv.set("bn_order", to_string(bn_order));
    kv.set("seed", seed);
    return kv;
  }

  static ModelConfig from_kv(const KeyValues& kv) {
    ModelConfig c;
    c.input_height = kv.get_number<std::size_t>("input_height");
    c.input_width = kv.get_number<std::size_t>("input_width");
    c.input_channels = kv.get_number<std::size_t>("input_channels");
    c.encoder_widths = parse_sizes(kv.get("encoder_widths"));
    c.encoder_kernel = kv.get_number<std::size_t>("encoder_kernel");
    c.decoder_kernel_a = kv.get_number<std::size_t>("decoder_kernel_a");
    c.decoder_kernel_b = kv.get_number<std::size_t>("decoder_kernel_b");
    c.decoder_width = kv.get_number<std::size_t>("decoder_width");
    c.num_classes = kv.get_number<std::size_t>("num_classes");
    c.variant = parse_variant(kv.get("variant"));
    c.dropout_rate = kv.get_number<double>("dropout_rate");
    c.bn_order = parse_bn_order(kv.get("bn_order"));
    c.seed = kv.get_number<std::uint64_t>("seed");
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace clap
