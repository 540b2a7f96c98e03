// Checkpoint files: a text manifest followed by little-endian tensor blobs.
//
//   clap-checkpoint 1
//   dtype f32
//   config.<key> = <value>      model configuration
//   state.<key> = <value>       training state and other metadata
//   class.<i> = <name>
//   tensor <name> <offset> <extents...>
//   data <bytes>
//   <blobs>
//
// Offsets are relative to the first blob byte. Parameter tensors use their
// store names; optimizer velocities are stored as "velocity.<name>".
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "clap/config.hpp"
#include "clap/errors.hpp"
#include "clap/model.hpp"
#include "clap/tensor.hpp"

namespace clap {

inline const std::string kCheckpointMagic = "clap-checkpoint 1";

template <typename T>
struct CheckpointContents {
  ModelConfig config;
  KeyValues state;
  std::vector<std::string> class_names;
  std::vector<std::pair<std::string, const Tensor<T>*>> tensors;
};

template <typename T>
std::string encode_checkpoint(const Model<T>& model, const std::vector<Tensor<T>>* velocity, const KeyValues& state,
                              const std::vector<std::string>& class_names) {
  const auto& store = model.parameters();
  std::vector<std::pair<std::string, const Tensor<T>*>> tensors;
  for (const auto& p : store) tensors.emplace_back(p.name, &p.value);
  if (velocity && !velocity->empty()) {
    if (velocity->size() != store.size()) throw ShapeMismatch("velocity count does not match parameters");
    for (std::size_t i = 0; i < store.size(); ++i) {
      if (store[i].trainable && (*velocity)[i].size() > 0) tensors.emplace_back("velocity." + store[i].name, &(*velocity)[i]);
    }
  }
  KeyValues kv;
  kv.merge("config", model.config().to_kv());
  kv.merge("state", state);
  for (std::size_t i = 0; i < class_names.size(); ++i) kv.set("class." + std::to_string(i), class_names[i]);

  std::ostringstream head;
  head << kCheckpointMagic << '\n' << "dtype " << dtype_name<T>() << '\n' << kv.to_text();
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    head << "tensor " << name << ' ' << offset;
    for (auto e : t->shape()) head << ' ' << e;
    head << '\n';
    offset += t->size() * sizeof(T);
  }
  head << "data " << offset << '\n';
  for (const auto& [name, t] : tensors) write_payload(head, *t);
  return head.str();
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model, const std::vector<Tensor<T>>* velocity,
                     const KeyValues& state, const std::vector<std::string>& class_names = {}) {
  const std::string bytes = encode_checkpoint(model, velocity, state, class_names);
  // Write then rename so a crash never leaves a half-written checkpoint.
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidConfig("cannot write checkpoint '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InvalidConfig("failed writing checkpoint '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
struct LoadedCheckpoint {
  Model<T> model;
  std::vector<Tensor<T>> velocity;  // aligned with model.parameters(); empty if absent
  KeyValues state;
  std::vector<std::string> class_names;
};

template <typename T>
LoadedCheckpoint<T> decode_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&](std::string& line) {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw CorruptCheckpoint("truncated manifest");
    line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
  };
  std::string line;
  next_line(line);
  if (line != kCheckpointMagic) throw CorruptCheckpoint("unknown format or version '" + line.substr(0, 40) + "'");
  next_line(line);
  if (line != std::string("dtype ") + dtype_name<T>()) {
    throw CorruptCheckpoint("dtype mismatch: file has '" + line + "', expected " + dtype_name<T>());
  }

  struct Entry {
    std::string name;
    std::size_t offset;
    Shape shape;
  };
  std::vector<Entry> entries;
  std::string kv_text;
  std::size_t data_bytes = 0;
  for (;;) {
    next_line(line);
    if (line.rfind("tensor ", 0) == 0) {
      std::istringstream ls(line.substr(7));
      Entry e;
      if (!(ls >> e.name >> e.offset)) throw CorruptCheckpoint("malformed tensor line '" + line + "'");
      std::size_t d;
      while (ls >> d) e.shape.push_back(d);
      if (!ls.eof() || e.shape.empty()) throw CorruptCheckpoint("malformed tensor line '" + line + "'");
      entries.push_back(std::move(e));
    } else if (line.rfind("data ", 0) == 0) {
      std::istringstream ls(line.substr(5));
      if (!(ls >> data_bytes)) throw CorruptCheckpoint("malformed data line");
      break;
    } else {
      kv_text += line + "\n";
    }
  }
  if (bytes.size() - pos != data_bytes) {
    throw CorruptCheckpoint("payload is " + std::to_string(bytes.size() - pos) + " bytes, manifest declares " +
                            std::to_string(data_bytes));
  }

  KeyValues kv;
  ModelConfig config;
  try {
    kv = KeyValues::parse(kv_text);
    config = ModelConfig::from_kv(kv.section("config"));
    config.validate();
  } catch (const InvalidConfig& e) {
    throw CorruptCheckpoint(std::string("bad manifest: ") + e.what());
  }
  LoadedCheckpoint<T> out{Model<T>(config), {}, kv.section("state"), {}};
  const KeyValues classes = kv.section("class");
  for (std::size_t i = 0; classes.contains(std::to_string(i)); ++i) out.class_names.push_back(classes.get(std::to_string(i)));

  std::map<std::string, const Entry*> by_name;
  std::size_t expected_offset = 0;
  for (const auto& e : entries) {
    if (e.offset != expected_offset) throw CorruptCheckpoint("tensor '" + e.name + "' has an unexpected offset");
    expected_offset += element_count(e.shape) * sizeof(T);
    if (!by_name.emplace(e.name, &e).second) throw CorruptCheckpoint("duplicate tensor '" + e.name + "'");
  }
  if (expected_offset != data_bytes) throw CorruptCheckpoint("tensor extents do not cover the payload");

  auto read_tensor = [&](const Entry& e) {
    std::istringstream in(bytes.substr(pos + e.offset, element_count(e.shape) * sizeof(T)));
    return read_payload<T, CorruptCheckpoint>(in, dtype_name<T>(), e.shape);
  };
  auto& store = out.model.parameters();
  bool any_velocity = false;
  out.velocity.resize(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto it = by_name.find(store[i].name);
    if (it == by_name.end()) throw CorruptCheckpoint("missing tensor '" + store[i].name + "'");
    if (it->second->shape != store[i].value.shape()) {
      throw CorruptCheckpoint("tensor '" + store[i].name + "' has shape " + to_string(it->second->shape) +
                              ", model expects " + to_string(store[i].value.shape()));
    }
    store[i].value = read_tensor(*it->second);
    by_name.erase(it);
    auto v = by_name.find("velocity." + store[i].name);
    if (v != by_name.end()) {
      if (v->second->shape != store[i].value.shape()) throw CorruptCheckpoint("velocity shape mismatch for " + store[i].name);
      out.velocity[i] = read_tensor(*v->second);
      any_velocity = true;
      by_name.erase(v);
    }
  }
  if (!by_name.empty()) throw CorruptCheckpoint("unexpected tensor '" + by_name.begin()->first + "'");
  if (!any_velocity) out.velocity.clear();
  return out;
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptCheckpoint("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint<T>(ss.str());
}

}  // namespace clap
