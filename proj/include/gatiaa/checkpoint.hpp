#pragma once

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gatiaa/binary_io.hpp"
#include "gatiaa/model.hpp"

namespace gatiaa {

// Checkpoint layout (little-endian):
//   "GATCKPT1" | u32 textLen | text | u32 tensorCount
//   | per tensor: u32 nameLen | name | u32 rank | rank x u32 dims | f32 data
// `text` holds sorted key=value lines: the model spec (model.*) followed by
// any metadata (checkpoint.*, optim.*).
inline constexpr std::string_view kCheckpointMagic = "GATCKPT1";

struct Checkpoint {
  ModelSpec spec;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

inline std::vector<std::uint8_t> checkpoint_encode(const Checkpoint& ck) {
  std::ostringstream text;
  for (const auto& [k, v] : ck.spec.to_map()) text << k << '=' << v << '\n';
  for (const auto& [k, v] : ck.meta) text << k << '=' << v << '\n';
  const std::string block = text.str();

  io::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(static_cast<std::uint32_t>(block.size()));
  w.bytes(block);
  w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data()) w.f32(v);
  }
  return w.buffer();
}

inline Checkpoint checkpoint_decode(std::vector<std::uint8_t> bytes) {
  io::ByteReader r(std::move(bytes));
  if (r.size() < kCheckpointMagic.size() || r.bytes(kCheckpointMagic.size(), "magic") != kCheckpointMagic)
    throw FormatError("bad magic, expected \"GATCKPT1\"", 0);
  const std::uint32_t text_len = r.u32("text length");
  const std::size_t text_at = r.offset();
  const std::string block = r.bytes(text_len, "spec text");

  Checkpoint ck;
  std::istringstream lines(block);
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("spec line without '=': " + line, text_at);
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    try {
      if (!ck.spec.set(key, value)) ck.meta[key] = value;
    } catch (const ConfigError& e) {
      throw FormatError(std::string("invalid spec entry: ") + e.what(), text_at);
    }
  }
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32("tensor name length");
    std::string name = r.bytes(name_len, "tensor name");
    const std::uint32_t rank = r.u32("tensor rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32("tensor shape"));
    const std::size_t n = shape_size(shape);
    r.need(n * 4, "tensor '" + name + "' data");
    std::vector<float> data(n);
    for (auto& v : data) v = r.f32("tensor data");
    ck.tensors.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(data)));
  }
  r.expect_end();
  return ck;
}

inline void checkpoint_save(const Checkpoint& ck, const std::filesystem::path& path) {
  io::write_file(path, checkpoint_encode(ck));
}

inline Checkpoint checkpoint_load(const std::filesystem::path& path) {
  try {
    return checkpoint_decode(io::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.detail(), e.offset());
  }
}

template <typename T>
Checkpoint make_checkpoint(Model<T>& model, std::map<std::string, std::string> meta = {}) {
  Checkpoint ck;
  ck.spec = model.spec();
  ck.meta = std::move(meta);
  for (auto* p : model.parameters()) ck.tensors.emplace_back(p->name, p->value.template cast<float>());
  for (auto& [name, t] : model.buffers()) ck.tensors.emplace_back(name, t->template cast<float>());
  return ck;
}

// Rebuilds the model described by the checkpoint and loads every parameter
// and buffer by name.
template <typename T>
Model<T> model_from_checkpoint(const Checkpoint& ck) {
  Model<T> model(ck.spec, 0);
  auto load = [&](const std::string& name, Tensor<T>& dst) {
    const Tensor<float>* src = ck.find(name);
    if (!src) throw FormatError("checkpoint is missing tensor '" + name + "'", 0);
    if (src->shape() != dst.shape())
      throw ShapeError("checkpoint tensor '" + name + "'", src->shape(), dst.shape());
    dst = src->template cast<T>();
  };
  for (auto* p : model.parameters()) {
    load(p->name, p->value);
    p->zero_grad();
  }
  for (auto& [name, t] : model.buffers()) load(name, *t);
  return model;
}

}  // namespace gatiaa
