#pragma once

#include <cstdint>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gatiaa/binary_io.hpp"
#include "gatiaa/graph.hpp"

namespace gatiaa {

// AFG layout (little-endian):
//   "AFG1" | u32 D | u32 gridW | u32 gridH | u8 labelFlag
//   | labelFlag ? 10 x f32 histogram : nothing
//   | gridW * gridH * D x f32 node features, node-major, row-major grid order
// The graph id is not stored; readers take it from the manifest or file stem.
inline constexpr std::string_view kAfgMagic = "AFG1";

inline std::vector<std::uint8_t> afg_encode(const FeatureGraph& g) {
  g.validate();
  io::ByteWriter w;
  w.bytes(kAfgMagic);
  w.u32(static_cast<std::uint32_t>(g.dim()));
  w.u32(static_cast<std::uint32_t>(g.grid_w));
  w.u32(static_cast<std::uint32_t>(g.grid_h));
  w.u8(g.label ? 1 : 0);
  if (g.label)
    for (float b : g.label->bins()) w.f32(b);
  for (float v : g.nodes.data()) w.f32(v);
  return w.buffer();
}

inline FeatureGraph afg_decode(std::vector<std::uint8_t> bytes, std::string id = {}) {
  io::ByteReader r(std::move(bytes));
  if (r.size() < kAfgMagic.size() || r.bytes(kAfgMagic.size(), "magic") != kAfgMagic)
    throw FormatError("bad magic, expected \"AFG1\"", 0);
  const std::uint32_t d = r.u32("header");
  const std::uint32_t gw = r.u32("header");
  const std::uint32_t gh = r.u32("header");
  if (d == 0 || gw == 0 || gh == 0) throw FormatError("zero dimension in header", r.offset());
  const std::uint8_t flag = r.u8("header");
  if (flag > 1) throw FormatError("label flag must be 0 or 1", r.offset() - 1);

  FeatureGraph g;
  g.id = std::move(id);
  g.grid_w = gw;
  g.grid_h = gh;
  if (flag) {
    ScoreHistogram::Bins bins{};
    const std::size_t at = r.offset();
    for (auto& b : bins) b = r.f32("label histogram");
    try {
      g.label = ScoreHistogram::from_bins(bins);
    } catch (const ValueError& e) {
      throw FormatError(std::string("invalid label: ") + e.what(), at);
    }
  }
  const std::size_t n = static_cast<std::size_t>(gw) * gh * d;
  r.need(n * 4, "node payload");
  std::vector<float> values(n);
  for (auto& v : values) {
    const std::size_t at = r.offset();
    v = r.f32("node payload");
    if (!std::isfinite(v)) throw FormatError("non-finite node value", at);
  }
  r.expect_end();
  g.nodes = Tensor<float>({static_cast<std::size_t>(gw) * gh, d}, std::move(values));
  return g;
}

inline void afg_write(const FeatureGraph& g, const std::filesystem::path& path) {
  io::write_file(path, afg_encode(g));
}

inline FeatureGraph afg_read(const std::filesystem::path& path, std::string id = {}) {
  auto data = io::read_file(path);
  if (id.empty()) id = path.stem().string();
  try {
    return afg_decode(std::move(data), std::move(id));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.detail(), e.offset());
  }
}

// ---------------------------------------------------------------------------
// Dataset manifest: CSV with header `id,path,split`, split in {train,val,test}.
// Relative paths resolve against the manifest's directory.

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ValueError("manifest: unknown split '" + s + "'");
}

// 80/10/10 assignment from a 64-bit FNV-1a hash of the id, so a graph keeps
// its split regardless of how many others are generated alongside it.
inline Split split_for_id(std::string_view id) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : id) {
    h ^= c;
    h *= 1099511628211ull;
  }
  const std::uint64_t bucket = h % 100;
  return bucket < 80 ? Split::train : bucket < 90 ? Split::val : Split::test;
}

struct ManifestEntry {
  std::string id;
  std::filesystem::path path;
  Split split = Split::train;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

inline void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "id,path,split\n";
  for (const auto& e : entries) out << e.id << ',' << e.path.generic_string() << ',' << to_string(e.split) << '\n';
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw ValueError("manifest '" + path.string() + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "id,path,split") throw ValueError("manifest '" + path.string() + "': expected header id,path,split");
  std::vector<ManifestEntry> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 3)
      throw ValueError("manifest '" + path.string() + "' line " + std::to_string(lineno) + ": expected 3 fields");
    ManifestEntry e;
    e.id = fields[0];
    e.path = fields[1];
    if (e.path.is_relative()) e.path = path.parent_path() / e.path;
    e.split = parse_split(fields[2]);
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<FeatureGraph> load_split(const std::vector<ManifestEntry>& entries, Split split) {
  std::vector<FeatureGraph> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(afg_read(e.path, e.id));
  return out;
}

}  // namespace gatiaa
