// Checkpoint file: JSON manifest (name, shape, offset) + raw little-endian
// float32 arrays. Round-trips bit-exactly. Writes are atomic (tmp + rename).
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "semcom/layers.hpp"

namespace semcom::nn {

inline constexpr char kCheckpointMagic[8] = {'S', 'E', 'M', 'C', 'K', 'P', 'T', '1'};

namespace detail {

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void write_f32_le(std::vector<unsigned char>& out, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  out.push_back(static_cast<unsigned char>(u & 0xff));
  out.push_back(static_cast<unsigned char>((u >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>((u >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((u >> 24) & 0xff));
}

inline float read_f32_le(const unsigned char* p) {
  std::uint32_t u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                    (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

}  // namespace detail

template <typename Real>
void save_checkpoint(const std::string& path, const ParameterMap<Real>& params,
                     const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json manifest;
  manifest["format"] = 1;
  manifest["meta"] = meta;
  nlohmann::json tensors = nlohmann::json::object();
  std::vector<unsigned char> blob;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params) {
    nlohmann::json entry;
    entry["shape"] = t.shape();
    entry["offset"] = offset;
    entry["count"] = t.size();
    tensors[name] = entry;
    for (Real v : t.values()) detail::write_f32_le(blob, static_cast<float>(v));
    offset += 4 * t.size();
  }
  manifest["tensors"] = tensors;
  std::string json_text = manifest.dump();

  std::filesystem::path target(path);
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + tmp.string());
    os.write(kCheckpointMagic, 8);
    detail::write_u64_le(os, json_text.size());
    os.write(json_text.data(), static_cast<std::streamsize>(json_text.size()));
    detail::write_u64_le(os, blob.size());
    os.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!os) throw IoError("short write on checkpoint: " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

// Loads into an existing map: names and shapes must match exactly.
template <typename Real>
nlohmann::json load_checkpoint(const std::string& path, ParameterMap<Real>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw VersionError("not a checkpoint file: " + path);
  std::uint64_t json_size = detail::read_u64_le(is);
  std::string json_text(json_size, '\0');
  is.read(json_text.data(), static_cast<std::streamsize>(json_size));
  std::uint64_t blob_size = detail::read_u64_le(is);
  std::vector<unsigned char> blob(blob_size);
  is.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(blob_size));
  if (!is) throw IoError("truncated checkpoint: " + path);

  nlohmann::json manifest = nlohmann::json::parse(json_text);
  const auto& tensors = manifest.at("tensors");
  for (auto& [name, t] : params) {
    if (!tensors.contains(name))
      throw VersionError("checkpoint " + path + " is missing parameter " + name);
    const auto& entry = tensors.at(name);
    Shape shape = entry.at("shape").template get<Shape>();
    if (shape != t.shape())
      throw VersionError("checkpoint shape mismatch for " + name + ": file has " + shape_str(shape) +
                         ", model has " + shape_str(t.shape()));
    std::uint64_t off = entry.at("offset").template get<std::uint64_t>();
    std::uint64_t count = entry.at("count").template get<std::uint64_t>();
    if (off + 4 * count > blob.size()) throw VersionError("checkpoint blob out of range for " + name);
    auto& v = t.raw_values();
    for (std::size_t i = 0; i < count; ++i)
      v[i] = static_cast<Real>(detail::read_f32_le(&blob[off + 4 * i]));
  }
  for (auto it = tensors.begin(); it != tensors.end(); ++it)
    if (!params.count(it.key()))
      throw VersionError("checkpoint " + path + " has unknown parameter " + it.key());
  return manifest.at("meta");
}

}  // namespace semcom::nn
