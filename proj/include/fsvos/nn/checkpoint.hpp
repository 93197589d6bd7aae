#pragma once

// Checkpoint container: "FSVS" magic, format version, a JSON header (config
// echo, step counter, tensor manifest), then raw little-endian blobs.

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsvos/nn/layers.hpp"
#include "fsvos/util/fs.hpp"

namespace fsvos::nn {

inline constexpr uint32_t kCheckpointVersion = 1;

template <typename S>
struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  nlohmann::json config;  // free-form: model/training config echo
  int64_t step = 0;
  std::vector<std::pair<std::string, std::vector<S>>> tensors;
  std::vector<std::pair<std::string, std::vector<double>>> opt_state;

  const std::vector<S>* find(const std::string& name) const {
    for (const auto& [n, v] : tensors)
      if (n == name) return &v;
    return nullptr;
  }
};

template <typename S>
inline Checkpoint<S> snapshot(const ParamList<S>& params, const nlohmann::json& config,
                              int64_t step) {
  Checkpoint<S> ck;
  ck.config = config;
  ck.step = step;
  for (const auto& [name, t] : params) ck.tensors.emplace_back(name, t.vec());
  return ck;
}

template <typename S>
inline void restore(const Checkpoint<S>& ck, ParamList<S>& params) {
  for (auto& [name, t] : params) {
    const std::vector<S>* v = ck.find(name);
    if (!v) throw std::runtime_error("checkpoint: missing tensor " + name);
    if (v->size() != t.vec().size())
      throw std::runtime_error("checkpoint: size mismatch for " + name);
    t.vec() = *v;
  }
}

namespace detail {

inline void write_u64(std::ostream& out, uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline uint64_t read_u64(std::istream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace detail

template <typename S>
inline void save_checkpoint(const Checkpoint<S>& ck, const fs::path& path) {
  nlohmann::json header;
  header["version"] = ck.version;
  header["scalar"] = sizeof(S) == 4 ? "f32" : "f64";
  header["step"] = ck.step;
  header["config"] = ck.config;
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& [name, v] : ck.tensors)
    manifest.push_back({{"name", name}, {"count", v.size()}});
  header["tensors"] = manifest;
  nlohmann::json opt = nlohmann::json::array();
  for (const auto& [name, v] : ck.opt_state)
    opt.push_back({{"name", name}, {"count", v.size()}});
  header["opt_state"] = opt;

  std::string hs = header.dump();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
    out.write("FSVS", 4);
    detail::write_u64(out, hs.size());
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, v] : ck.tensors)
      out.write(reinterpret_cast<const char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(S)));
    for (const auto& [name, v] : ck.opt_state)
      out.write(reinterpret_cast<const char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!out) throw std::runtime_error("short checkpoint write: " + path.string());
  }
  fs::rename(tmp, path);
}

template <typename S>
inline Checkpoint<S> load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "FSVS", 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path.string());
  uint64_t hlen = detail::read_u64(in);
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  nlohmann::json header = nlohmann::json::parse(hs);

  Checkpoint<S> ck;
  ck.version = header.at("version").get<uint32_t>();
  if (ck.version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path.string());
  std::string scalar = header.at("scalar").get<std::string>();
  if (scalar != (sizeof(S) == 4 ? "f32" : "f64"))
    throw std::runtime_error("checkpoint scalar type mismatch: file has " + scalar);
  ck.step = header.at("step").get<int64_t>();
  ck.config = header.at("config");
  for (const auto& e : header.at("tensors")) {
    std::vector<S> v(e.at("count").get<size_t>());
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(S)));
    ck.tensors.emplace_back(e.at("name").get<std::string>(), std::move(v));
  }
  for (const auto& e : header.at("opt_state")) {
    std::vector<double> v(e.at("count").get<size_t>());
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    ck.opt_state.emplace_back(e.at("name").get<std::string>(), std::move(v));
  }
  if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
  return ck;
}

}  // namespace fsvos::nn
