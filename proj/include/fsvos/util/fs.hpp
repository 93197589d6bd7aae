#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fsvos {

namespace fs = std::filesystem;

inline std::vector<uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path.string());
  in.seekg(0, std::ios::end);
  std::streamoff n = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<uint8_t> bytes(static_cast<size_t>(n));
  if (n > 0) in.read(reinterpret_cast<char*>(bytes.data()), n);
  if (!in) throw std::runtime_error("short read: " + path.string());
  return bytes;
}

inline std::vector<uint8_t> read_file_prefix(const fs::path& path, size_t max_bytes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path.string());
  std::vector<uint8_t> bytes(max_bytes);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(max_bytes));
  bytes.resize(static_cast<size_t>(in.gcount()));
  return bytes;
}

inline std::string read_file_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file_bytes(const fs::path& path, const void* data, size_t n) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for write: " + path.string());
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw std::runtime_error("short write: " + path.string());
}

inline void write_file_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, text.data(), text.size());
}

// Writes to a temp sibling then renames, so readers never observe a
// half-written file.
inline void write_file_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  write_file_text(tmp, text);
  fs::rename(tmp, path);
}

// Scratch directory that promotes itself to `target` on commit(); partial
// outputs are discarded if commit is never reached.
class StagedDir {
 public:
  explicit StagedDir(fs::path target) : target_(std::move(target)) {
    stage_ = target_;
    stage_ += ".staging";
    std::error_code ec;
    fs::remove_all(stage_, ec);
    fs::create_directories(stage_);
  }
  ~StagedDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(stage_, ec);
    }
  }
  StagedDir(const StagedDir&) = delete;
  StagedDir& operator=(const StagedDir&) = delete;

  const fs::path& path() const { return stage_; }

  void commit() {
    std::error_code ec;
    fs::remove_all(target_, ec);
    if (target_.has_parent_path()) fs::create_directories(target_.parent_path());
    fs::rename(stage_, target_);
    committed_ = true;
  }

 private:
  fs::path target_;
  fs::path stage_;
  bool committed_ = false;
};

inline bool dir_nonempty(const fs::path& p) {
  return fs::exists(p) && fs::is_directory(p) && !fs::is_empty(p);
}

// Frame/mask files are named 00000.png, 00001.png, ...
inline std::string frame_filename(int t) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d.png", t);
  return buf;
}

}  // namespace fsvos
