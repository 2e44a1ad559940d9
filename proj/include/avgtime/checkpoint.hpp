#pragma once

// Parameter checkpoints.
//
// Layout:  "AVGTCKPT" | u64 LE manifest byte length | manifest JSON | f64 LE payload
// The manifest holds a config echo and {"name", "shape", "offset"} per tensor,
// offsets counted in f64 elements from the start of the payload.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <unistd.h>

#include "avgtime/config.hpp"
#include "avgtime/model.hpp"

namespace avgtime {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'A', 'V', 'G', 'T', 'C', 'K', 'P', 'T'};

// Writes via a sibling temp file and rename, so readers never observe a
// partially written file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw std::runtime_error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

namespace detail {

inline void append_le64(std::string& out, std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap64(v);
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

inline std::uint64_t read_le64(const char* p) {
  std::uint64_t v;
  std::memcpy(&v, p, 8);
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap64(v);
  return v;
}

}  // namespace detail

struct CheckpointTensor {
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  Json config;  // echo written at save time
  std::vector<std::pair<std::string, CheckpointTensor>> tensors;
};

inline std::string encode_checkpoint(const ModelParams& params, const Json& config_echo) {
  Json manifest;
  manifest["format"] = 1;
  manifest["config"] = config_echo;
  Json entries = Json::array();
  std::uint64_t offset = 0;
  const auto named = params.named_parameters();
  for (const auto& [name, t] : named) {
    entries.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  manifest["tensors"] = entries;
  const std::string text = manifest.dump();

  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::append_le64(out, text.size());
  out += text;
  out.reserve(out.size() + offset * 8);
  for (const auto& [name, t] : named) {
    for (double v : t.data()) detail::append_le64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const Json& config_echo) {
  write_file_atomic(path, encode_checkpoint(params, config_echo));
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw CheckpointError("checkpoint: bad magic header");
  }
  const std::uint64_t manifest_len = detail::read_le64(bytes.data() + 8);
  if (manifest_len > bytes.size() - 16) throw CheckpointError("checkpoint: manifest length exceeds file size");
  Json manifest;
  try {
    manifest = Json::parse(bytes.substr(16, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: unreadable manifest: ") + e.what());
  }
  const std::size_t payload_start = 16 + manifest_len;
  const std::size_t payload_count = (bytes.size() - payload_start) / 8;
  if ((bytes.size() - payload_start) % 8 != 0) throw CheckpointError("checkpoint: truncated payload");

  Checkpoint ck;
  try {
    if (manifest.at("format").get<int>() != 1) throw CheckpointError("checkpoint: unsupported format version");
    ck.config = manifest.at("config");
    std::uint64_t expected = 0;
    for (const auto& e : manifest.at("tensors")) {
      CheckpointTensor t;
      t.shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      const std::size_t n = numel(t.shape);
      if (offset != expected || offset + n > payload_count) {
        throw CheckpointError("checkpoint: tensor " + e.at("name").get<std::string>() + " lies outside the payload");
      }
      t.values.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        t.values[i] = std::bit_cast<double>(detail::read_le64(bytes.data() + payload_start + (offset + i) * 8));
      }
      expected += n;
      ck.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
    if (expected != payload_count) throw CheckpointError("checkpoint: payload size does not match manifest");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed manifest: ") + e.what());
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

// Copies checkpoint values into `params`; names and shapes must match exactly.
inline void apply_checkpoint(const ModelParams& params, const Checkpoint& ck) {
  auto named = params.named_parameters();
  if (named.size() != ck.tensors.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(ck.tensors.size()) + " tensors, model expects " +
                          std::to_string(named.size()));
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& [name, saved] = ck.tensors[i];
    if (name != named[i].first || saved.shape != named[i].second.shape()) {
      throw CheckpointError("checkpoint tensor " + name + " " + to_string(saved.shape) + " does not match model tensor " +
                            named[i].first + " " + to_string(named[i].second.shape()));
    }
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto dst = named[i].second.mutable_data();
    std::copy(ck.tensors[i].second.values.begin(), ck.tensors[i].second.values.end(), dst.begin());
  }
}

}  // namespace avgtime
