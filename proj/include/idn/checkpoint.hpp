#pragma once

// Checkpoint container.
//
//   IDNCKPT\n
//   version=1\n
//   <config key=value lines>\n
//   step=<updates applied>\n
//   params=<count>\n
//   end\n
//   then <count> blobs, each:
//     u32 name length, name bytes (UTF-8),
//     u64 rows, u64 cols,
//     rows * cols IEEE-754 binary64 values, row-major
//   all integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include "idn/kv.hpp"
#include "idn/network.hpp"

namespace idn {

inline constexpr std::string_view kCheckpointMagic = "IDNCKPT";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 8);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 4);
}

inline std::uint64_t get_uint(std::istream& is, int bytes, std::string_view what) {
  unsigned char b[8] = {};
  is.read(reinterpret_cast<char*>(b), bytes);
  if (is.gcount() != bytes) throw CheckpointError("checkpoint truncated while reading " + std::string(what));
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Model& m) {
  os << kCheckpointMagic << '\n' << "version=" << kCheckpointVersion << '\n';
  for (const auto& [k, v] : m.config.to_kv()) os << k << '=' << v << '\n';
  const auto views = m.param_views();
  os << "step=" << m.step << '\n' << "params=" << views.size() << '\n' << "end\n";
  for (const auto& v : views) {
    detail::put_u32(os, static_cast<std::uint32_t>(v.name.size()));
    os.write(v.name.data(), static_cast<std::streamsize>(v.name.size()));
    detail::put_u64(os, v.rows);
    detail::put_u64(os, v.cols);
    for (double x : v.values) detail::put_u64(os, std::bit_cast<std::uint64_t>(x));
  }
}

inline Model read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic) {
    throw CheckpointError("not a checkpoint (missing " + std::string(kCheckpointMagic) + " header)");
  }
  std::vector<kv::Entry> header;
  try {
    header = kv::parse(is, "checkpoint header", "end");
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  IdnConfig cfg;
  std::optional<int> version;
  std::optional<std::uint64_t> step, count;
  for (const auto& e : header) {
    try {
      if (e.key == "version") version = static_cast<int>(kv::parse_size(e.key, e.value));
      else if (e.key == "step") step = kv::parse_u64(e.key, e.value);
      else if (e.key == "params") count = kv::parse_u64(e.key, e.value);
      else if (!cfg.set(e.key, e.value)) throw CheckpointError("unknown checkpoint key '" + e.key + "'");
    } catch (const ConfigError& err) {
      throw CheckpointError(std::string("corrupt checkpoint header: ") + err.what());
    }
  }
  if (!version) throw CheckpointError("checkpoint has no version");
  if (*version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(*version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  if (!step || !count) throw CheckpointError("checkpoint header lacks step or params");

  Model m;
  try {
    m = Model::shaped(cfg);
  } catch (const ConfigError& err) {
    throw CheckpointError(std::string("checkpoint config invalid: ") + err.what());
  }
  m.step = *step;
  auto views = m.param_views();
  if (*count != views.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(*count) + " matrices, config implies " +
                          std::to_string(views.size()));
  }
  for (auto& v : views) {
    const auto len = detail::get_uint(is, 4, "name length");
    if (len > 256) throw CheckpointError("corrupt checkpoint: implausible name length");
    std::string name(len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(len));
    if (static_cast<std::uint64_t>(is.gcount()) != len) throw CheckpointError("checkpoint truncated in a name");
    if (name != v.name) {
      throw CheckpointError("checkpoint matrix '" + name + "' where '" + std::string(v.name) +
                            "' was expected");
    }
    const auto rows = detail::get_uint(is, 8, name + " rows");
    const auto cols = detail::get_uint(is, 8, name + " cols");
    if (rows != v.rows || cols != v.cols) {
      throw CheckpointError("shape mismatch for " + name + ": file has " + std::to_string(rows) + "x" +
                            std::to_string(cols) + ", config implies " + std::to_string(v.rows) +
                            "x" + std::to_string(v.cols));
    }
    for (double& x : v.values) x = std::bit_cast<double>(detail::get_uint(is, 8, name + " values"));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw CheckpointError("corrupt checkpoint: trailing bytes after last matrix");
  }
  return m;
}

inline void save_checkpoint(const Model& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  write_checkpoint(out, m);
  if (!out) throw CheckpointError("write failed: " + path.string());
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace idn
