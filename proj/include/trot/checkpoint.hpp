#pragma once

#include <cstring>
#include <fstream>

#include "trot/encoder.hpp"

namespace trot {

// Self-describing parameter archive: magic, schema version, scalar dtype,
// embedded config snapshot, then one dtype/shape/raw-data entry per canonical
// parameter name. Loading validates every shape.

namespace ckpt_detail {

constexpr char kMagic[8] = {'T', 'R', 'O', 'T', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;
constexpr uint32_t kF32 = 1, kF64 = 2;

template <typename T>
uint32_t dtype_code() {
  return sizeof(T) == 4 ? kF32 : kF64;
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(is.good(), "FormatError", "truncated checkpoint while reading " + what);
  return v;
}

inline std::string read_string(std::istream& is, const std::string& what) {
  auto len = read_pod<uint64_t>(is, what + " length");
  std::string s(len, '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  require(is.good(), "FormatError", "truncated checkpoint while reading " + what);
  return s;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod(os, static_cast<uint64_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

}  // namespace ckpt_detail

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store,
                     const std::string& config_text) {
  using namespace ckpt_detail;
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "IoError", "cannot open checkpoint " + path + " for writing");
  os.write(kMagic, 8);
  write_pod(os, kVersion);
  write_pod(os, dtype_code<T>());
  write_string(os, config_text);
  auto params = store.all();
  write_pod(os, static_cast<uint64_t>(params.size()));
  for (const auto* p : params) {
    write_string(os, p->name);
    write_pod(os, dtype_code<T>());
    write_pod(os, static_cast<uint32_t>(p->value.shape.size()));
    for (int64_t d : p->value.shape) write_pod(os, static_cast<uint64_t>(d));
    os.write(reinterpret_cast<const char*>(p->value.data.data()),
             static_cast<std::streamsize>(p->value.data.size() * sizeof(T)));
  }
  require(os.good(), "IoError", "write failed for checkpoint " + path);
}

// Reads only the embedded config snapshot.
inline std::string checkpoint_config_text(const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "IoError", "cannot open checkpoint " + path);
  char magic[8];
  is.read(magic, 8);
  require(is.good() && std::memcmp(magic, kMagic, 8) == 0, "FormatError",
          "bad checkpoint magic in " + path);
  auto version = read_pod<uint32_t>(is, "version");
  require(version == kVersion, "FormatError",
          "unknown checkpoint schema version " + std::to_string(version));
  read_pod<uint32_t>(is, "dtype");
  return read_string(is, "config");
}

// Fills values for the store parameters whose names start with prefix_filter
// (empty = all). Every filtered store parameter must be present with a
// matching shape; scalar width is converted when it differs.
template <typename T>
void load_checkpoint_into(const std::string& path, ParamStore<T>& store,
                          const std::string& prefix_filter = "") {
  using namespace ckpt_detail;
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "IoError", "cannot open checkpoint " + path);
  char magic[8];
  is.read(magic, 8);
  require(is.good() && std::memcmp(magic, kMagic, 8) == 0, "FormatError",
          "bad checkpoint magic in " + path);
  auto version = read_pod<uint32_t>(is, "version");
  require(version == kVersion, "FormatError",
          "unknown checkpoint schema version " + std::to_string(version));
  auto dtype = read_pod<uint32_t>(is, "dtype");
  require(dtype == kF32 || dtype == kF64, "FormatError", "unknown checkpoint dtype code");
  read_string(is, "config");
  auto n = read_pod<uint64_t>(is, "entry count");
  size_t filled = 0;
  for (uint64_t e = 0; e < n; ++e) {
    std::string name = read_string(is, "parameter name");
    read_pod<uint32_t>(is, "entry dtype");
    auto ndim = read_pod<uint32_t>(is, "rank");
    std::vector<int64_t> shape;
    int64_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      shape.push_back(static_cast<int64_t>(read_pod<uint64_t>(is, "dim")));
      numel *= shape.back();
    }
    const size_t elem = dtype == kF32 ? 4 : 8;
    std::vector<char> raw(static_cast<size_t>(numel) * elem);
    is.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    require(is.good(), "FormatError", "truncated checkpoint data for " + name);
    bool wanted = prefix_filter.empty() || name.rfind(prefix_filter, 0) == 0;
    if (!wanted || !store.has(name)) continue;
    Parameter<T>& p = store.get(name);
    require(p.value.shape == shape, "CheckpointMismatch",
            "shape mismatch for parameter " + name + " in " + path);
    for (int64_t i = 0; i < numel; ++i)
      p.value[i] = dtype == kF32
                       ? static_cast<T>(reinterpret_cast<const float*>(raw.data())[i])
                       : static_cast<T>(reinterpret_cast<const double*>(raw.data())[i]);
    ++filled;
  }
  size_t expected = 0;
  for (const auto* p : store.all())
    if (prefix_filter.empty() || p->name.rfind(prefix_filter, 0) == 0) ++expected;
  require(filled == expected, "CheckpointMismatch",
          "checkpoint " + path + " is missing parameters (" + std::to_string(filled) + " of " +
              std::to_string(expected) + " filled)");
}

}  // namespace trot
