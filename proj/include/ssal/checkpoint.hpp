#pragma once

// Checkpoint files: one line of JSON header (stores, parameter names and
// shapes, step counter, config hash, free-form state) followed by the
// little-endian parameter blob in header order.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssal/errors.hpp"
#include "ssal/ndgrad/optim.hpp"

namespace ssal {

enum class BlobType { float32, float64 };

struct Checkpoint {
  std::vector<std::pair<std::string, ndgrad::ParamStore>> stores;
  std::uint64_t step = 0;
  std::string config_hash;
  nlohmann::json state = nlohmann::json::object();

  const ndgrad::ParamStore& store(const std::string& name) const {
    for (const auto& [n, s] : stores)
      if (n == name) return s;
    throw FormatError("checkpoint: no store named " + name);
  }
};

// 64-bit FNV-1a, hex encoded.
inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

inline void put_le(std::string& out, std::uint64_t bits, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_le(const char* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

}  // namespace detail

// float64 blobs reload bitwise; float32 blobs round each value once.
inline std::string encode_checkpoint(const Checkpoint& ck, BlobType type = BlobType::float64) {
  nlohmann::json header;
  header["format"] = "ssal-checkpoint";
  header["version"] = 1;
  header["dtype"] = type == BlobType::float64 ? "float64" : "float32";
  header["step"] = ck.step;
  header["config_hash"] = ck.config_hash;
  header["state"] = ck.state;
  nlohmann::json stores = nlohmann::json::array();
  std::string blob;
  for (const auto& [name, store] : ck.stores) {
    nlohmann::json params = nlohmann::json::array();
    for (std::size_t i = 0; i < store.size(); ++i) {
      params.push_back({{"name", store.names()[i]}, {"shape", store.at(i).shape()}});
      for (double v : store.at(i).values()) {
        if (type == BlobType::float64) {
          std::uint64_t bits;
          std::memcpy(&bits, &v, sizeof bits);
          detail::put_le(blob, bits, 8);
        } else {
          const float f = static_cast<float>(v);
          std::uint32_t bits;
          std::memcpy(&bits, &f, sizeof bits);
          detail::put_le(blob, bits, 4);
        }
      }
    }
    stores.push_back({{"name", name}, {"params", params}});
  }
  header["stores"] = stores;
  header["blob_bytes"] = blob.size();
  return header.dump() + "\n" + blob;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw TruncatedError("checkpoint: missing header terminator");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  if (!header.is_object() || header.value("format", "") != "ssal-checkpoint") {
    throw MagicMismatchError("checkpoint: not an ssal checkpoint");
  }
  Checkpoint ck;
  std::size_t width = 0;
  try {
    const std::string dtype = header.at("dtype").get<std::string>();
    if (dtype == "float64") {
      width = 8;
    } else if (dtype == "float32") {
      width = 4;
    } else {
      throw ValidationError("dtype", "unsupported blob type " + dtype);
    }
    ck.step = header.at("step").get<std::uint64_t>();
    ck.config_hash = header.at("config_hash").get<std::string>();
    ck.state = header.at("state");
    const std::size_t declared = header.at("blob_bytes").get<std::size_t>();
    const std::size_t present = bytes.size() - nl - 1;
    if (present < declared) throw TruncatedError("checkpoint: blob truncated");
    if (present > declared) throw FormatError("checkpoint: trailing bytes after blob");
    const char* p = bytes.data() + nl + 1;
    const char* end = p + present;
    for (const auto& sj : header.at("stores")) {
      ndgrad::ParamStore store;
      for (const auto& pj : sj.at("params")) {
        ndgrad::Tensor t(pj.at("shape").get<ndgrad::Shape>());
        for (double& v : t.data()) {
          if (static_cast<std::size_t>(end - p) < width) throw TruncatedError("checkpoint: blob truncated");
          const std::uint64_t bits = detail::get_le(p, static_cast<int>(width));
          if (width == 8) {
            std::memcpy(&v, &bits, sizeof v);
          } else {
            const auto b32 = static_cast<std::uint32_t>(bits);
            float f;
            std::memcpy(&f, &b32, sizeof f);
            v = f;
          }
          p += width;
        }
        store.add(pj.at("name").get<std::string>(), std::move(t));
      }
      ck.stores.emplace_back(sj.at("name").get<std::string>(), std::move(store));
    }
    if (p != end) throw FormatError("checkpoint: blob length does not match header shapes");
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("checkpoint", e.what());
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck,
                            BlobType type = BlobType::float64) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = encode_checkpoint(ck, type);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  return decode_checkpoint(std::string(std::istreambuf_iterator<char>(in), {}));
}

}  // namespace ssal
