#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "crl/tensor.hpp"
#include "crl/tensor_io.hpp"

// Training-state archive ("CRCK"):
//   magic "CRCK" | u8 version=1
//   u32 meta count   | per entry: u32 key length, key bytes, u32 value length, value bytes
//   u32 tensor count | per entry: u32 name length, name bytes, u8 frozen flag,
//                      embedded CRTF tensor blob
// Everything little-endian. Meta and tensor order is preserved exactly, so
// saving the same checkpoint twice produces byte-identical files.

namespace crl {

struct CheckpointEntry {
  std::string name;
  Tensor value;
  bool frozen = false;
};

struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<CheckpointEntry> tensors;

  void set_meta(const std::string& key, const std::string& value) {
    for (auto& kv : meta) {
      if (kv.first == key) {
        kv.second = value;
        return;
      }
    }
    meta.emplace_back(key, value);
  }

  const std::string* find_meta(const std::string& key) const {
    for (const auto& kv : meta)
      if (kv.first == key) return &kv.second;
    return nullptr;
  }

  const std::string& meta_value(const std::string& key) const {
    const std::string* v = find_meta(key);
    CRL_CHECK(v != nullptr, "checkpoint: missing meta key '" << key << "'");
    return *v;
  }

  void add(std::string name, Tensor value, bool frozen = false) {
    CRL_CHECK(!name.empty(), "checkpoint: empty tensor name");
    CRL_CHECK(find(name) == nullptr, "checkpoint: duplicate tensor name '" << name << "'");
    tensors.push_back({std::move(name), std::move(value), frozen});
  }

  const CheckpointEntry* find(const std::string& name) const {
    for (const auto& e : tensors)
      if (e.name == name) return &e;
    return nullptr;
  }

  CheckpointEntry* find(const std::string& name) {
    for (auto& e : tensors)
      if (e.name == name) return &e;
    return nullptr;
  }

  const Tensor& tensor(const std::string& name) const {
    const CheckpointEntry* e = find(name);
    CRL_CHECK(e != nullptr, "checkpoint: no tensor named '" << name << "'");
    return e->value;
  }

  /// Same lookup but with the caller's expected shape enforced, so a stale or
  /// mismatched file fails loudly naming the offending tensor.
  const Tensor& tensor_like(const std::string& name, const std::vector<int>& shape) const {
    const Tensor& t = tensor(name);
    CRL_CHECK(t.shape() == shape, "checkpoint: tensor '" << name << "' has unexpected shape");
    return t;
  }

  /// Removes entries whose name contains the fragment (e.g. ".head.").
  /// Returns how many were dropped.
  std::size_t drop_containing(const std::string& fragment) {
    CRL_CHECK(!fragment.empty(), "checkpoint: empty drop fragment");
    std::size_t before = tensors.size();
    std::vector<CheckpointEntry> kept;
    kept.reserve(before);
    for (auto& e : tensors)
      if (e.name.find(fragment) == std::string::npos) kept.push_back(std::move(e));
    std::size_t remaining = kept.size();
    tensors = std::move(kept);
    return before - remaining;
  }
};

namespace ckpt_detail {

inline void put_str(std::ostream& os, const std::string& s) {
  io_detail::put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_str(std::istream& is, const char* what) {
  std::uint32_t n = io_detail::get_u32(is, what);
  CRL_CHECK(n <= (1u << 20), "checkpoint read: implausible " << what << " length " << n);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  CRL_CHECK(is.gcount() == static_cast<std::streamsize>(n),
            "checkpoint read: truncated file while reading " << what);
  return s;
}

}  // namespace ckpt_detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  os.write("CRCK", 4);
  io_detail::put_u8(os, 1);  // version
  io_detail::put_u32(os, static_cast<std::uint32_t>(ck.meta.size()));
  for (const auto& kv : ck.meta) {
    ckpt_detail::put_str(os, kv.first);
    ckpt_detail::put_str(os, kv.second);
  }
  io_detail::put_u32(os, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& e : ck.tensors) {
    ckpt_detail::put_str(os, e.name);
    io_detail::put_u8(os, e.frozen ? 1 : 0);
    write_tensor(os, e.value);
  }
  CRL_CHECK(os.good(), "write_checkpoint: stream write failed");
}

inline Checkpoint read_checkpoint(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  CRL_CHECK(is.gcount() == 4 && std::memcmp(magic, "CRCK", 4) == 0,
            "checkpoint read: not a CRCK checkpoint stream (bad magic)");
  std::uint8_t version = io_detail::get_u8(is, "version");
  CRL_CHECK(version == 1, "checkpoint read: unsupported version " << int(version));
  Checkpoint ck;
  std::uint32_t n_meta = io_detail::get_u32(is, "meta count");
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string key = ckpt_detail::get_str(is, "meta key");
    std::string value = ckpt_detail::get_str(is, "meta value");
    ck.meta.emplace_back(std::move(key), std::move(value));
  }
  std::uint32_t n_tensors = io_detail::get_u32(is, "tensor count");
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = ckpt_detail::get_str(is, "tensor name");
    bool frozen = io_detail::get_u8(is, "frozen flag") != 0;
    Tensor value = read_tensor(is);
    ck.add(std::move(name), std::move(value), frozen);
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  CRL_CHECK(os, "save_checkpoint: cannot open " << path.string() << " for writing");
  write_checkpoint(os, ck);
  os.close();
  CRL_CHECK(os.good(), "save_checkpoint: write to " << path.string() << " failed");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  CRL_CHECK(is, "load_checkpoint: cannot open " << path.string());
  return read_checkpoint(is);
}

}  // namespace crl
