#pragma once

#include <openssl/evp.h>

#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "crl/common.hpp"
#include "crl/tensor.hpp"

// Support pieces for the command-line tool: run manifests (what ran, on what
// inputs, producing what), git-style content hashes for provenance, and PGM
// dumps for eyeballing feature maps without an image codec.

namespace crl {

inline std::string iso8601_utc_now() {
  std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

/// SHA-1 of "blob <size>\0<bytes>", hex-encoded: the same id git would give
/// the file, so a manifest entry can be checked against a repository object.
inline std::string sha1_git_blob_hex(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  CRL_CHECK(is, "sha1: cannot open " << path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  const std::string bytes = buf.str();

  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  CRL_CHECK(ctx != nullptr, "sha1: EVP context allocation failed");
  std::string header = "blob " + std::to_string(bytes.size());
  header.push_back('\0');
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
            EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
            EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
            EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  CRL_CHECK(ok, "sha1: digest computation failed for " << path.string());

  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

/// Ordered key=value record of one command invocation. Every
/// artifact-producing command writes exactly one of these next to its output.
struct RunManifest {
  std::string command;
  std::vector<std::pair<std::string, std::string>> entries;

  void add(const std::string& key, const std::string& value) {
    entries.emplace_back(key, value);
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream os(path);
    CRL_CHECK(os, "run manifest: cannot open " << path.string() << " for writing");
    os << "command=" << command << "\n";
    for (const auto& kv : entries) os << kv.first << "=" << kv.second << "\n";
    os.close();
    CRL_CHECK(os.good(), "run manifest: write to " << path.string() << " failed");
  }
};

/// Collapses [C,H,W] to [H,W] by averaging channels; [H,W] passes through.
inline Tensor channel_mean(const Tensor& t) {
  if (t.rank() == 2) return t;
  CRL_CHECK(t.rank() == 3, "channel_mean: expected rank 2 or 3, got rank " << t.rank());
  const int C = t.extent(0), H = t.extent(1), W = t.extent(2);
  Tensor out({H, W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) out(y, x) += t(c, y, x);
  const double inv = 1.0 / C;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= inv;
  return out;
}

/// Binary 8-bit PGM, min-max scaled so the full range is always used; a
/// constant map renders black rather than dividing by zero.
inline void write_pgm(const std::filesystem::path& path, const Tensor& map) {
  CRL_CHECK(map.rank() == 2, "write_pgm: expected a [H,W] map, got rank " << map.rank());
  const int H = map.extent(0), W = map.extent(1);
  double lo = map[0], hi = map[0];
  for (std::size_t i = 0; i < map.size(); ++i) {
    CRL_CHECK(std::isfinite(map[i]), "write_pgm: non-finite value in " << path.string());
    lo = std::min(lo, map[i]);
    hi = std::max(hi, map[i]);
  }
  const double span = hi - lo;
  std::ofstream os(path, std::ios::binary);
  CRL_CHECK(os, "write_pgm: cannot open " << path.string() << " for writing");
  os << "P5\n" << W << " " << H << "\n255\n";
  for (std::size_t i = 0; i < map.size(); ++i) {
    const double v = span > 0.0 ? (map[i] - lo) / span : 0.0;
    os.put(static_cast<char>(static_cast<int>(v * 255.0 + 0.5)));
  }
  os.close();
  CRL_CHECK(os.good(), "write_pgm: write to " << path.string() << " failed");
}

}  // namespace crl
