#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "crl/dataset.hpp"
#include "crl/tensor_io.hpp"

// Dataset directory layout: header.txt (key=value), manifest.txt (one line
// per sample naming its four tensor files), and per-sample tensor files.
// Writing the same spec twice must produce byte-identical trees.

namespace crl {

struct DatasetHeader {
  int height = 0;
  int width = 0;
  int classes = 0;
  int count = 0;
  uint64_t seed = 0;
  double focal = 0.0;
  double cx = 0.0;
  double cy = 0.0;

  Intrinsics intrinsics() const { return {focal, cx, cy}; }
};

namespace dataset_io_detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::map<std::string, std::string> read_kv(const std::filesystem::path& file) {
  std::ifstream in(file);
  CRL_CHECK(in.good(), "cannot open " << file.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    CRL_CHECK(eq != std::string::npos,
              file.string() << ": malformed line '" << line << "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline const std::string& want(const std::map<std::string, std::string>& kv,
                               const std::string& key,
                               const std::filesystem::path& file) {
  auto it = kv.find(key);
  CRL_CHECK(it != kv.end(), file.string() << ": missing key '" << key << "'");
  return it->second;
}

}  // namespace dataset_io_detail

inline void write_dataset_header(const std::filesystem::path& dir,
                                 const DatasetHeader& h) {
  std::ofstream out(dir / "header.txt", std::ios::binary);
  CRL_CHECK(out.good(), "cannot write " << (dir / "header.txt").string());
  out << "height=" << h.height << "\n"
      << "width=" << h.width << "\n"
      << "classes=" << h.classes << "\n"
      << "seed=" << h.seed << "\n"
      << "count=" << h.count << "\n"
      << "focal=" << dataset_io_detail::fmt_double(h.focal) << "\n"
      << "cx=" << dataset_io_detail::fmt_double(h.cx) << "\n"
      << "cy=" << dataset_io_detail::fmt_double(h.cy) << "\n";
  CRL_CHECK(out.good(), "failed writing " << (dir / "header.txt").string());
}

inline DatasetHeader read_dataset_header(const std::filesystem::path& dir) {
  using dataset_io_detail::want;
  const auto file = dir / "header.txt";
  const auto kv = dataset_io_detail::read_kv(file);
  DatasetHeader h;
  h.height = std::stoi(want(kv, "height", file));
  h.width = std::stoi(want(kv, "width", file));
  h.classes = std::stoi(want(kv, "classes", file));
  h.seed = std::stoull(want(kv, "seed", file));
  h.count = std::stoi(want(kv, "count", file));
  h.focal = std::stod(want(kv, "focal", file));
  h.cx = std::stod(want(kv, "cx", file));
  h.cy = std::stod(want(kv, "cy", file));
  CRL_CHECK(h.height > 0 && h.width > 0 && h.classes >= 2 && h.count >= 0,
            file.string() << ": implausible header");
  return h;
}

/// Generates `count` scenes and writes the whole directory tree. Labels are
/// stored as a float tensor holding exact small integers.
inline void write_dataset(const std::filesystem::path& dir, const SceneSpec& spec,
                          int count) {
  spec.validate();
  CRL_CHECK(count >= 1, "write_dataset: count must be >= 1, got " << count);
  std::filesystem::create_directories(dir);
  const Intrinsics cam = spec.intrinsics();
  DatasetHeader h;
  h.height = spec.height;
  h.width = spec.width;
  h.classes = spec.classes;
  h.count = count;
  h.seed = spec.seed;
  h.focal = cam.focal;
  h.cx = cam.cx;
  h.cy = cam.cy;
  write_dataset_header(dir, h);

  std::ofstream manifest(dir / "manifest.txt", std::ios::binary);
  CRL_CHECK(manifest.good(), "cannot write " << (dir / "manifest.txt").string());
  for (int i = 0; i < count; ++i) {
    Sample s = generate_scene(spec, i);
    Tensor labels({s.height(), s.width()});
    for (int y = 0; y < s.height(); ++y)
      for (int x = 0; x < s.width(); ++x) labels(y, x) = s.labels.at(y, x);
    const std::string rgb_f = s.id + ".rgb.crtf";
    const std::string hha_f = s.id + ".hha.crtf";
    const std::string lab_f = s.id + ".labels.crtf";
    const std::string dep_f = s.id + ".depth.crtf";
    save_tensor(dir / rgb_f, s.rgb);
    save_tensor(dir / hha_f, s.hha);
    save_tensor(dir / lab_f, labels);
    save_tensor(dir / dep_f, s.depth_raw);
    manifest << s.id << " " << rgb_f << " " << hha_f << " " << lab_f << " " << dep_f
             << "\n";
  }
  CRL_CHECK(manifest.good(), "failed writing " << (dir / "manifest.txt").string());
}

struct Dataset {
  DatasetHeader header;
  std::vector<Sample> samples;
};

/// Loads and validates the whole directory; samples come back raw
/// (unnormalized), in manifest order.
inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.header = read_dataset_header(dir);
  std::ifstream manifest(dir / "manifest.txt");
  CRL_CHECK(manifest.good(), "cannot open " << (dir / "manifest.txt").string());
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string id, rgb_f, hha_f, lab_f, dep_f;
    CRL_CHECK(fields >> id >> rgb_f >> hha_f >> lab_f >> dep_f,
              "manifest.txt: malformed line '" << line << "'");
    Sample s(ds.header.height, ds.header.width);
    s.id = id;
    s.rgb = load_tensor(dir / rgb_f);
    s.hha = load_tensor(dir / hha_f);
    Tensor labels = load_tensor(dir / lab_f);
    s.depth_raw = load_tensor(dir / dep_f);

    const std::vector<int> map_shape{3, ds.header.height, ds.header.width};
    CRL_CHECK(s.rgb.shape() == map_shape, id << ": rgb tensor has shape "
                                             << shape_string(s.rgb.shape()));
    CRL_CHECK(s.hha.shape() == map_shape, id << ": surface tensor has shape "
                                             << shape_string(s.hha.shape()));
    const std::vector<int> flat_shape{ds.header.height, ds.header.width};
    CRL_CHECK(labels.shape() == flat_shape, id << ": label tensor has shape "
                                               << shape_string(labels.shape()));
    CRL_CHECK(s.depth_raw.shape() == flat_shape, id << ": depth tensor has shape "
                                                    << shape_string(s.depth_raw.shape()));
    for (std::size_t i = 0; i < s.depth_raw.size(); ++i)
      CRL_CHECK(s.depth_raw[i] > 0.0, id << ": non-positive depth value");
    for (std::size_t i = 0; i < s.hha.size(); ++i)
      CRL_CHECK(s.hha[i] >= 0.0 && s.hha[i] <= 1.0, id << ": surface value out of [0,1]");
    for (int y = 0; y < ds.header.height; ++y)
      for (int x = 0; x < ds.header.width; ++x) {
        const double v = labels(y, x);
        CRL_CHECK(v == std::floor(v) && v >= 0.0 && v <= ds.header.classes,
                  id << ": label " << v << " at (" << y << "," << x
                     << ") outside 0.." << ds.header.classes);
        s.labels.at(y, x) = static_cast<int>(v);
      }
    ds.samples.push_back(std::move(s));
  }
  CRL_CHECK(static_cast<int>(ds.samples.size()) == ds.header.count,
            "manifest lists " << ds.samples.size() << " samples, header says "
                              << ds.header.count);
  return ds;
}

}  // namespace crl
