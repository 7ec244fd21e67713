#pragma once

// Dataset persistence: 8-bit grayscale PNG images plus a CSV manifest
//   path,pitch_rad,yaw_rad,domain,group_id,seed

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "jitterlab/dataset.hpp"
#include "jitterlab/errors.hpp"
#include "jitterlab/image.hpp"

namespace jitterlab {

namespace fs = std::filesystem;

inline constexpr const char* kManifestHeader = "path,pitch_rad,yaw_rad,domain,group_id,seed";

inline void write_png(const fs::path& path, const Image& img) {
  std::vector<png_byte> buf(img.size());
  for (std::size_t i = 0; i < img.size(); ++i)
    buf[i] = static_cast<png_byte>(std::lround(std::clamp(img[i], 0.0, 1.0) * 255.0));
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width());
  pi.height = static_cast<png_uint_32>(img.height());
  pi.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&pi, path.string().c_str(), 0, buf.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + pi.message);
}

inline Image read_png(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("image file not found: " + path.string());
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.string().c_str()))
    throw ParseError("corrupt PNG " + path.string() + ": " + pi.message);
  pi.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = pi.message;
    png_image_free(&pi);
    throw ParseError("corrupt PNG " + path.string() + ": " + msg);
  }
  Image img(pi.width, pi.height);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = buf[i] / 255.0;
  return img;
}

// Writes to a sibling temporary file, then renames over the target.
inline void write_file_atomic(const fs::path& path, const std::string& bytes) {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string format_sig9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string manifest_text(const Dataset& ds, const std::vector<std::string>& paths) {
  std::string s = std::string(kManifestHeader) + "\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    s += paths[i] + "," + format_sig9(ds.labels[i].pitch) + "," + format_sig9(ds.labels[i].yaw) + "," +
         to_string(ds.domains[i]) + "," + std::to_string(ds.group_ids[i]) + "," + std::to_string(ds.seeds[i]) + "\n";
  }
  return s;
}

inline std::string image_filename(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%06zu.png", i);
  return buf;
}

// Writes dir/img_NNNNNN.png and dir/manifest.csv; returns the manifest path.
inline fs::path save_dataset(const fs::path& dir, const Dataset& ds) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  std::vector<std::string> paths;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    paths.push_back(image_filename(i));
    write_png(dir / paths.back(), ds.images[i]);
  }
  const auto manifest = dir / "manifest.csv";
  write_file_atomic(manifest, manifest_text(ds, paths));
  return manifest;
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(where + ": not a number: '" + s + "'");
  }
}

}  // namespace detail

// Paths in the manifest are resolved relative to its directory.
inline Dataset load_dataset(const fs::path& manifest) {
  std::istringstream in(read_file(manifest));
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader)
    throw ParseError(manifest.string() + ": missing or unexpected manifest header");
  const auto base = manifest.parent_path();
  Dataset ds;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto where = manifest.string() + ":" + std::to_string(lineno);
    const auto f = detail::split_csv(line);
    if (f.size() != 6) throw ParseError(where + ": expected 6 fields, got " + std::to_string(f.size()));
    const GazeLabel label{detail::parse_double(f[1], where), detail::parse_double(f[2], where)};
    if (!label.in_range()) throw DomainError(where + ": gaze label out of range");
    std::int64_t group = 0;
    std::uint64_t seed = 0;
    try {
      group = std::stoll(f[4]);
      seed = std::stoull(f[5]);
    } catch (const std::exception&) {
      throw ParseError(where + ": malformed group id or seed");
    }
    Domain domain;
    try {
      domain = parse_domain(f[3]);
    } catch (const ConfigError& e) {
      throw ParseError(where + ": " + e.what());
    }
    auto img = read_png(base / f[0]);
    if (!ds.empty() && !img.same_shape(ds.images[0]))
      throw ParseError(where + ": image " + f[0] + " differs in size from the rest of the dataset");
    ds.push_back(std::move(img), label, domain, group, seed);
  }
  return ds;
}

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace jitterlab
