#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <png.h>

#include "mosaiks/binary_io.hpp"
#include "mosaiks/image.hpp"
#include "mosaiks/parallel.hpp"

namespace mosaiks {

// PNG holds 8-bit samples with 1-4 channels; intensities map to byte / 255.

inline Image read_png(const std::string& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw DataError("cannot decode PNG " + path + ": " + png.message);
  const std::size_t bands = PNG_IMAGE_SAMPLE_CHANNELS(png.format);
  // Drop colormaps and 16-bit depth in favor of plain 8-bit samples.
  png.format = bands == 1 ? PNG_FORMAT_GRAY
             : bands == 2 ? PNG_FORMAT_GA
             : bands == 3 ? PNG_FORMAT_RGB
                          : PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&png);
    throw DataError("cannot decode PNG " + path + ": " + png.message);
  }
  Image img(png.height, png.width, bands);
  for (std::size_t k = 0; k < buf.size(); ++k) img.data()[k] = buf[k] / 255.0;
  img.source = path;
  return img;
}

inline void write_png(const Image& img, const std::string& path) {
  if (img.bands() > 4) throw InvalidArgument("PNG supports at most 4 bands");
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width());
  png.height = static_cast<png_uint_32>(img.height());
  png.format = img.bands() == 1 ? PNG_FORMAT_GRAY
             : img.bands() == 2 ? PNG_FORMAT_GA
             : img.bands() == 3 ? PNG_FORMAT_RGB
                                : PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> buf(img.data().size());
  for (std::size_t k = 0; k < buf.size(); ++k)
    buf[k] = static_cast<std::uint8_t>(std::lround(std::clamp(img.data()[k], 0.0, 1.0) * 255.0));
  if (!png_image_write_to_file(&png, path.c_str(), 0, buf.data(), 0, nullptr))
    throw DataError("cannot write PNG " + path + ": " + png.message);
}

// Raw float container: "MSKI", version u16, H, W, S as u32, then H*W*S f32
// band-interleaved samples, little-endian.

inline constexpr std::uint16_t kRawImageVersion = 1;

inline void write_raw_image(const Image& img, const std::string& path) {
  ByteWriter w;
  w.magic("MSKI");
  w.put<std::uint16_t>(kRawImageVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(img.height()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(img.width()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(img.bands()));
  for (double v : img.data()) w.put<float>(static_cast<float>(v));
  w.save(path);
}

inline Image read_raw_image(const std::string& path) {
  auto r = ByteReader::load(path);
  r.expect_magic("MSKI");
  if (r.get<std::uint16_t>() != kRawImageVersion) throw DataError(path + ": unsupported version");
  const auto h = r.get<std::uint32_t>();
  const auto w = r.get<std::uint32_t>();
  const auto s = r.get<std::uint32_t>();
  if (h == 0 || w == 0 || s == 0) throw DataError(path + ": empty image");
  Image img(h, w, s);
  for (double& v : img.data()) v = r.get<float>();
  r.expect_end();
  img.source = path;
  img.validate();
  return img;
}

inline Image read_image(const std::string& path) {
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".png") return read_png(path);
  if (ext == ".mski") return read_raw_image(path);
  throw DataError("unsupported image extension: " + path);
}

/// Writes PNG when the band count allows it, the raw container otherwise.
/// Returns the path written.
inline std::string write_image(const Image& img, const std::string& stem) {
  std::string path = stem + (img.bands() <= 4 ? ".png" : ".mski");
  if (img.bands() <= 4) write_png(img, path); else write_raw_image(img, path);
  return path;
}

struct CellFile {
  std::int64_t row = 0;
  std::int64_t col = 0;
  std::string path;
};

/// Parses "<row>_<col>.png" or "<row>_<col>.mski".
inline std::optional<CellFile> parse_cell_filename(const std::filesystem::path& p) {
  const std::string ext = p.extension().string();
  if (ext != ".png" && ext != ".mski") return std::nullopt;
  const std::string stem = p.stem().string();
  const auto us = stem.find('_');
  if (us == std::string::npos || us == 0 || us + 1 == stem.size()) return std::nullopt;
  CellFile cf;
  const char* b = stem.data();
  auto r1 = std::from_chars(b, b + us, cf.row);
  auto r2 = std::from_chars(b + us + 1, b + stem.size(), cf.col);
  if (r1.ec != std::errc() || r1.ptr != b + us || r2.ec != std::errc() ||
      r2.ptr != b + stem.size() || cf.row < 0 || cf.col < 0)
    return std::nullopt;
  cf.path = p.string();
  return cf;
}

/// Cell-indexed image files of a directory, sorted by (row, col).
inline std::vector<CellFile> list_cell_images(const std::string& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir);
  std::vector<CellFile> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    if (auto cf = parse_cell_filename(e.path())) files.push_back(*cf);
  }
  std::sort(files.begin(), files.end(), [](const CellFile& a, const CellFile& b) {
    return a.row != b.row ? a.row < b.row : (a.col != b.col ? a.col < b.col : a.path < b.path);
  });
  return files;
}

/// Decodes the files in parallel; output order follows `files`.
inline std::vector<Image> load_images(const std::vector<CellFile>& files, std::size_t threads) {
  std::vector<Image> images(files.size());
  parallel_for(files.size(), threads, [&](std::size_t i) {
    images[i] = read_image(files[i].path);
    images[i].location.row = files[i].row;
    images[i].location.col = files[i].col;
  });
  return images;
}

}  // namespace mosaiks
