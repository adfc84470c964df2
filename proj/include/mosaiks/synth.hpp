#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "mosaiks/grid.hpp"
#include "mosaiks/image.hpp"
#include "mosaiks/parallel.hpp"
#include "mosaiks/rng.hpp"

namespace mosaiks {

enum class LabelKind {
  /// Fraction of pixels where one band strictly exceeds all others.
  SubImageLinear,
  /// Smooth field of the cell centroid plus Gaussian noise. The field also
  /// drives image content, so images carry (noisy) information about it.
  SpatiallyAutocorrelated,
};

struct SyntheticTask {
  std::uint64_t seed = 0;
  LabelKind kind = LabelKind::SubImageLinear;
  double noise_sigma = 0.05;  // label noise; spatial kind only
  std::size_t dominant_band = 1;
  GeoBounds bounds = kUsBounds;
  double cell_km = 10.0;
};

struct SyntheticCorpus {
  std::vector<Image> images;
  std::vector<double> labels;
};

/// Fraction of pixels in rows [r0, r1) x cols [c0, c1) where `band` strictly
/// exceeds every other band.
inline double dominant_fraction(const Image& img, std::size_t band, std::size_t r0,
                                std::size_t r1, std::size_t c0, std::size_t c1) {
  detail::require(img.bands() >= 2 && band < img.bands(),
                  "dominant_fraction needs >= 2 bands and a valid band index");
  detail::require(r0 < r1 && r1 <= img.height() && c0 < c1 && c1 <= img.width(),
                  "dominant_fraction: bad window");
  std::size_t hits = 0;
  for (std::size_t i = r0; i < r1; ++i) {
    for (std::size_t j = c0; j < c1; ++j) {
      const double v = img.at(i, j, band);
      bool dominant = true;
      for (std::size_t b = 0; b < img.bands() && dominant; ++b)
        if (b != band && !(v > img.at(i, j, b))) dominant = false;
      hits += dominant;
    }
  }
  return static_cast<double>(hits) / static_cast<double>((r1 - r0) * (c1 - c0));
}

inline double dominant_fraction(const Image& img, std::size_t band) {
  return dominant_fraction(img, band, 0, img.height(), 0, img.width());
}

namespace detail {

struct FieldPhases {
  double a, b, c, d;
};

inline FieldPhases field_phases(std::uint64_t seed, const char* name) {
  Rng rng(seed, name);
  constexpr double two_pi = 6.283185307179586476925286766559;
  return {two_pi * rng.uniform01(), two_pi * rng.uniform01(), two_pi * rng.uniform01(),
          two_pi * rng.uniform01()};
}

inline void unit_coords(const GeoBounds& b, LatLon p, double& u, double& w) {
  u = (p.lon - b.lon_min) / (b.lon_max - b.lon_min);
  w = (p.lat - b.lat_min) / (b.lat_max - b.lat_min);
}

}  // namespace detail

/// Smooth label field over the task domain, values in [0.15, 0.85].
inline double spatial_field(const SyntheticTask& task, LatLon p) {
  const auto ph = detail::field_phases(task.seed, "label_field");
  double u, w;
  detail::unit_coords(task.bounds, p, u, w);
  constexpr double two_pi = 6.283185307179586476925286766559;
  return 0.5 + 0.2 * std::sin(two_pi * (2.0 * u + 1.0 * w) + ph.a) +
         0.15 * std::sin(two_pi * (0.8 * u + 2.6 * w) + ph.b);
}

/// Smooth illumination gain in [0.7, 1.3]; a regional nuisance on image color.
inline double illumination_field(const SyntheticTask& task, LatLon p) {
  const auto ph = detail::field_phases(task.seed, "gain_field");
  double u, w;
  detail::unit_coords(task.bounds, p, u, w);
  constexpr double two_pi = 6.283185307179586476925286766559;
  return 1.0 + 0.18 * std::sin(two_pi * (0.7 * u - 0.9 * w) + ph.a) +
         0.12 * std::sin(two_pi * (1.6 * u + 0.3 * w) + ph.b);
}

/// One synthetic scene: a smooth random field split at its `cover` quantile
/// into vegetation (green-dominant) and soil (red-dominant) pixels, with
/// per-image color jitter, per-pixel noise, and a global gain. Intensities
/// are quantized to k/255 so PNG round-trips are exact.
/// Per-pixel night radiance for one cell: log-linear in the spatial label
/// field with a cell-level and a pixel-level lognormal factor.
inline std::vector<double> synth_nightlights(const SyntheticTask& task, LatLon p,
                                             std::size_t pixels, std::size_t index) {
  detail::require(pixels >= 1, "synth_nightlights: pixels must be >= 1");
  Rng rng(task.seed, "nightlights", index);
  const double level = std::log(0.1) + spatial_field(task, p) * std::log(5000.0) + 0.4 * rng.normal();
  std::vector<double> v(pixels);
  for (double& x : v) x = std::exp(level + 0.8 * rng.normal());
  return v;
}

namespace detail {

// Bilinear upsampling of a random lattice; the lattice size sets the blob scale.
inline std::vector<double> lattice_field(Rng& rng, std::size_t hw, std::size_t lattice) {
  std::vector<double> nodes(lattice * lattice);
  for (double& v : nodes) v = rng.uniform01();
  std::vector<double> field(hw * hw);
  const double step = hw > 1 ? static_cast<double>(lattice - 1) / static_cast<double>(hw - 1) : 0.0;
  for (std::size_t i = 0; i < hw; ++i) {
    const double x = static_cast<double>(i) * step;
    const auto x0 = std::min<std::size_t>(static_cast<std::size_t>(x), lattice - 2);
    const double fx = x - static_cast<double>(x0);
    for (std::size_t j = 0; j < hw; ++j) {
      const double y = static_cast<double>(j) * step;
      const auto y0 = std::min<std::size_t>(static_cast<std::size_t>(y), lattice - 2);
      const double fy = y - static_cast<double>(y0);
      const double v00 = nodes[x0 * lattice + y0], v01 = nodes[x0 * lattice + y0 + 1];
      const double v10 = nodes[(x0 + 1) * lattice + y0], v11 = nodes[(x0 + 1) * lattice + y0 + 1];
      field[i * hw + j] = (1 - fx) * ((1 - fy) * v00 + fy * v01) + fx * ((1 - fy) * v10 + fy * v11);
    }
  }
  return field;
}

// Marks the `count` pixels of `eligible` with the lowest field values.
inline void mark_lowest(const std::vector<double>& field, std::vector<char>& cls, char from, char to,
                        std::size_t count) {
  std::vector<std::size_t> order;
  for (std::size_t k = 0; k < cls.size(); ++k)
    if (cls[k] == from) order.push_back(k);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return field[a] < field[b]; });
  count = std::min(count, order.size());
  for (std::size_t k = 0; k < count; ++k) cls[order[k]] = to;
}

}  // namespace detail

/// Three-material scene: vegetation covers `cover` of the pixels, built-up
/// surfaces a random share of the rest, bare soil the remainder. Blob scale,
/// material colors and texture amplitude vary per image. Values are
/// quantized to k/255.
inline Image synth_scene(Rng& rng, std::size_t hw, std::size_t bands, double cover, double gain) {
  const std::size_t n = hw * hw;
  const std::size_t lattice = 3 + rng.uniform_index(6);
  const auto veg_field = detail::lattice_field(rng, hw, lattice);
  const auto built_field = detail::lattice_field(rng, hw, 3 + rng.uniform_index(6));
  const double built_share = rng.uniform(0.0, 0.4);
  const double texture = rng.uniform(0.01, 0.04);

  enum : char { kSoil = 0, kVeg = 1, kBuilt = 2 };
  std::vector<char> cls(n, kSoil);
  const auto n_veg = static_cast<std::size_t>(std::lround(std::clamp(cover, 0.0, 1.0) *
                                                          static_cast<double>(n)));
  detail::mark_lowest(veg_field, cls, kSoil, kVeg, n_veg);
  detail::mark_lowest(built_field, cls, kSoil, kBuilt,
                      static_cast<std::size_t>(std::lround(built_share * static_cast<double>(n - n_veg))));

  double rgb_of[3][3] = {{0.55, 0.47, 0.38}, {0.22, 0.50, 0.20}, {0.46, 0.46, 0.50}};
  for (auto& m : rgb_of)
    for (double& c : m) c += 0.03 * rng.normal();
  auto quantize = [](double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; };

  Image img(hw, hw, bands);
  double rgb[3];
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t j = 0; j < hw; ++j) {
      const double* base = rgb_of[static_cast<int>(cls[i * hw + j])];
      for (int c = 0; c < 3; ++c) rgb[c] = gain * (base[c] + texture * rng.normal());
      if (bands == 1) {
        img.at(i, j, 0) = quantize((rgb[0] + rgb[1] + rgb[2]) / 3.0);
        continue;
      }
      for (std::size_t b = 0; b < bands; ++b) {
        const double v = b < 3 ? rgb[b] : (rgb[0] + rgb[1] + rgb[2]) / 3.0 + texture * rng.normal();
        img.at(i, j, b) = quantize(v);
      }
    }
  }
  return img;
}

inline SyntheticCorpus synth_corpus(const SyntheticTask& task, std::size_t n, std::size_t hw,
                                    std::size_t bands, std::size_t threads = 1) {
  detail::require(n >= 1, "synth_corpus: n must be >= 1");
  detail::require(hw >= 2, "synth_corpus: image side must be >= 2");
  detail::require(bands >= 1, "synth_corpus: bands must be >= 1");
  if (task.kind == LabelKind::SubImageLinear)
    detail::require(bands >= 2 && task.dominant_band < bands,
                    "sub-image-linear labels need >= 2 bands and a valid dominant band");
  detail::require(task.noise_sigma >= 0.0, "noise sigma must be nonnegative");

  const Grid grid = Grid::build(task.bounds, task.cell_km);
  const auto cells = sample_cells(grid, n, nullptr, derive_seed(task.seed, "cells"));

  SyntheticCorpus out;
  out.images.resize(n);
  out.labels.resize(n);
  parallel_for(n, threads, [&](std::size_t i) {
    Rng rng(task.seed, "image", i);
    const LatLon at = cells[i].centroid();
    Image img;
    if (task.kind == LabelKind::SubImageLinear) {
      const double cover = rng.uniform01();
      const double gain = rng.uniform(0.85, 1.15);
      img = synth_scene(rng, hw, bands, cover, gain);
      out.labels[i] = dominant_fraction(img, task.dominant_band);
    } else {
      const double f = spatial_field(task, at);
      const double cover = std::clamp(f + 0.07 * rng.normal(), 0.0, 1.0);
      img = synth_scene(rng, hw, bands, cover, illumination_field(task, at));
      out.labels[i] = f + task.noise_sigma * rng.normal();
    }
    img.location = cells[i];
    img.source = "synth:" + std::to_string(i);
    out.images[i] = std::move(img);
  });
  return out;
}

}  // namespace mosaiks
