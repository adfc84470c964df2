#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mosaiks/error.hpp"
#include "mosaiks/grid.hpp"

namespace mosaiks {

/// H x W x S raster with band-interleaved, row-major storage and
/// intensities in [0, 1].
class Image {
 public:
  Image() = default;
  Image(std::size_t height, std::size_t width, std::size_t bands, double fill = 0.0)
      : h_(height), w_(width), s_(bands), px_(height * width * bands, fill) {
    detail::require(height > 0 && width > 0 && bands > 0, "image dimensions must be positive");
  }

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t bands() const { return s_; }
  bool empty() const { return px_.empty(); }

  double& at(std::size_t i, std::size_t j, std::size_t b) { return px_[(i * w_ + j) * s_ + b]; }
  double at(std::size_t i, std::size_t j, std::size_t b) const {
    return px_[(i * w_ + j) * s_ + b];
  }

  const std::vector<double>& data() const { return px_; }
  std::vector<double>& data() { return px_; }

  CellId location;
  std::string source;

  /// Throws unless every intensity is finite and inside [0, 1].
  void validate() const {
    for (double v : px_)
      if (!std::isfinite(v) || v < 0.0 || v > 1.0)
        throw DataError("image " + source + ": intensity outside [0,1] or non-finite");
  }

 private:
  std::size_t h_ = 0, w_ = 0, s_ = 0;
  std::vector<double> px_;
};

namespace detail {

// Coverage of input pixels [0, n_in) by each of n_out equal output spans.
struct BoxWeights {
  std::vector<std::size_t> first;
  std::vector<std::vector<double>> weight;
};

inline BoxWeights box_weights(std::size_t n_in, std::size_t n_out) {
  BoxWeights bw;
  bw.first.resize(n_out);
  bw.weight.resize(n_out);
  const double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
  for (std::size_t o = 0; o < n_out; ++o) {
    const double lo = static_cast<double>(o) * scale;
    const double hi = static_cast<double>(o + 1) * scale;
    const auto a = static_cast<std::size_t>(std::floor(lo));
    const auto b = std::min(n_in, static_cast<std::size_t>(std::ceil(hi)));
    bw.first[o] = a;
    for (std::size_t k = a; k < b; ++k) {
      const double cover = std::min(hi, static_cast<double>(k + 1)) -
                           std::max(lo, static_cast<double>(k));
      bw.weight[o].push_back(cover / scale);
    }
  }
  return bw;
}

}  // namespace detail

/// Area-weighted box resampling to target_h x target_w.
///
/// Each output pixel averages the input pixels it covers, weighting partial
/// pixels by their covered fraction, so non-integer ratios (640 -> 256) work.
inline Image coarsen(const Image& img, std::size_t target_h, std::size_t target_w) {
  detail::require(target_h > 0 && target_w > 0, "coarsen: target must be positive");
  if (target_h > img.height() || target_w > img.width())
    throw InvalidArgument("coarsen: target larger than source");
  const auto rows = detail::box_weights(img.height(), target_h);
  const auto cols = detail::box_weights(img.width(), target_w);
  Image out(target_h, target_w, img.bands());
  out.location = img.location;
  out.source = img.source;
  std::vector<double> acc(img.bands());
  for (std::size_t oi = 0; oi < target_h; ++oi) {
    for (std::size_t oj = 0; oj < target_w; ++oj) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t a = 0; a < rows.weight[oi].size(); ++a) {
        const std::size_t i = rows.first[oi] + a;
        for (std::size_t c = 0; c < cols.weight[oj].size(); ++c) {
          const std::size_t j = cols.first[oj] + c;
          const double w = rows.weight[oi][a] * cols.weight[oj][c];
          for (std::size_t b = 0; b < img.bands(); ++b) acc[b] += w * img.at(i, j, b);
        }
      }
      for (std::size_t b = 0; b < img.bands(); ++b)
        out.at(oi, oj, b) = std::clamp(acc[b], 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace mosaiks
