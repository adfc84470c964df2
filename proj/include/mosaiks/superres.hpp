#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mosaiks/error.hpp"
#include "mosaiks/featurize.hpp"
#include "mosaiks/ridge.hpp"

namespace mosaiks {

/// Per-position prediction surface over the activation extent.
struct ScoreMap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  double mean() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
  }
};

/// Un-pooled prediction: at every position, the trained weights applied to
/// the activations there instead of to their image-wide means.
///
/// Standardization is folded into per-feature weights beta_k / scale_k and a
/// constant, so the map's mean equals the model's pre-clip score for the
/// image. Values are in transformed label space.
inline ScoreMap superres_map(const Image& img, const PatchBank& bank, const RidgeModel& model) {
  if (model.bank_fingerprint != bank.fingerprint())
    throw DataError("superres: model was not trained on features from this bank");
  if (model.num_features() != bank.num_features())
    throw DataError("superres: model and bank feature counts differ");
  const auto half = static_cast<Eigen::Index>(bank.num_patches());
  const Eigen::VectorXd w = model.beta.cwiseQuotient(model.col_scale);
  const double offset = model.intercept - model.col_mean.dot(w);
  const Eigen::VectorXd w_pos = w.head(half);
  const Eigen::VectorXd w_neg = w.tail(half);
  const double b = bank.bias();

  ScoreMap map;
  map.rows = img.height() - bank.patch_width() + 1;
  map.cols = img.width() - bank.patch_width() + 1;
  map.values.resize(map.rows * map.cols);
  detail::for_each_preactivation_block(img, bank, [&](std::size_t first, const Eigen::MatrixXd& z) {
    const Eigen::VectorXd s = (z.array() + b).cwiseMax(0.0).matrix() * w_pos +
                              (b - z.array()).cwiseMax(0.0).matrix() * w_neg;
    for (Eigen::Index r = 0; r < s.size(); ++r)
      map.values[first + static_cast<std::size_t>(r)] = s(r) + offset;
  });
  return map;
}

namespace detail {

// Half-sample symmetric reflection (d c b a | a b c d | d c b a), periodic
// with period 2n so any offset is valid.
inline std::size_t reflect_index(long long i, std::size_t n) {
  const auto period = static_cast<long long>(2 * n);
  long long k = i % period;
  if (k < 0) k += period;
  return static_cast<std::size_t>(k < static_cast<long long>(n) ? k : period - 1 - k);
}

}  // namespace detail

/// Discretized, normalized Gaussian taps for offsets -r..r with r = ceil(4 sigma).
inline std::vector<double> gaussian_kernel(double bandwidth) {
  detail::require(bandwidth > 0.0, "gaussian_kernel: bandwidth must be > 0");
  const auto r = static_cast<long long>(std::ceil(4.0 * bandwidth));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double sum = 0.0;
  for (long long i = -r; i <= r; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (bandwidth * bandwidth));
    k[static_cast<std::size_t>(i + r)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

/// Separable Gaussian blur with reflect padding. Bandwidth 0 is the identity.
inline ScoreMap gaussian_smooth(const ScoreMap& map, double bandwidth) {
  if (!(bandwidth >= 0.0)) throw InvalidArgument("gaussian_smooth: bandwidth must be >= 0");
  if (bandwidth == 0.0) return map;
  const auto k = gaussian_kernel(bandwidth);
  const auto r = static_cast<long long>(k.size() / 2);
  ScoreMap tmp = map, out = map;
  for (std::size_t i = 0; i < map.rows; ++i)
    for (std::size_t j = 0; j < map.cols; ++j) {
      double s = 0.0;
      for (long long t = -r; t <= r; ++t)
        s += k[static_cast<std::size_t>(t + r)] *
             map.at(i, detail::reflect_index(static_cast<long long>(j) + t, map.cols));
      tmp.values[i * map.cols + j] = s;
    }
  for (std::size_t i = 0; i < map.rows; ++i)
    for (std::size_t j = 0; j < map.cols; ++j) {
      double s = 0.0;
      for (long long t = -r; t <= r; ++t)
        s += k[static_cast<std::size_t>(t + r)] *
             tmp.at(detail::reflect_index(static_cast<long long>(i) + t, map.rows), j);
      out.values[i * map.cols + j] = s;
    }
  return out;
}

/// Default smoothing for factor F: map_side / (4F) pixels.
inline double default_bandwidth(std::size_t map_side, std::size_t factor) {
  return static_cast<double>(map_side) / (4.0 * static_cast<double>(factor));
}

/// Block boundaries splitting [0, n) into f near-equal parts (sizes differ by
/// at most one): block b is [floor(b n / f), floor((b+1) n / f)).
inline std::vector<std::size_t> block_edges(std::size_t n, std::size_t f) {
  std::vector<std::size_t> e(f + 1);
  for (std::size_t b = 0; b <= f; ++b) e[b] = b * n / f;
  return e;
}

struct SubgridPrediction {
  std::size_t factor = 1;
  std::vector<double> values;  // factor x factor, row-major, transformed space
  std::vector<std::size_t> row_edges;
  std::vector<std::size_t> col_edges;
  double parent = 0.0;  // image-level pre-clip prediction

  double at(std::size_t r, std::size_t c) const { return values[r * factor + c]; }

  /// Mean of the block values weighted by block area.
  double area_weighted_mean() const {
    double num = 0.0, den = 0.0;
    for (std::size_t r = 0; r < factor; ++r)
      for (std::size_t c = 0; c < factor; ++c) {
        const double area = static_cast<double>((row_edges[r + 1] - row_edges[r]) *
                                                (col_edges[c + 1] - col_edges[c]));
        num += area * at(r, c);
        den += area;
      }
    return num / den;
  }
};

/// Block means of the (optionally smoothed) score map on an F x F grid.
/// Sub-grid values are never clipped.
inline SubgridPrediction pool_to_subgrid(const ScoreMap& map, std::size_t factor,
                                         double bandwidth = 0.0) {
  detail::require(factor >= 1, "pool_to_subgrid: factor must be >= 1");
  if (factor > map.rows || factor > map.cols)
    throw InvalidArgument("pool_to_subgrid: factor exceeds the map side");
  const ScoreMap src = gaussian_smooth(map, bandwidth);
  SubgridPrediction p;
  p.factor = factor;
  p.parent = map.mean();
  p.row_edges = block_edges(map.rows, factor);
  p.col_edges = block_edges(map.cols, factor);
  p.values.assign(factor * factor, 0.0);
  for (std::size_t br = 0; br < factor; ++br)
    for (std::size_t bc = 0; bc < factor; ++bc) {
      double s = 0.0;
      for (std::size_t i = p.row_edges[br]; i < p.row_edges[br + 1]; ++i)
        for (std::size_t j = p.col_edges[bc]; j < p.col_edges[bc + 1]; ++j) s += src.at(i, j);
      const auto area = (p.row_edges[br + 1] - p.row_edges[br]) *
                        (p.col_edges[bc + 1] - p.col_edges[bc]);
      p.values[br * factor + bc] = s / static_cast<double>(area);
    }
  return p;
}

/// R^2 of sub-grid predictions against sub-labels after removing each
/// side's own mean, so only within-image variation is scored.
inline double within_image_r2(const SubgridPrediction& pred, std::span<const double> truth) {
  if (truth.size() != pred.values.size()) throw InvalidArgument("within_image_r2: shape mismatch");
  const Eigen::Map<const Eigen::VectorXd> t(truth.data(), static_cast<Eigen::Index>(truth.size()));
  const Eigen::Map<const Eigen::VectorXd> p(pred.values.data(),
                                            static_cast<Eigen::Index>(pred.values.size()));
  const Eigen::ArrayXd tc = t.array() - t.mean();
  const Eigen::ArrayXd pc = p.array() - p.mean();
  const double sst = (tc * tc).sum();
  if (!(sst > 1e-300)) throw NumericalError("within_image_r2: sub-labels have no within-image variance");
  return 1.0 - (tc - pc).square().sum() / sst;
}

}  // namespace mosaiks
