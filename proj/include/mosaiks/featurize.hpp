#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mosaiks/feature_table.hpp"
#include "mosaiks/image.hpp"
#include "mosaiks/parallel.hpp"
#include "mosaiks/patch_bank.hpp"

namespace mosaiks {

/// ReLU(<whitened window, whitened patch> + 1) at every valid position
/// (stride 1, no padding).
struct ActivationMap {
  std::size_t feature = 0;
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

namespace detail {

inline void check_compatible(const Image& img, const PatchBank& bank) {
  if (img.bands() != bank.bands())
    throw DataError("image " + img.source + " has " + std::to_string(img.bands()) +
                    " bands, bank expects " + std::to_string(bank.bands()));
  if (img.height() < bank.patch_width() || img.width() < bank.patch_width())
    throw InvalidArgument("image " + img.source + " is smaller than the patch width");
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::size_t kPositionsPerBlock = 1024;

/// Calls fn(first_position, Z) for consecutive blocks of positions, where
/// row r of Z holds the K/2 pre-activations at position first_position + r
/// (positions in row-major order over the activation extent). Windows are
/// centered, then multiplied by the folded filters.
template <class Fn>
void for_each_preactivation_block(const Image& img, const PatchBank& bank, Fn&& fn) {
  check_compatible(img, bank);
  const std::size_t m = bank.patch_width();
  const std::size_t s = bank.bands();
  const std::size_t d = bank.dim();
  const std::size_t out_w = img.width() - m + 1;
  const std::size_t positions = (img.height() - m + 1) * out_w;
  const Eigen::VectorXd& mu = bank.mean();
  RowMatrix windows;
  Eigen::MatrixXd z;
  for (std::size_t first = 0; first < positions; first += kPositionsPerBlock) {
    const std::size_t count = std::min(kPositionsPerBlock, positions - first);
    windows.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(d));
    for (std::size_t r = 0; r < count; ++r) {
      const std::size_t i = (first + r) / out_w;
      const std::size_t j = (first + r) % out_w;
      double* row = windows.row(static_cast<Eigen::Index>(r)).data();
      for (std::size_t a = 0; a < m; ++a) {
        const double* src = &img.data()[((i + a) * img.width() + j) * s];
        for (std::size_t t = 0; t < m * s; ++t) {
          const std::size_t idx = a * m * s + t;
          row[idx] = src[t] - mu(static_cast<Eigen::Index>(idx));
        }
      }
    }
    z.noalias() = windows * bank.filters();
    fn(first, static_cast<const Eigen::MatrixXd&>(z));
  }
}

}  // namespace detail

/// Activation map of feature k, evaluated position by position.
inline ActivationMap activation_map(const Image& img, const PatchBank& bank, std::size_t k) {
  detail::check_compatible(img, bank);
  if (k >= bank.num_features()) throw InvalidArgument("activation_map: feature index out of range");
  const std::size_t m = bank.patch_width();
  const std::size_t s = bank.bands();
  const std::size_t half = bank.num_patches();
  const double sign = k < half ? 1.0 : -1.0;
  const auto col = static_cast<Eigen::Index>(k % half);
  ActivationMap map;
  map.feature = k;
  map.rows = img.height() - m + 1;
  map.cols = img.width() - m + 1;
  map.values.resize(map.rows * map.cols);
  for (std::size_t i = 0; i < map.rows; ++i) {
    for (std::size_t j = 0; j < map.cols; ++j) {
      double z = 0.0;
      for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = 0; b < m; ++b)
          for (std::size_t t = 0; t < s; ++t) {
            const auto idx = static_cast<Eigen::Index>((a * m + b) * s + t);
            z += (img.at(i + a, j + b, t) - bank.mean()(idx)) * bank.filters()(idx, col);
          }
      map.values[i * map.cols + j] = std::max(0.0, sign * z + bank.bias());
    }
  }
  return map;
}

/// Pooled K-vector of an image. Only the K/2 stored patches are convolved;
/// the negated features reuse the same pre-activations.
inline Eigen::VectorXd featurize_image(const Image& img, const PatchBank& bank) {
  const auto half = static_cast<Eigen::Index>(bank.num_patches());
  Eigen::RowVectorXd pos = Eigen::RowVectorXd::Zero(half);
  Eigen::RowVectorXd neg = Eigen::RowVectorXd::Zero(half);
  std::size_t positions = 0;
  const double b = bank.bias();
  detail::for_each_preactivation_block(img, bank, [&](std::size_t, const Eigen::MatrixXd& z) {
    pos += (z.array() + b).cwiseMax(0.0).colwise().sum().matrix();
    neg += (b - z.array()).cwiseMax(0.0).colwise().sum().matrix();
    positions += static_cast<std::size_t>(z.rows());
  });
  Eigen::VectorXd x(2 * half);
  x.head(half) = pos.transpose() / static_cast<double>(positions);
  x.tail(half) = neg.transpose() / static_cast<double>(positions);
  return x;
}

/// Bytes of an 8-bit H x W x S image over bytes of K f32 features.
inline double compression_ratio(std::size_t h, std::size_t w, std::size_t bands, std::size_t k) {
  return static_cast<double>(h * w * bands) / static_cast<double>(k * sizeof(float));
}

/// Featurizes every image; row i of the table corresponds to images[i].
inline FeatureTable featurize_corpus(std::span<const Image> images, const PatchBank& bank,
                                     Precision precision = Precision::F32,
                                     std::size_t threads = 1) {
  detail::require(!images.empty(), "featurize_corpus: empty corpus");
  const std::size_t bands = images.front().bands();
  for (const auto& img : images)
    if (img.bands() != bands) throw DataError("featurize_corpus: mixed band counts");
  FeatureTable table;
  table.values.resize(static_cast<Eigen::Index>(images.size()),
                      static_cast<Eigen::Index>(bank.num_features()));
  table.locations.resize(images.size());
  table.bank_fingerprint = bank.fingerprint();
  table.precision = precision;
  parallel_for(images.size(), threads, [&](std::size_t i) {
    Eigen::VectorXd x = featurize_image(images[i], bank);
    if (precision == Precision::F32) x = x.cast<float>().cast<double>();
    table.values.row(static_cast<Eigen::Index>(i)) = x.transpose();
    table.locations[i] = images[i].location;
  });
  return table;
}

}  // namespace mosaiks
