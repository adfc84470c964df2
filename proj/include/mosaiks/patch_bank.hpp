#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mosaiks/binary_io.hpp"
#include "mosaiks/error.hpp"
#include "mosaiks/image.hpp"
#include "mosaiks/rng.hpp"

namespace mosaiks {

/// Patches are flattened as index (a * m + b) * bands + s for row offset a,
/// column offset b and band s; image sub-windows use the same order.
inline Eigen::MatrixXd sample_patches(std::span<const Image> images, std::size_t k_half,
                                      std::size_t m, std::uint64_t seed) {
  detail::require(!images.empty(), "sample_patches: no images");
  detail::require(k_half >= 1, "sample_patches: need at least one patch");
  detail::require(m >= 1, "sample_patches: patch width must be >= 1");
  const std::size_t bands = images.front().bands();
  for (const auto& img : images) {
    if (img.height() < m || img.width() < m)
      throw InvalidArgument("sample_patches: image " + img.source + " is smaller than the patch");
    if (img.bands() != bands) throw DataError("sample_patches: mixed band counts");
  }
  const std::size_t d = m * m * bands;
  Eigen::MatrixXd patches(k_half, d);
  Rng rng(seed, "patches");
  for (std::size_t p = 0; p < k_half; ++p) {
    const Image& img = images[rng.uniform_index(images.size())];
    const auto i0 = rng.uniform_index(img.height() - m + 1);
    const auto j0 = rng.uniform_index(img.width() - m + 1);
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = 0; b < m; ++b)
        for (std::size_t s = 0; s < bands; ++s)
          patches(p, (a * m + b) * bands + s) = img.at(i0 + a, j0 + b, s);
  }
  return patches;
}

struct Whitening {
  Eigen::VectorXd mean;         // subtracted before the transform (zero if centering is off)
  Eigen::MatrixXd transform;    // symmetric U (L + eps)^(-1/2) U^T
  Eigen::VectorXd eigenvalues;  // of the patch covariance, ascending
  Eigen::MatrixXd eigenvectors;
  double eps = 0.0;
};

/// ZCA whitening fitted to the rows of `patches`.
///
/// The covariance is always taken about the sample mean (1/n normalization).
/// With center = false the returned mean is zero, so the transform is applied
/// to uncentered vectors.
inline Whitening fit_whitening(const Eigen::MatrixXd& patches, double eps, bool center = true) {
  detail::require(patches.rows() >= 1 && patches.cols() >= 1, "fit_whitening: no patches");
  if (!patches.allFinite()) throw DataError("fit_whitening: non-finite patch values");
  if (!(eps >= 0.0) || !std::isfinite(eps))
    throw InvalidArgument("fit_whitening: eps must be finite and >= 0");
  const Eigen::VectorXd mu = patches.colwise().mean().transpose();
  const Eigen::MatrixXd centered = patches.rowwise() - mu.transpose();
  const Eigen::MatrixXd cov =
      (centered.transpose() * centered) / static_cast<double>(patches.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw NumericalError("fit_whitening: eigendecomposition failed");
  Eigen::VectorXd lambda = es.eigenvalues().cwiseMax(0.0);
  if (eps == 0.0 && lambda.minCoeff() <= 0.0)
    throw NumericalError("fit_whitening: singular covariance needs eps > 0");
  const Eigen::VectorXd inv_sqrt = (lambda.array() + eps).rsqrt().matrix();
  Whitening w;
  w.transform = es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose();
  w.transform = 0.5 * (w.transform + w.transform.transpose()).eval();
  w.mean = center ? mu : Eigen::VectorXd::Zero(mu.size());
  w.eigenvalues = lambda;
  w.eigenvectors = es.eigenvectors();
  w.eps = eps;
  return w;
}

/// The frozen featurizer: K/2 patches, their negatives (implicit), the
/// whitening map, and a unit bias.
///
/// Feature k < K/2 uses patch k; feature k >= K/2 uses the negated patch
/// k - K/2. Raw patches are held at float precision so an in-memory bank and
/// its serialized form produce identical features.
class PatchBank {
 public:
  static constexpr std::uint16_t kVersion = 1;

  PatchBank(std::size_t m, std::size_t bands, Eigen::MatrixXd raw_patches, Eigen::VectorXd mean,
            Eigen::MatrixXd whitening, double eps, std::uint64_t seed)
      : m_(m), bands_(bands), raw_(std::move(raw_patches)), mean_(std::move(mean)),
        white_(std::move(whitening)), eps_(eps), seed_(seed) {
    const auto d = static_cast<Eigen::Index>(m * m * bands);
    detail::require(m >= 1 && bands >= 1, "patch bank: bad geometry");
    detail::require(raw_.rows() >= 1 && raw_.cols() == d, "patch bank: patch matrix shape");
    detail::require(mean_.size() == d && white_.rows() == d && white_.cols() == d,
                    "patch bank: whitening shape");
    raw_ = raw_.cast<float>().cast<double>();
    whitened_ = (raw_.rowwise() - mean_.transpose()) * white_;
    filters_ = white_ * whitened_.transpose();
    fingerprint_ = sha256(serialize());
  }

  std::size_t patch_width() const { return m_; }
  std::size_t bands() const { return bands_; }
  std::size_t dim() const { return m_ * m_ * bands_; }
  std::size_t num_patches() const { return static_cast<std::size_t>(raw_.rows()); }
  std::size_t num_features() const { return 2 * num_patches(); }
  double bias() const { return 1.0; }
  double eps() const { return eps_; }
  std::uint64_t seed() const { return seed_; }

  const Eigen::MatrixXd& raw_patches() const { return raw_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& whitening() const { return white_; }
  /// Rows are W (p - mean) for each stored patch.
  const Eigen::MatrixXd& whitened_patches() const { return whitened_; }
  /// d x K/2 matrix W W (p - mean): a centered sub-window dotted with column
  /// k gives the pre-activation of feature k.
  const Eigen::MatrixXd& filters() const { return filters_; }
  const Fingerprint& fingerprint() const { return fingerprint_; }

  /// "MSKB", version u16, M, S, K u32, eps f64, seed u64, mean (d f64),
  /// whitening (d*d f64 row-major), raw patches (K/2 * d f32); little-endian.
  std::vector<std::uint8_t> serialize() const {
    ByteWriter w;
    w.magic("MSKB");
    w.put<std::uint16_t>(kVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m_));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(bands_));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(num_features()));
    w.put<double>(eps_);
    w.put<std::uint64_t>(seed_);
    for (Eigen::Index i = 0; i < mean_.size(); ++i) w.put<double>(mean_(i));
    for (Eigen::Index r = 0; r < white_.rows(); ++r)
      for (Eigen::Index c = 0; c < white_.cols(); ++c) w.put<double>(white_(r, c));
    for (Eigen::Index p = 0; p < raw_.rows(); ++p)
      for (Eigen::Index c = 0; c < raw_.cols(); ++c) w.put<float>(static_cast<float>(raw_(p, c)));
    return w.bytes();
  }

  void save(const std::string& path) const {
    ByteWriter w;
    const auto bytes = serialize();
    w.raw(bytes.data(), bytes.size());
    w.save(path);
  }

  static PatchBank load(const std::string& path) {
    auto r = ByteReader::load(path);
    r.expect_magic("MSKB");
    if (r.get<std::uint16_t>() != kVersion) throw DataError(path + ": unsupported bank version");
    const auto m = r.get<std::uint32_t>();
    const auto s = r.get<std::uint32_t>();
    const auto k = r.get<std::uint32_t>();
    if (m == 0 || s == 0 || k == 0 || k % 2 != 0) throw DataError(path + ": bad bank header");
    const double eps = r.get<double>();
    const auto seed = r.get<std::uint64_t>();
    const Eigen::Index d = static_cast<Eigen::Index>(m) * m * s;
    Eigen::VectorXd mean(d);
    for (Eigen::Index i = 0; i < d; ++i) mean(i) = r.get<double>();
    Eigen::MatrixXd white(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) white(i, j) = r.get<double>();
    Eigen::MatrixXd raw(k / 2, d);
    for (Eigen::Index p = 0; p < raw.rows(); ++p)
      for (Eigen::Index c = 0; c < d; ++c) raw(p, c) = r.get<float>();
    r.expect_end();
    return PatchBank(m, s, std::move(raw), std::move(mean), std::move(white), eps, seed);
  }

 private:
  std::size_t m_, bands_;
  Eigen::MatrixXd raw_;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd white_;
  double eps_;
  std::uint64_t seed_;
  Eigen::MatrixXd whitened_;
  Eigen::MatrixXd filters_;
  Fingerprint fingerprint_{};
};

struct BankOptions {
  /// Whitening regularizer as a fraction of the largest covariance eigenvalue.
  double eps_rel = 1e-6;
  bool center = true;
};

/// Samples K/2 patches from `images` (the training/validation pool; callers
/// must leave holdout images out) and fits the whitening map on them.
inline PatchBank build_bank(std::span<const Image> images, std::size_t k, std::size_t m,
                            std::uint64_t seed, const BankOptions& opt = {}) {
  detail::require(k >= 2 && k % 2 == 0, "build_bank: K must be even and >= 2");
  detail::require(opt.eps_rel > 0.0, "build_bank: eps_rel must be > 0");
  Eigen::MatrixXd raw = sample_patches(images, k / 2, m, seed).cast<float>().cast<double>();
  // Probe the spectrum once to scale the regularizer.
  const Eigen::MatrixXd centered = raw.rowwise() - raw.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(raw.rows());
  const double top = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(cov, Eigen::EigenvaluesOnly)
                         .eigenvalues()
                         .maxCoeff();
  const double eps = top > 0.0 ? opt.eps_rel * top : opt.eps_rel;
  Whitening w = fit_whitening(raw, eps, opt.center);
  return PatchBank(m, images.front().bands(), std::move(raw), std::move(w.mean),
                   std::move(w.transform), eps, seed);
}

}  // namespace mosaiks
