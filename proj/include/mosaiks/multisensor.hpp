#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mosaiks/error.hpp"
#include "mosaiks/parallel.hpp"
#include "mosaiks/ridge.hpp"

namespace mosaiks {

// ---------------------------------------------------------------------------
// Nightlights features

inline constexpr std::size_t kNightlightBins = 19;
inline constexpr std::size_t kNightlightFeatures = kNightlightBins + 3;
inline constexpr double kNightlightMin = 0.1;    // nW/cm^2/sr
inline constexpr double kNightlightMax = 500.0;

/// 20 edges, log-uniform from 0.1 to 500.
inline std::array<double, kNightlightBins + 1> nightlight_edges() {
  std::array<double, kNightlightBins + 1> e{};
  const double ratio = std::log(kNightlightMax / kNightlightMin);
  for (std::size_t i = 0; i < e.size(); ++i)
    e[i] = kNightlightMin * std::exp(ratio * static_cast<double>(i) / kNightlightBins);
  e.front() = kNightlightMin;
  e.back() = kNightlightMax;
  return e;
}

struct NightlightsFeatures {
  std::array<double, kNightlightBins> counts{};
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;

  std::array<double, kNightlightFeatures> as_array() const {
    std::array<double, kNightlightFeatures> a{};
    std::copy(counts.begin(), counts.end(), a.begin());
    a[kNightlightBins] = min;
    a[kNightlightBins + 1] = mean;
    a[kNightlightBins + 2] = max;
    return a;
  }
};

/// Bin counts over [e_i, e_{i+1}) (the last bin also holds 500) plus
/// min/mean/max of all values. Out-of-range values go to the end bins when
/// `clamp` is set and are left uncounted otherwise.
inline NightlightsFeatures nightlights_features(std::span<const double> values, bool clamp = true) {
  if (values.empty()) throw InvalidArgument("nightlights_features: no values");
  static const auto edges = nightlight_edges();
  static const double log_ratio = std::log(kNightlightMax / kNightlightMin);
  NightlightsFeatures f;
  f.min = std::numeric_limits<double>::infinity();
  f.max = -f.min;
  double sum = 0.0;
  for (double v : values) {
    if (!std::isfinite(v) || v < 0.0) throw DataError("nightlights_features: values must be finite and >= 0");
    f.min = std::min(f.min, v);
    f.max = std::max(f.max, v);
    sum += v;
    std::size_t bin;
    if (v < kNightlightMin || v > kNightlightMax) {
      if (!clamp) continue;
      bin = v < kNightlightMin ? 0 : kNightlightBins - 1;
    } else {
      const double pos = std::floor(kNightlightBins * std::log(v / kNightlightMin) / log_ratio);
      bin = static_cast<std::size_t>(std::clamp(pos, 0.0, double(kNightlightBins - 1)));
      while (bin > 0 && v < edges[bin]) --bin;
      while (bin + 1 < kNightlightBins && v >= edges[bin + 1]) ++bin;
    }
    f.counts[bin] += 1.0;
  }
  f.mean = sum / static_cast<double>(values.size());
  return f;
}

// ---------------------------------------------------------------------------
// Block ridge

/// Ridge over two feature blocks with separate penalties:
/// 1/2 |y - X b - Z g - c|^2 + l1/2 |b|^2 + l2/2 |g|^2.
struct BlockRidgeModel {
  Eigen::VectorXd beta;   // first block, standardized space
  Eigen::VectorXd gamma;  // second block, standardized space
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double intercept = 0.0;
  Standardizer x_std;
  Standardizer z_std;
  double clip_min = -std::numeric_limits<double>::infinity();
  double clip_max = std::numeric_limits<double>::infinity();

  Eigen::VectorXd score(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z) const {
    if (x.cols() != beta.size() || z.cols() != gamma.size() || x.rows() != z.rows())
      throw InvalidArgument("block model: block dimensions do not match");
    return (x_std.apply(x) * beta + z_std.apply(z) * gamma).array() + intercept;
  }

  Eigen::VectorXd predict(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, bool clip = true) const {
    Eigen::VectorXd s = score(x, z);
    if (clip) s = s.cwiseMax(clip_min).cwiseMin(clip_max);
    return s;
  }
};

namespace detail {

// Centered normal equations of the standardized, concatenated training rows;
// solved for any penalty pair by rescaling.
class BlockSystem {
 public:
  BlockSystem(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
              std::span<const std::size_t> rows, bool standardize) {
    const Eigen::MatrixXd xr = take_rows(x, rows);
    const Eigen::MatrixXd zr = take_rows(z, rows);
    const Eigen::VectorXd yr = take_rows(y, rows);
    if (!xr.allFinite() || !zr.allFinite() || !yr.allFinite())
      throw DataError("block ridge: non-finite inputs");
    x_std_ = Standardizer::fit(xr, standardize);
    z_std_ = Standardizer::fit(zr, standardize);
    k1_ = xr.cols();
    Eigen::MatrixXd a(xr.rows(), xr.cols() + zr.cols());
    a << x_std_.apply(xr), z_std_.apply(zr);
    a_mean_ = a.colwise().mean().transpose();
    a.rowwise() -= a_mean_.transpose();
    y_mean_ = yr.mean();
    gram_ = a.transpose() * a;
    rhs_ = a.transpose() * (yr.array() - y_mean_).matrix();
    clip_min_ = yr.minCoeff();
    clip_max_ = yr.maxCoeff();
  }

  BlockRidgeModel solve(double lambda1, double lambda2) const {
    if (!(lambda1 > 0.0) || !(lambda2 > 0.0) || !std::isfinite(lambda1) || !std::isfinite(lambda2))
      throw InvalidArgument("block ridge: penalties must be positive and finite");
    const Eigen::Index k = gram_.rows();
    Eigen::VectorXd s(k);
    s.head(k1_).setConstant(1.0 / std::sqrt(lambda1));
    s.tail(k - k1_).setConstant(1.0 / std::sqrt(lambda2));
    // Unit-penalty ridge on the rescaled blocks, then undo the scaling.
    Eigen::MatrixXd m = s.asDiagonal() * gram_ * s.asDiagonal();
    m.diagonal().array() += 1.0;
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) throw NumericalError("block ridge: factorization failed");
    const Eigen::VectorXd coef = s.cwiseProduct(llt.solve(s.cwiseProduct(rhs_)));
    BlockRidgeModel out;
    out.beta = coef.head(k1_);
    out.gamma = coef.tail(k - k1_);
    out.lambda1 = lambda1;
    out.lambda2 = lambda2;
    out.intercept = y_mean_ - a_mean_.dot(coef);
    out.x_std = x_std_;
    out.z_std = z_std_;
    out.clip_min = clip_min_;
    out.clip_max = clip_max_;
    return out;
  }

 private:
  Standardizer x_std_, z_std_;
  Eigen::Index k1_ = 0;
  Eigen::VectorXd a_mean_;
  double y_mean_ = 0.0;
  Eigen::MatrixXd gram_;
  Eigen::VectorXd rhs_;
  double clip_min_ = 0.0, clip_max_ = 0.0;
};

}  // namespace detail

inline BlockRidgeModel fit_block_ridge(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z,
                                       const Eigen::VectorXd& y, double lambda1, double lambda2,
                                       bool standardize = true) {
  if (x.rows() != z.rows() || x.rows() != y.size() || x.rows() < 1)
    throw InvalidArgument("block ridge: row counts disagree");
  std::vector<std::size_t> rows(static_cast<std::size_t>(x.rows()));
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return detail::BlockSystem(x, z, y, rows, standardize).solve(lambda1, lambda2);
}

struct BlockCvReport {
  std::vector<double> lambdas1;
  std::vector<double> lambdas2;
  std::size_t folds = 0;
  std::vector<std::vector<double>> r2;  // [i1 * n2 + i2][fold]
  std::vector<double> mean_r2;          // [i1 * n2 + i2]
  std::size_t best = 0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;

  double best_mean() const { return mean_r2[best]; }
};

/// Exhaustive (lambda1, lambda2) grid with the fold assignment of
/// tune_lambda for the same seed. Ties go to the lexicographically smallest
/// pair.
inline BlockCvReport tune_block(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z,
                                const Eigen::VectorXd& y, std::span<const double> grid1,
                                std::span<const double> grid2, std::size_t folds,
                                std::uint64_t seed, bool standardize = true,
                                std::size_t threads = 1) {
  detail::require(!grid1.empty() && !grid2.empty(), "tune_block: penalty grids must be nonempty");
  if (x.rows() != z.rows() || x.rows() != y.size())
    throw InvalidArgument("tune_block: row counts disagree");
  const auto n = static_cast<std::size_t>(x.rows());
  const auto fold_of = kfold_assign(n, folds, seed);
  const std::size_t pairs = grid1.size() * grid2.size();
  BlockCvReport rep;
  rep.lambdas1.assign(grid1.begin(), grid1.end());
  rep.lambdas2.assign(grid2.begin(), grid2.end());
  rep.folds = folds;
  rep.r2.assign(pairs, std::vector<double>(folds, std::numeric_limits<double>::quiet_NaN()));
  parallel_for(folds, threads, [&](std::size_t f) {
    std::vector<std::size_t> train, val;
    for (std::size_t i = 0; i < n; ++i) (fold_of[i] == f ? val : train).push_back(i);
    const detail::BlockSystem sys(x, z, y, train, standardize);
    const Eigen::MatrixXd xv = detail::take_rows(x, val);
    const Eigen::MatrixXd zv = detail::take_rows(z, val);
    const Eigen::VectorXd yv = detail::take_rows(y, val);
    if (yv.size() < 2 || !((yv.array() - yv.mean()).square().sum() > 0.0)) return;
    for (std::size_t i1 = 0; i1 < grid1.size(); ++i1)
      for (std::size_t i2 = 0; i2 < grid2.size(); ++i2)
        rep.r2[i1 * grid2.size() + i2][f] =
            r_squared(yv, sys.solve(grid1[i1], grid2[i2]).predict(xv, zv));
  });
  rep.mean_r2.assign(pairs, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t p = 0; p < pairs; ++p) {
    double sum = 0.0;
    std::size_t cnt = 0;
    for (double v : rep.r2[p])
      if (std::isfinite(v)) sum += v, ++cnt;
    if (cnt) rep.mean_r2[p] = sum / static_cast<double>(cnt);
  }
  rep.best = argmax_first(rep.mean_r2);
  if (rep.best == pairs) throw NumericalError("tune_block: validation labels have zero variance");
  rep.lambda1 = grid1[rep.best / grid2.size()];
  rep.lambda2 = grid2[rep.best % grid2.size()];
  return rep;
}

}  // namespace mosaiks
