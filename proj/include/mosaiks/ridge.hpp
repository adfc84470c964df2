#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mosaiks/binary_io.hpp"
#include "mosaiks/error.hpp"
#include "mosaiks/parallel.hpp"
#include "mosaiks/rng.hpp"

namespace mosaiks {

// ---------------------------------------------------------------------------
// Label transforms

enum class LabelTransform : std::uint32_t { Identity = 0, Log1p = 1, Log = 2 };

inline const char* to_string(LabelTransform t) {
  switch (t) {
    case LabelTransform::Identity: return "identity";
    case LabelTransform::Log1p: return "log1p";
    case LabelTransform::Log: return "log";
  }
  return "?";
}

inline LabelTransform parse_transform(const std::string& s) {
  if (s == "identity") return LabelTransform::Identity;
  if (s == "log1p") return LabelTransform::Log1p;
  if (s == "log") return LabelTransform::Log;
  throw InvalidArgument("unknown label transform: " + s);
}

inline Eigen::VectorXd transform_labels(const Eigen::VectorXd& y, LabelTransform kind) {
  Eigen::VectorXd out(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double v = y(i);
    if (!std::isfinite(v)) throw DataError("label row " + std::to_string(i) + " is not finite");
    switch (kind) {
      case LabelTransform::Identity: out(i) = v; break;
      case LabelTransform::Log1p:
        if (v < 0.0)
          throw DataError("log1p transform needs labels >= 0; row " + std::to_string(i) +
                          " is " + std::to_string(v));
        out(i) = std::log1p(v);
        break;
      case LabelTransform::Log:
        if (v <= 0.0)
          throw DataError("log transform needs labels > 0; row " + std::to_string(i) + " is " +
                          std::to_string(v));
        out(i) = std::log(v);
        break;
    }
  }
  return out;
}

inline double inverse_transform(double v, LabelTransform kind) {
  switch (kind) {
    case LabelTransform::Identity: return v;
    case LabelTransform::Log1p: return std::expm1(v);
    case LabelTransform::Log: return std::exp(v);
  }
  return v;
}

inline Eigen::VectorXd inverse_transform(const Eigen::VectorXd& t, LabelTransform kind) {
  Eigen::VectorXd out(t.size());
  for (Eigen::Index i = 0; i < t.size(); ++i) out(i) = inverse_transform(t(i), kind);
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

/// 1 - SSE / SST. Negative when worse than predicting the mean.
inline double r_squared(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat) {
  if (y.size() != yhat.size()) throw InvalidArgument("r_squared: length mismatch");
  if (y.size() < 2) throw InvalidArgument("r_squared: need at least two values");
  const double mean = y.mean();
  const double sst = (y.array() - mean).square().sum();
  if (!(sst > 0.0)) throw NumericalError("r_squared: labels have zero variance");
  return 1.0 - (y - yhat).squaredNorm() / sst;
}

/// Pearson correlation of two weight vectors.
inline double weight_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw InvalidArgument("weight_similarity: vectors must have equal length >= 2");
  const Eigen::ArrayXd ca = a.array() - a.mean();
  const Eigen::ArrayXd cb = b.array() - b.mean();
  const double na = std::sqrt((ca * ca).sum());
  const double nb = std::sqrt((cb * cb).sum());
  if (!(na > 0.0) || !(nb > 0.0)) throw NumericalError("weight_similarity: zero-variance weights");
  return (ca * cb).sum() / (na * nb);
}

// ---------------------------------------------------------------------------
// Solver

struct RidgeFit {
  Eigen::VectorXd beta;
  double intercept = 0.0;
};

/// Ridge regression with an unpenalized intercept, factored once and solved
/// cheaply for any number of penalties.
///
/// Minimizes 1/2 |y - X b - c|^2 + lambda/2 |b|^2. The centered system is
/// eigendecomposed as Xc^T Xc (K x K) when N >= K and as Xc Xc^T (N x N)
/// otherwise. At lambda = 0, directions with numerically zero eigenvalue are
/// dropped, giving the minimum-norm least-squares solution.
class RidgePath {
 public:
  RidgePath(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    if (x.rows() < 1 || x.rows() != y.size()) throw InvalidArgument("ridge: shape mismatch");
    if (!x.allFinite() || !y.allFinite()) throw DataError("ridge: non-finite inputs");
    x_mean_ = x.colwise().mean().transpose();
    y_mean_ = y.mean();
    Eigen::MatrixXd xc = x.rowwise() - x_mean_.transpose();
    const Eigen::VectorXd yc = y.array() - y_mean_;
    dual_ = x.rows() < x.cols();
    const Eigen::MatrixXd gram = dual_ ? Eigen::MatrixXd(xc * xc.transpose())
                                       : Eigen::MatrixXd(xc.transpose() * xc);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    if (es.info() != Eigen::Success) throw NumericalError("ridge: eigendecomposition failed");
    evals_ = es.eigenvalues().cwiseMax(0.0);
    basis_ = es.eigenvectors();
    proj_ = dual_ ? Eigen::VectorXd(basis_.transpose() * yc)
                  : Eigen::VectorXd(basis_.transpose() * (xc.transpose() * yc));
    const double top = evals_.size() ? evals_.maxCoeff() : 0.0;
    tol_ = top * static_cast<double>(std::max(x.rows(), x.cols())) *
           std::numeric_limits<double>::epsilon();
    if (dual_) xc_ = std::move(xc);
  }

  RidgeFit solve(double lambda) const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("ridge: lambda must be >= 0");
    Eigen::VectorXd coef(evals_.size());
    for (Eigen::Index i = 0; i < evals_.size(); ++i) {
      const double denom = evals_(i) + lambda;
      coef(i) = (lambda == 0.0 && evals_(i) <= tol_) ? 0.0 : proj_(i) / denom;
    }
    RidgeFit fit;
    fit.beta = dual_ ? Eigen::VectorXd(xc_.transpose() * (basis_ * coef))
                     : Eigen::VectorXd(basis_ * coef);
    fit.intercept = y_mean_ - x_mean_.dot(fit.beta);
    return fit;
  }

 private:
  bool dual_ = false;
  Eigen::VectorXd x_mean_;
  double y_mean_ = 0.0;
  Eigen::VectorXd evals_;
  Eigen::MatrixXd basis_;
  Eigen::VectorXd proj_;
  Eigen::MatrixXd xc_;
  double tol_ = 0.0;
};

inline RidgeFit fit_ridge(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda) {
  if (!(lambda >= 0.0)) throw InvalidArgument("ridge: lambda must be >= 0");
  return RidgePath(x, y).solve(lambda);
}

// ---------------------------------------------------------------------------
// Models

/// Column centering and scaling fitted on training rows only.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static Standardizer fit(const Eigen::MatrixXd& x, bool enabled) {
    Standardizer s;
    if (!enabled) {
      s.mean = Eigen::VectorXd::Zero(x.cols());
      s.scale = Eigen::VectorXd::Ones(x.cols());
      return s;
    }
    s.mean = x.colwise().mean().transpose();
    s.scale.resize(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double sd = std::sqrt((x.col(c).array() - s.mean(c)).square().mean());
      s.scale(c) = sd > 0.0 ? sd : 1.0;
    }
    return s;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    return (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }
};

struct RidgeOptions {
  bool standardize = true;
  bool clip = true;
  LabelTransform transform = LabelTransform::Identity;
};

/// One task's fitted linear layer. Weights live in standardized feature
/// space and predictions in transformed label space until inverted.
struct RidgeModel {
  static constexpr std::uint16_t kVersion = 1;

  Eigen::VectorXd beta;
  double intercept = 0.0;
  double lambda = 0.0;
  LabelTransform transform = LabelTransform::Identity;
  double clip_min = -std::numeric_limits<double>::infinity();
  double clip_max = std::numeric_limits<double>::infinity();
  Eigen::VectorXd col_mean;
  Eigen::VectorXd col_scale;
  Fingerprint bank_fingerprint{};

  std::size_t num_features() const { return static_cast<std::size_t>(beta.size()); }

  /// Linear score in transformed space, before clipping.
  Eigen::VectorXd score(const Eigen::MatrixXd& x) const {
    if (x.cols() != beta.size())
      throw DataError("model expects " + std::to_string(beta.size()) + " feature columns, got " +
                      std::to_string(x.cols()));
    const Eigen::VectorXd w = beta.cwiseQuotient(col_scale);
    return (x * w).array() + (intercept - col_mean.dot(w));
  }

  Eigen::VectorXd predict_transformed(const Eigen::MatrixXd& x, bool clip = true) const {
    Eigen::VectorXd s = score(x);
    if (clip) s = s.cwiseMax(clip_min).cwiseMin(clip_max);
    return s;
  }

  /// Predictions in the original label space, clipped to the training range.
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    return inverse_transform(predict_transformed(x, true), transform);
  }

  /// Fit residuals in transformed space (the regression noise term).
  Eigen::VectorXd residuals(const Eigen::MatrixXd& x, const Eigen::VectorXd& y_transformed) const {
    return y_transformed - score(x);
  }

  std::vector<std::uint8_t> serialize() const {
    ByteWriter w;
    w.magic("MSKM");
    w.put<std::uint16_t>(kVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(beta.size()));
    w.raw(bank_fingerprint.data(), bank_fingerprint.size());
    w.put<double>(lambda);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(transform));
    w.put<double>(clip_min);
    w.put<double>(clip_max);
    for (const auto* v : {&col_mean, &col_scale, &beta})
      for (Eigen::Index i = 0; i < v->size(); ++i) w.put<double>((*v)(i));
    w.put<double>(intercept);
    return w.bytes();
  }

  void save(const std::string& path) const {
    ByteWriter w;
    const auto b = serialize();
    w.raw(b.data(), b.size());
    w.save(path);
  }

  static RidgeModel load(const std::string& path) {
    auto r = ByteReader::load(path);
    r.expect_magic("MSKM");
    if (r.get<std::uint16_t>() != kVersion) throw DataError(path + ": unsupported model version");
    const auto k = r.get<std::uint32_t>();
    RidgeModel m;
    r.raw(m.bank_fingerprint.data(), m.bank_fingerprint.size());
    m.lambda = r.get<double>();
    const auto t = r.get<std::uint32_t>();
    if (t > 2) throw DataError(path + ": unknown label transform");
    m.transform = static_cast<LabelTransform>(t);
    m.clip_min = r.get<double>();
    m.clip_max = r.get<double>();
    for (auto* v : {&m.col_mean, &m.col_scale, &m.beta}) {
      v->resize(k);
      for (std::uint32_t i = 0; i < k; ++i) (*v)(i) = r.get<double>();
    }
    m.intercept = r.get<double>();
    r.expect_end();
    return m;
  }
};

namespace detail {

inline Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, std::span<const std::size_t> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

inline Eigen::VectorXd take_rows(const Eigen::VectorXd& y, std::span<const std::size_t> rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    out(static_cast<Eigen::Index>(i)) = y(static_cast<Eigen::Index>(rows[i]));
  return out;
}

}  // namespace detail

/// Fits one model per penalty using only `rows` of (x, y). Labels are in
/// transformed space; standardization and clip bounds come from those rows.
inline std::vector<RidgeModel> fit_models(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                          std::span<const std::size_t> rows,
                                          std::span<const double> lambdas,
                                          const RidgeOptions& opt = {}) {
  detail::require(!rows.empty(), "fit_models: no training rows");
  const Eigen::MatrixXd xr = detail::take_rows(x, rows);
  const Eigen::VectorXd yr = detail::take_rows(y, rows);
  const Standardizer st = Standardizer::fit(xr, opt.standardize);
  const RidgePath path(st.apply(xr), yr);
  std::vector<RidgeModel> models;
  models.reserve(lambdas.size());
  for (double lambda : lambdas) {
    RidgeFit f = path.solve(lambda);
    RidgeModel m;
    m.beta = std::move(f.beta);
    m.intercept = f.intercept;
    m.lambda = lambda;
    m.transform = opt.transform;
    m.clip_min = yr.minCoeff();
    m.clip_max = yr.maxCoeff();
    m.col_mean = st.mean;
    m.col_scale = st.scale;
    models.push_back(std::move(m));
  }
  return models;
}

inline RidgeModel fit_model(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                            std::span<const std::size_t> rows, double lambda,
                            const RidgeOptions& opt = {}) {
  return fit_models(x, y, rows, std::span<const double>(&lambda, 1), opt).front();
}

// ---------------------------------------------------------------------------
// Data separation

struct HoldoutSplit {
  std::vector<std::size_t> train;  // training + validation pool
  std::vector<std::size_t> test;
};

/// Uniformly random holdout of round(frac * n) rows (at least one on each
/// side). Both index lists are sorted.
inline HoldoutSplit holdout_split(std::size_t n, double frac, std::uint64_t seed) {
  if (n < 2) throw InvalidArgument("holdout_split: need at least two rows");
  if (!(frac > 0.0 && frac < 1.0)) throw InvalidArgument("holdout_split: frac must be in (0,1)");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed, "holdout");
  rng.shuffle(perm.begin(), perm.end());
  const auto n_test = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(frac * static_cast<double>(n))), 1, n - 1);
  HoldoutSplit s;
  s.test.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

/// Random fold label per row; fold sizes differ by at most one.
inline std::vector<std::size_t> kfold_assign(std::size_t n, std::size_t folds, std::uint64_t seed) {
  if (folds < 2) throw InvalidArgument("kfold_assign: need at least two folds");
  if (n < folds) throw InvalidArgument("kfold_assign: fewer rows than folds");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed, "folds");
  rng.shuffle(perm.begin(), perm.end());
  std::vector<std::size_t> label(n);
  for (std::size_t i = 0; i < n; ++i) label[perm[i]] = i % folds;
  return label;
}

/// Twelve penalties log-spaced over [1e-4, 1e4].
inline std::vector<double> default_lambda_grid() {
  std::vector<double> g(12);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::pow(10.0, -4.0 + 8.0 * i / 11.0);
  return g;
}

// ---------------------------------------------------------------------------
// Cross-validation

/// Index of the best finite score; later entries must beat the incumbent by
/// more than 1e-12 (relative), so near-ties go to the earliest entry.
inline std::size_t argmax_first(const std::vector<double>& score) {
  std::size_t best = score.size();
  for (std::size_t i = 0; i < score.size(); ++i) {
    if (!std::isfinite(score[i])) continue;
    if (best == score.size() ||
        score[i] > score[best] + 1e-12 * std::max(1.0, std::abs(score[best])))
      best = i;
  }
  return best;
}

struct CvReport {
  std::vector<double> lambdas;
  std::size_t folds = 0;
  std::vector<std::size_t> fold_of;        // fold label per row
  std::vector<std::vector<double>> r2;     // [lambda][fold], NaN when missing
  std::vector<double> mean_r2;             // per lambda, over non-missing folds
  std::size_t best = 0;
  double chosen_lambda = 0.0;
  bool boundary = false;                   // best lambda is the grid's first or last
  bool degenerate_folds = false;           // some fold had zero label variance

  double best_mean() const { return mean_r2[best]; }
  std::pair<double, double> best_spread() const {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double v : r2[best])
      if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
    return {lo, hi};
  }
};

inline void check_lambda_grid(std::span<const double> lambdas) {
  detail::require(!lambdas.empty(), "lambda grid is empty");
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    detail::require(lambdas[i] >= 0.0 && std::isfinite(lambdas[i]), "lambdas must be >= 0");
    if (i) detail::require(lambdas[i] > lambdas[i - 1], "lambda grid must be strictly ascending");
  }
}

/// Validation R^2 of each fitted model on `rows`, NaN if the labels there
/// have zero variance.
inline std::vector<double> validation_r2(const std::vector<RidgeModel>& models,
                                         const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                         std::span<const std::size_t> rows, bool clip) {
  const Eigen::MatrixXd xv = detail::take_rows(x, rows);
  const Eigen::VectorXd yv = detail::take_rows(y, rows);
  std::vector<double> out(models.size(), std::numeric_limits<double>::quiet_NaN());
  if (yv.size() < 2 || !((yv.array() - yv.mean()).square().sum() > 0.0)) return out;
  for (std::size_t l = 0; l < models.size(); ++l)
    out[l] = r_squared(yv, models[l].predict_transformed(xv, clip));
  return out;
}

/// K-fold CV over the penalty grid. Each fold standardizes and fits on its
/// training rows only; the chosen penalty maximizes mean validation R^2.
inline CvReport tune_lambda(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                            std::span<const double> lambdas, std::size_t folds,
                            std::uint64_t seed, const RidgeOptions& opt = {},
                            std::size_t threads = 1) {
  check_lambda_grid(lambdas);
  if (x.rows() != y.size()) throw InvalidArgument("tune_lambda: shape mismatch");
  const auto n = static_cast<std::size_t>(x.rows());
  CvReport rep;
  rep.lambdas.assign(lambdas.begin(), lambdas.end());
  rep.folds = folds;
  rep.fold_of = kfold_assign(n, folds, seed);
  std::vector<std::vector<double>> by_fold(folds);
  parallel_for(folds, threads, [&](std::size_t f) {
    std::vector<std::size_t> train, val;
    for (std::size_t i = 0; i < n; ++i) (rep.fold_of[i] == f ? val : train).push_back(i);
    const auto models = fit_models(x, y, train, lambdas, opt);
    by_fold[f] = validation_r2(models, x, y, val, opt.clip);
  });
  rep.r2.assign(lambdas.size(), std::vector<double>(folds));
  rep.mean_r2.assign(lambdas.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t l = 0; l < lambdas.size(); ++l) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t f = 0; f < folds; ++f) {
      rep.r2[l][f] = by_fold[f][l];
      if (std::isfinite(by_fold[f][l])) sum += by_fold[f][l], ++count;
      else rep.degenerate_folds = true;
    }
    if (count) rep.mean_r2[l] = sum / static_cast<double>(count);
  }
  rep.best = argmax_first(rep.mean_r2);
  if (rep.best == rep.mean_r2.size())
    throw NumericalError("tune_lambda: every validation fold has zero label variance");
  rep.chosen_lambda = lambdas[rep.best];
  rep.boundary = lambdas.size() > 1 && (rep.best == 0 || rep.best + 1 == lambdas.size());
  return rep;
}

}  // namespace mosaiks
