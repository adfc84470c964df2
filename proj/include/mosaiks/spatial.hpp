#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mosaiks/error.hpp"
#include "mosaiks/grid.hpp"
#include "mosaiks/parallel.hpp"
#include "mosaiks/ridge.hpp"

namespace mosaiks {

// ---------------------------------------------------------------------------
// Checkerboard partitions

enum class Offset { Base, Right, Up, Both };
enum class Color { Black, White };

inline constexpr std::array<Offset, 4> kOffsets{Offset::Base, Offset::Right, Offset::Up,
                                                Offset::Both};

inline const char* to_string(Offset o) {
  switch (o) {
    case Offset::Base: return "base";
    case Offset::Right: return "right";
    case Offset::Up: return "up";
    case Offset::Both: return "both";
  }
  return "?";
}

/// Checkerboard widths in degrees used by default for distance sweeps.
inline std::vector<double> default_deltas() {
  return {0.5, 1.5, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0};
}

/// Squares of side delta anchored at (0, 0), shifted by half a square to the
/// right (longitude) and/or up (latitude). Even parity is black. Points on a
/// square edge belong to the square above/right of it (floor rule).
inline Color checkerboard_assign(LatLon p, double delta, Offset offset) {
  if (!(delta > 0.0)) throw InvalidArgument("checkerboard: delta must be > 0");
  const double sx = (offset == Offset::Right || offset == Offset::Both) ? delta / 2 : 0.0;
  const double sy = (offset == Offset::Up || offset == Offset::Both) ? delta / 2 : 0.0;
  const auto cx = static_cast<long long>(std::floor((p.lon - sx) / delta));
  const auto cy = static_cast<long long>(std::floor((p.lat - sy) / delta));
  return ((cx + cy) % 2 == 0) ? Color::Black : Color::White;
}

struct CheckerboardSplit {
  double delta = 0.0;
  Offset offset = Offset::Base;
  std::vector<std::size_t> black;  // training rows
  std::vector<std::size_t> white;  // validation rows

  bool degenerate() const { return black.empty() || white.empty(); }
};

inline CheckerboardSplit checkerboard_split(std::span<const LatLon> locs, double delta,
                                            Offset offset) {
  CheckerboardSplit s;
  s.delta = delta;
  s.offset = offset;
  for (std::size_t i = 0; i < locs.size(); ++i)
    (checkerboard_assign(locs[i], delta, offset) == Color::Black ? s.black : s.white).push_back(i);
  return s;
}

// ---------------------------------------------------------------------------
// Gaussian RBF interpolation

struct RbfInterpolator {
  std::vector<LatLon> points;
  std::vector<double> labels;
  double sigma = 1.0;          // degrees
  double cutoff_sigmas = 0.0;  // ignore points beyond this many sigmas; 0 disables
};

/// Kernel-weighted mean of training labels with weights
/// exp(-|l_t - l_v|^2 / (2 sigma^2)), Euclidean in degrees. Each query's
/// weights are scaled by the weight of its nearest point, so they cannot all
/// underflow.
inline std::vector<double> rbf_predict(const RbfInterpolator& rbf, std::span<const LatLon> queries,
                                       std::size_t threads = 1) {
  if (rbf.points.empty()) throw InvalidArgument("rbf: no training points");
  if (rbf.points.size() != rbf.labels.size()) throw InvalidArgument("rbf: points/labels mismatch");
  if (!(rbf.sigma > 0.0) || !std::isfinite(rbf.sigma)) throw InvalidArgument("rbf: sigma must be > 0");
  const auto [lo_it, hi_it] = std::minmax_element(rbf.labels.begin(), rbf.labels.end());
  const double lo = *lo_it, hi = *hi_it;
  const double inv2s2 = 1.0 / (2.0 * rbf.sigma * rbf.sigma);
  const double cutoff2 = rbf.cutoff_sigmas > 0.0
                             ? std::pow(rbf.cutoff_sigmas * rbf.sigma, 2)
                             : std::numeric_limits<double>::infinity();
  constexpr std::size_t tile = 256;
  const std::size_t tiles = (queries.size() + tile - 1) / tile;
  std::vector<double> out(queries.size());
  parallel_for(tiles, threads, [&](std::size_t t) {
    std::vector<double> d2(rbf.points.size());
    const std::size_t end = std::min(queries.size(), (t + 1) * tile);
    for (std::size_t q = t * tile; q < end; ++q) {
      double nearest = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < rbf.points.size(); ++i) {
        const double dy = rbf.points[i].lat - queries[q].lat;
        const double dx = rbf.points[i].lon - queries[q].lon;
        d2[i] = dx * dx + dy * dy;
        nearest = std::min(nearest, d2[i]);
      }
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < rbf.points.size(); ++i) {
        if (d2[i] > cutoff2 && d2[i] > nearest) continue;
        const double w = std::exp(-(d2[i] - nearest) * inv2s2);
        num += w * rbf.labels[i];
        den += w;
      }
      if (!(den > 0.0)) throw NumericalError("rbf: all weights vanished");
      out[q] = std::clamp(num / den, lo, hi);
    }
  });
  return out;
}

struct TrainValSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

struct SigmaReport {
  std::vector<double> sigmas;
  std::vector<std::vector<double>> r2;  // [sigma][split], NaN when undefined
  std::vector<double> mean_r2;
  std::size_t best = 0;
  double chosen_sigma = 0.0;
};

/// Picks the bandwidth with the best mean validation R^2 over the splits;
/// ties go to the smallest sigma.
inline SigmaReport tune_sigma(std::span<const LatLon> locs, std::span<const double> labels,
                              std::span<const TrainValSplit> splits, std::span<const double> sigmas,
                              std::size_t threads = 1) {
  detail::require(!sigmas.empty(), "tune_sigma: sigma grid is empty");
  detail::require(!splits.empty(), "tune_sigma: no splits");
  detail::require(locs.size() == labels.size(), "tune_sigma: locations/labels mismatch");
  for (const auto& s : splits) {
    if (s.val.empty()) throw InvalidArgument("tune_sigma: empty validation set");
    if (s.train.empty()) throw InvalidArgument("tune_sigma: empty training set");
  }
  SigmaReport rep;
  rep.sigmas.assign(sigmas.begin(), sigmas.end());
  rep.r2.assign(sigmas.size(), std::vector<double>(splits.size()));
  parallel_for(sigmas.size() * splits.size(), threads, [&](std::size_t job) {
    const std::size_t si = job / splits.size(), sp = job % splits.size();
    const auto& split = splits[sp];
    RbfInterpolator rbf;
    rbf.sigma = sigmas[si];
    for (auto i : split.train) {
      rbf.points.push_back(locs[i]);
      rbf.labels.push_back(labels[i]);
    }
    std::vector<LatLon> q;
    Eigen::VectorXd yv(static_cast<Eigen::Index>(split.val.size()));
    for (std::size_t k = 0; k < split.val.size(); ++k) {
      q.push_back(locs[split.val[k]]);
      yv(static_cast<Eigen::Index>(k)) = labels[split.val[k]];
    }
    double r2 = std::numeric_limits<double>::quiet_NaN();
    if (yv.size() >= 2 && (yv.array() - yv.mean()).square().sum() > 0.0) {
      const auto pred = rbf_predict(rbf, q);
      r2 = r_squared(yv, Eigen::Map<const Eigen::VectorXd>(pred.data(), yv.size()));
    }
    rep.r2[si][sp] = r2;
  });
  rep.mean_r2.assign(sigmas.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t si = 0; si < sigmas.size(); ++si) {
    double sum = 0.0;
    std::size_t n = 0;
    for (double v : rep.r2[si])
      if (std::isfinite(v)) sum += v, ++n;
    if (n) rep.mean_r2[si] = sum / static_cast<double>(n);
  }
  rep.best = argmax_first(rep.mean_r2);
  if (rep.best == rep.mean_r2.size())
    throw NumericalError("tune_sigma: validation labels have zero variance");
  rep.chosen_sigma = sigmas[rep.best];
  return rep;
}

/// Ten bandwidths log-spaced over [0.01, 10] degrees.
inline std::vector<double> default_sigma_grid() {
  std::vector<double> g(10);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::pow(10.0, -2.0 + 3.0 * i / 9.0);
  return g;
}

// ---------------------------------------------------------------------------
// Distance sweep

struct OffsetRun {
  Offset offset = Offset::Base;
  bool skipped = false;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  double ridge_r2 = std::numeric_limits<double>::quiet_NaN();
  double rbf_r2 = std::numeric_limits<double>::quiet_NaN();
};

struct Band {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double min = std::numeric_limits<double>::quiet_NaN();
  double max = std::numeric_limits<double>::quiet_NaN();
};

struct DeltaResult {
  double delta = 0.0;
  std::array<OffsetRun, 4> runs{};
  bool skipped = false;  // every offset degenerate
  double lambda = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> mean_r2_by_lambda;
  Band ridge;
  double sigma = std::numeric_limits<double>::quiet_NaN();
  Band rbf;
};

struct CheckerboardOptions {
  std::vector<double> deltas = default_deltas();
  std::vector<double> lambdas = default_lambda_grid();
  RidgeOptions ridge;
  bool run_ridge = true;
  bool run_rbf = false;
  std::vector<double> sigmas = default_sigma_grid();
  std::size_t threads = 1;
};

namespace detail {

inline Band band_of(const std::array<OffsetRun, 4>& runs, double OffsetRun::*field) {
  Band b;
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : runs) {
    const double v = r.*field;
    if (r.skipped || !std::isfinite(v)) continue;
    b.min = n ? std::min(b.min, v) : v;
    b.max = n ? std::max(b.max, v) : v;
    sum += v;
    ++n;
  }
  if (n) b.mean = sum / static_cast<double>(n);
  return b;
}

}  // namespace detail

/// For each delta and each of the four offsets, trains on black squares and
/// validates on white ones. The ridge penalty (and RBF bandwidth) is chosen
/// per delta to maximize mean validation R^2 across the four offsets. Ridge
/// and RBF see identical train/validation rows.
inline std::vector<DeltaResult> checkerboard_experiment(const Eigen::MatrixXd& x,
                                                        const Eigen::VectorXd& y,
                                                        std::span<const LatLon> locs,
                                                        const CheckerboardOptions& opt) {
  if (static_cast<std::size_t>(y.size()) != locs.size())
    throw InvalidArgument("checkerboard: labels and locations misaligned");
  if (opt.run_ridge) {
    if (x.rows() != y.size()) throw InvalidArgument("checkerboard: features and labels misaligned");
    check_lambda_grid(opt.lambdas);
  }
  for (double d : opt.deltas) detail::require(d > 0.0, "checkerboard: deltas must be > 0");

  const std::size_t nd = opt.deltas.size();
  std::vector<CheckerboardSplit> splits(nd * 4);
  for (std::size_t di = 0; di < nd; ++di)
    for (std::size_t o = 0; o < 4; ++o)
      splits[di * 4 + o] = checkerboard_split(locs, opt.deltas[di], kOffsets[o]);

  // Validation R^2 per (delta, offset) for every lambda.
  std::vector<std::vector<double>> ridge_r2(splits.size());
  if (opt.run_ridge) {
    parallel_for(splits.size(), opt.threads, [&](std::size_t j) {
      const auto& s = splits[j];
      if (s.degenerate()) return;
      const auto models = fit_models(x, y, s.black, opt.lambdas, opt.ridge);
      ridge_r2[j] = validation_r2(models, x, y, s.white, opt.ridge.clip);
    });
  }

  std::vector<DeltaResult> out(nd);
  std::vector<double> labels(y.data(), y.data() + y.size());
  for (std::size_t di = 0; di < nd; ++di) {
    DeltaResult& r = out[di];
    r.delta = opt.deltas[di];
    std::vector<TrainValSplit> live;
    std::vector<std::size_t> live_offset;
    for (std::size_t o = 0; o < 4; ++o) {
      const auto& s = splits[di * 4 + o];
      r.runs[o].offset = kOffsets[o];
      r.runs[o].skipped = s.degenerate();
      r.runs[o].n_train = s.black.size();
      r.runs[o].n_val = s.white.size();
      if (!s.degenerate()) {
        live.push_back({s.black, s.white});
        live_offset.push_back(o);
      }
    }
    r.skipped = live.empty();
    if (r.skipped) continue;

    if (opt.run_ridge) {
      r.mean_r2_by_lambda.assign(opt.lambdas.size(), std::numeric_limits<double>::quiet_NaN());
      for (std::size_t l = 0; l < opt.lambdas.size(); ++l) {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t o : live_offset) {
          const double v = ridge_r2[di * 4 + o][l];
          if (std::isfinite(v)) sum += v, ++n;
        }
        if (n) r.mean_r2_by_lambda[l] = sum / static_cast<double>(n);
      }
      const std::size_t best = argmax_first(r.mean_r2_by_lambda);
      if (best < opt.lambdas.size()) {
        r.lambda = opt.lambdas[best];
        for (std::size_t o : live_offset) r.runs[o].ridge_r2 = ridge_r2[di * 4 + o][best];
      }
      r.ridge = detail::band_of(r.runs, &OffsetRun::ridge_r2);
    }
    if (opt.run_rbf) {
      const auto rep = tune_sigma(locs, labels, live, opt.sigmas, opt.threads);
      r.sigma = rep.chosen_sigma;
      for (std::size_t k = 0; k < live_offset.size(); ++k)
        r.runs[live_offset[k]].rbf_r2 = rep.r2[rep.best][k];
      r.rbf = detail::band_of(r.runs, &OffsetRun::rbf_r2);
    }
  }
  return out;
}

}  // namespace mosaiks
