#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "mosaiks/error.hpp"
#include "mosaiks/rng.hpp"

namespace mosaiks {

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;
};

struct GeoBounds {
  double lat_min = 0.0;
  double lat_max = 0.0;
  double lon_min = 0.0;
  double lon_max = 0.0;
};

/// Continental-US box used as the default synthetic domain.
inline constexpr GeoBounds kUsBounds{25.0, 50.0, -125.0, -66.0};

/// A grid cell: integer (row, col) plus its centroid in degrees.
/// Cells loaded from files without a grid carry row = col = -1.
struct CellId {
  std::int64_t row = -1;
  std::int64_t col = -1;
  double lat = 0.0;
  double lon = 0.0;

  LatLon centroid() const { return {lat, lon}; }
  friend bool operator==(const CellId& a, const CellId& b) {
    return a.row == b.row && a.col == b.col;
  }
};

/// Grid of cells that are square in physical space.
///
/// Rows are anchored at lat_min and columns at lon_min. Row height is
/// cell_km / 111.32 degrees; the width of row r is
/// cell_km / (111.32 cos(lat_r)) with lat_r the row's center latitude, so
/// angular width grows toward the poles. Only whole cells are kept.
class Grid {
 public:
  static constexpr double kKmPerDegree = 111.32;

  static Grid build(const GeoBounds& b, double cell_km) {
    detail::require(std::isfinite(b.lat_min) && std::isfinite(b.lat_max) &&
                        std::isfinite(b.lon_min) && std::isfinite(b.lon_max),
                    "grid bounds must be finite");
    detail::require(b.lat_max > b.lat_min && b.lon_max > b.lon_min,
                    "grid bounds have zero area");
    detail::require(std::abs(b.lat_min) < 85.0 && std::abs(b.lat_max) < 85.0,
                    "grid latitude must satisfy |lat| < 85");
    detail::require(cell_km > 0.0 && std::isfinite(cell_km), "cell_size_km must be positive");

    Grid g;
    g.bounds_ = b;
    g.cell_km_ = cell_km;
    g.height_deg_ = cell_km / kKmPerDegree;
    const double span_lat = b.lat_max - b.lat_min;
    const auto rows = static_cast<std::size_t>(std::floor(span_lat / g.height_deg_ + 1e-9));
    detail::require(rows >= 1, "grid bounds are smaller than one cell");
    g.widths_.resize(rows);
    g.cols_.resize(rows);
    g.offsets_.resize(rows + 1, 0);
    constexpr double deg = 3.14159265358979323846 / 180.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double lat_c = b.lat_min + (static_cast<double>(r) + 0.5) * g.height_deg_;
      const double c = std::cos(lat_c * deg);
      detail::require(c > 0.05, "grid reaches polar latitudes (cos(lat) <= 0.05)");
      g.widths_[r] = cell_km / (kKmPerDegree * c);
      g.cols_[r] = static_cast<std::size_t>(
          std::floor((b.lon_max - b.lon_min) / g.widths_[r] + 1e-9));
      g.offsets_[r + 1] = g.offsets_[r] + g.cols_[r];
    }
    detail::require(g.size() >= 1, "grid bounds are narrower than one cell");
    detail::require(g.size() <= 200'000'000, "grid has too many cells");
    return g;
  }

  const GeoBounds& bounds() const { return bounds_; }
  double cell_km() const { return cell_km_; }
  std::size_t rows() const { return cols_.size(); }
  std::size_t cols(std::size_t row) const { return cols_.at(row); }
  std::size_t size() const { return offsets_.back(); }
  double cell_height_deg() const { return height_deg_; }
  double cell_width_deg(std::size_t row) const { return widths_.at(row); }

  CellId cell(std::size_t row, std::size_t col) const {
    if (row >= rows() || col >= cols_[row]) throw InvalidArgument("cell index out of range");
    CellId id;
    id.row = static_cast<std::int64_t>(row);
    id.col = static_cast<std::int64_t>(col);
    id.lat = bounds_.lat_min + (static_cast<double>(row) + 0.5) * height_deg_;
    id.lon = bounds_.lon_min + (static_cast<double>(col) + 0.5) * widths_[row];
    return id;
  }

  /// Cell at a row-major flat index.
  CellId at(std::size_t flat) const {
    if (flat >= size()) throw InvalidArgument("flat cell index out of range");
    std::size_t lo = 0, hi = rows();
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      if (offsets_[mid] <= flat) lo = mid; else hi = mid;
    }
    return cell(lo, flat - offsets_[lo]);
  }

  std::size_t flat_index(std::size_t row, std::size_t col) const {
    if (row >= rows() || col >= cols_[row]) throw InvalidArgument("cell index out of range");
    return offsets_[row] + col;
  }

  /// Cell containing (lat, lon), if it lies inside a whole cell.
  std::optional<CellId> locate(double lat, double lon) const {
    const double fr = std::floor((lat - bounds_.lat_min) / height_deg_);
    if (!(fr >= 0.0) || fr >= static_cast<double>(rows())) return std::nullopt;
    const auto r = static_cast<std::size_t>(fr);
    const double fc = std::floor((lon - bounds_.lon_min) / widths_[r]);
    if (!(fc >= 0.0) || fc >= static_cast<double>(cols_[r])) return std::nullopt;
    return cell(r, static_cast<std::size_t>(fc));
  }

  /// Lower and upper corners of a cell.
  GeoBounds cell_bounds(std::size_t row, std::size_t col) const {
    const CellId c = cell(row, col);
    return {c.lat - 0.5 * height_deg_, c.lat + 0.5 * height_deg_,
            c.lon - 0.5 * widths_[row], c.lon + 0.5 * widths_[row]};
  }

 private:
  Grid() = default;

  GeoBounds bounds_{};
  double cell_km_ = 0.0;
  double height_deg_ = 0.0;
  std::vector<double> widths_;
  std::vector<std::size_t> cols_;
  std::vector<std::size_t> offsets_;
};

namespace detail {

// Fenwick tree over nonnegative weights supporting removal and
// inverse-CDF lookup.
class WeightTree {
 public:
  explicit WeightTree(const std::vector<double>& w) : tree_(w.size() + 1, 0.0), w_(w) {
    for (std::size_t i = 0; i < w.size(); ++i) add(i, w[i]);
  }

  double total() const { return prefix(w_.size()); }

  // Smallest index whose cumulative weight exceeds u.
  std::size_t find(double u) const {
    std::size_t pos = 0;
    std::size_t step = 1;
    while (step * 2 <= w_.size()) step *= 2;
    for (; step > 0; step /= 2) {
      if (pos + step <= w_.size() && tree_[pos + step] <= u) {
        pos += step;
        u -= tree_[pos];
      }
    }
    return std::min(pos, w_.size() - 1);
  }

  void remove(std::size_t i) {
    add(i, -w_[i]);
    w_[i] = 0.0;
  }

  double weight(std::size_t i) const { return w_[i]; }

 private:
  void add(std::size_t i, double v) {
    for (std::size_t k = i + 1; k < tree_.size(); k += k & (~k + 1)) tree_[k] += v;
  }
  double prefix(std::size_t n) const {
    double s = 0.0;
    for (std::size_t k = n; k > 0; k -= k & (~k + 1)) s += tree_[k];
    return s;
  }

  std::vector<double> tree_;
  std::vector<double> w_;
};

}  // namespace detail

/// Draws n distinct cells.
///
/// Without weights this is a partial Fisher-Yates shuffle (uniform without
/// replacement). With weights each draw picks a remaining cell with
/// probability proportional to its weight, then removes it.
inline std::vector<CellId> sample_cells(const Grid& grid, std::size_t n,
                                        const std::vector<double>* weights,
                                        std::uint64_t seed) {
  const std::size_t total = grid.size();
  if (n > total) throw InvalidArgument("sample_cells: n exceeds the number of cells");
  Rng rng(seed, "sample_cells");
  std::vector<CellId> out;
  out.reserve(n);
  if (weights == nullptr) {
    std::vector<std::size_t> idx(total);
    for (std::size_t i = 0; i < total; ++i) idx[i] = i;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = i + rng.uniform_index(total - i);
      std::swap(idx[i], idx[j]);
      out.push_back(grid.at(idx[i]));
    }
    return out;
  }
  if (weights->size() != total)
    throw InvalidArgument("sample_cells: one weight per cell required");
  std::size_t positive = 0;
  for (double w : *weights) {
    if (!(w >= 0.0) || !std::isfinite(w))
      throw InvalidArgument("sample_cells: weights must be finite and nonnegative");
    positive += w > 0.0;
  }
  if (positive == 0) throw InvalidArgument("sample_cells: all weights are zero");
  if (positive < n) throw InvalidArgument("sample_cells: fewer positive weights than n");
  detail::WeightTree tree(*weights);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t j = tree.find(rng.uniform01() * tree.total());
    if (tree.weight(j) <= 0.0) {
      // Rounding landed on an exhausted slot; take the next live one.
      std::size_t k = j;
      while (k < total && tree.weight(k) <= 0.0) ++k;
      if (k == total) {
        k = j;
        while (tree.weight(k) <= 0.0) --k;
      }
      j = k;
    }
    tree.remove(j);
    out.push_back(grid.at(j));
  }
  return out;
}

}  // namespace mosaiks
