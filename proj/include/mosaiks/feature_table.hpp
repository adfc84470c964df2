#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mosaiks/binary_io.hpp"
#include "mosaiks/grid.hpp"

namespace mosaiks {

enum class Precision { F32, F64 };

/// N x K pooled features with one location per row and the fingerprint of
/// the bank that produced them.
struct FeatureTable {
  static constexpr std::uint16_t kVersion = 1;

  Eigen::MatrixXd values;
  std::vector<CellId> locations;
  Fingerprint bank_fingerprint{};
  Precision precision = Precision::F32;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }

  /// "MSKF", version u16, N u64, K u32, fingerprint (32 bytes), then per row
  /// lat f64, lon f64, K f32 values; little-endian.
  std::vector<std::uint8_t> serialize() const {
    ByteWriter w;
    w.magic("MSKF");
    w.put<std::uint16_t>(kVersion);
    w.put<std::uint64_t>(rows());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(cols()));
    w.raw(bank_fingerprint.data(), bank_fingerprint.size());
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
      w.put<double>(locations[static_cast<std::size_t>(r)].lat);
      w.put<double>(locations[static_cast<std::size_t>(r)].lon);
      for (Eigen::Index c = 0; c < values.cols(); ++c) w.put<float>(static_cast<float>(values(r, c)));
    }
    return w.bytes();
  }

  void save(const std::string& path) const {
    ByteWriter w;
    const auto bytes = serialize();
    w.raw(bytes.data(), bytes.size());
    w.save(path);
  }

  static FeatureTable load(const std::string& path) {
    auto r = ByteReader::load(path);
    r.expect_magic("MSKF");
    if (r.get<std::uint16_t>() != kVersion) throw DataError(path + ": unsupported feature version");
    const auto n = r.get<std::uint64_t>();
    const auto k = r.get<std::uint32_t>();
    FeatureTable t;
    r.raw(t.bank_fingerprint.data(), t.bank_fingerprint.size());
    t.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    t.locations.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      t.locations[i].lat = r.get<double>();
      t.locations[i].lon = r.get<double>();
      for (std::uint32_t c = 0; c < k; ++c) {
        const float v = r.get<float>();
        if (!std::isfinite(v)) throw DataError(path + ": non-finite feature value");
        t.values(static_cast<Eigen::Index>(i), c) = v;
      }
    }
    r.expect_end();
    return t;
  }

  /// CSV `lat,lon,x_0,...,x_{K-1}` with values printed to round-trip.
  void save_csv(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path);
    f << "lat,lon";
    for (std::size_t c = 0; c < cols(); ++c) f << ",x_" << c;
    f << '\n';
    char buf[64];
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g", locations[static_cast<std::size_t>(r)].lat,
                    locations[static_cast<std::size_t>(r)].lon);
      f << buf;
      for (Eigen::Index c = 0; c < values.cols(); ++c) {
        std::snprintf(buf, sizeof buf, ",%.17g", values(r, c));
        f << buf;
      }
      f << '\n';
    }
    if (!f) throw DataError("write failed: " + path);
  }
};

}  // namespace mosaiks
