#pragma once

#include <filesystem>
#include <string>

#include <Eigen/Dense>

#include "mosaiks/image.hpp"
#include "mosaiks/rng.hpp"

namespace testing_support {

inline mosaiks::Image random_image(std::size_t h, std::size_t w, std::size_t s, std::uint64_t seed) {
  mosaiks::Image img(h, w, s);
  mosaiks::Rng rng(seed, "test_image");
  for (double& v : img.data()) v = rng.uniform01();
  return img;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, mosaiks::Rng& rng) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

inline Eigen::VectorXd random_vector(Eigen::Index n, mosaiks::Rng& rng) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

/// Fresh empty directory under the build tree.
inline std::string scratch_dir(const std::string& name) {
  const auto p = std::filesystem::path(MOSAIKS_TEST_TMP) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

inline double rel_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

}  // namespace testing_support
