#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "mosaiks/featurize.hpp"
#include "mosaiks/feature_table.hpp"
#include "mosaiks/patch_bank.hpp"
#include "mosaiks/synth.hpp"
#include "support.hpp"

using namespace mosaiks;
using testing_support::random_image;
using testing_support::random_matrix;
using testing_support::scratch_dir;

namespace {

// Pre-activation by the textbook route: whiten the window and the patch
// separately with the full matrix, then take their inner product.
double oracle_preactivation(const Image& img, const PatchBank& bank, std::size_t i, std::size_t j,
                            std::size_t k) {
  const std::size_t m = bank.patch_width(), s = bank.bands();
  const auto d = static_cast<Eigen::Index>(bank.dim());
  Eigen::VectorXd window(d);
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = 0; b < m; ++b)
      for (std::size_t t = 0; t < s; ++t)
        window((a * m + b) * s + t) = img.at(i + a, j + b, t);
  const std::size_t half = bank.num_patches();
  const Eigen::VectorXd patch = bank.raw_patches().row(static_cast<Eigen::Index>(k % half)).transpose();
  const Eigen::VectorXd wx = bank.whitening() * (window - bank.mean());
  const Eigen::VectorXd wp = bank.whitening() * (patch - bank.mean());
  return (k < half ? 1.0 : -1.0) * wx.dot(wp);
}

std::vector<double> oracle_features(const Image& img, const PatchBank& bank) {
  const std::size_t m = bank.patch_width();
  const std::size_t rows = img.height() - m + 1, cols = img.width() - m + 1;
  std::vector<double> x(bank.num_features(), 0.0);
  for (std::size_t k = 0; k < x.size(); ++k) {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        x[k] += std::max(0.0, oracle_preactivation(img, bank, i, j, k) + 1.0);
    x[k] /= double(rows * cols);
  }
  return x;
}

// Sample with exactly the requested covariance (1/n normalization).
Eigen::MatrixXd sample_with_covariance(const Eigen::MatrixXd& target, Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd x = random_matrix(n, target.rows(), rng);
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov = x.transpose() * x / double(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::MatrixXd inv_sqrt =
      es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  Eigen::LLT<Eigen::MatrixXd> llt(target);
  return x * inv_sqrt * Eigen::MatrixXd(llt.matrixU());
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
  return c.transpose() * c / double(x.rows());
}

std::vector<Image> corpus(std::size_t n, std::size_t hw, std::uint64_t seed) {
  SyntheticTask t;
  t.seed = seed;
  return synth_corpus(t, n, hw, 3).images;
}

}  // namespace

TEST(SamplePatches, ConstantImageGivesConstantPatches) {
  const std::vector<Image> imgs{Image(8, 8, 3, 0.25)};
  const Eigen::MatrixXd p = sample_patches(imgs, 10, 3, 1);
  EXPECT_EQ(p.rows(), 10);
  EXPECT_EQ(p.cols(), 27);
  EXPECT_TRUE((p.array() == 0.25).all());
}

TEST(SamplePatches, WholeImagePatches) {
  const std::vector<Image> imgs{random_image(4, 4, 2, 1)};
  const Eigen::MatrixXd p = sample_patches(imgs, 3, 4, 9);
  for (Eigen::Index r = 0; r < 3; ++r)
    for (std::size_t k = 0; k < imgs[0].data().size(); ++k) EXPECT_EQ(p(r, k), imgs[0].data()[k]);
}

TEST(SamplePatches, DeterministicAndValidated) {
  const auto imgs = corpus(5, 12, 2);
  EXPECT_EQ(sample_patches(imgs, 40, 3, 5), sample_patches(imgs, 40, 3, 5));
  EXPECT_NE(sample_patches(imgs, 40, 3, 5), sample_patches(imgs, 40, 3, 6));
  EXPECT_THROW(sample_patches(imgs, 4, 13, 1), InvalidArgument);
}

TEST(Whitening, WhiteInputGivesIdentity) {
  const Eigen::MatrixXd x = sample_with_covariance(Eigen::MatrixXd::Identity(6, 6), 200, 3);
  const Whitening w = fit_whitening(x, 1e-12);
  EXPECT_LT((w.transform - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Whitening, DiagonalCovarianceClosedForm) {
  Eigen::MatrixXd target = Eigen::MatrixXd::Identity(4, 4);
  target(0, 0) = 4.0;
  const Eigen::MatrixXd x = sample_with_covariance(target, 100, 4);
  const Whitening w = fit_whitening(x, 0.0);
  Eigen::MatrixXd expected = Eigen::MatrixXd::Identity(4, 4);
  expected(0, 0) = 0.5;
  EXPECT_LT((w.transform - expected).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Whitening, WhitenedCovarianceShrinksByRegularizer) {
  Rng rng(5);
  Eigen::MatrixXd x = random_matrix(300, 5, rng);
  x.col(1) += 2.0 * x.col(0);
  x.col(4) *= 0.1;
  const double eps = 0.05;
  const Whitening w = fit_whitening(x, eps);
  const Eigen::MatrixXd white = (x.rowwise() - w.mean.transpose()) * w.transform;
  const Eigen::VectorXd shrink = w.eigenvalues.array() / (w.eigenvalues.array() + eps);
  const Eigen::MatrixXd expected = w.eigenvectors * shrink.asDiagonal() * w.eigenvectors.transpose();
  EXPECT_LT((covariance(white) - expected).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((w.transform - w.transform.transpose()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_GT(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(w.transform).eigenvalues().minCoeff(), 0.0);
}

TEST(Whitening, CenteringSwitch) {
  Rng rng(6);
  const Eigen::MatrixXd x = random_matrix(50, 3, rng).array() + 2.0;
  const Whitening on = fit_whitening(x, 1e-3, true);
  const Whitening off = fit_whitening(x, 1e-3, false);
  EXPECT_TRUE(off.mean.isZero());
  EXPECT_GT(on.mean.norm(), 1.0);
  EXPECT_EQ(on.transform, off.transform);
}

TEST(Whitening, Errors) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(10, 3);
  EXPECT_THROW(fit_whitening(x, -1.0), InvalidArgument);
  EXPECT_THROW(fit_whitening(x, 0.0), NumericalError);
  x(2, 1) = std::nan("");
  EXPECT_THROW(fit_whitening(x, 1e-3), DataError);
}

TEST(PatchBank, SmallestBankHasOnePatch) {
  const auto imgs = corpus(3, 8, 1);
  const PatchBank bank = build_bank(imgs, 2, 3, 1);
  EXPECT_EQ(bank.num_patches(), 1u);
  EXPECT_EQ(bank.num_features(), 2u);
  EXPECT_THROW(build_bank(imgs, 3, 3, 1), InvalidArgument);
}

TEST(PatchBank, DefaultGeometry) {
  const auto imgs = corpus(4, 16, 1);
  const PatchBank bank = build_bank(imgs, 8192, 3, 1);
  EXPECT_EQ(bank.num_patches(), 4096u);
  EXPECT_EQ(bank.patch_width(), 3u);
  EXPECT_EQ(bank.bands(), 3u);
  EXPECT_EQ(bank.raw_patches().cols(), 27);
  EXPECT_EQ(bank.bias(), 1.0);
}

TEST(PatchBank, WhitenedPatchCovarianceIsIdentityUpToRegularizer) {
  const auto imgs = corpus(30, 32, 3);
  const PatchBank bank = build_bank(imgs, 1024, 3, 3);
  const Whitening w = fit_whitening(bank.raw_patches(), bank.eps());
  const Eigen::VectorXd shrink = w.eigenvalues.array() / (w.eigenvalues.array() + bank.eps());
  const Eigen::MatrixXd expected = w.eigenvectors * shrink.asDiagonal() * w.eigenvectors.transpose();
  const Eigen::MatrixXd cov = covariance(bank.whitened_patches());
  EXPECT_LT((cov - expected).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((cov - Eigen::MatrixXd::Identity(27, 27)).cwiseAbs().maxCoeff(),
            1.01 * bank.eps() / (w.eigenvalues.minCoeff() + bank.eps()) + 1e-6);
}

TEST(PatchBank, SameSeedSameFingerprint) {
  const auto imgs = corpus(6, 12, 4);
  const PatchBank a = build_bank(imgs, 64, 3, 7);
  const PatchBank b = build_bank(imgs, 64, 3, 7);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  EXPECT_EQ(a.serialize(), b.serialize());
  EXPECT_NE(a.fingerprint(), build_bank(imgs, 64, 3, 8).fingerprint());
}

TEST(PatchBank, FileRoundTrip) {
  const auto dir = scratch_dir("bank_io");
  const auto imgs = corpus(6, 12, 4);
  const PatchBank bank = build_bank(imgs, 32, 4, 7);
  bank.save(dir + "/bank.mskb");
  const PatchBank back = PatchBank::load(dir + "/bank.mskb");
  EXPECT_EQ(back.fingerprint(), bank.fingerprint());
  EXPECT_EQ(back.patch_width(), 4u);
  EXPECT_EQ(back.num_features(), 32u);
  EXPECT_EQ(back.seed(), 7u);
  EXPECT_EQ(featurize_image(imgs[0], back), featurize_image(imgs[0], bank));

  std::ifstream in(dir + "/bank.mskb", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  std::ofstream(dir + "/short.mskb", std::ios::binary) << bytes.substr(0, bytes.size() - 5);
  EXPECT_THROW(PatchBank::load(dir + "/short.mskb"), DataError);
  std::ofstream(dir + "/magic.mskb", std::ios::binary) << "XXXX" << bytes.substr(4);
  EXPECT_THROW(PatchBank::load(dir + "/magic.mskb"), DataError);
}

TEST(Featurize, FastPathMatchesNestedLoopOracle) {
  const auto imgs = corpus(8, 16, 5);
  const PatchBank bank = build_bank(imgs, 16, 3, 5);
  for (std::uint64_t s = 0; s < 3; ++s) {
    const Image img = random_image(11, 9, 3, 100 + s);
    const Eigen::VectorXd fast = featurize_image(img, bank);
    const auto slow = oracle_features(img, bank);
    for (std::size_t k = 0; k < slow.size(); ++k) EXPECT_NEAR(fast(k), slow[k], 1e-10);
  }
}

TEST(Featurize, ActivationMapMatchesOracleAndNegativePair) {
  const auto imgs = corpus(8, 16, 6);
  const PatchBank bank = build_bank(imgs, 64, 2, 6);
  const Image img = random_image(7, 8, 3, 7);
  const std::size_t half = bank.num_patches();
  for (std::size_t k = 0; k < half; ++k) {
    const auto pos = activation_map(img, bank, k);
    const auto neg = activation_map(img, bank, k + half);
    ASSERT_EQ(pos.rows, 6u);
    ASSERT_EQ(pos.cols, 7u);
    for (std::size_t i = 0; i < pos.rows; ++i)
      for (std::size_t j = 0; j < pos.cols; ++j) {
        const double z = oracle_preactivation(img, bank, i, j, k);
        EXPECT_NEAR(pos.at(i, j), std::max(0.0, z + 1), 1e-10);
        EXPECT_NEAR(neg.at(i, j), std::max(0.0, 1 - z), 1e-10);
        EXPECT_GE(pos.at(i, j), 0.0);
        if (std::abs(z) <= 1) EXPECT_NEAR(pos.at(i, j) - neg.at(i, j), 2 * z, 1e-12);
      }
  }
  EXPECT_THROW(activation_map(img, bank, 2 * half), InvalidArgument);
}

TEST(Featurize, PoolingConsistency) {
  const auto imgs = corpus(8, 20, 7);
  const PatchBank bank = build_bank(imgs, 64, 3, 7);
  const Image& img = imgs[3];
  const Eigen::VectorXd x = featurize_image(img, bank);
  Rng rng(1);
  for (int t = 0; t < 16; ++t) {
    const auto k = rng.uniform_index(bank.num_features());
    const auto map = activation_map(img, bank, k);
    EXPECT_NEAR(x(k), map.mean(), 1e-10);
    // Means over the two equal halves average to the full mean.
    const std::size_t half_rows = map.rows / 2;
    double top = 0, bottom = 0;
    for (std::size_t i = 0; i < map.rows; ++i)
      for (std::size_t j = 0; j < map.cols; ++j) (i < half_rows ? top : bottom) += map.at(i, j);
    top /= double(half_rows * map.cols);
    bottom /= double((map.rows - half_rows) * map.cols);
    EXPECT_NEAR(0.5 * (top + bottom), map.mean(), 1e-10);
  }
}

TEST(Featurize, ConstantImagesGiveConstantMaps) {
  const auto imgs = corpus(8, 16, 8);
  const PatchBank bank = build_bank(imgs, 8, 3, 8);
  const auto map = activation_map(Image(10, 10, 3, 0.6), bank, 3);
  for (double v : map.values) EXPECT_NEAR(v, map.values[0], 1e-12);
}

TEST(Featurize, BiasOnlyAtWhiteningCenter) {
  // A bank whose centering vector is a constant colour lets a flat image sit
  // exactly at the center.
  const std::size_t m = 2, s = 3, d = m * m * s;
  Rng rng(3);
  Eigen::MatrixXd raw = random_matrix(5, d, rng).cwiseAbs() * 0.1;
  Eigen::VectorXd mu(d);
  for (std::size_t q = 0; q < d; ++q) mu(q) = 0.1 * double(q % s + 1);
  const PatchBank bank(m, s, raw, mu, Eigen::MatrixXd::Identity(d, d), 0.0, 0);
  Image img(6, 6, s);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j)
      for (std::size_t b = 0; b < s; ++b) img.at(i, j, b) = 0.1 * double(b + 1);
  const Eigen::VectorXd x = featurize_image(img, bank);
  for (Eigen::Index k = 0; k < x.size(); ++k) EXPECT_NEAR(x(k), 1.0, 1e-12);
}

TEST(Featurize, CorpusRowsMatchPerImageResults) {
  const auto imgs = corpus(100, 12, 9);
  const PatchBank bank = build_bank(imgs, 256, 3, 9);
  const FeatureTable t = featurize_corpus(imgs, bank, Precision::F64, 3);
  EXPECT_EQ(t.bank_fingerprint, bank.fingerprint());
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    const Eigen::VectorXd x = featurize_image(imgs[i], bank);
    ASSERT_TRUE(t.values.row(static_cast<Eigen::Index>(i)).transpose() == x) << "row " << i;
    EXPECT_EQ(t.locations[i], imgs[i].location);
  }
  EXPECT_TRUE((t.values.array() >= 0).all());
  const FeatureTable f32 = featurize_corpus(imgs, bank, Precision::F32, 1);
  EXPECT_LT(((f32.values - t.values).array().abs() / t.values.array().abs().max(1e-30)).maxCoeff(), 1e-4);
}

TEST(Featurize, PermutedCorpusPermutesRows) {
  auto imgs = corpus(6, 10, 10);
  const PatchBank bank = build_bank(imgs, 16, 3, 10);
  const FeatureTable a = featurize_corpus(imgs, bank, Precision::F64);
  std::reverse(imgs.begin(), imgs.end());
  const FeatureTable b = featurize_corpus(imgs, bank, Precision::F64);
  EXPECT_EQ(a.values, b.values.colwise().reverse());
  const FeatureTable one = featurize_corpus(std::span(imgs).first(1), bank, Precision::F64);
  EXPECT_TRUE(one.values.row(0).transpose() == featurize_image(imgs[0], bank));
}

TEST(Featurize, BandMismatchIsDataError) {
  const auto imgs = corpus(4, 10, 11);
  const PatchBank bank = build_bank(imgs, 8, 3, 11);
  EXPECT_THROW(featurize_image(Image(10, 10, 4, 0.5), bank), DataError);
  std::vector<Image> mixed{imgs[0], Image(10, 10, 4, 0.5)};
  EXPECT_THROW(featurize_corpus(mixed, bank), DataError);
  EXPECT_THROW(featurize_image(Image(2, 10, 3, 0.5), bank), InvalidArgument);
}

TEST(Featurize, CompressionRatio) {
  EXPECT_DOUBLE_EQ(compression_ratio(256, 256, 3, 8192), 6.0);
}

TEST(FeatureTable, FileAndCsvRoundTrip) {
  const auto dir = scratch_dir("table_io");
  const auto imgs = corpus(5, 10, 12);
  const PatchBank bank = build_bank(imgs, 8, 3, 12);
  const FeatureTable t = featurize_corpus(imgs, bank, Precision::F32);
  t.save(dir + "/f.mskf");
  const FeatureTable back = FeatureTable::load(dir + "/f.mskf");
  EXPECT_EQ(back.values, t.values);
  EXPECT_EQ(back.bank_fingerprint, t.bank_fingerprint);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(back.locations[i].lat, t.locations[i].lat);
    EXPECT_EQ(back.locations[i].lon, t.locations[i].lon);
  }
  t.save_csv(dir + "/f.csv");
  std::ifstream in(dir + "/f.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "lat,lon,x_0,x_1,x_2,x_3,x_4,x_5,x_6,x_7");
}
