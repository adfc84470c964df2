// Featurize a small synthetic corpus, fit one task, and look inside one image.

#include <cstdio>

#include "mosaiks/mosaiks.hpp"

using namespace mosaiks;

int main() {
  SyntheticTask task;
  task.seed = 3;
  const auto corpus = synth_corpus(task, 600, 32, 3);

  const auto split = holdout_split(corpus.images.size(), 0.2, task.seed);
  std::vector<Image> pool;
  for (auto i : split.train) pool.push_back(corpus.images[i]);
  const PatchBank bank = build_bank(pool, 256, 3, task.seed);
  const FeatureTable table = featurize_corpus(corpus.images, bank, Precision::F32, default_threads());
  std::printf("features: %zu x %zu (%.1fx smaller than the pixels)\n", table.rows(), table.cols(),
              compression_ratio(32, 32, 3, bank.num_features()));

  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(corpus.labels.data(), table.values.rows());
  const Eigen::MatrixXd x_train = detail::take_rows(table.values, split.train);
  const Eigen::VectorXd y_train = detail::take_rows(y, split.train);
  const auto cv = tune_lambda(x_train, y_train, default_lambda_grid(), 5, task.seed);
  RidgeModel model = fit_model(table.values, y, split.train, cv.chosen_lambda);
  model.bank_fingerprint = bank.fingerprint();
  const double holdout = r_squared(detail::take_rows(y, split.test),
                                   model.predict(detail::take_rows(table.values, split.test)));
  std::printf("lambda %.3g  cv R^2 %.3f  holdout R^2 %.3f\n", cv.chosen_lambda, cv.best_mean(), holdout);

  const Image& img = corpus.images[split.test.front()];
  const auto map = superres_map(img, bank, model);
  const auto sub = pool_to_subgrid(map, 2);
  std::printf("image label %.3f, 2x2 sub-predictions:\n", corpus.labels[split.test.front()]);
  for (std::size_t r = 0; r < 2; ++r) std::printf("  %.3f %.3f\n", sub.at(r, 0), sub.at(r, 1));
  return 0;
}
