// mosaiks: command-line driver for the featurize / regress / evaluate pipeline.
//
// Every command resolves its settings from (in increasing priority) built-in
// defaults, --config FILE, and explicit flags, then writes the resolved
// settings to <out>/<command>.cfg so the run can be repeated exactly.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mosaiks/mosaiks.hpp"

namespace fs = std::filesystem;
using namespace mosaiks;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumerical = 4 };

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Settings plumbing

struct Command {
  std::string name;
  CLI::App* app = nullptr;
  std::map<std::string, std::string> flags;  // config key -> raw flag value
  std::string config_path;
};

// Registers --some-flag bound to config key some_flag.
void opt(Command& c, const std::string& flag, const std::string& help) {
  std::string key = flag;
  for (char& ch : key)
    if (ch == '-') ch = '_';
  c.app->add_option("--" + flag, c.flags[key], help);
}

void common_options(Command& c) {
  c.app->add_option("--config", c.config_path, "key=value settings file");
  opt(c, "seed", "root random seed (default 0)");
  opt(c, "threads", "worker threads (default: available cores)");
  opt(c, "out", "output directory (default out)");
}

RunConfig resolve(const Command& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : RunConfig::load(c.config_path);
  for (const auto& [key, value] : c.flags)
    if (!value.empty()) cfg.set(key, value);
  return cfg;
}

struct Common {
  std::uint64_t seed;
  std::size_t threads;
  std::string out;
};

Common common(RunConfig& cfg) {
  Common c;
  c.seed = cfg.integer("seed", 0);
  c.threads = cfg.integer("threads", default_threads());
  if (c.threads == 0) throw InvalidArgument("threads must be >= 1");
  c.out = cfg.str("out", "out");
  fs::create_directories(c.out);
  return c;
}

void save_config(const RunConfig& cfg, const Common& c, const std::string& cmd) {
  cfg.save((fs::path(c.out) / (cmd + ".cfg")).string());
}

Grid grid_from(RunConfig& cfg) {
  GeoBounds b;
  b.lat_min = cfg.real("lat_min", kUsBounds.lat_min);
  b.lat_max = cfg.real("lat_max", kUsBounds.lat_max);
  b.lon_min = cfg.real("lon_min", kUsBounds.lon_min);
  b.lon_max = cfg.real("lon_max", kUsBounds.lon_max);
  return Grid::build(b, cfg.real("cell_km", 10.0));
}

std::string path_in(const Common& c, const std::string& file) { return (fs::path(c.out) / file).string(); }

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path);
  return f;
}

// ---------------------------------------------------------------------------
// Label joins

struct CellKey {
  std::int64_t row, col;
  auto operator<=>(const CellKey&) const = default;
};

std::string describe(const CellKey& k) {
  return "(" + std::to_string(k.row) + "," + std::to_string(k.col) + ")";
}

// Rows of a lat/lon keyed CSV, matched to feature rows by grid cell.
struct Joined {
  std::vector<std::size_t> feature_rows;  // ascending
  std::vector<std::size_t> csv_rows;      // aligned with feature_rows
};

Joined join_on_cells(const FeatureTable& table, const CsvTable& csv, const Grid& grid) {
  std::map<CellKey, std::size_t> by_cell;
  for (std::size_t i = 0; i < table.rows(); ++i) {
    const auto& p = table.locations[i];
    const auto cell = grid.locate(p.lat, p.lon);
    if (!cell) throw DataError("feature row " + std::to_string(i) + " lies outside the grid");
    by_cell[{cell->row, cell->col}] = i;
  }
  const std::size_t lat = csv.column("lat"), lon = csv.column("lon");
  std::map<std::size_t, std::size_t> matched;  // feature row -> csv row
  std::vector<std::string> unmatched;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const double a = csv.number(r, lat), o = csv.number(r, lon);
    const auto cell = grid.locate(a, o);
    if (!cell) {
      unmatched.push_back("(" + num(a) + "," + num(o) + ") outside grid");
      continue;
    }
    const CellKey key{cell->row, cell->col};
    const auto it = by_cell.find(key);
    if (it == by_cell.end()) {
      unmatched.push_back(describe(key));
      continue;
    }
    if (!matched.emplace(it->second, r).second)
      throw DataError(csv.name + ": more than one row for cell " + describe(key));
  }
  if (!unmatched.empty()) {
    std::string msg = csv.name + ": " + std::to_string(unmatched.size()) + " rows match no feature cell:";
    for (std::size_t i = 0; i < unmatched.size() && i < 10; ++i) msg += " " + unmatched[i];
    if (unmatched.size() > 10) msg += " ...";
    throw DataError(msg);
  }
  if (matched.empty()) throw DataError(csv.name + ": no rows");
  Joined j;
  for (const auto& [f, r] : matched) {
    j.feature_rows.push_back(f);
    j.csv_rows.push_back(r);
  }
  return j;
}

struct LabeledData {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;  // original label space
  std::vector<LatLon> locs;
  Joined join;
};

LabeledData load_labeled(const FeatureTable& table, const std::string& labels_path,
                         const std::string& column, const Grid& grid) {
  const CsvTable csv = read_csv(labels_path);
  const std::size_t col = csv.column(column);
  LabeledData d;
  d.join = join_on_cells(table, csv, grid);
  const std::size_t n = d.join.feature_rows.size();
  d.x = detail::take_rows(table.values, d.join.feature_rows);
  d.y.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    d.y(static_cast<Eigen::Index>(i)) = csv.number(d.join.csv_rows[i], col);
    d.locs.push_back(table.locations[d.join.feature_rows[i]].centroid());
  }
  return d;
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(Command& c) {
  RunConfig cfg = resolve(c);
  const Common com = common(cfg);
  SyntheticTask task;
  task.seed = com.seed;
  const std::string kind = cfg.str("task", "subimage");
  if (kind == "subimage") task.kind = LabelKind::SubImageLinear;
  else if (kind == "spatial") task.kind = LabelKind::SpatiallyAutocorrelated;
  else throw InvalidArgument("task must be subimage or spatial, got " + kind);
  task.noise_sigma = cfg.real("noise", 0.05);
  task.dominant_band = cfg.integer("dominant_band", 1);
  task.cell_km = cfg.real("cell_km", 10.0);
  task.bounds = grid_from(cfg).bounds();
  const std::size_t n = cfg.integer("n", 100);
  const std::size_t size = cfg.integer("size", 64);
  const std::size_t bands = cfg.integer("bands", 3);
  const std::size_t lights = cfg.integer("nightlights_pixels", 0);
  if (n == 0) throw InvalidArgument("n must be >= 1");
  save_config(cfg, com, "synth");

  const auto corpus = synth_corpus(task, n, size, bands, com.threads);
  const fs::path dir = fs::path(com.out) / "images";
  fs::create_directories(dir);
  parallel_for(n, com.threads, [&](std::size_t i) {
    const auto& loc = corpus.images[i].location;
    write_image(corpus.images[i], (dir / (std::to_string(loc.row) + "_" + std::to_string(loc.col))).string());
  });
  auto manifest = open_out(path_in(com, "manifest.csv"));
  manifest << "cell_row,cell_col,lat,lon,label\n";
  for (std::size_t i = 0; i < n; ++i) {
    const auto& loc = corpus.images[i].location;
    manifest << loc.row << ',' << loc.col << ',' << num(loc.lat) << ',' << num(loc.lon) << ','
             << num(corpus.labels[i]) << '\n';
  }
  if (lights > 0) {
    auto f = open_out(path_in(com, "nightlights.csv"));
    f << "lat,lon";
    for (std::size_t p = 0; p < lights; ++p) f << ",v_" << p;
    f << '\n';
    for (std::size_t i = 0; i < n; ++i) {
      const auto& loc = corpus.images[i].location;
      f << num(loc.lat) << ',' << num(loc.lon);
      for (double v : synth_nightlights(task, loc.centroid(), lights, i)) f << ',' << num(v);
      f << '\n';
    }
  }
  std::cout << "wrote " << n << " images to " << dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// featurize

int cmd_featurize(Command& c) {
  RunConfig cfg = resolve(c);
  const Common com = common(cfg);
  const std::string image_dir = cfg.require("images");
  const Grid grid = grid_from(cfg);
  const std::string bank_path = cfg.str("bank", "");
  const std::size_t k = cfg.integer("k", 8192);
  const std::size_t m = cfg.integer("m", 3);
  const double eps_rel = cfg.real("eps_rel", 1e-6);
  const double holdout = cfg.real("holdout", 0.2);
  const std::string precision = cfg.str("precision", "f32");
  const bool csv = cfg.flag("csv", false);
  if (precision != "f32" && precision != "f64") throw InvalidArgument("precision must be f32 or f64");
  save_config(cfg, com, "featurize");

  const auto t0 = std::chrono::steady_clock::now();
  const auto files = list_cell_images(image_dir);
  if (files.empty()) throw DataError("no <row>_<col> images in " + image_dir);
  std::vector<Image> images = load_images(files, com.threads);
  for (auto& img : images) {
    const auto cell = grid.cell(static_cast<std::size_t>(img.location.row),
                                static_cast<std::size_t>(img.location.col));
    img.location = cell;
  }

  PatchBank bank = [&] {
    if (!bank_path.empty()) return PatchBank::load(bank_path);
    // Patches come only from images outside the holdout.
    std::vector<Image> pool;
    for (auto i : holdout_split(images.size(), holdout, com.seed).train) pool.push_back(images[i]);
    BankOptions bo;
    bo.eps_rel = eps_rel;
    return build_bank(pool, k, m, derive_seed(com.seed, "patches"), bo);
  }();
  const FeatureTable table =
      featurize_corpus(images, bank, precision == "f64" ? Precision::F64 : Precision::F32, com.threads);
  bank.save(path_in(com, "bank.mskb"));
  const std::string feat_path = path_in(com, "features.mskf");
  table.save(feat_path);
  if (csv) table.save_csv(path_in(com, "features.csv"));
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::size_t image_bytes = 0;
  for (const auto& img : images) image_bytes += img.height() * img.width() * img.bands();
  const auto& first = images.front();
  std::printf("N=%zu K=%zu M=%zu wall=%.3fs image_bytes=%zu feature_bytes=%zu compression=%.2fx\n",
              table.rows(), bank.num_features(), bank.patch_width(), wall, image_bytes,
              static_cast<std::size_t>(fs::file_size(feat_path)),
              compression_ratio(first.height(), first.width(), first.bands(), bank.num_features()));
  return kOk;
}

// ---------------------------------------------------------------------------
// train / predict / eval

struct RidgeSettings {
  std::string column;
  RidgeOptions ridge;
  std::vector<double> lambdas;
  std::size_t folds;
  double holdout;
};

RidgeSettings ridge_settings(RunConfig& cfg) {
  RidgeSettings s;
  s.column = cfg.str("label_column", "label");
  s.ridge.transform = parse_transform(cfg.str("transform", "identity"));
  s.ridge.standardize = cfg.flag("standardize", true);
  s.ridge.clip = cfg.flag("clip", true);
  s.lambdas = cfg.reals("lambdas", default_lambda_grid());
  s.folds = cfg.integer("folds", 5);
  s.holdout = cfg.real("holdout", 0.2);
  return s;
}

int cmd_train(Command& c) {
  RunConfig cfg = resolve(c);
  const Common com = common(cfg);
  const std::string features = cfg.require("features");
  const std::string labels = cfg.require("labels");
  const Grid grid = grid_from(cfg);
  const RidgeSettings s = ridge_settings(cfg);
  save_config(cfg, com, "train");

  const FeatureTable table = FeatureTable::load(features);
  const LabeledData d = load_labeled(table, labels, s.column, grid);
  const Eigen::VectorXd yt = transform_labels(d.y, s.ridge.transform);
  const auto split = holdout_split(static_cast<std::size_t>(yt.size()), s.holdout, com.seed);
  const Eigen::MatrixXd xtr = detail::take_rows(d.x, split.train);
  const Eigen::VectorXd ytr = detail::take_rows(yt, split.train);
  const CvReport cv = tune_lambda(xtr, ytr, s.lambdas, s.folds, com.seed, s.ridge, com.threads);
  RidgeModel model = fit_model(d.x, yt, split.train, cv.chosen_lambda, s.ridge);
  model.bank_fingerprint = table.bank_fingerprint;
  model.save(path_in(com, "model.mskm"));

  auto f = open_out(path_in(com, "cv.csv"));
  f << "lambda,mean_r2";
  for (std::size_t k = 0; k < cv.folds; ++k) f << ",fold_" << k;
  f << '\n';
  for (std::size_t l = 0; l < cv.lambdas.size(); ++l) {
    f << num(cv.lambdas[l]) << ',' << num(cv.mean_r2[l]);
    for (double v : cv.r2[l]) f << ',' << num(v);
    f << '\n';
  }
  auto sp = open_out(path_in(com, "split.csv"));
  sp << "lat,lon,set\n";
  std::vector<char> is_test(d.locs.size(), 0);
  for (auto i : split.test) is_test[i] = 1;
  for (std::size_t i = 0; i < d.locs.size(); ++i)
    sp << num(d.locs[i].lat) << ',' << num(d.locs[i].lon) << ',' << (is_test[i] ? "holdout" : "train") << '\n';

  std::cout << "lambda=" << num(cv.chosen_lambda) << " cv_mean_r2=" << num(cv.best_mean())
            << (cv.boundary ? " (lambda at grid boundary)" : "")
            << (cv.degenerate_folds ? " (some folds skipped: constant labels)" : "") << "\n";
  return kOk;
}

int cmd_predict(Command& c) {
  RunConfig cfg = resolve(c);
  const Common com = common(cfg);
  const std::string model_path = cfg.require("model");
  const std::string features = cfg.require("features");
  save_config(cfg, com, "predict");
  const RidgeModel model = RidgeModel::load(model_path);
  const FeatureTable table = FeatureTable::load(features);
  if (model.bank_fingerprint != table.bank_fingerprint)
    throw DataError(model_path + " was trained on features from a different patch bank than " + features);
  const Eigen::VectorXd p = model.predict(table.values);
  auto f = open_out(path_in(com, "predictions.csv"));
  f << "lat,lon,prediction\n";
  for (std::size_t i = 0; i < table.rows(); ++i)
    f << num(table.locations[i].lat) << ',' << num(table.locations[i].lon) << ','
      << num(p(static_cast<Eigen::Index>(i))) << '\n';
  return kOk;
}

int cmd_eval(Command& c) {
  RunConfig cfg = resolve(c);
  const Common com = common(cfg);
  const std::string run = cfg.require("train_dir");
  const std::string features = cfg.require("features");
  const std::string labels = cfg.require("labels");
  const Grid grid = grid_from(cfg);
  const std::string column = cfg.str("label_column", "label");
  save_config(cfg, com, "eval");

  const RidgeModel model = RidgeModel::load((fs::path(run) / "model.mskm").string());
  const FeatureTable table = FeatureTable::load(features);
  if (model.bank_fingerprint != table.bank_fingerprint)
    throw DataError("model and features come from different patch banks");
  const LabeledData d = load_labeled(table, labels, column, grid);

  const CsvTable split = read_csv((fs::path(run) / "split.csv").string());
  std::map<std::pair<std::string, std::string>, std::string> set_of;
  const std::size_t sl = split.column("lat"), so = split.column("lon"), ss = split.column("set");
  for (const auto& r : split.rows) set_of[{r[sl], r[so]}] = r[ss];
  std::vector<std::size_t> train, test;
  for (std::size_t i = 0; i < d.locs.size(); ++i) {
    const auto it = set_of.find({num(d.locs[i].lat), num(d.locs[i].lon)});
    if (it == set_of.end()) throw DataError("labelled cell missing from " + split.name);
    (it->second == "holdout" ? test : train).push_back(i);
  }
  if (train.size() < 2 || test.size() < 2) throw DataError("split has fewer than two rows on a side");

  const CsvTable cv = read_csv((fs::path(run) / "cv.csv").string());
  const std::size_t lc = cv.column("lambda");
  std::size_t best = cv.rows.size();
  for (std::size_t r = 0; r < cv.rows.size(); ++r)
    if (cv.number(r, lc) == model.lambda) best = r;
  if (best == cv.rows.size()) throw DataError(cv.name + ": no row for the model's lambda");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t k = 2; k < cv.header.size(); ++k) {
    const double v = cv.number(best, k);
    if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  }
  auto r2_on = [&](const std::vector<std::size_t>& rows) {
    return r_squared(detail::take_rows(d.y, rows), model.predict(detail::take_rows(d.x, rows)));
  };
  auto f = open_out(path_in(com, "metrics.csv"));
  f << "metric,value\n";
  f << "n_train," << train.size() << "\nn_holdout," << test.size() << '\n';
  f << "lambda," << num(model.lambda) << '\n';
  f << "cv_mean_r2," << cv.rows[best][cv.column("mean_r2")] << '\n';
  f << "cv_min_r2," << num(lo) << "\ncv_max_r2," << num(hi) << '\n';
  f << "train_r2," << num(r2_on(train)) << '\n';
  f << "holdout_r2," << num(r2_on(test)) << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// checkerboard / rbf

void write_sweep(const std::vector<DeltaResult>& res, const Common& com, const std::string& stem, bool rbf) {
  auto f = open_out(path_in(com, stem + ".csv"));
  f << "delta,offset," << (rbf ? "sigma" : "lambda") << ",n_train,n_val,r2\n";
  auto s = open_out(path_in(com, stem + "_summary.csv"));
  s << "delta," << (rbf ? "sigma" : "lambda") << ",mean_r2,min_r2,max_r2\n";
  for (const auto& r : res) {
    const double param = rbf ? r.sigma : r.lambda;
    for (const auto& run : r.runs)
      f << num(r.delta) << ',' << to_string(run.offset) << ',' << num(param) << ',' << run.n_train << ','
        << run.n_val << ',' << num(rbf ? run.rbf_r2 : run.ridge_r2) << '\n';
    const Band& b = rbf ? r.rbf : r.ridge;
    s << num(r.delta) << ',' << num(param) << ',' << num(b.mean) << ',' << num(b.min) << ',' << num(b.max)
      << '\n';
  }
}

int cmd_checkerboard(Command& c) {
  RunConfig cfg = resolve(c);
  const Common com = common(cfg);
  const std::string features = cfg.require("features");
  const std::string labels = cfg.require("labels");
  const Grid grid = grid_from(cfg);
  const RidgeSettings s = ridge_settings(cfg);
  CheckerboardOptions opt;
  opt.deltas = cfg.reals("deltas", default_deltas());
  save_config(cfg, com, "checkerboard");

  const FeatureTable table = FeatureTable::load(features);
  const LabeledData d = load_labeled(table, labels, s.column, grid);
  opt.lambdas = s.lambdas;
  opt.ridge = s.ridge;
  opt.threads = com.threads;
  const auto res = checkerboard_experiment(d.x, transform_labels(d.y, s.ridge.transform), d.locs, opt);
  write_sweep(res, com, "checkerboard", false);
  return kOk;
}

int cmd_rbf(Command& c) {
  RunConfig cfg = resolve(c);
  const Common com = common(cfg);
  const std::string labels = cfg.require("labels");
  const std::string column = cfg.str("label_column", "label");
  const auto transform = parse_transform(cfg.str("transform", "identity"));
  CheckerboardOptions opt;
  opt.deltas = cfg.reals("deltas", default_deltas());
  opt.sigmas = cfg.reals("sigmas", default_sigma_grid());
  save_config(cfg, com, "rbf");

  const CsvTable csv = read_csv(labels);
  const std::size_t la = csv.column("lat"), lo = csv.column("lon"), lc = csv.column(column);
  std::vector<LatLon> locs;
  Eigen::VectorXd y(static_cast<Eigen::Index>(csv.rows.size()));
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    locs.push_back({csv.number(r, la), csv.number(r, lo)});
    y(static_cast<Eigen::Index>(r)) = csv.number(r, lc);
  }
  opt.run_ridge = false;
  opt.run_rbf = true;
  opt.threads = com.threads;
  const auto res = checkerboard_experiment(Eigen::MatrixXd(), transform_labels(y, transform), locs, opt);
  write_sweep(res, com, "rbf", true);
  return kOk;
}

// ---------------------------------------------------------------------------
// superres

int cmd_superres(Command& c) {
  RunConfig cfg = resolve(c);
  const Common com = common(cfg);
  const std::string image_dir = cfg.require("images");
  const std::string bank_path = cfg.require("bank");
  const std::string model_path = cfg.require("model");
  const Grid grid = grid_from(cfg);
  const auto factors = cfg.reals("factors", {2, 4, 8, 16});
  const std::string bw = cfg.str("bandwidth", "auto");
  const std::size_t limit = cfg.integer("limit", 0);
  save_config(cfg, com, "superres");

  double fixed_bw = -1.0;
  if (bw != "auto") {
    fixed_bw = RunConfig::parse("b=" + bw).real("b", 0);
    if (!(fixed_bw >= 0.0)) throw InvalidArgument("bandwidth must be >= 0 or auto");
  }
  std::vector<std::size_t> fs_list;
  for (double f : factors) {
    if (!(f >= 1.0) || f != std::floor(f)) throw InvalidArgument("factors must be positive integers");
    fs_list.push_back(static_cast<std::size_t>(f));
  }
  const PatchBank bank = PatchBank::load(bank_path);
  const RidgeModel model = RidgeModel::load(model_path);
  auto files = list_cell_images(image_dir);
  if (limit > 0 && files.size() > limit) files.resize(limit);
  if (files.empty()) throw DataError("no <row>_<col> images in " + image_dir);

  std::vector<std::string> chunks(files.size());
  parallel_for(files.size(), com.threads, [&](std::size_t i) {
    Image img = read_image(files[i].path);
    const CellId cell = grid.cell(static_cast<std::size_t>(files[i].row), static_cast<std::size_t>(files[i].col));
    const ScoreMap map = superres_map(img, bank, model);
    std::ostringstream os;
    for (std::size_t f : fs_list) {
      const double b = fixed_bw >= 0.0 ? fixed_bw : default_bandwidth(std::min(map.rows, map.cols), f);
      const auto p = pool_to_subgrid(map, f, b);
      for (std::size_t r = 0; r < f; ++r)
        for (std::size_t q = 0; q < f; ++q)
          os << num(cell.lat) << ',' << num(cell.lon) << ',' << f << ',' << r << ',' << q << ','
             << num(inverse_transform(p.at(r, q), model.transform)) << '\n';
    }
    chunks[i] = os.str();
  });
  auto f = open_out(path_in(com, "superres.csv"));
  f << "lat,lon,F,block_row,block_col,value\n";
  for (const auto& ch : chunks) f << ch;
  return kOk;
}

// ---------------------------------------------------------------------------
// fuse

int cmd_fuse(Command& c) {
  RunConfig cfg = resolve(c);
  const Common com = common(cfg);
  const std::string features = cfg.require("features");
  const std::string labels = cfg.require("labels");
  const std::string second = cfg.require("second");
  const std::string format = cfg.str("second_format", "raw");
  const bool clamp = cfg.flag("clamp", true);
  const Grid grid = grid_from(cfg);
  const RidgeSettings s = ridge_settings(cfg);
  const auto grid2 = cfg.reals("lambdas2", s.lambdas);
  if (format != "raw" && format != "features") throw InvalidArgument("second_format must be raw or features");
  save_config(cfg, com, "fuse");

  const FeatureTable table = FeatureTable::load(features);
  const LabeledData d = load_labeled(table, labels, s.column, grid);
  const CsvTable csv2 = read_csv(second);
  const Joined j2 = join_on_cells(table, csv2, grid);
  std::map<std::size_t, std::size_t> row2;
  for (std::size_t i = 0; i < j2.feature_rows.size(); ++i) row2[j2.feature_rows[i]] = j2.csv_rows[i];
  const std::size_t la = csv2.column("lat"), lo = csv2.column("lon");
  std::vector<std::size_t> value_cols;
  for (std::size_t k = 0; k < csv2.header.size(); ++k)
    if (k != la && k != lo) value_cols.push_back(k);
  if (format == "features" && value_cols.size() != kNightlightFeatures)
    throw DataError(second + ": expected " + std::to_string(kNightlightFeatures) + " feature columns");
  const std::size_t k2 = format == "raw" ? kNightlightFeatures : value_cols.size();
  const std::size_t n = d.join.feature_rows.size();
  Eigen::MatrixXd z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k2));
  for (std::size_t i = 0; i < n; ++i) {
    const auto it = row2.find(d.join.feature_rows[i]);
    if (it == row2.end()) throw DataError(second + ": no row for a labelled cell");
    std::vector<double> v;
    for (auto col : value_cols) v.push_back(csv2.number(it->second, col));
    if (format == "raw") {
      const auto a = nightlights_features(v, clamp).as_array();
      for (std::size_t k = 0; k < k2; ++k) z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = a[k];
    } else {
      for (std::size_t k = 0; k < k2; ++k) z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = v[k];
    }
  }

  const Eigen::VectorXd yt = transform_labels(d.y, s.ridge.transform);
  const auto split = holdout_split(n, s.holdout, com.seed);
  const Eigen::MatrixXd xtr = detail::take_rows(d.x, split.train), ztr = detail::take_rows(z, split.train);
  const Eigen::VectorXd ytr = detail::take_rows(yt, split.train);
  const Eigen::MatrixXd xte = detail::take_rows(d.x, split.test), zte = detail::take_rows(z, split.test);
  const Eigen::VectorXd yte = detail::take_rows(yt, split.test);

  const CvReport single = tune_lambda(xtr, ytr, s.lambdas, s.folds, com.seed, s.ridge, com.threads);
  const RidgeModel single_model = fit_model(d.x, yt, split.train, single.chosen_lambda, s.ridge);
  const BlockCvReport block =
      tune_block(xtr, ztr, ytr, s.lambdas, grid2, s.folds, com.seed, s.ridge.standardize, com.threads);
  const BlockRidgeModel block_model =
      fit_block_ridge(xtr, ztr, ytr, block.lambda1, block.lambda2, s.ridge.standardize);

  auto f = open_out(path_in(com, "fuse.csv"));
  f << "metric,value\n";
  f << "n_train," << split.train.size() << "\nn_holdout," << split.test.size() << '\n';
  f << "second_features," << k2 << '\n';
  f << "single_lambda," << num(single.chosen_lambda) << '\n';
  f << "single_cv_r2," << num(single.best_mean()) << '\n';
  f << "single_holdout_r2," << num(r_squared(yte, single_model.predict_transformed(xte, s.ridge.clip))) << '\n';
  f << "block_lambda1," << num(block.lambda1) << "\nblock_lambda2," << num(block.lambda2) << '\n';
  f << "block_cv_r2," << num(block.best_mean()) << '\n';
  f << "block_holdout_r2," << num(r_squared(yte, block_model.predict(xte, zte, s.ridge.clip))) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random convolutional features for satellite imagery: featurize once, regress per task."};
  app.require_subcommand(1);
  app.set_version_flag("--version", "mosaiks 1.0");

  std::vector<Command> commands;
  commands.reserve(9);
  auto add = [&](const std::string& name, const std::string& help) -> Command& {
    commands.push_back({name, app.add_subcommand(name, help), {}, {}});
    common_options(commands.back());
    return commands.back();
  };

  using Flags = std::initializer_list<std::pair<const char*, const char*>>;
  auto opts = [](Command& cmd, Flags flags) {
    for (const auto& [name, help] : flags) opt(cmd, name, help);
  };
  const std::pair<const char*, const char*> cell_km{"cell-km", "grid cell size in km (default 10)"};
  const std::pair<const char*, const char*> column{"label-column", "label column name (default label)"};
  const std::pair<const char*, const char*> transform{"transform", "identity | log1p | log (default identity)"};
  const std::pair<const char*, const char*> standardize{"standardize", "standardize feature columns (default true)"};
  const std::pair<const char*, const char*> lambdas{"lambdas", "comma-separated lambda grid (default 1e-4..1e4, 12 points)"};
  const std::pair<const char*, const char*> folds{"folds", "cross-validation folds (default 5)"};
  const std::pair<const char*, const char*> holdout{"holdout", "holdout fraction (default 0.2)"};
  const std::pair<const char*, const char*> deltas{"deltas", "comma-separated square widths in degrees"};

  Command& synth = add("synth", "generate a synthetic image corpus with labels");
  opts(synth, {{"n", "number of images (default 100)"},
               {"size", "image side in pixels (default 64)"},
               {"bands", "bands per image (default 3)"},
               {"task", "subimage | spatial (default subimage)"},
               {"noise", "label noise sigma for the spatial task (default 0.05)"},
               {"dominant-band", "band whose dominance defines the subimage label (default 1)"},
               {"nightlights-pixels", "also write nightlights.csv with this many pixels per cell (default 0)"},
               cell_km});
  Command& feat = add("featurize", "build a patch bank and featurize an image directory");
  opts(feat, {{"images", "directory of <row>_<col>.png images (required)"},
              {"bank", "reuse an existing bank.mskb instead of sampling one"},
              {"k", "number of features, even (default 8192)"},
              {"m", "patch width in pixels (default 3)"},
              {"eps-rel", "whitening regularizer relative to the largest eigenvalue (default 1e-6)"},
              {"holdout", "fraction of images kept out of the patch pool (default 0.2)"},
              {"precision", "f32 | f64 feature values; .mskf always stores f32, the CSV keeps f64 (default f32)"},
              {"csv", "also write features.csv (default false)"},
              cell_km});
  Command& train = add("train", "fit a ridge model with holdout and cross-validated lambda");
  opts(train, {{"features", "features.mskf (required)"},
               {"labels", "CSV with lat, lon and a label column (required)"},
               column, transform, standardize,
               {"clip", "clip predictions to the training label range (default true)"},
               lambdas, folds, holdout, cell_km});
  Command& predict = add("predict", "apply a trained model to a feature table");
  opts(predict, {{"model", "model.mskm (required)"}, {"features", "features.mskf (required)"}});
  Command& eval = add("eval", "report train, cross-validation and holdout R^2 of a training run");
  opts(eval, {{"train-dir", "output directory of a train run (required)"},
              {"features", "features.mskf used for training (required)"},
              {"labels", "labels CSV used for training (required)"},
              column, cell_km});
  Command& cb = add("checkerboard", "spatial checkerboard cross-validation of ridge on features");
  opts(cb, {{"features", "features.mskf (required)"}, {"labels", "labels CSV (required)"}, column, transform,
            standardize, lambdas, deltas, cell_km});
  Command& rbf = add("rbf", "spatial checkerboard cross-validation of RBF interpolation");
  opts(rbf, {{"labels", "labels CSV (required)"}, column, transform, deltas,
             {"sigmas", "comma-separated bandwidth grid in degrees (default 0.01..10, 10 points)"}});
  Command& sr = add("superres", "sub-image predictions on F x F grids");
  opts(sr, {{"images", "directory of <row>_<col>.png images (required)"},
            {"bank", "bank.mskb used for training (required)"},
            {"model", "model.mskm (required)"},
            {"factors", "comma-separated grid factors (default 2,4,8,16)"},
            {"bandwidth", "smoothing bandwidth in positions, or auto (default auto)"},
            {"limit", "process at most this many images, 0 for all (default 0)"},
            cell_km});
  Command& fuse = add("fuse", "compare image-only and two-sensor ridge");
  opts(fuse, {{"features", "features.mskf (required)"},
              {"labels", "labels CSV (required)"},
              {"second", "second-sensor CSV keyed by lat, lon (required)"},
              {"second-format", "raw (pixel value columns, binned to 22 features) | features (22 ready columns) (default raw)"},
              {"clamp", "clamp raw values into the histogram range (default true)"},
              column, transform, standardize, lambdas,
              {"lambdas2", "lambda grid for the second block (default: same as --lambdas)"},
              folds, holdout, cell_km});

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  const std::map<std::string, int (*)(Command&)> handlers{
      {"synth", cmd_synth},       {"featurize", cmd_featurize},       {"train", cmd_train},
      {"predict", cmd_predict},   {"eval", cmd_eval},                 {"checkerboard", cmd_checkerboard},
      {"rbf", cmd_rbf},           {"superres", cmd_superres},         {"fuse", cmd_fuse}};
  for (auto& cmd : commands) {
    if (!cmd.app->parsed()) continue;
    try {
      return handlers.at(cmd.name)(cmd);
    } catch (const InvalidArgument& e) {
      std::cerr << "mosaiks " << cmd.name << ": " << e.what() << "\n";
      return kUsage;
    } catch (const DataError& e) {
      std::cerr << "mosaiks " << cmd.name << ": " << e.what() << "\n";
      return kData;
    } catch (const NumericalError& e) {
      std::cerr << "mosaiks " << cmd.name << ": " << e.what() << "\n";
      return kNumerical;
    } catch (const fs::filesystem_error& e) {
      std::cerr << "mosaiks " << cmd.name << ": " << e.what() << "\n";
      return kData;
    }
  }
  return kUsage;
}
