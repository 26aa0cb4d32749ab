#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "support.hpp"

#include "cropcube/cube_builder.hpp"
#include "cropcube/predictors.hpp"
#include "cropcube/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

using namespace cropcube;
using namespace cropcube::testing;

namespace {

FeatureSequence scalar_sequence(double x) {
  FeatureSequence s;
  s.values = Eigen::MatrixXd::Constant(1, 1, x);
  s.mask = {1};
  return s;
}

FeatureSequence random_sequence(std::mt19937_64& rng, Index t, Index f) {
  std::normal_distribution<double> g(0.0, 1.0);
  FeatureSequence s;
  s.values = Eigen::MatrixXd(t, f);
  for (Index i = 0; i < s.values.size(); ++i) s.values.data()[i] = g(rng);
  s.mask.assign(static_cast<std::size_t>(t), 1);
  return s;
}

// Separable 20-pixel toy set: one feature per pixel, the NDVI peak.
std::pair<Eigen::MatrixXd, std::vector<std::uint8_t>> separable_pixels() {
  Eigen::MatrixXd x(20, 1);
  std::vector<std::uint8_t> y(20);
  for (int i = 0; i < 20; ++i) {
    const bool paddy = i % 2 == 0;
    x(i, 0) = paddy ? 0.55 + 0.02 * i : 0.05 + 0.01 * i;
    y[static_cast<std::size_t>(i)] = paddy ? 1 : 0;
  }
  return {x, y};
}

double training_accuracy(const PixelClassifier& clf, const Eigen::MatrixXd& x, const std::vector<std::uint8_t>& y) {
  int hits = 0;
  for (Index i = 0; i < x.rows(); ++i)
    hits += (predict_pixel_probability(clf, x.row(i).transpose()) >= 0.5) == (y[static_cast<std::size_t>(i)] != 0);
  return static_cast<double>(hits) / static_cast<double>(x.rows());
}

}  // namespace

TEST_CASE("extract_vi_features pooled means") {
  SUBCASE("uniform field") {
    // NIR 0.8, R 0.2 gives NDVI 0.6 everywhere
    const DataCube cube = s2_cube(3, 4, 4, 0.8f, 0.2f, 0.4f);
    const std::vector<IndexKind> kinds{IndexKind::NDVI};
    const FeatureSequence f = extract_vi_features(cube, kinds, true);
    CHECK(f.timesteps() == 3);
    CHECK(f.features() == 1);
    for (Index t = 0; t < 3; ++t) CHECK(f.values(t, 0) == doctest::Approx(0.6));
  }
  SUBCASE("two in-plot pixels") {
    DataCube cube = s2_cube(1, 1, 3, 0.0f, 0.0f, 0.0f);
    // NDVI 0.2 at (0,0), 0.8 at (0,1); (0,2) is outside the plot
    cube.data(0, 0, 0, 0) = 0.4f;
    cube.data(0, 2, 0, 0) = 0.6f;
    cube.data(0, 0, 0, 1) = 0.1f;
    cube.data(0, 2, 0, 1) = 0.9f;
    cube.pixel_mask = Tensor3u8::Zero({1, 1, 3});
    (*cube.pixel_mask)(0, 0, 0) = 1;
    (*cube.pixel_mask)(0, 0, 1) = 1;
    const std::vector<IndexKind> kinds{IndexKind::NDVI};
    CHECK(extract_vi_features(cube, kinds, true).values(0, 0) == doctest::Approx(0.5));
    CHECK(extract_vi_features(cube, kinds, false).values(0, 0) == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("padded timestep") {
    DataCube cube = s2_cube(3, 2, 2, 0.8f, 0.2f, 0.4f);
    cube.timestep_mask[1] = 0;
    cube.data.slab(1).setZero();
    const std::vector<IndexKind> kinds{IndexKind::NDVI, IndexKind::GCVI};
    const FeatureSequence f = extract_vi_features(cube, kinds, true);
    CHECK(f.values(1, 0) == 0.0);
    CHECK(f.values(1, 1) == 0.0);
    CHECK(f.values(0, 1) == doctest::Approx(1.0));
    CHECK(f.mask == cube.timestep_mask);
  }
  SUBCASE("errors") {
    DataCube cube = s2_cube(2, 2, 2, 0.8f, 0.2f, 0.4f);
    const std::vector<IndexKind> rvi{IndexKind::RVI};
    CHECK_ERROR(extract_vi_features(cube, rvi, true), ErrorCode::MissingBand);
    cube.pixel_mask = Tensor3u8::Zero({2, 2, 2});
    cube.data.array().setZero();
    const std::vector<IndexKind> ndvi{IndexKind::NDVI};
    CHECK_ERROR(extract_vi_features(cube, ndvi, true), ErrorCode::EmptyPlotMask);
  }
  SUBCASE("raw bands are an opt-in") {
    const DataCube cube = s2_cube(2, 2, 2, 0.8f, 0.2f, 0.4f);
    FeatureSpec spec;
    CHECK(extract_features(cube, spec).features() == 2);
    spec.raw_bands = true;
    const FeatureSequence f = extract_features(cube, spec);
    CHECK(f.features() == 5);
    CHECK(f.values(0, 4) == doctest::Approx(0.8));
  }
}

TEST_CASE("fit_linear recovers y = 2x + 1") {
  std::vector<FeatureSequence> xs;
  std::vector<double> ys;
  for (int i = 0; i < 7; ++i) {
    const double x = -1.5 + 0.7 * i;
    xs.push_back(scalar_sequence(x));
    ys.push_back(2.0 * x + 1.0);
  }
  const LinearModel m = fit_linear(xs, ys, 0.0);
  REQUIRE(m.weights.size() == 2);
  CHECK(std::abs(m.weights[0] - 2.0) < 1e-8);
  CHECK(std::abs(m.weights[1] - 1.0) < 1e-8);
}

TEST_CASE("fit_linear special cases") {
  std::mt19937_64 rng(3);
  SUBCASE("constant labels") {
    std::vector<FeatureSequence> xs;
    for (int i = 0; i < 6; ++i) xs.push_back(random_sequence(rng, 2, 1));
    const std::vector<double> ys(6, 42.0);
    const LinearModel m = fit_linear(xs, ys, 0.0);
    CHECK(m.weights.head(2).norm() < 1e-12);
    CHECK(m.weights[2] == doctest::Approx(42.0));
  }
  SUBCASE("one sample, two features") {
    const std::vector<FeatureSequence> xs{random_sequence(rng, 1, 2)};
    const std::vector<double> ys{1.0};
    CHECK_ERROR(fit_linear(xs, ys, 0.0), ErrorCode::DegenerateSystem);
    // a ridge penalty makes the same system solvable
    CHECK(fit_linear(xs, ys, 1e-3).weights.allFinite());
  }
  SUBCASE("input validation") {
    const std::vector<FeatureSequence> none;
    const std::vector<double> no_labels;
    CHECK_ERROR(fit_linear(none, no_labels, 0.0), ErrorCode::EmptyInput);
    const std::vector<FeatureSequence> xs{scalar_sequence(1.0), scalar_sequence(2.0)};
    const std::vector<double> one{1.0};
    CHECK_ERROR(fit_linear(xs, one, 0.0), ErrorCode::LengthMismatch);
    const std::vector<FeatureSequence> mixed{scalar_sequence(1.0), random_sequence(rng, 2, 1)};
    const std::vector<double> two{1.0, 2.0};
    CHECK_ERROR(fit_linear(mixed, two, 0.0), ErrorCode::DimensionMismatch);
  }
}

TEST_CASE("fit is deterministic and matches the normal equations oracle") {
  std::mt19937_64 rng(4);
  std::vector<FeatureSequence> xs;
  std::vector<double> ys;
  for (int i = 0; i < 40; ++i) {
    xs.push_back(random_sequence(rng, 3, 2));
    ys.push_back(std::normal_distribution<double>(0, 5)(rng));
  }
  for (double lambda : {0.0, 0.5, 10.0}) {
    const LinearModel a = fit_linear(xs, ys, lambda);
    CHECK(fit_linear(xs, ys, lambda) == a);
    // Oracle: solve the augmented system [X 1]^T [X 1] + diag(lambda, .., 0) directly.
    Eigen::MatrixXd xa(40, 7);
    Eigen::VectorXd y(40);
    for (int i = 0; i < 40; ++i) {
      xa.row(i).head(6) = xs[static_cast<std::size_t>(i)].flattened().transpose();
      xa(i, 6) = 1.0;
      y[i] = ys[static_cast<std::size_t>(i)];
    }
    Eigen::MatrixXd lhs = xa.transpose() * xa;
    for (int k = 0; k < 6; ++k) lhs(k, k) += lambda;
    const Eigen::VectorXd w = lhs.fullPivLu().solve(xa.transpose() * y);
    CHECK((a.weights - w).norm() < 1e-9 * (1.0 + w.norm()));
  }
}

TEST_CASE("dual form agrees with the primal form") {
  std::mt19937_64 rng(5);
  std::vector<FeatureSequence> xs;
  std::vector<double> ys;
  for (int i = 0; i < 5; ++i) {
    xs.push_back(random_sequence(rng, 4, 2));  // 8 features > 5 samples
    ys.push_back(static_cast<double>(i));
  }
  const LinearModel m = fit_linear(xs, ys, 0.3);
  const Eigen::MatrixXd x = design_matrix(xs);
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(ys.data(), 5);
  CHECK(ridge_gradient(x, y, m.weights, 0.3).norm() < 1e-9);
}

TEST_CASE("ridge gradient at the optimum and against finite differences") {
  std::mt19937_64 rng(6);
  std::vector<FeatureSequence> xs;
  std::vector<double> ys;
  for (int i = 0; i < 30; ++i) {
    xs.push_back(random_sequence(rng, 2, 2));
    ys.push_back(std::normal_distribution<double>(3, 1)(rng));
  }
  const Eigen::MatrixXd x = design_matrix(xs);
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(ys.data(), 30);
  for (double lambda : {0.0, 1e-6, 2.0}) {
    const LinearModel m = fit_linear(xs, ys, lambda);
    CHECK(ridge_gradient(x, y, m.weights, lambda).norm() < 1e-6);

    Eigen::VectorXd w = m.weights;
    for (Index k = 0; k < w.size(); ++k) w[k] += std::normal_distribution<double>(0, 0.5)(rng);
    const Eigen::VectorXd g = ridge_gradient(x, y, w, lambda);
    for (Index k = 0; k < w.size(); ++k) {
      const double h = 1e-5;
      Eigen::VectorXd wp = w, wm = w;
      wp[k] += h;
      wm[k] -= h;
      const double fd = (ridge_objective(x, y, wp, lambda) - ridge_objective(x, y, wm, lambda)) / (2 * h);
      CHECK(std::abs(fd - g[k]) <= 1e-4 * std::max(1.0, std::abs(g[k])));
    }
  }
}

TEST_CASE("ridge shrinks the weights monotonically") {
  std::mt19937_64 rng(7);
  std::vector<FeatureSequence> xs;
  std::vector<double> ys;
  for (int i = 0; i < 25; ++i) {
    xs.push_back(random_sequence(rng, 3, 1));
    ys.push_back(xs.back().values.sum() + std::normal_distribution<double>(0, 0.1)(rng));
  }
  double prev = std::numeric_limits<double>::infinity();
  for (double lambda : {0.0, 1e-6, 1e-3, 0.1, 1.0, 10.0, 1000.0}) {
    const LinearModel m = fit_linear(xs, ys, lambda);
    const double norm = m.weights.head(3).norm();
    CHECK(norm <= prev + 1e-12);
    prev = norm;
  }
}

TEST_CASE("predict_linear") {
  LinearModel m;
  m.timesteps = 1;
  m.features = 1;
  m.weights = Eigen::Vector2d(2.0, 1.0);
  CHECK(predict_linear(m, scalar_sequence(0.0)) == 1.0);
  CHECK(predict_linear(m, scalar_sequence(3.0)) == 7.0);

  LinearModel date;
  date.task = Task::Sowing;
  date.timesteps = 180;
  date.features = 1;
  date.weights = Eigen::VectorXd::Zero(181);
  FeatureSequence zeros;
  zeros.values = Eigen::MatrixXd::Zero(180, 1);
  zeros.mask.assign(180, 0);
  date.weights[180] = -2.4;
  CHECK(predict_linear(date, zeros) == 0.0);
  date.weights[180] = 12.6;
  CHECK(predict_linear(date, zeros) == 13.0);
  date.weights[180] = 500.0;
  CHECK(predict_linear(date, zeros) == 179.0);

  CHECK_ERROR(predict_linear(m, zeros), ErrorCode::DimensionMismatch);
}

TEST_CASE("logistic classifier on a separable toy set") {
  auto [x, y] = separable_pixels();
  const PixelClassifier clf = fit_pixel_classifier(x, y, 1);
  CHECK(training_accuracy(clf, x, y) == 1.0);
  CHECK(clf.gradient_norm < 1e-6);
  CHECK(clf.threshold == 0.5);

  // sample order does not change the fit
  std::vector<Index> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(8);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::MatrixXd xp(20, 1);
  std::vector<std::uint8_t> yp(20);
  for (Index i = 0; i < 20; ++i) {
    xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
    yp[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  const PixelClassifier again = fit_pixel_classifier(xp, yp, 1);
  CHECK((again.weights - clf.weights).cwiseAbs().maxCoeff() < 1e-8);

  // retraining on uniformly scaled features leaves every class unchanged
  for (double c : {0.1, 3.0, 25.0}) {
    const PixelClassifier scaled = fit_pixel_classifier(x * c, y, 1);
    for (Index i = 0; i < 20; ++i)
      CHECK((predict_pixel_probability(scaled, x.row(i).transpose() * c) >= 0.5) ==
            (predict_pixel_probability(clf, x.row(i).transpose()) >= 0.5));
  }
}

TEST_CASE("classifier errors") {
  auto [x, y] = separable_pixels();
  std::vector<std::uint8_t> all(20, 1);
  CHECK_ERROR(fit_pixel_classifier(x, all, 1), ErrorCode::SingleClassData);
  std::vector<std::uint8_t> short_labels(5, 1);
  CHECK_ERROR(fit_pixel_classifier(x, short_labels, 1), ErrorCode::LengthMismatch);
}

TEST_CASE("crop cover maps") {
  SUBCASE("zero weights give one half") {
    PixelClassifier clf;
    clf.timesteps = 4;
    clf.features = 2;
    clf.weights = Eigen::VectorXd::Zero(9);
    const Imagef map = predict_crop_cover_map(clf, s2_cube(4, 3, 5, 0.6f, 0.1f, 0.2f));
    CHECK(map.rows() == 3);
    CHECK(map.cols() == 5);
    CHECK((map == 0.5f).all());
    CHECK_ERROR(predict_crop_cover_map(clf, s2_cube(5, 3, 5, 0.6f, 0.1f, 0.2f)), ErrorCode::DimensionMismatch);
  }
  SUBCASE("probabilities stay in [0, 1] on random cubes") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> g(0, 50);
    for (int trial = 0; trial < 20; ++trial) {
      PixelClassifier clf;
      clf.timesteps = 6;
      clf.features = 2;
      clf.weights = Eigen::VectorXd(13);
      for (Index k = 0; k < 13; ++k) clf.weights[k] = g(rng);
      DataCube cube = s2_cube(6, 4, 4, 0, 0, 0);
      std::uniform_real_distribution<float> u(0.0f, 1.0f);
      for (Index i = 0; i < cube.data.size(); ++i) cube.data.array()[i] = u(rng);
      const Imagef map = predict_crop_cover_map(clf, cube);
      CHECK((map >= 0.0f).all());
      CHECK((map <= 1.0f).all());
    }
  }
}

TEST_CASE("classifier separates paddy pixels of a synthetic region") {
  SynthConfig cfg;
  cfg.seed = 21;
  const SynthRegion train_region = generate_synthetic_region(cfg);
  cfg.seed = 22;
  const SynthRegion test_region = generate_synthetic_region(cfg);
  const std::vector<BandSelection> bands{{Satellite::S2, {"G", "R", "NIR"}}};
  FeatureSpec spec;
  spec.bands = bands;

  auto cube_of = [&](const SynthRegion& r) {
    return build_cube(r.scenes, builtin_calendar(), {cfg.season, r.truth.grid, bands, false});
  };
  const DataCube train_cube = cube_of(train_region);
  const Eigen::MatrixXd all = pixel_features(train_cube, spec);
  // every 5th pixel is plenty for a linear boundary
  std::vector<Index> rows;
  for (Index i = 0; i < all.rows(); i += 5) rows.push_back(i);
  Eigen::MatrixXd x(static_cast<Index>(rows.size()), all.cols());
  std::vector<std::uint8_t> y;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    x.row(static_cast<Index>(k)) = all.row(rows[k]);
    y.push_back(train_region.truth.crop_label.data()[rows[k]]);
  }
  const PixelClassifier clf = fit_pixel_classifier(x, y, train_cube.timesteps(), spec);

  const Imagef map = predict_crop_cover_map(clf, cube_of(test_region));
  const auto& label = test_region.truth.crop_label;
  Index hits = 0;
  for (Index i = 0; i < map.size(); ++i) hits += (map.data()[i] >= 0.5f) == (label.data()[i] != 0);
  CHECK(static_cast<double>(hits) / static_cast<double>(map.size()) >= 0.95);
}

TEST_CASE("split_dataset") {
  std::vector<std::string> ids;
  for (int i = 0; i < 100; ++i) ids.push_back("id" + std::to_string(i));
  const DatasetSplit s = split_dataset(ids, 17);
  CHECK(s.test_ids.size() == 20);
  CHECK(s.val_ids.size() == 16);
  CHECK(s.train_ids.size() == 64);

  std::set<std::string> seen;
  for (const auto* part : {&s.train_ids, &s.val_ids, &s.test_ids})
    for (const auto& id : *part) CHECK(seen.insert(id).second);
  CHECK(seen == std::set<std::string>(ids.begin(), ids.end()));

  const DatasetSplit again = split_dataset(ids, 17);
  CHECK(again.test_ids == s.test_ids);
  CHECK(again.val_ids == s.val_ids);
  CHECK(again.train_ids == s.train_ids);
  CHECK(split_dataset(ids, 18).test_ids != s.test_ids);

  for (std::size_t n = 5; n < 60; ++n) {
    const std::vector<std::string> sub(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
    const DatasetSplit p = split_dataset(sub, n);
    const auto n_test = static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(n)));
    CHECK(p.test_ids.size() == n_test);
    CHECK(p.val_ids.size() == static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(n - n_test))));
    CHECK(p.train_ids.size() + p.val_ids.size() + p.test_ids.size() == n);
  }

  const std::vector<std::string> four(ids.begin(), ids.begin() + 4);
  CHECK_ERROR(split_dataset(four, 1), ErrorCode::TooFewSamples);
}

TEST_CASE("model persistence") {
  TempDir dir;
  std::mt19937_64 rng(10);
  std::vector<FeatureSequence> xs;
  std::vector<double> ys;
  for (int i = 0; i < 12; ++i) {
    xs.push_back(random_sequence(rng, 3, 2));
    ys.push_back(std::normal_distribution<double>(20, 4)(rng));
  }
  FeatureSpec spec;
  spec.bands = {{Satellite::S2, {"G", "R", "NIR"}}, {Satellite::S1, {"VV", "VH"}}};
  spec.raw_bands = true;
  const LinearModel lin = fit_linear(xs, ys, 0.25, Task::Harvesting, spec);
  persist_model(lin, dir / "harvesting.json");
  const Model back = load_model(dir / "harvesting.json");
  REQUIRE(std::holds_alternative<LinearModel>(back));
  const LinearModel& lb = std::get<LinearModel>(back);
  CHECK(lb == lin);
  for (int i = 0; i < 10; ++i) {
    const FeatureSequence f = random_sequence(rng, 3, 2);
    CHECK(predict_linear(lb, f) == predict_linear(lin, f));
  }

  auto [x, y] = separable_pixels();
  const PixelClassifier clf = fit_pixel_classifier(x, y, 1, spec);
  const Model cb = model_from_json(model_to_json(clf));
  REQUIRE(std::holds_alternative<PixelClassifier>(cb));
  CHECK(std::get<PixelClassifier>(cb) == clf);
  for (int i = 0; i < 10; ++i) {
    const Eigen::VectorXd v = Eigen::VectorXd::Constant(1, std::uniform_real_distribution<double>(0, 1)(rng));
    CHECK(predict_pixel_probability(std::get<PixelClassifier>(cb), v) == predict_pixel_probability(clf, v));
  }

  CHECK(feature_spec_from_json(feature_spec_to_json(spec)) == spec);

  CHECK_ERROR(model_from_json("{not json"), ErrorCode::SchemaMismatch);
  CHECK_ERROR(model_from_json(R"({"kind":"linear","task":"yield"})"), ErrorCode::SchemaMismatch);
  CHECK_ERROR(model_from_json(R"({"kind":"forest"})"), ErrorCode::SchemaMismatch);
  std::string text = model_to_json(lin);
  text.replace(text.find("harvesting"), 10, "harvest!!!");
  CHECK_ERROR(model_from_json(text), ErrorCode::SchemaMismatch);
  CHECK_ERROR(load_model(dir / "absent.json"), ErrorCode::ModelMissing);
}

TEST_CASE("task names") {
  for (Task t : {Task::CropCover, Task::Sowing, Task::Transplanting, Task::Harvesting, Task::Yield})
    CHECK(parse_task(to_string(t)) == t);
  CHECK_FALSE(parse_task("weeding").has_value());
}
