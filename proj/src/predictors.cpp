#include "cropcube/predictors.hpp"
#include "cropcube/raster_io.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <random>

namespace cropcube {

using nlohmann::json;

std::string_view to_string(Task task) noexcept {
  switch (task) {
    case Task::CropCover: return "crop_cover";
    case Task::Sowing: return "sowing";
    case Task::Transplanting: return "transplanting";
    case Task::Harvesting: return "harvesting";
    case Task::Yield: return "yield";
  }
  return "?";
}

std::optional<Task> parse_task(std::string_view text) noexcept {
  for (Task t : {Task::CropCover, Task::Sowing, Task::Transplanting, Task::Harvesting, Task::Yield})
    if (to_string(t) == text) return t;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// features

Eigen::VectorXd FeatureSequence::flattened() const {
  Eigen::VectorXd out(values.size());
  for (Index t = 0; t < values.rows(); ++t) out.segment(t * values.cols(), values.cols()) = values.row(t).transpose();
  return out;
}

namespace {

/// Mean of each plane over valid pixels; zero rows for unobserved timesteps.
Eigen::VectorXd pooled_means(const DataCube& cube, const Tensor3f& planes, bool pixel_mask_aware) {
  const Index t_len = cube.timesteps();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(t_len);
  const bool use_mask = pixel_mask_aware && cube.pixel_mask.has_value();
  for (Index t = 0; t < t_len; ++t) {
    if (cube.timestep_mask[static_cast<std::size_t>(t)] == 0) continue;
    const Image<double> v = planes.plane(t).cast<double>();
    if (use_mask) {
      const auto valid = (cube.pixel_mask->plane(t) != 0);
      const Index n = valid.count();
      if (n > 0) out[t] = valid.select(v, 0.0).sum() / static_cast<double>(n);
    } else {
      out[t] = v.mean();
    }
  }
  return out;
}

void check_plot_mask(const DataCube& cube, bool pixel_mask_aware) {
  if (!pixel_mask_aware || !cube.pixel_mask) return;
  const bool observed = std::any_of(cube.timestep_mask.begin(), cube.timestep_mask.end(), [](auto m) { return m != 0; });
  if (observed && (cube.pixel_mask->array() == 0).all())
    fail(ErrorCode::EmptyPlotMask, "cube has observations but no valid in-plot pixel");
}

}  // namespace

FeatureSequence extract_vi_features(const DataCube& cube, std::span<const IndexKind> kinds, bool pixel_mask_aware,
                                    std::string_view red_edge) {
  check_plot_mask(cube, pixel_mask_aware);
  FeatureSequence seq;
  seq.values = Eigen::MatrixXd::Zero(cube.timesteps(), static_cast<Index>(kinds.size()));
  seq.mask = cube.timestep_mask;
  for (std::size_t f = 0; f < kinds.size(); ++f) {
    const Tensor3f idx = compute_index(kinds[f], cube, resolve_band_map(cube, kinds[f], red_edge));
    seq.values.col(static_cast<Index>(f)) = pooled_means(cube, idx, pixel_mask_aware);
  }
  return seq;
}

FeatureSequence extract_features(const DataCube& cube, const FeatureSpec& spec) {
  FeatureSequence seq = extract_vi_features(cube, spec.kinds, spec.pixel_mask_aware, spec.red_edge);
  if (!spec.raw_bands) return seq;
  const Index f0 = seq.features();
  seq.values.conservativeResize(Eigen::NoChange, f0 + cube.channels());
  for (Index c = 0; c < cube.channels(); ++c) {
    Tensor3f planes({cube.timesteps(), cube.height(), cube.width()});
    for (Index t = 0; t < cube.timesteps(); ++t) planes.plane(t) = cube.data.plane(t, c);
    seq.values.col(f0 + c) = pooled_means(cube, planes, spec.pixel_mask_aware);
  }
  return seq;
}

// ---------------------------------------------------------------------------
// linear regression

Eigen::MatrixXd design_matrix(std::span<const FeatureSequence> samples) {
  if (samples.empty()) fail(ErrorCode::EmptyInput, "no samples");
  const Index t_len = samples.front().timesteps(), f_len = samples.front().features();
  Eigen::MatrixXd x(static_cast<Index>(samples.size()), t_len * f_len);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].timesteps() != t_len || samples[i].features() != f_len)
      fail(ErrorCode::DimensionMismatch, "feature sequences differ in shape");
    x.row(static_cast<Index>(i)) = samples[i].flattened().transpose();
  }
  return x;
}

LinearModel fit_linear(std::span<const FeatureSequence> samples, std::span<const double> labels, double ridge_lambda,
                       Task task, const FeatureSpec& spec) {
  if (samples.empty()) fail(ErrorCode::EmptyInput, "fit_linear needs at least one sample");
  if (samples.size() != labels.size()) fail(ErrorCode::LengthMismatch, "one label per sample required");
  if (!(ridge_lambda >= 0.0)) fail(ErrorCode::InvalidConfig, "ridge_lambda must be >= 0");
  const Eigen::MatrixXd x = design_matrix(samples);
  const Eigen::Map<const Eigen::VectorXd> y(labels.data(), static_cast<Index>(labels.size()));
  if (!y.allFinite()) fail(ErrorCode::InvalidConfig, "labels must be finite");

  const Index n = x.rows(), d = x.cols();
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const Eigen::MatrixXd xc = x.rowwise() - mu;
  const double y_mean = y.mean();
  const Eigen::VectorXd yc = y.array() - y_mean;

  Eigen::VectorXd w;
  if (ridge_lambda == 0.0) {
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xc);
    if (qr.rank() < d)
      fail(ErrorCode::DegenerateSystem, "design has rank " + std::to_string(qr.rank()) + " < " + std::to_string(d) +
                                            " features with lambda = 0");
    w = qr.solve(yc);
  } else if (d <= n) {
    Eigen::MatrixXd gram = xc.transpose() * xc;
    gram.diagonal().array() += ridge_lambda;
    w = gram.ldlt().solve(xc.transpose() * yc);
  } else {
    // Dual form, identical solution: w = Xc^T (Xc Xc^T + lambda I)^-1 yc.
    Eigen::MatrixXd kernel = xc * xc.transpose();
    kernel.diagonal().array() += ridge_lambda;
    w = xc.transpose() * kernel.ldlt().solve(yc);
  }

  LinearModel model;
  model.task = task;
  model.ridge_lambda = ridge_lambda;
  model.feature_spec = spec;
  model.timesteps = samples.front().timesteps();
  model.features = samples.front().features();
  model.weights.resize(d + 1);
  model.weights.head(d) = w;
  model.weights[d] = y_mean - mu.dot(w);
  return model;
}

double predict_linear(const LinearModel& model, const FeatureSequence& features) {
  if (features.timesteps() != model.timesteps || features.features() != model.features ||
      model.weights.size() != model.timesteps * model.features + 1)
    fail(ErrorCode::DimensionMismatch, "features [" + std::to_string(features.timesteps()) + ", " +
                                           std::to_string(features.features()) + "] do not match model [" +
                                           std::to_string(model.timesteps) + ", " + std::to_string(model.features) + "]");
  const Index d = model.weights.size() - 1;
  double y = model.weights.head(d).dot(features.flattened()) + model.weights[d];
  if (is_date_task(model.task)) y = std::clamp(std::round(y), 0.0, static_cast<double>(model.timesteps - 1));
  return y;
}

double ridge_objective(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels, const Eigen::VectorXd& weights,
                       double ridge_lambda) {
  const Index d = design.cols();
  const Eigen::VectorXd r = (design * weights.head(d)).array() + weights[d] - labels.array();
  return r.squaredNorm() + ridge_lambda * weights.head(d).squaredNorm();
}

Eigen::VectorXd ridge_gradient(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels,
                               const Eigen::VectorXd& weights, double ridge_lambda) {
  const Index d = design.cols();
  const Eigen::VectorXd r = (design * weights.head(d)).array() + weights[d] - labels.array();
  Eigen::VectorXd g(d + 1);
  g.head(d) = 2.0 * design.transpose() * r + 2.0 * ridge_lambda * weights.head(d);
  g[d] = 2.0 * r.sum();
  return g;
}

// ---------------------------------------------------------------------------
// logistic classifier

namespace {

double logistic_loss(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w, double l2) {
  const Index d = x.cols();
  const Eigen::VectorXd z = (x * w.head(d)).array() + w[d];
  double loss = 0.0;
  for (Index i = 0; i < z.size(); ++i) {
    // log(1 + e^z) - y z, computed without overflow
    const double zi = z[i];
    loss += (zi > 0 ? zi + std::log1p(std::exp(-zi)) : std::log1p(std::exp(zi))) - y[i] * zi;
  }
  return loss + 0.5 * l2 * w.head(d).squaredNorm();
}

}  // namespace

PixelClassifier fit_pixel_classifier(const Eigen::MatrixXd& features, std::span<const std::uint8_t> labels,
                                     Index timesteps, const FeatureSpec& spec, const LogisticOptions& options) {
  const Index n = features.rows(), d = features.cols();
  if (static_cast<Index>(labels.size()) != n) fail(ErrorCode::LengthMismatch, "one label per pixel required");
  if (timesteps < 1 || d % timesteps != 0) fail(ErrorCode::DimensionMismatch, "feature width is not T * F");
  Eigen::VectorXd y(n);
  Index positives = 0;
  for (Index i = 0; i < n; ++i) {
    y[i] = labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    positives += labels[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  if (positives == 0 || positives == n) fail(ErrorCode::SingleClassData, "both paddy and non-paddy pixels required");

  Eigen::VectorXd w = Eigen::VectorXd::Zero(d + 1);
  PixelClassifier clf;
  double loss = logistic_loss(features, y, w, options.l2);
  for (clf.iterations = 0; clf.iterations < options.max_iterations; ++clf.iterations) {
    const Eigen::VectorXd z = (features * w.head(d)).array() + w[d];
    const Eigen::VectorXd p = z.unaryExpr([](double v) { return sigmoid(v); });
    const Eigen::VectorXd r = p - y;
    Eigen::VectorXd g(d + 1);
    g.head(d) = features.transpose() * r + options.l2 * w.head(d);
    g[d] = r.sum();
    clf.gradient_norm = g.norm();
    if (clf.gradient_norm < options.gradient_tolerance) break;

    const Eigen::VectorXd s = (p.array() * (1.0 - p.array())).max(1e-12);
    Eigen::MatrixXd hess(d + 1, d + 1);
    const Eigen::MatrixXd xs = features.array().colwise() * s.array().sqrt();
    hess.topLeftCorner(d, d).noalias() = xs.transpose() * xs;
    hess.topLeftCorner(d, d).diagonal().array() += options.l2;
    hess.block(0, d, d, 1) = features.transpose() * s;
    hess.block(d, 0, 1, d) = hess.block(0, d, d, 1).transpose();
    hess(d, d) = s.sum() + 1e-12;
    const Eigen::VectorXd step = hess.ldlt().solve(g);

    double scale = 1.0;
    Eigen::VectorXd next = w - step;
    double next_loss = logistic_loss(features, y, next, options.l2);
    while (next_loss > loss && scale > 1e-10) {
      scale *= 0.5;
      next = w - scale * step;
      next_loss = logistic_loss(features, y, next, options.l2);
    }
    if (next_loss > loss) break;  // no descent possible at this precision
    w = next;
    loss = next_loss;
  }
  clf.weights = w;
  clf.feature_spec = spec;
  clf.timesteps = timesteps;
  clf.features = d / timesteps;
  return clf;
}

Eigen::MatrixXd pixel_features(const DataCube& cube, const FeatureSpec& spec) {
  const Index t_len = cube.timesteps(), hw = cube.height() * cube.width();
  const Index f_len = static_cast<Index>(spec.kinds.size()) + (spec.raw_bands ? cube.channels() : 0);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(hw, t_len * f_len);
  Index f = 0;
  for (IndexKind kind : spec.kinds) {
    const Tensor3f idx = compute_index(kind, cube, resolve_band_map(cube, kind, spec.red_edge));
    for (Index t = 0; t < t_len; ++t) {
      const auto plane = idx.slab(t);
      x.col(t * f_len + f) = plane.cast<double>().matrix();
    }
    ++f;
  }
  if (spec.raw_bands) {
    for (Index c = 0; c < cube.channels(); ++c, ++f)
      for (Index t = 0; t < t_len; ++t)
        x.col(t * f_len + f) =
            Eigen::Map<const Eigen::VectorXf>(cube.data.plane(t, c).data(), hw).cast<double>();
  }
  return x;
}

double predict_pixel_probability(const PixelClassifier& classifier, const Eigen::Ref<const Eigen::VectorXd>& features) {
  const Index d = classifier.weights.size() - 1;
  if (features.size() != d) fail(ErrorCode::DimensionMismatch, "pixel feature width does not match classifier");
  return sigmoid(classifier.weights.head(d).dot(features) + classifier.weights[d]);
}

Imagef predict_crop_cover_map(const PixelClassifier& classifier, const DataCube& cube) {
  const Index f_len =
      static_cast<Index>(classifier.feature_spec.kinds.size()) + (classifier.feature_spec.raw_bands ? cube.channels() : 0);
  if (cube.timesteps() != classifier.timesteps || f_len != classifier.features ||
      classifier.weights.size() != classifier.timesteps * classifier.features + 1)
    fail(ErrorCode::DimensionMismatch, "cube does not match the classifier's feature layout");
  const Eigen::VectorXd z =
      pixel_features(cube, classifier.feature_spec) * classifier.weights.head(classifier.weights.size() - 1);
  const double bias = classifier.weights[classifier.weights.size() - 1];
  Imagef out(cube.height(), cube.width());
  for (Index i = 0; i < z.size(); ++i) out.data()[i] = static_cast<float>(sigmoid(z[i] + bias));
  return out;
}

// ---------------------------------------------------------------------------
// split

DatasetSplit split_dataset(std::span<const std::string> ids, std::uint64_t seed) {
  const Index n = static_cast<Index>(ids.size());
  if (n < 5) fail(ErrorCode::TooFewSamples, "need at least 5 samples to split, got " + std::to_string(n));
  std::vector<std::string> order(ids.begin(), ids.end());
  // Explicit Fisher-Yates so the permutation is identical across standard libraries.
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);

  const auto n_test = static_cast<std::size_t>(std::lround(0.20 * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::lround(0.20 * static_cast<double>(n - static_cast<Index>(n_test))));
  DatasetSplit split;
  split.seed = seed;
  split.test_ids.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  split.val_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test),
                       order.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
  split.train_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), order.end());
  return split;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

json spec_json(const FeatureSpec& spec) {
  json kinds = json::array();
  for (IndexKind k : spec.kinds) kinds.push_back(std::string(to_string(k)));
  json bands = json::array();
  for (const auto& sel : spec.bands) bands.push_back({{"satellite", std::string(to_string(sel.satellite))}, {"bands", sel.bands}});
  return {{"kinds", kinds},
          {"bands", bands},
          {"raw_bands", spec.raw_bands},
          {"pixel_mask_aware", spec.pixel_mask_aware},
          {"red_edge", spec.red_edge}};
}

FeatureSpec spec_from(const json& j) {
  FeatureSpec spec;
  spec.kinds.clear();
  for (const auto& k : j.at("kinds")) {
    auto kind = parse_index_kind(k.get<std::string>());
    if (!kind) fail(ErrorCode::SchemaMismatch, "unknown index kind " + k.dump());
    spec.kinds.push_back(*kind);
  }
  for (const auto& b : j.at("bands")) {
    auto sat = parse_satellite(b.at("satellite").get<std::string>());
    if (!sat) fail(ErrorCode::SchemaMismatch, "unknown satellite in feature spec");
    spec.bands.push_back({*sat, b.at("bands").get<std::vector<std::string>>()});
  }
  spec.raw_bands = j.at("raw_bands").get<bool>();
  spec.pixel_mask_aware = j.at("pixel_mask_aware").get<bool>();
  spec.red_edge = j.at("red_edge").get<std::string>();
  return spec;
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_std(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
}

}  // namespace

std::string feature_spec_to_json(const FeatureSpec& spec) { return spec_json(spec).dump(); }

FeatureSpec feature_spec_from_json(const std::string& text) {
  try {
    return spec_from(json::parse(text));
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaMismatch, std::string("bad feature spec: ") + e.what());
  }
}

std::string model_to_json(const Model& model) {
  json j;
  if (const auto* lin = std::get_if<LinearModel>(&model)) {
    j = {{"kind", "linear"},
         {"task", std::string(to_string(lin->task))},
         {"weights", to_std(lin->weights)},
         {"ridge_lambda", lin->ridge_lambda},
         {"timesteps", lin->timesteps},
         {"features", lin->features},
         {"feature_spec", spec_json(lin->feature_spec)}};
  } else {
    const auto& clf = std::get<PixelClassifier>(model);
    j = {{"kind", "pixel_classifier"},
         {"task", std::string(to_string(Task::CropCover))},
         {"weights", to_std(clf.weights)},
         {"threshold", clf.threshold},
         {"timesteps", clf.timesteps},
         {"features", clf.features},
         {"iterations", clf.iterations},
         {"gradient_norm", clf.gradient_norm},
         {"feature_spec", spec_json(clf.feature_spec)}};
  }
  return j.dump(1) + "\n";
}

Model model_from_json(const std::string& text) {
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ErrorCode::SchemaMismatch, "model file is not a JSON object");
  try {
    const std::string kind = j.at("kind").get<std::string>();
    const auto task = parse_task(j.at("task").get<std::string>());
    if (!task) fail(ErrorCode::SchemaMismatch, "unknown task " + j.at("task").dump());
    const Eigen::VectorXd weights = from_std(j.at("weights").get<std::vector<double>>());
    const Index t_len = j.at("timesteps").get<Index>(), f_len = j.at("features").get<Index>();
    if (weights.size() != t_len * f_len + 1)
      fail(ErrorCode::SchemaMismatch, "weight count does not match timesteps * features + 1");
    if (kind == "linear") {
      LinearModel m;
      m.task = *task;
      m.weights = weights;
      m.ridge_lambda = j.at("ridge_lambda").get<double>();
      m.timesteps = t_len;
      m.features = f_len;
      m.feature_spec = spec_from(j.at("feature_spec"));
      return m;
    }
    if (kind == "pixel_classifier") {
      PixelClassifier c;
      c.weights = weights;
      c.threshold = j.at("threshold").get<double>();
      c.timesteps = t_len;
      c.features = f_len;
      c.iterations = j.value("iterations", 0);
      c.gradient_norm = j.value("gradient_norm", 0.0);
      c.feature_spec = spec_from(j.at("feature_spec"));
      return c;
    }
    fail(ErrorCode::SchemaMismatch, "unknown model kind '" + kind + "'");
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaMismatch, std::string("malformed model file: ") + e.what());
  }
}

void persist_model(const Model& model, const std::filesystem::path& path) { write_text_file(path, model_to_json(model)); }

Model load_model(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::ModelMissing, "model file " + path.string() + " not found");
  return model_from_json(read_text_file(path));
}

}  // namespace cropcube
