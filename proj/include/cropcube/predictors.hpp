#pragma once

#include "cropcube/cube.hpp"
#include "cropcube/spectral.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace cropcube {

enum class Task { CropCover, Sowing, Transplanting, Harvesting, Yield };

std::string_view to_string(Task task) noexcept;
std::optional<Task> parse_task(std::string_view text) noexcept;
inline bool is_date_task(Task t) { return t == Task::Sowing || t == Task::Transplanting || t == Task::Harvesting; }

/// What a model reads from a cube.
struct FeatureSpec {
  std::vector<IndexKind> kinds{IndexKind::NDVI, IndexKind::GCVI};
  /// Cube layout the model was trained on.
  std::vector<BandSelection> bands;
  /// Opt-in: append per-timestep pooled means of every raw channel.
  bool raw_bands = false;
  bool pixel_mask_aware = true;
  std::string red_edge = "RE2";

  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

/// Per-timestep plot-mean features, [T, F]. Masked timesteps are zero rows.
struct FeatureSequence {
  Eigen::MatrixXd values;
  std::vector<std::uint8_t> mask;

  Index timesteps() const { return values.rows(); }
  Index features() const { return values.cols(); }
  /// Row-major flattening: element (t, f) lands at t * F + f.
  Eigen::VectorXd flattened() const;
};

/// values[t, f] = mean over in-plot pixels of index f at timestep t. With
/// pixel_mask_aware the mean runs over pixels whose pixel_mask is set,
/// otherwise over the full H x W plane. Throws EmptyPlotMask when the cube has
/// observed timesteps but no valid pixel anywhere.
FeatureSequence extract_vi_features(const DataCube& cube, std::span<const IndexKind> kinds, bool pixel_mask_aware,
                                    std::string_view red_edge = "RE2");
FeatureSequence extract_features(const DataCube& cube, const FeatureSpec& spec);

// ---------------------------------------------------------------------------
// Linear regression

inline constexpr double kDefaultRidgeLambda = 1e-6;

struct LinearModel {
  Task task = Task::Yield;
  /// Flattened feature weights followed by the bias.
  Eigen::VectorXd weights;
  double ridge_lambda = kDefaultRidgeLambda;
  FeatureSpec feature_spec;
  Index timesteps = 0;
  Index features = 0;

  friend bool operator==(const LinearModel&, const LinearModel&) = default;
};

/// Closed-form ridge fit of y ~ X w + b minimising sum (yhat - y)^2 + lambda |w|^2
/// with the bias unpenalised. Throws DegenerateSystem when lambda == 0 and the
/// centred design is rank deficient.
LinearModel fit_linear(std::span<const FeatureSequence> samples, std::span<const double> labels, double ridge_lambda,
                       Task task = Task::Yield, const FeatureSpec& spec = {});

/// Raw linear response; date tasks are rounded to whole days and clamped to
/// [0, T - 1]. Throws DimensionMismatch.
double predict_linear(const LinearModel& model, const FeatureSequence& features);

/// Ridge objective and its gradient (weights then bias) on a flattened design.
double ridge_objective(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels, const Eigen::VectorXd& weights,
                       double ridge_lambda);
Eigen::VectorXd ridge_gradient(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels,
                               const Eigen::VectorXd& weights, double ridge_lambda);

/// Stacks flattened feature sequences into an [N, T*F] design matrix.
Eigen::MatrixXd design_matrix(std::span<const FeatureSequence> samples);

// ---------------------------------------------------------------------------
// Per-pixel logistic classifier (positive class = paddy)

struct LogisticOptions {
  double l2 = 1e-3;  // on weights only; keeps separable data finite
  double gradient_tolerance = 1e-6;
  int max_iterations = 500;
};

struct PixelClassifier {
  Eigen::VectorXd weights;  // flattened [T * F] then bias
  double threshold = 0.5;
  FeatureSpec feature_spec;
  Index timesteps = 0;
  Index features = 0;
  int iterations = 0;
  double gradient_norm = 0.0;

  friend bool operator==(const PixelClassifier&, const PixelClassifier&) = default;
};

inline double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

/// Newton / IRLS fit on rows of `features` (one pixel each). Throws
/// SingleClassData when only one label occurs.
PixelClassifier fit_pixel_classifier(const Eigen::MatrixXd& features, std::span<const std::uint8_t> labels,
                                     Index timesteps, const FeatureSpec& spec = {}, const LogisticOptions& options = {});

/// Per-pixel temporal features of a cube, one row per pixel (row-major H x W).
Eigen::MatrixXd pixel_features(const DataCube& cube, const FeatureSpec& spec);

double predict_pixel_probability(const PixelClassifier& classifier, const Eigen::Ref<const Eigen::VectorXd>& features);

/// Paddy probability per pixel. Throws DimensionMismatch.
Imagef predict_crop_cover_map(const PixelClassifier& classifier, const DataCube& cube);

// ---------------------------------------------------------------------------
// Dataset split

struct DatasetSplit {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;
  std::uint64_t seed = 0;
};

/// 80/20 train/test, then 20% of train held out for validation. Throws
/// TooFewSamples for N < 5.
DatasetSplit split_dataset(std::span<const std::string> ids, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Persistence

using Model = std::variant<LinearModel, PixelClassifier>;

std::string model_to_json(const Model& model);
/// Throws SchemaMismatch.
Model model_from_json(const std::string& text);
void persist_model(const Model& model, const std::filesystem::path& path);
/// Throws ModelMissing when the file does not exist, SchemaMismatch when invalid.
Model load_model(const std::filesystem::path& path);

std::string feature_spec_to_json(const FeatureSpec& spec);
FeatureSpec feature_spec_from_json(const std::string& text);

}  // namespace cropcube
