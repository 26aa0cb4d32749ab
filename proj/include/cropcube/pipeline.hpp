#pragma once

#include "cropcube/cube.hpp"
#include "cropcube/external.hpp"
#include "cropcube/predictors.hpp"
#include "cropcube/raster_io.hpp"
#include "cropcube/season_calendar.hpp"

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <utility>
#include <vector>

namespace cropcube {

// ---------------------------------------------------------------------------
// Tiling

/// Non-overlapping tiling of an H x W plane. Tile k sits at row k / cols,
/// column k % cols; the last row and column are zero padded.
struct TileGrid {
  Index height = 0;
  Index width = 0;
  Index patch_h = 0;
  Index patch_w = 0;
  Index rows = 0;
  Index cols = 0;
  Index pad_bottom = 0;
  Index pad_right = 0;

  Index tile_count() const { return rows * cols; }
  /// Top-left pixel of tile k in the unpadded plane.
  std::array<Index, 2> origin(Index k) const { return {(k / cols) * patch_h, (k % cols) * patch_w}; }

  friend bool operator==(const TileGrid&, const TileGrid&) = default;
};

/// Throws InvalidConfig for non-positive patch dims.
TileGrid make_tile_grid(Index height, Index width, Index patch_h, Index patch_w);

/// Tiles in row-major order. Padded cells are zero with pixel_mask 0.
std::pair<std::vector<DataCube>, TileGrid> get_cropped_inputs(const DataCube& cube, Index patch_h, Index patch_w);

/// Inverse of the tiling for per-tile maps. Throws GridMismatch.
Imagef merge_cropped_inputs(std::span<const Imagef> patches, const TileGrid& grid);

using PixelIndex = std::array<Index, 2>;

/// Row-major list of pixels with value >= threshold.
std::vector<PixelIndex> get_paddy_pixel_indices(const Imagef& crop_cover, double threshold = 0.5);

/// An h x w window centred on `mid`; for even sizes the centre sits at
/// (ceil(h/2) - 1, ceil(w/2) - 1). Cells outside the cube are zero with
/// pixel_mask 0. Throws CenterOutOfBounds.
DataCube get_patch(const DataCube& cube, PixelIndex mid, std::array<Index, 2> dim);

// ---------------------------------------------------------------------------
// Output

enum ParameterChannel : Index { kCropCover = 0, kSowing = 1, kTransplanting = 2, kHarvesting = 3, kYield = 4 };

struct ParameterMaps {
  /// [5, H, W]: crop cover probability, sowing, transplanting and harvesting
  /// offsets (days since the standard sowing day), yield in kg/acre.
  Tensor3f maps;
  GeoTransform geotransform;
  SeasonRef season;
  /// Sequence length of the cube the maps were computed from.
  Index timesteps = 0;

  Index height() const { return maps.dim(1); }
  Index width() const { return maps.dim(2); }

  static ParameterMaps zeros(Index height, Index width);

  friend bool operator==(const ParameterMaps&, const ParameterMaps&) = default;
};

/// Quality report produced alongside the maps.
struct PipelineQa {
  Index paddy_pixels = 0;
  double paddy_fraction = 0.0;
  /// Pixels whose predicted sowing came after harvesting and were swapped.
  std::vector<PixelIndex> repaired;
};

std::string qa_to_json(const PipelineQa& qa, const ParameterMaps& maps);

/// Channel names of the five-channel container.
const std::vector<std::string>& parameter_channel_names();

/// T = 1 cube holding the five maps, ready for write_cube.
DataCube parameter_maps_to_cube(const ParameterMaps& maps);
ParameterMaps parameter_maps_from_cube(const DataCube& cube);

/// 8-bit grayscale PNG of one plane scaled linearly from [lo, hi] to [0, 255].
std::vector<std::uint8_t> encode_png_gray(const Imagef& plane, float lo, float hi);
/// Writes <stem>_<channel>.png for every channel; returns the written paths.
std::vector<std::filesystem::path> write_parameter_pngs(const ParameterMaps& maps, const std::filesystem::path& dir,
                                                        const std::string& stem);

// ---------------------------------------------------------------------------
// Model set

class CoverPredictor {
 public:
  virtual ~CoverPredictor() = default;
  /// Paddy probability for every pixel of the tile.
  virtual Imagef predict(const DataCube& tile) const = 0;
};

class ScalarPredictor {
 public:
  virtual ~ScalarPredictor() = default;
  virtual double predict(const DataCube& patch) const = 0;
};

class BuiltinCoverPredictor final : public CoverPredictor {
 public:
  explicit BuiltinCoverPredictor(PixelClassifier model) : model_(std::move(model)) {}
  Imagef predict(const DataCube& tile) const override { return predict_crop_cover_map(model_, tile); }
  const PixelClassifier& model() const { return model_; }

 private:
  PixelClassifier model_;
};

class BuiltinScalarPredictor final : public ScalarPredictor {
 public:
  explicit BuiltinScalarPredictor(LinearModel model) : model_(std::move(model)) {}
  double predict(const DataCube& patch) const override {
    return predict_linear(model_, extract_features(patch, model_.feature_spec));
  }
  const LinearModel& model() const { return model_; }

 private:
  LinearModel model_;
};

class ExternalCoverPredictor final : public CoverPredictor {
 public:
  explicit ExternalCoverPredictor(std::shared_ptr<ExternalPredictor> endpoint) : endpoint_(std::move(endpoint)) {}
  /// Throws ProtocolError unless the reply is a map of the tile's size.
  Imagef predict(const DataCube& tile) const override;

 private:
  std::shared_ptr<ExternalPredictor> endpoint_;
};

class ExternalScalarPredictor final : public ScalarPredictor {
 public:
  ExternalScalarPredictor(Task task, std::shared_ptr<ExternalPredictor> endpoint)
      : task_(task), endpoint_(std::move(endpoint)) {}
  double predict(const DataCube& patch) const override;

 private:
  Task task_;
  std::shared_ptr<ExternalPredictor> endpoint_;
};

struct ModelSet {
  std::shared_ptr<const CoverPredictor> crop_cover;
  std::shared_ptr<const ScalarPredictor> sowing;
  std::shared_ptr<const ScalarPredictor> transplanting;
  std::shared_ptr<const ScalarPredictor> harvesting;
  std::shared_ptr<const ScalarPredictor> yield;
  /// Cube layout the builtin models were trained on (may be empty).
  std::vector<BandSelection> bands;
};

/// Model file for a task inside a model directory: "<task>.json".
std::filesystem::path model_path(const std::filesystem::path& dir, Task task);

/// Loads the five builtin models from `dir`, except tasks listed in
/// `external`, which are served by the given command or socket. Throws
/// ModelMissing or SchemaMismatch.
ModelSet load_model_set(const std::filesystem::path& dir, const std::map<Task, ExternalEndpoint>& external = {});

// ---------------------------------------------------------------------------
// End to end

struct PipelineConfig {
  Index tile_h = 32;
  Index tile_w = 32;
  Index patch_h = 32;
  Index patch_w = 32;
  int jobs = 1;
  /// Cube layout; empty means the model set's layout, then every band of
  /// every satellite present.
  std::vector<BandSelection> bands;
  /// Target grid; unset means the grid of the finest-resolution scene.
  std::optional<Grid> target;
  bool exact_window = false;
  /// Observes (pixel, patch) for every yield prediction.
  std::function<void(PixelIndex, const DataCube&)> on_yield_input;
};

struct PipelineResult {
  ParameterMaps maps;
  PipelineQa qa;
};

/// Crop cover, phenology dates and yield maps for one region and season.
/// Throws NoScenes, UnknownSeason, ModelMissing.
PipelineResult get_crop_parameters(std::span<const Scene> scenes, const SeasonRef& season,
                                   const SeasonCalendar& calendar, const ModelSet& models,
                                   const PipelineConfig& config = {});
PipelineResult get_crop_parameters(const std::filesystem::path& scene_dir, const SeasonRef& season,
                                   const SeasonCalendar& calendar, const ModelSet& models,
                                   const PipelineConfig& config = {});

/// Runs the algorithm on an already built cube.
PipelineResult get_crop_parameters(const DataCube& cube, const ModelSet& models, const PipelineConfig& config = {});

}  // namespace cropcube
