#include "cropcube/pipeline.hpp"
#include "cropcube/cube_builder.hpp"

#include <nlohmann/json.hpp>
#include <png.h>

#include <cmath>

namespace cropcube {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Tiling and patches

TileGrid make_tile_grid(Index height, Index width, Index patch_h, Index patch_w) {
  if (patch_h < 1 || patch_w < 1) fail(ErrorCode::InvalidConfig, "patch dimensions must be >= 1");
  if (height < 1 || width < 1) fail(ErrorCode::ShapeMismatch, "cannot tile an empty plane");
  TileGrid g;
  g.height = height;
  g.width = width;
  g.patch_h = patch_h;
  g.patch_w = patch_w;
  g.rows = (height + patch_h - 1) / patch_h;
  g.cols = (width + patch_w - 1) / patch_w;
  g.pad_bottom = g.rows * patch_h - height;
  g.pad_right = g.cols * patch_w - width;
  return g;
}

namespace {

/// Copies the h x w window whose top-left corner is (r0, c0); cells outside
/// the cube are zero with pixel_mask 0.
DataCube window(const DataCube& cube, Index r0, Index c0, Index h, Index w) {
  const Index t_len = cube.timesteps(), c_len = cube.channels();
  DataCube out = DataCube::zeros(t_len, c_len, h, w);
  out.pixel_mask = Tensor3u8::Zero({t_len, h, w});
  out.band_names = cube.band_names;
  out.channel_sources = cube.channel_sources;
  out.satellite_order = cube.satellite_order;
  out.season_name = cube.season_name;
  out.year = cube.year;
  out.plot_id = cube.plot_id;
  const GeoTransform& gt = cube.geotransform;
  out.geotransform = GeoTransform{gt.origin_x + static_cast<double>(c0) * gt.pixel_size_x,
                                  gt.origin_y + static_cast<double>(r0) * gt.pixel_size_y, gt.pixel_size_x,
                                  gt.pixel_size_y};

  // Overlap of the window with the cube, in cube coordinates.
  const Index rs = std::max<Index>(r0, 0), re = std::min(r0 + h, cube.height());
  const Index cs = std::max<Index>(c0, 0), ce = std::min(c0 + w, cube.width());
  if (rs >= re || cs >= ce) return out;
  const Index nh = re - rs, nw = ce - cs;
  for (Index t = 0; t < t_len; ++t) {
    const bool observed = cube.timestep_mask[static_cast<std::size_t>(t)] != 0;
    if (!observed) continue;
    for (Index c = 0; c < c_len; ++c)
      out.data.plane(t, c).block(rs - r0, cs - c0, nh, nw) = cube.data.plane(t, c).block(rs, cs, nh, nw);
    auto pm = out.pixel_mask->plane(t).block(rs - r0, cs - c0, nh, nw);
    if (cube.pixel_mask) pm = cube.pixel_mask->plane(t).block(rs, cs, nh, nw);
    else pm.setConstant(1);
    out.timestep_mask[static_cast<std::size_t>(t)] = (out.pixel_mask->plane(t) != 0).any() ? 1 : 0;
  }
  return out;
}

}  // namespace

std::pair<std::vector<DataCube>, TileGrid> get_cropped_inputs(const DataCube& cube, Index patch_h, Index patch_w) {
  const TileGrid grid = make_tile_grid(cube.height(), cube.width(), patch_h, patch_w);
  std::vector<DataCube> tiles;
  tiles.reserve(static_cast<std::size_t>(grid.tile_count()));
  for (Index k = 0; k < grid.tile_count(); ++k) {
    const auto [r0, c0] = grid.origin(k);
    tiles.push_back(window(cube, r0, c0, patch_h, patch_w));
  }
  return {std::move(tiles), grid};
}

Imagef merge_cropped_inputs(std::span<const Imagef> patches, const TileGrid& grid) {
  if (static_cast<Index>(patches.size()) != grid.tile_count())
    fail(ErrorCode::GridMismatch, "expected " + std::to_string(grid.tile_count()) + " patches, got " +
                                      std::to_string(patches.size()));
  Imagef out(grid.height, grid.width);
  for (Index k = 0; k < grid.tile_count(); ++k) {
    const Imagef& p = patches[static_cast<std::size_t>(k)];
    if (p.rows() != grid.patch_h || p.cols() != grid.patch_w)
      fail(ErrorCode::GridMismatch, "patch " + std::to_string(k) + " is " + std::to_string(p.rows()) + "x" +
                                        std::to_string(p.cols()) + ", grid expects " + std::to_string(grid.patch_h) +
                                        "x" + std::to_string(grid.patch_w));
    const auto [r0, c0] = grid.origin(k);
    const Index nh = std::min(grid.patch_h, grid.height - r0), nw = std::min(grid.patch_w, grid.width - c0);
    out.block(r0, c0, nh, nw) = p.block(0, 0, nh, nw);
  }
  return out;
}

std::vector<PixelIndex> get_paddy_pixel_indices(const Imagef& crop_cover, double threshold) {
  std::vector<PixelIndex> out;
  for (Index r = 0; r < crop_cover.rows(); ++r)
    for (Index c = 0; c < crop_cover.cols(); ++c)
      if (crop_cover(r, c) >= threshold) out.push_back({r, c});
  return out;
}

DataCube get_patch(const DataCube& cube, PixelIndex mid, std::array<Index, 2> dim) {
  if (dim[0] < 1 || dim[1] < 1) fail(ErrorCode::InvalidConfig, "patch dimensions must be >= 1");
  if (mid[0] < 0 || mid[0] >= cube.height() || mid[1] < 0 || mid[1] >= cube.width())
    fail(ErrorCode::CenterOutOfBounds, "patch centre (" + std::to_string(mid[0]) + ", " + std::to_string(mid[1]) +
                                           ") outside " + std::to_string(cube.height()) + "x" +
                                           std::to_string(cube.width()));
  const Index cr = (dim[0] + 1) / 2 - 1, cc = (dim[1] + 1) / 2 - 1;
  return window(cube, mid[0] - cr, mid[1] - cc, dim[0], dim[1]);
}

// ---------------------------------------------------------------------------
// Output

ParameterMaps ParameterMaps::zeros(Index height, Index width) {
  ParameterMaps m;
  m.maps = Tensor3f::Zero({5, height, width});
  return m;
}

const std::vector<std::string>& parameter_channel_names() {
  static const std::vector<std::string> names{"crop_cover", "sowing_offset", "transplanting_offset",
                                              "harvesting_offset", "yield_kg_per_acre"};
  return names;
}

std::string qa_to_json(const PipelineQa& qa, const ParameterMaps& maps) {
  json repaired = json::array();
  for (const auto& p : qa.repaired) repaired.push_back({p[0], p[1]});
  json j = {{"height", maps.height()},
            {"width", maps.width()},
            {"season", maps.season.name},
            {"year", maps.season.year},
            {"timesteps", maps.timesteps},
            {"paddy_pixels", qa.paddy_pixels},
            {"paddy_fraction", qa.paddy_fraction},
            {"repaired_pixels", qa.repaired.size()},
            {"repaired", repaired}};
  return j.dump(1) + "\n";
}

DataCube parameter_maps_to_cube(const ParameterMaps& maps) {
  const Index h = maps.height(), w = maps.width();
  DataCube cube = DataCube::zeros(1, 5, h, w);
  for (Index c = 0; c < 5; ++c) cube.data.plane(0, c) = maps.maps.plane(c);
  cube.timestep_mask[0] = 1;
  cube.band_names = parameter_channel_names();
  cube.channel_sources.assign(5, std::string(kDerivedSource));
  cube.season_name = maps.season.name;
  cube.year = maps.season.year;
  cube.geotransform = maps.geotransform;
  return cube;
}

ParameterMaps parameter_maps_from_cube(const DataCube& cube) {
  if (cube.timesteps() != 1 || cube.channels() != 5 || cube.band_names != parameter_channel_names())
    fail(ErrorCode::SchemaMismatch, "cube is not a parameter map container");
  ParameterMaps maps = ParameterMaps::zeros(cube.height(), cube.width());
  for (Index c = 0; c < 5; ++c) maps.maps.plane(c) = cube.data.plane(0, c);
  maps.geotransform = cube.geotransform;
  maps.season = {cube.season_name, cube.year};
  return maps;
}

namespace {

void append_png_bytes(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

}  // namespace

std::vector<std::uint8_t> encode_png_gray(const Imagef& plane, float lo, float hi) {
  const Index h = plane.rows(), w = plane.cols();
  if (h < 1 || w < 1) fail(ErrorCode::ShapeMismatch, "cannot encode an empty image");
  const float span = hi > lo ? hi - lo : 1.0f;
  Image<std::uint8_t> pixels(h, w);
  for (Index i = 0; i < plane.size(); ++i) {
    float v = (plane.data()[i] - lo) / span;
    if (!std::isfinite(v)) v = 0.0f;
    pixels.data()[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  }

  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, nullptr);
    fail(ErrorCode::IoError, "cannot initialise the PNG encoder");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::IoError, "PNG encoding failed");
  }
  png_set_write_fn(png, &out, append_png_bytes, nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (Index r = 0; r < h; ++r) png_write_row(png, pixels.data() + r * w);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::vector<std::filesystem::path> write_parameter_pngs(const ParameterMaps& maps, const std::filesystem::path& dir,
                                                        const std::string& stem) {
  std::filesystem::create_directories(dir);
  const float last_day = static_cast<float>(std::max<Index>(maps.timesteps - 1, 1));
  const float max_yield = maps.maps.size() ? std::max(1.0f, maps.maps.plane(kYield).maxCoeff()) : 1.0f;
  const std::array<float, 5> hi{1.0f, last_day, last_day, last_day, max_yield};
  std::vector<std::filesystem::path> paths;
  for (Index c = 0; c < 5; ++c) {
    const auto path = dir / (stem + "_" + parameter_channel_names()[static_cast<std::size_t>(c)] + ".png");
    write_file_bytes(path, encode_png_gray(maps.maps.plane(c), 0.0f, hi[static_cast<std::size_t>(c)]));
    paths.push_back(path);
  }
  return paths;
}

// ---------------------------------------------------------------------------
// Model set

Imagef ExternalCoverPredictor::predict(const DataCube& tile) const {
  ExternalReply reply = endpoint_->request(Task::CropCover, tile);
  if (!reply.map) fail(ErrorCode::ProtocolError, "crop_cover endpoint must reply with a map");
  if (reply.map->rows() != tile.height() || reply.map->cols() != tile.width())
    fail(ErrorCode::ProtocolError, "crop_cover map has the wrong size");
  return std::move(*reply.map);
}

double ExternalScalarPredictor::predict(const DataCube& patch) const {
  const ExternalReply reply = endpoint_->request(task_, patch);
  if (!reply.prediction)
    fail(ErrorCode::ProtocolError, std::string(to_string(task_)) + " endpoint must reply with a prediction");
  return *reply.prediction;
}

std::filesystem::path model_path(const std::filesystem::path& dir, Task task) {
  return dir / (std::string(to_string(task)) + ".json");
}

ModelSet load_model_set(const std::filesystem::path& dir, const std::map<Task, ExternalEndpoint>& external) {
  std::map<std::string, std::shared_ptr<ExternalPredictor>> endpoints;
  auto endpoint_for = [&](const ExternalEndpoint& e) {
    auto& slot = endpoints[e.target];
    if (!slot) slot = std::make_shared<ExternalPredictor>(e);
    return slot;
  };

  ModelSet set;
  std::optional<std::vector<BandSelection>> cover_bands, linear_bands;
  if (auto it = external.find(Task::CropCover); it != external.end()) {
    set.crop_cover = std::make_shared<ExternalCoverPredictor>(endpoint_for(it->second));
  } else {
    Model m = load_model(model_path(dir, Task::CropCover));
    auto* clf = std::get_if<PixelClassifier>(&m);
    if (!clf) fail(ErrorCode::SchemaMismatch, "crop_cover model must be a pixel classifier");
    cover_bands = clf->feature_spec.bands;
    set.crop_cover = std::make_shared<BuiltinCoverPredictor>(std::move(*clf));
  }
  for (Task task : {Task::Sowing, Task::Transplanting, Task::Harvesting, Task::Yield}) {
    std::shared_ptr<const ScalarPredictor> p;
    if (auto it = external.find(task); it != external.end()) {
      p = std::make_shared<ExternalScalarPredictor>(task, endpoint_for(it->second));
    } else {
      Model m = load_model(model_path(dir, task));
      auto* lin = std::get_if<LinearModel>(&m);
      if (!lin || lin->task != task)
        fail(ErrorCode::SchemaMismatch, model_path(dir, task).string() + " is not a " +
                                            std::string(to_string(task)) + " linear model");
      if (!linear_bands) linear_bands = lin->feature_spec.bands;
      p = std::make_shared<BuiltinScalarPredictor>(std::move(*lin));
    }
    switch (task) {
      case Task::Sowing: set.sowing = p; break;
      case Task::Transplanting: set.transplanting = p; break;
      case Task::Harvesting: set.harvesting = p; break;
      default: set.yield = p; break;
    }
  }
  set.bands = cover_bands ? *cover_bands : linear_bands.value_or(std::vector<BandSelection>{});
  return set;
}

// ---------------------------------------------------------------------------
// End to end

namespace {

Index to_day_offset(double value, Index timesteps, Task task) {
  if (!std::isfinite(value))
    fail(ErrorCode::ProtocolError, std::string(to_string(task)) + " prediction is not a finite number");
  return static_cast<Index>(std::clamp(std::round(value), 0.0, static_cast<double>(timesteps - 1)));
}

}  // namespace

PipelineResult get_crop_parameters(const DataCube& cube, const ModelSet& models, const PipelineConfig& config) {
  if (!models.crop_cover || !models.sowing || !models.transplanting || !models.harvesting || !models.yield)
    fail(ErrorCode::ModelMissing, "a model is required for each of the five tasks");
  const Index h = cube.height(), w = cube.width(), t_len = cube.timesteps();

  PipelineResult result;
  ParameterMaps& y = result.maps;
  y = ParameterMaps::zeros(h, w);
  y.geotransform = cube.geotransform;
  y.season = {cube.season_name, cube.year};
  y.timesteps = t_len;

  auto [tiles, grid] = get_cropped_inputs(cube, config.tile_h, config.tile_w);
  std::vector<Imagef> tile_maps(tiles.size());
  parallel_for(static_cast<Index>(tiles.size()), config.jobs, [&](Index k) {
    tile_maps[static_cast<std::size_t>(k)] = models.crop_cover->predict(tiles[static_cast<std::size_t>(k)]);
  });
  tiles.clear();
  Imagef cover = merge_cropped_inputs(tile_maps, grid);
  cover = cover.unaryExpr([](float v) { return std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f; });
  y.maps.plane(kCropCover) = cover;

  const std::vector<PixelIndex> paddy = get_paddy_pixel_indices(cover);
  std::vector<std::uint8_t> swapped(paddy.size(), 0);
  parallel_for(static_cast<Index>(paddy.size()), config.jobs, [&](Index k) {
    const PixelIndex p = paddy[static_cast<std::size_t>(k)];
    const DataCube patch = get_patch(cube, p, {config.patch_h, config.patch_w});
    Index sow = to_day_offset(models.sowing->predict(patch), t_len, Task::Sowing);
    const Index transplant = to_day_offset(models.transplanting->predict(patch), t_len, Task::Transplanting);
    Index harvest = to_day_offset(models.harvesting->predict(patch), t_len, Task::Harvesting);
    if (sow > harvest) {
      std::swap(sow, harvest);
      swapped[static_cast<std::size_t>(k)] = 1;
    }
    const DataCube season_patch = mask_actual_season(patch, sow, harvest);
    if (config.on_yield_input) config.on_yield_input(p, season_patch);
    const double yield = models.yield->predict(season_patch);
    y.maps(kSowing, p[0], p[1]) = static_cast<float>(sow);
    y.maps(kTransplanting, p[0], p[1]) = static_cast<float>(transplant);
    y.maps(kHarvesting, p[0], p[1]) = static_cast<float>(harvest);
    y.maps(kYield, p[0], p[1]) = static_cast<float>(yield);
  });

  result.qa.paddy_pixels = static_cast<Index>(paddy.size());
  result.qa.paddy_fraction = static_cast<double>(paddy.size()) / static_cast<double>(h * w);
  for (std::size_t k = 0; k < paddy.size(); ++k)
    if (swapped[k]) result.qa.repaired.push_back(paddy[k]);
  return result;
}

PipelineResult get_crop_parameters(std::span<const Scene> scenes, const SeasonRef& season,
                                   const SeasonCalendar& calendar, const ModelSet& models,
                                   const PipelineConfig& config) {
  if (scenes.empty()) fail(ErrorCode::NoScenes, "no scenes supplied");
  calendar.window(season.name);
  if (!models.crop_cover || !models.sowing || !models.transplanting || !models.harvesting || !models.yield)
    fail(ErrorCode::ModelMissing, "a model is required for each of the five tasks");

  CubeRequest request;
  request.season = season;
  request.exact_window = config.exact_window;
  if (config.target) {
    request.target = *config.target;
  } else {
    const Scene* finest = &scenes.front();
    for (const Scene& s : scenes)
      if (s.geotransform.pixel_size_x < finest->geotransform.pixel_size_x) finest = &s;
    request.target = Grid{finest->geotransform, finest->pixels.dim(1), finest->pixels.dim(2)};
  }
  request.bands = !config.bands.empty() ? config.bands : models.bands;
  if (request.bands.empty()) {
    for (Satellite sat : {Satellite::L8, Satellite::S1, Satellite::S2}) {
      const auto it = std::find_if(scenes.begin(), scenes.end(), [&](const Scene& s) { return s.satellite == sat; });
      if (it != scenes.end()) request.bands.push_back({sat, it->bands});
    }
  }
  const DataCube cube = build_cube(scenes, calendar, request);
  if (std::none_of(cube.timestep_mask.begin(), cube.timestep_mask.end(), [](auto m) { return m != 0; }))
    fail(ErrorCode::NoScenes, "no scene falls inside " + season.name + " " + std::to_string(season.year));
  return get_crop_parameters(cube, models, config);
}

PipelineResult get_crop_parameters(const std::filesystem::path& scene_dir, const SeasonRef& season,
                                   const SeasonCalendar& calendar, const ModelSet& models,
                                   const PipelineConfig& config) {
  if (!std::filesystem::is_directory(scene_dir))
    fail(ErrorCode::NoScenes, "scene directory " + scene_dir.string() + " does not exist");
  const std::vector<Scene> scenes = read_scene_dir(scene_dir);
  return get_crop_parameters(std::span<const Scene>(scenes), season, calendar, models, config);
}

}  // namespace cropcube
