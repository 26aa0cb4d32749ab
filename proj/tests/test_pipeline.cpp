#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "support.hpp"
#include "bench.hpp"

#include "cropcube/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <mutex>

using namespace cropcube;
using namespace cropcube::testing;

namespace {

/// Crop cover that looks only at the pixel's global position.
class MapCover final : public CoverPredictor {
 public:
  MapCover(Imagef map, GeoTransform gt) : map_(std::move(map)), gt_(gt) {}
  Imagef predict(const DataCube& tile) const override {
    Imagef out = Imagef::Zero(tile.height(), tile.width());
    const Index r0 = std::lround((tile.geotransform.origin_y - gt_.origin_y) / gt_.pixel_size_y);
    const Index c0 = std::lround((tile.geotransform.origin_x - gt_.origin_x) / gt_.pixel_size_x);
    for (Index r = 0; r < tile.height(); ++r)
      for (Index c = 0; c < tile.width(); ++c)
        if (r0 + r < map_.rows() && c0 + c < map_.cols()) out(r, c) = map_(r0 + r, c0 + c);
    return out;
  }

 private:
  Imagef map_;
  GeoTransform gt_;
};

class ConstScalar final : public ScalarPredictor {
 public:
  explicit ConstScalar(double v) : v_(v) {}
  double predict(const DataCube&) const override { return v_; }

 private:
  double v_;
};

/// Sum of the patch's observed-timestep count, so masking is visible in the output.
class ObservedDays final : public ScalarPredictor {
 public:
  double predict(const DataCube& patch) const override {
    return static_cast<double>(std::count(patch.timestep_mask.begin(), patch.timestep_mask.end(), 1));
  }
};

DataCube ramp_cube(Index t, Index h, Index w) {
  DataCube cube = DataCube::zeros(t, 2, h, w);
  cube.band_names = {"R", "NIR"};
  cube.channel_sources = {"S2", "S2"};
  cube.satellite_order = {Satellite::S2};
  cube.season_name = "Samba";
  cube.year = 2018;
  cube.geotransform = unit_transform();
  for (Index k = 0; k < t; ++k) {
    cube.timestep_mask[static_cast<std::size_t>(k)] = 1;
    for (Index r = 0; r < h; ++r)
      for (Index c = 0; c < w; ++c) {
        cube.data(k, 0, r, c) = 0.1f + 0.001f * static_cast<float>(r * w + c);
        cube.data(k, 1, r, c) = 0.5f + 0.001f * static_cast<float>(k);
      }
  }
  return cube;
}

ModelSet fake_models(const Imagef& cover, const GeoTransform& gt, double sow, double transplant, double harvest,
                     std::shared_ptr<const ScalarPredictor> yield = nullptr) {
  ModelSet m;
  m.crop_cover = std::make_shared<MapCover>(cover, gt);
  m.sowing = std::make_shared<ConstScalar>(sow);
  m.transplanting = std::make_shared<ConstScalar>(transplant);
  m.harvesting = std::make_shared<ConstScalar>(harvest);
  m.yield = yield ? yield : std::make_shared<ConstScalar>(1234.5);
  return m;
}

}  // namespace

TEST_CASE("tiling arithmetic") {
  std::mt19937_64 rng(1);
  SUBCASE("64 by 64 in 32 by 32 tiles") {
    const auto [tiles, grid] = get_cropped_inputs(random_cube(rng, 2, 1, 64, 64, false), 32, 32);
    CHECK(tiles.size() == 4);
    CHECK(grid.pad_bottom == 0);
    CHECK(grid.pad_right == 0);
  }
  SUBCASE("33 by 33 pads 31 rows and columns") {
    const DataCube cube = random_cube(rng, 2, 1, 33, 33, false);
    const auto [tiles, grid] = get_cropped_inputs(cube, 32, 32);
    CHECK(tiles.size() == 4);
    CHECK(grid.pad_bottom == 31);
    CHECK(grid.pad_right == 31);
    // bottom-right tile: one real pixel, the rest padding
    const DataCube& last = tiles[3];
    CHECK(last.height() == 32);
    CHECK(last.width() == 32);
    for (Index t = 0; t < 2; ++t) {
      if (!cube.timestep_mask[static_cast<std::size_t>(t)]) continue;
      CHECK(last.data(t, 0, 0, 0) == cube.data(t, 0, 32, 32));
      CHECK((*last.pixel_mask)(t, 0, 0) == 1);
      CHECK((*last.pixel_mask)(t, 5, 5) == 0);
      CHECK(last.data(t, 0, 5, 5) == 0.0f);
    }
  }
  SUBCASE("patch larger than the image") {
    const auto [tiles, grid] = get_cropped_inputs(random_cube(rng, 2, 1, 5, 7, false), 16, 16);
    CHECK(tiles.size() == 1);
    CHECK(grid.pad_bottom == 11);
    CHECK(grid.pad_right == 9);
  }
  SUBCASE("row-major order and georeferencing") {
    const DataCube cube = ramp_cube(1, 10, 10);
    const auto [tiles, grid] = get_cropped_inputs(cube, 4, 5);
    REQUIRE(tiles.size() == 6);
    CHECK(grid.rows == 3);
    CHECK(grid.cols == 2);
    CHECK(grid.origin(3) == std::array<Index, 2>{4, 5});
    CHECK(tiles[3].data(0, 0, 0, 0) == cube.data(0, 0, 4, 5));
    CHECK(tiles[3].geotransform.origin_x == cube.geotransform.origin_x + 50.0);
    CHECK(tiles[3].geotransform.origin_y == cube.geotransform.origin_y - 40.0);
  }
  SUBCASE("invalid patch") { CHECK_ERROR(make_tile_grid(4, 4, 0, 2), ErrorCode::InvalidConfig); }
}

TEST_CASE("merge is the inverse of tiling") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int trial = 0; trial < 60; ++trial) {
    const Index h = 1 + static_cast<Index>(rng() % 70), w = 1 + static_cast<Index>(rng() % 70);
    const Index ph = 1 + static_cast<Index>(rng() % 40), pw = 1 + static_cast<Index>(rng() % 40);
    DataCube cube = DataCube::zeros(1, 1, h, w);
    cube.band_names = {"X"};
    cube.timestep_mask = {1};
    for (Index i = 0; i < cube.data.size(); ++i) cube.data.array()[i] = u(rng);
    const auto [tiles, grid] = get_cropped_inputs(cube, ph, pw);
    std::vector<Imagef> maps;
    for (const auto& t : tiles) maps.emplace_back(t.data.plane(0, 0));
    const Imagef merged = merge_cropped_inputs(maps, grid);
    CHECK((merged == cube.data.plane(0, 0)).all());
  }
}

TEST_CASE("merge rejects the wrong patches") {
  const TileGrid grid = make_tile_grid(64, 64, 32, 32);
  const std::vector<Imagef> three(3, Imagef::Zero(32, 32));
  CHECK_ERROR(merge_cropped_inputs(three, grid), ErrorCode::GridMismatch);
  std::vector<Imagef> four(4, Imagef::Zero(32, 32));
  four[2] = Imagef::Zero(31, 32);
  CHECK_ERROR(merge_cropped_inputs(four, grid), ErrorCode::GridMismatch);
}

TEST_CASE("paddy threshold is inclusive") {
  CHECK(get_paddy_pixel_indices(Imagef::Zero(4, 4)).empty());
  Imagef m = Imagef::Zero(3, 3);
  m(1, 2) = 0.5f;
  m(2, 0) = 0.499f;
  m(0, 1) = 0.9f;
  const auto idx = get_paddy_pixel_indices(m);
  REQUIRE(idx.size() == 2);
  CHECK(idx[0] == PixelIndex{0, 1});
  CHECK(idx[1] == PixelIndex{1, 2});
}

TEST_CASE("get_patch") {
  const DataCube cube = ramp_cube(3, 9, 9);
  SUBCASE("interior centre") {
    const DataCube p = get_patch(cube, {4, 5}, {5, 5});
    CHECK(p.data(1, 0, 2, 2) == cube.data(1, 0, 4, 5));
    CHECK(p.data(1, 1, 0, 0) == cube.data(1, 1, 2, 3));
  }
  SUBCASE("even sizes put the centre at ceil(n/2) - 1") {
    const DataCube p = get_patch(cube, {4, 4}, {4, 6});
    CHECK(p.data(0, 0, 1, 2) == cube.data(0, 0, 4, 4));
  }
  SUBCASE("corner patch is zero filled") {
    const DataCube p = get_patch(cube, {0, 0}, {5, 5});
    int zero_cells = 0;
    for (Index r = 0; r < 5; ++r)
      for (Index c = 0; c < 5; ++c) {
        const bool outside = (*p.pixel_mask)(0, r, c) == 0;
        if (outside) {
          ++zero_cells;
          for (Index ch = 0; ch < 2; ++ch) CHECK(p.data(0, ch, r, c) == 0.0f);
        }
        CHECK(outside == (r < 2 || c < 2));
      }
    CHECK(zero_cells == 16);
    CHECK(p.data(0, 0, 2, 2) == cube.data(0, 0, 0, 0));
  }
  SUBCASE("centre outside the cube") {
    CHECK_ERROR(get_patch(cube, {-1, 0}, {5, 5}), ErrorCode::CenterOutOfBounds);
    CHECK_ERROR(get_patch(cube, {0, 9}, {5, 5}), ErrorCode::CenterOutOfBounds);
  }
}

TEST_CASE("no paddy pixels leaves the parameter maps at zero") {
  const DataCube cube = ramp_cube(20, 12, 12);
  const Imagef cover = Imagef::Constant(12, 12, 0.3f);
  const auto r = get_crop_parameters(cube, fake_models(cover, cube.geotransform, 3, 5, 10));
  CHECK(r.maps.maps.dims() == std::array<Index, 3>{5, 12, 12});
  CHECK((r.maps.maps.plane(kCropCover) < 0.5f).all());
  for (Index k = 1; k < 5; ++k) CHECK((r.maps.maps.plane(k) == 0.0f).all());
  CHECK(r.qa.paddy_pixels == 0);
}

TEST_CASE("parameter maps follow the cover map") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int trial = 0; trial < 5; ++trial) {
    const Index h = 5 + static_cast<Index>(rng() % 20), w = 5 + static_cast<Index>(rng() % 20);
    const DataCube cube = ramp_cube(12, h, w);
    Imagef cover(h, w);
    for (Index i = 0; i < cover.size(); ++i) cover.data()[i] = u(rng);
    cover(0, 0) = 0.5f;
    PipelineConfig cfg;
    cfg.tile_h = 7;
    cfg.tile_w = 6;
    cfg.patch_h = 4;
    cfg.patch_w = 4;
    const auto r = get_crop_parameters(cube, fake_models(cover, cube.geotransform, 2, 4, 9), cfg);
    CHECK(r.maps.maps.dims() == std::array<Index, 3>{5, h, w});
    CHECK((r.maps.maps.plane(kCropCover) == cover).all());
    for (Index row = 0; row < h; ++row)
      for (Index col = 0; col < w; ++col) {
        const bool paddy = cover(row, col) >= 0.5f;
        CHECK((r.maps.maps(kSowing, row, col) == (paddy ? 2.0f : 0.0f)));
        CHECK((r.maps.maps(kTransplanting, row, col) == (paddy ? 4.0f : 0.0f)));
        CHECK((r.maps.maps(kHarvesting, row, col) == (paddy ? 9.0f : 0.0f)));
        CHECK((r.maps.maps(kYield, row, col) == (paddy ? 1234.5f : 0.0f)));
      }
    CHECK(r.qa.paddy_pixels == static_cast<Index>(get_paddy_pixel_indices(cover).size()));
  }
}

TEST_CASE("yield always sees the actual-season patch") {
  const DataCube cube = ramp_cube(40, 8, 8);
  const Imagef cover = Imagef::Constant(8, 8, 0.8f);
  std::mutex mu;
  int calls = 0;
  bool all_masked = true;
  PipelineConfig cfg;
  cfg.patch_h = 3;
  cfg.patch_w = 3;
  cfg.jobs = 3;
  cfg.on_yield_input = [&](PixelIndex, const DataCube& patch) {
    bool ok = true;
    for (Index t = 0; t < patch.timesteps(); ++t) {
      const bool inside = t >= 10 && t <= 25;
      if (!inside) ok = ok && patch.timestep_mask[static_cast<std::size_t>(t)] == 0 && (patch.data.slab(t) == 0.0f).all();
      else ok = ok && patch.timestep_mask[static_cast<std::size_t>(t)] == 1;
    }
    std::lock_guard lock(mu);
    ++calls;
    all_masked = all_masked && ok;
  };
  const auto r = get_crop_parameters(cube, fake_models(cover, cube.geotransform, 10, 12, 25,
                                                        std::make_shared<ObservedDays>()),
                                     cfg);
  CHECK(calls == 64);
  CHECK(all_masked);
  CHECK((r.maps.maps.plane(kYield) == 16.0f).all());  // days 10..25 inclusive
}

TEST_CASE("sowing after harvesting is repaired and reported") {
  const DataCube cube = ramp_cube(30, 4, 4);
  Imagef cover = Imagef::Zero(4, 4);
  cover(1, 1) = 1.0f;
  cover(2, 3) = 0.7f;
  const auto r = get_crop_parameters(cube, fake_models(cover, cube.geotransform, 20, 15, 8));
  CHECK(r.maps.maps(kSowing, 1, 1) == 8.0f);
  CHECK(r.maps.maps(kHarvesting, 1, 1) == 20.0f);
  CHECK(r.qa.repaired == std::vector<PixelIndex>{{1, 1}, {2, 3}});
  const auto qa = nlohmann::json::parse(qa_to_json(r.qa, r.maps));
  CHECK(qa["repaired_pixels"] == 2);
  CHECK(qa["paddy_pixels"] == 2);
  CHECK(qa["paddy_fraction"].get<double>() == doctest::Approx(2.0 / 16.0));
}

TEST_CASE("date predictions are rounded and clamped to the cube") {
  const DataCube cube = ramp_cube(30, 3, 3);
  const Imagef cover = Imagef::Ones(3, 3);
  const auto r = get_crop_parameters(cube, fake_models(cover, cube.geotransform, -4.2, 7.6, 99.0));
  CHECK((r.maps.maps.plane(kSowing) == 0.0f).all());
  CHECK((r.maps.maps.plane(kTransplanting) == 8.0f).all());
  CHECK((r.maps.maps.plane(kHarvesting) == 29.0f).all());
}

TEST_CASE("missing models and scenes") {
  const DataCube cube = ramp_cube(5, 3, 3);
  ModelSet partial = fake_models(Imagef::Ones(3, 3), cube.geotransform, 1, 2, 3);
  partial.yield.reset();
  CHECK_ERROR(get_crop_parameters(cube, partial), ErrorCode::ModelMissing);

  const ModelSet full = fake_models(Imagef::Ones(3, 3), cube.geotransform, 1, 2, 3);
  const std::vector<Scene> none;
  CHECK_ERROR(get_crop_parameters(none, {"Samba", 2018}, builtin_calendar(), full), ErrorCode::NoScenes);
  const std::vector<Scene> wrong_year{constant_scene(Satellite::S2, ymd(2015, 8, 10), 3, 3, 0.2f)};
  CHECK_ERROR(get_crop_parameters(wrong_year, {"Samba", 2018}, builtin_calendar(), full), ErrorCode::NoScenes);
  CHECK_ERROR(get_crop_parameters(wrong_year, {"Monsoon", 2018}, builtin_calendar(), full), ErrorCode::UnknownSeason);
  TempDir dir;
  CHECK_ERROR(get_crop_parameters(dir / "nope", {"Samba", 2018}, builtin_calendar(), full), ErrorCode::NoScenes);
  CHECK_ERROR(load_model_set(dir.path()), ErrorCode::ModelMissing);
}

TEST_CASE("parameter map container and renderings") {
  TempDir dir;
  std::mt19937_64 rng(4);
  ParameterMaps maps = ParameterMaps::zeros(6, 7);
  std::uniform_real_distribution<float> u(0.0f, 100.0f);
  for (Index i = 0; i < maps.maps.size(); ++i) maps.maps.array()[i] = u(rng);
  maps.season = {"Samba", 2018};
  maps.geotransform = unit_transform();
  maps.timesteps = 180;
  write_cube(parameter_maps_to_cube(maps), dir / "maps.cube");
  ParameterMaps back = parameter_maps_from_cube(read_cube(dir / "maps.cube"));
  back.timesteps = maps.timesteps;
  CHECK(back == maps);

  const auto png = encode_png_gray(maps.maps.plane(0), 0.0f, 100.0f);
  const std::vector<std::uint8_t> signature{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  REQUIRE(png.size() > 24);
  CHECK(std::equal(signature.begin(), signature.end(), png.begin()));
  CHECK(png[16 + 3] == 7);  // IHDR width, big endian
  CHECK(png[20 + 3] == 6);  // IHDR height

  const auto paths = write_parameter_pngs(maps, dir / "png", "region");
  REQUIRE(paths.size() == 5);
  for (const auto& p : paths) CHECK(std::filesystem::file_size(p) > 8);
  CHECK(paths[4].filename() == "region_yield_kg_per_acre.png");
}

TEST_CASE("worker count does not change the output") {
  SynthConfig cfg;
  cfg.seed = 5;
  cfg.height = 32;
  cfg.width = 32;
  cfg.n_plots = 4;
  const SynthRegion region = generate_synthetic_region(cfg);
  Imagef cover = region.truth.crop_label.cast<float>();
  cover(0, 0) = 0.5f;
  ModelSet models;
  models.crop_cover = std::make_shared<MapCover>(cover, region.truth.grid.transform);
  // linear models with arbitrary weights exercise the real feature path
  LinearModel lin;
  lin.timesteps = 180;
  lin.features = 2;
  lin.feature_spec = bench::bench_spec();
  lin.weights = Eigen::VectorXd::LinSpaced(361, -0.5, 0.7);
  for (Task t : {Task::Sowing, Task::Transplanting, Task::Harvesting, Task::Yield}) {
    lin.task = t;
    lin.weights[360] = 10.0 * static_cast<double>(t);
    auto p = std::make_shared<BuiltinScalarPredictor>(lin);
    if (t == Task::Sowing) models.sowing = p;
    if (t == Task::Transplanting) models.transplanting = p;
    if (t == Task::Harvesting) models.harvesting = p;
    if (t == Task::Yield) models.yield = p;
  }
  models.bands = bench::bench_bands();
  PipelineConfig c1;
  c1.patch_h = c1.patch_w = 8;
  c1.jobs = 1;
  PipelineConfig c8 = c1;
  c8.jobs = 8;
  const auto a = get_crop_parameters(region.scenes, cfg.season, builtin_calendar(), models, c1);
  const auto b = get_crop_parameters(region.scenes, cfg.season, builtin_calendar(), models, c8);
  CHECK(a.maps == b.maps);
  CHECK(a.qa.repaired == b.qa.repaired);
  CHECK(a.qa.paddy_pixels == b.qa.paddy_pixels);
}

TEST_CASE("planted sowing offset is recovered on a synthetic region") {
  // Date models learned from jittered regions, applied to a region where
  // every paddy plot was sown on day 20.
  SynthConfig base;
  base.height = 32;
  base.width = 32;
  base.n_plots = 4;
  base.paddy_fraction = 1.0;
  const bench::Bench train = bench::make_bench(base, 100, 24);
  const auto paddy = bench::select_paddy(train, train.ids());
  ModelSet models;
  models.sowing = std::make_shared<BuiltinScalarPredictor>(bench::fit_date_model(Task::Sowing, paddy));
  models.transplanting = std::make_shared<BuiltinScalarPredictor>(bench::fit_date_model(Task::Transplanting, paddy));
  models.harvesting = std::make_shared<BuiltinScalarPredictor>(bench::fit_date_model(Task::Harvesting, paddy));
  models.yield = std::make_shared<BuiltinScalarPredictor>(bench::fit_yield_model(paddy, true));
  models.bands = bench::bench_bands();

  SynthConfig planted = base;
  planted.seed = 999;
  planted.sowing_offset = {20, 20};
  const SynthRegion region = generate_synthetic_region(planted);
  models.crop_cover = std::make_shared<MapCover>(region.truth.crop_label.cast<float>(), region.truth.grid.transform);

  PipelineConfig cfg;
  cfg.patch_h = cfg.patch_w = 8;
  const auto r = get_crop_parameters(region.scenes, planted.season, builtin_calendar(), models, cfg);
  Index paddy_pixels = 0, within = 0;
  for (Index row = 0; row < 32; ++row)
    for (Index col = 0; col < 32; ++col) {
      if (!region.truth.crop_label(row, col)) continue;
      ++paddy_pixels;
      within += std::abs(r.maps.maps(kSowing, row, col) - 20.0f) <= 3.0f;
    }
  REQUIRE(paddy_pixels > 0);
  CHECK(static_cast<double>(within) / static_cast<double>(paddy_pixels) >= 0.9);
}
