#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "support.hpp"

#include "cropcube/spectral.hpp"

#include <cmath>

using namespace cropcube;
using namespace cropcube::testing;

namespace {

DataCube one_pixel(std::vector<std::string> bands, std::vector<float> values, std::string source = "S2") {
  DataCube cube = DataCube::zeros(1, static_cast<Index>(bands.size()), 1, 1);
  cube.band_names = std::move(bands);
  cube.channel_sources.assign(cube.band_names.size(), source);
  cube.satellite_order = {*parse_satellite(source)};
  cube.timestep_mask = {1};
  for (std::size_t c = 0; c < values.size(); ++c) cube.data(0, static_cast<Index>(c), 0, 0) = values[c];
  return cube;
}

float index_of(IndexKind kind, const DataCube& cube) { return compute_index(kind, cube)(0, 0, 0); }

// Random multi-sensor cube with positive reflectances.
DataCube random_fusable(std::mt19937_64& rng, Index t, Index h, Index w) {
  std::uniform_real_distribution<float> u(0.01f, 1.0f);
  DataCube cube = DataCube::zeros(t, 6, h, w);
  cube.band_names = {"R", "G", "NIR", "RE2", "VV", "VH"};
  cube.channel_sources = {"S2", "S2", "S2", "S2", "S1", "S1"};
  cube.satellite_order = {Satellite::S2, Satellite::S1};
  cube.season_name = "Samba";
  cube.year = 2018;
  for (Index k = 0; k < t; ++k) {
    if (rng() % 3 == 0) continue;
    cube.timestep_mask[static_cast<std::size_t>(k)] = 1;
    for (Index c = 0; c < 6; ++c)
      for (Index i = 0; i < h * w; ++i) cube.data.plane(k, c)(i / w, i % w) = u(rng);
  }
  return cube;
}

}  // namespace

TEST_CASE("index formulas on hand-computed pixels") {
  CHECK(index_of(IndexKind::NDVI, one_pixel({"R", "NIR"}, {0.4f, 0.4f})) == 0.0f);
  CHECK(index_of(IndexKind::NDVI, one_pixel({"R", "NIR"}, {0.2f, 0.8f})) == doctest::Approx(0.6));
  CHECK(index_of(IndexKind::RVI, one_pixel({"VV", "VH"}, {0.3f, 0.1f}, "S1")) == doctest::Approx(1.0));
  CHECK(index_of(IndexKind::GCVI, one_pixel({"G", "NIR"}, {0.2f, 0.6f})) == doctest::Approx(2.0));
  CHECK(index_of(IndexKind::RECI, one_pixel({"RE2", "NIR"}, {0.25f, 0.5f})) == doctest::Approx(1.0));
}

TEST_CASE("zero denominators and padded timesteps give zero") {
  CHECK(index_of(IndexKind::NDVI, one_pixel({"R", "NIR"}, {0.0f, 0.0f})) == 0.0f);
  CHECK(index_of(IndexKind::GCVI, one_pixel({"G", "NIR"}, {0.0f, 0.5f})) == 0.0f);
  DataCube cube = one_pixel({"R", "NIR"}, {0.0f, 0.0f});
  cube.timestep_mask = {0};
  CHECK(index_of(IndexKind::NDVI, cube) == 0.0f);
}

TEST_CASE("missing source bands") {
  CHECK_ERROR(compute_index(IndexKind::NDVI, one_pixel({"G", "NIR"}, {0.1f, 0.2f})), ErrorCode::MissingBand);
  CHECK_ERROR(compute_index(IndexKind::RVI, one_pixel({"R", "NIR"}, {0.1f, 0.2f})), ErrorCode::MissingBand);
  CHECK_ERROR(compute_index(IndexKind::RECI, one_pixel({"RE1", "NIR"}, {0.1f, 0.2f})), ErrorCode::MissingBand);
  // a configured red edge band is honored
  const DataCube re1 = one_pixel({"RE1", "NIR"}, {0.25f, 0.5f});
  CHECK(compute_index(IndexKind::RECI, re1, resolve_band_map(re1, IndexKind::RECI, "RE1"))(0, 0, 0) ==
        doctest::Approx(1.0));
}

TEST_CASE("index bounds and scale invariance on random positive inputs") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> scale(0.1f, 10.0f);
  for (int trial = 0; trial < 20; ++trial) {
    const DataCube cube = random_fusable(rng, 5, 4, 4);
    const Tensor3f ndvi = compute_index(IndexKind::NDVI, cube);
    const Tensor3f rvi = compute_index(IndexKind::RVI, cube);
    const Tensor3f gcvi = compute_index(IndexKind::GCVI, cube);
    const Tensor3f reci = compute_index(IndexKind::RECI, cube);
    CHECK((ndvi.array().abs() <= 1.0f).all());
    CHECK((rvi.array() >= 0.0f).all());
    CHECK((rvi.array() <= 4.0f).all());
    for (Index t = 0; t < 5; ++t) {
      if (!cube.timestep_mask[static_cast<std::size_t>(t)]) continue;
      CHECK((gcvi.plane(t) > -1.0f).all());
      CHECK((reci.plane(t) > -1.0f).all());
    }
    DataCube scaled = cube;
    const float k = scale(rng);
    scaled.data.array() *= k;
    CHECK((compute_index(IndexKind::NDVI, scaled).array() - ndvi.array()).abs().maxCoeff() < 1e-5f);
    CHECK((compute_index(IndexKind::RVI, scaled).array() - rvi.array()).abs().maxCoeff() < 1e-5f);
  }
}

TEST_CASE("append_index_channels") {
  std::mt19937_64 rng(12);
  const DataCube cube = random_fusable(rng, 6, 3, 3);
  CHECK(append_index_channels(cube, std::vector<IndexKind>{}) == cube);

  const std::vector<IndexKind> kinds{IndexKind::NDVI, IndexKind::GCVI};
  const DataCube out = append_index_channels(cube, kinds);
  CHECK(out.channels() == cube.channels() + 2);
  CHECK(out.band_names[6] == "IDX_NDVI");
  CHECK(out.band_names[7] == "IDX_GCVI");
  const Tensor3f ndvi = compute_index(IndexKind::NDVI, cube);
  for (Index t = 0; t < 6; ++t) {
    CHECK((out.data.plane(t, 6) == ndvi.plane(t)).all());
    for (Index c = 0; c < 6; ++c) CHECK((out.data.plane(t, c) == cube.data.plane(t, c)).all());
  }
  const std::vector<IndexKind> rvi{IndexKind::RVI};
  CHECK_ERROR(append_index_channels(one_pixel({"R", "NIR"}, {0.1f, 0.2f}), rvi), ErrorCode::MissingBand);
}

TEST_CASE("fuse_early") {
  std::mt19937_64 rng(13);
  DataCube a = DataCube::zeros(3, 4, 2, 2);
  a.band_names = {"R", "G", "B", "NIR"};
  a.channel_sources.assign(4, "S2");
  a.satellite_order = {Satellite::S2};
  a.timestep_mask = {1, 0, 0};
  a.data.slab(0).setConstant(0.5f);
  DataCube b = DataCube::zeros(3, 3, 2, 2);
  b.band_names = {"VV", "VH", "ANGLE"};
  b.channel_sources.assign(3, "S1");
  b.satellite_order = {Satellite::S1};
  b.timestep_mask = {0, 0, 1};
  b.data.slab(2).setConstant(0.25f);

  CHECK(fuse_early(std::vector<DataCube>{a}) == a);
  const DataCube f = fuse_early(std::vector<DataCube>{a, b});
  CHECK(f.channels() == 7);
  CHECK(f.band_names == std::vector<std::string>{"R", "G", "B", "NIR", "VV", "VH", "ANGLE"});
  CHECK(f.timestep_mask == std::vector<std::uint8_t>{1, 0, 1});
  CHECK(f.satellite_order == std::vector<Satellite>{Satellite::S2, Satellite::S1});
  CHECK(f.data(0, 3, 1, 1) == 0.5f);
  CHECK(f.data(2, 5, 0, 0) == 0.25f);

  DataCube wrong = b;
  wrong.data = Tensor4f::Zero({3, 3, 2, 3});
  CHECK_ERROR(fuse_early(std::vector<DataCube>{a, wrong}), ErrorCode::ShapeMismatch);
  DataCube other = b;
  other.season_name = "Kar";
  CHECK_ERROR(fuse_early(std::vector<DataCube>{a, other}), ErrorCode::SeasonMismatch);
}

TEST_CASE("mask_actual_season keeps the closed interval") {
  std::mt19937_64 rng(14);
  DataCube cube = random_fusable(rng, 180, 2, 2);
  std::fill(cube.timestep_mask.begin(), cube.timestep_mask.end(), 1);
  cube.data.array() += 0.5f;

  CHECK(mask_actual_season(cube, 0, 179) == cube);

  const DataCube m = mask_actual_season(cube, 10, 100);
  int zeroed = 0;
  for (Index t = 0; t < 180; ++t) {
    const bool keep = t >= 10 && t <= 100;
    if (!keep) {
      ++zeroed;
      CHECK((m.data.slab(t) == 0.0f).all());
      CHECK(m.timestep_mask[static_cast<std::size_t>(t)] == 0);
    } else {
      CHECK((m.data.slab(t) == cube.data.slab(t)).all());
      CHECK(m.timestep_mask[static_cast<std::size_t>(t)] == 1);
    }
  }
  CHECK(zeroed == 89);

  CHECK_ERROR(mask_actual_season(cube, 5, 4), ErrorCode::InvalidWindow);
  CHECK_ERROR(mask_actual_season(cube, -1, 4), ErrorCode::InvalidWindow);
  CHECK_ERROR(mask_actual_season(cube, 0, 180), ErrorCode::InvalidWindow);
}

TEST_CASE("masking is idempotent and commutes with indices and fusion") {
  std::mt19937_64 rng(15);
  const std::vector<IndexKind> kinds{IndexKind::NDVI, IndexKind::RVI};
  for (int trial = 0; trial < 20; ++trial) {
    const Index t = 5 + static_cast<Index>(rng() % 20);
    const DataCube cube = random_fusable(rng, t, 3, 2);
    const Index sow = static_cast<Index>(rng() % static_cast<std::uint64_t>(t));
    const Index harvest = sow + static_cast<Index>(rng() % static_cast<std::uint64_t>(t - sow));
    const DataCube once = mask_actual_season(cube, sow, harvest);
    CHECK(mask_actual_season(once, sow, harvest) == once);
    CHECK(append_index_channels(once, kinds) == mask_actual_season(append_index_channels(cube, kinds), sow, harvest));

    DataCube other = random_fusable(rng, t, 3, 2);
    other.band_names = {"UB", "R2", "G2", "B2", "X", "Y"};
    const std::vector<DataCube> raw{cube, other};
    const std::vector<DataCube> masked{once, mask_actual_season(other, sow, harvest)};
    CHECK(fuse_early(masked) == mask_actual_season(fuse_early(raw), sow, harvest));
  }
}
