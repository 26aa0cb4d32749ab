#pragma once

// Shared fixtures for the test binaries: scratch directories, hand-built
// scenes and randomized cubes that satisfy the cube invariants.

#include "cropcube/cube.hpp"
#include "cropcube/raster_io.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace doctest {
template <>
struct StringMaker<cropcube::ErrorCode> {
  static String convert(cropcube::ErrorCode code) { return String(std::string(cropcube::to_string(code)).c_str()); }
};
}  // namespace doctest

namespace cropcube::testing {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "cropcube-test-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  fs::path path_;
};

inline Date ymd(int y, unsigned m, unsigned d) {
  return Date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
}

inline GeoTransform unit_transform(double res = 10.0, double x0 = 500000.0, double y0 = 1300000.0) {
  return GeoTransform{x0, y0, res, -res};
}

/// Scene whose every band is filled with `value`.
inline Scene constant_scene(Satellite sat, const Date& date, Index h, Index w, float value,
                            std::vector<std::string> bands = {}, GeoTransform gt = unit_transform()) {
  Scene s;
  s.satellite = sat;
  s.acquisition_date = date;
  s.bands = bands.empty() ? default_bands(sat) : std::move(bands);
  s.pixels = Tensor3f::Constant({static_cast<Index>(s.bands.size()), h, w}, value);
  s.geotransform = gt;
  return s;
}

/// Scene with uniform random reflectances in [lo, hi).
inline Scene random_scene(std::mt19937_64& rng, Satellite sat, const Date& date, Index h, Index w,
                          GeoTransform gt = unit_transform(), float lo = 0.01f, float hi = 0.9f) {
  std::uniform_real_distribution<float> u(lo, hi);
  Scene s = constant_scene(sat, date, h, w, 0.0f, {}, gt);
  for (Index i = 0; i < s.pixels.size(); ++i) s.pixels.array()[i] = u(rng);
  return s;
}

/// Random cube honoring the invariants: masked timesteps and masked pixels
/// are zero, optional pixel mask, random metadata.
inline DataCube random_cube(std::mt19937_64& rng, Index t, Index c, Index h, Index w, bool with_pixel_mask) {
  std::uniform_real_distribution<float> u(-1.0f, 2.0f);
  std::bernoulli_distribution coin(0.6);
  DataCube cube = DataCube::zeros(t, c, h, w);
  for (Index k = 0; k < t; ++k) cube.timestep_mask[static_cast<std::size_t>(k)] = coin(rng) ? 1 : 0;
  if (with_pixel_mask) cube.pixel_mask = Tensor3u8::Zero({t, h, w});
  for (Index k = 0; k < t; ++k) {
    if (!cube.timestep_mask[static_cast<std::size_t>(k)]) continue;
    for (Index r = 0; r < h; ++r)
      for (Index col = 0; col < w; ++col) {
        const bool valid = !with_pixel_mask || coin(rng);
        if (with_pixel_mask) (*cube.pixel_mask)(k, r, col) = valid ? 1 : 0;
        if (!valid) continue;
        for (Index ch = 0; ch < c; ++ch) cube.data(k, ch, r, col) = u(rng);
      }
  }
  const std::vector<std::string> names{"R", "G", "B", "NIR", "RE1", "RE2", "SWIR1", "VV", "VH"};
  cube.band_names.clear();
  cube.channel_sources.clear();
  for (Index ch = 0; ch < c; ++ch) {
    cube.band_names.push_back(names[static_cast<std::size_t>(ch) % names.size()] + std::to_string(ch));
    cube.channel_sources.emplace_back(ch % 2 ? "S1" : "S2");
  }
  cube.satellite_order = {Satellite::S2, Satellite::S1};
  cube.season_name = (rng() & 1) ? "Samba" : "Kuruvai";
  cube.year = 2000 + static_cast<int>(rng() % 30);
  cube.geotransform = GeoTransform{static_cast<double>(rng() % 100000), static_cast<double>(rng() % 100000),
                                   10.0, -10.0};
  if (rng() & 1) cube.plot_id = "plot-" + std::to_string(rng() % 1000);
  return cube;
}

/// Cube whose channels are named after S2 bands with constant values per channel.
inline DataCube s2_cube(Index t, Index h, Index w, float nir, float red, float green) {
  DataCube cube = DataCube::zeros(t, 3, h, w);
  cube.band_names = {"R", "G", "NIR"};
  cube.channel_sources = {"S2", "S2", "S2"};
  cube.satellite_order = {Satellite::S2};
  cube.season_name = "Samba";
  cube.year = 2018;
  for (Index k = 0; k < t; ++k) {
    cube.timestep_mask[static_cast<std::size_t>(k)] = 1;
    cube.data.plane(k, 0).setConstant(red);
    cube.data.plane(k, 1).setConstant(green);
    cube.data.plane(k, 2).setConstant(nir);
  }
  return cube;
}

template <typename F>
ErrorCode error_of(F&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected a cropcube::Error");
  return ErrorCode::IoError;
}

#define CHECK_ERROR(expr, code_) CHECK(::cropcube::testing::error_of([&] { (void)(expr); }) == (code_))

}  // namespace cropcube::testing
