#include "cropcube/cube.hpp"

#include <algorithm>

namespace cropcube {

void validate_band_selection(const BandSelection& sel) {
  if (sel.bands.empty())
    fail(ErrorCode::EmptyBandSelection, "empty band selection for " + std::string(to_string(sel.satellite)));
  const auto& valid = default_bands(sel.satellite);
  for (const auto& b : sel.bands)
    if (std::find(valid.begin(), valid.end(), b) == valid.end())
      fail(ErrorCode::MissingBand, b + " is not a " + std::string(to_string(sel.satellite)) + " band");
}

DataCube DataCube::zeros(Index t, Index c, Index h, Index w) {
  DataCube cube;
  cube.data = Tensor4f::Zero({t, c, h, w});
  cube.timestep_mask.assign(static_cast<std::size_t>(t), 0);
  return cube;
}

void check_cube_invariants(const DataCube& cube) {
  const Index t = cube.timesteps();
  const Index c = cube.channels();
  if (t < 1 || c < 1 || cube.height() < 1 || cube.width() < 1)
    fail(ErrorCode::ShapeMismatch, "cube dimensions must all be >= 1");
  if (static_cast<Index>(cube.timestep_mask.size()) != t)
    fail(ErrorCode::ShapeMismatch, "timestep_mask length differs from T");
  if (static_cast<Index>(cube.band_names.size()) != c)
    fail(ErrorCode::ShapeMismatch, "band_names length differs from C");
  if (!cube.channel_sources.empty() && static_cast<Index>(cube.channel_sources.size()) != c)
    fail(ErrorCode::ShapeMismatch, "channel_sources length differs from C");
  if (cube.pixel_mask) {
    const auto& pm = *cube.pixel_mask;
    if (pm.dim(0) != t || pm.dim(1) != cube.height() || pm.dim(2) != cube.width())
      fail(ErrorCode::ShapeMismatch, "pixel_mask shape differs from [T, H, W]");
  }
  for (Index k = 0; k < t; ++k) {
    if (cube.timestep_mask[static_cast<std::size_t>(k)] == 0 &&
        (cube.data.slab(k) != 0.0f).any())
      fail(ErrorCode::InvalidWindow, "unobserved timestep " + std::to_string(k) + " holds data");
  }
}

std::optional<Index> find_channel(const DataCube& cube, std::string_view band,
                                  std::optional<std::string_view> source) {
  for (std::size_t i = 0; i < cube.band_names.size(); ++i) {
    if (cube.band_names[i] != band) continue;
    if (source && (i >= cube.channel_sources.size() || cube.channel_sources[i] != *source))
      continue;
    return static_cast<Index>(i);
  }
  return std::nullopt;
}

}  // namespace cropcube
