#pragma once

#include "cropcube/core.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cropcube {

/// Bands drawn from one satellite, in channel order.
struct BandSelection {
  Satellite satellite = Satellite::S2;
  std::vector<std::string> bands;

  friend bool operator==(const BandSelection&, const BandSelection&) = default;
};

/// Throws MissingBand when a name is not a band of the satellite and
/// EmptyBandSelection when the list is empty.
void validate_band_selection(const BandSelection& sel);

/// Standard season name + the year it is anchored on.
struct SeasonRef {
  std::string name;
  int year = 0;

  friend bool operator==(const SeasonRef&, const SeasonRef&) = default;
};

/// Channel source tag for channels computed from other channels.
inline constexpr std::string_view kDerivedSource = "DERIVED";

/// Season-aligned [T, C, H, W] stack. Index t is the number of days since the
/// standard sowing day of `season_name` in `year`; days without imagery are
/// all-zero slices with timestep_mask[t] == 0.
struct DataCube {
  Tensor4f data;
  std::vector<std::uint8_t> timestep_mask;
  std::optional<Tensor3u8> pixel_mask;
  std::vector<std::string> band_names;
  /// Satellite id (or kDerivedSource) that produced each channel.
  std::vector<std::string> channel_sources;
  std::vector<Satellite> satellite_order;
  std::string season_name;
  int year = 0;
  GeoTransform geotransform;
  std::optional<std::string> plot_id;

  Index timesteps() const { return data.dim(0); }
  Index channels() const { return data.dim(1); }
  Index height() const { return data.dim(2); }
  Index width() const { return data.dim(3); }
  Grid grid() const { return Grid{geotransform, height(), width()}; }

  /// Zero cube with all masks cleared.
  static DataCube zeros(Index t, Index c, Index h, Index w);

  friend bool operator==(const DataCube&, const DataCube&) = default;
};

/// Throws ShapeMismatch when metadata lengths disagree with the tensor, and
/// InvalidWindow when a masked-off timestep or pixel still carries data.
void check_cube_invariants(const DataCube& cube);

/// First channel whose name matches, optionally restricted to one source.
std::optional<Index> find_channel(const DataCube& cube, std::string_view band,
                                  std::optional<std::string_view> source = std::nullopt);

}  // namespace cropcube
