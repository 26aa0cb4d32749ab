#pragma once

#include "cropcube/cube.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cropcube {

enum class IndexKind { NDVI, GCVI, RECI, RVI };

std::string_view to_string(IndexKind kind) noexcept;
std::optional<IndexKind> parse_index_kind(std::string_view text) noexcept;

/// Denominators with magnitude below this produce an index value of 0.
inline constexpr double kIndexEpsilon = 1e-10;

/// Source channels for one index, as (numerator-side, other) channel indices:
/// NDVI (NIR, R), GCVI (NIR, G), RECI (NIR, RE), RVI (VV, VH).
struct BandMap {
  Index first = -1;
  Index second = -1;
};

/// Picks the first satellite block (in satellite_order) holding both source
/// bands; RECI reads `red_edge` (RE2 unless configured). Throws MissingBand.
BandMap resolve_band_map(const DataCube& cube, IndexKind kind, std::string_view red_edge = "RE2");

/// Index values for every [t, h, w]:
///   NDVI = (NIR - R) / (NIR + R)      GCVI = NIR / G - 1
///   RECI = NIR / RE - 1               RVI  = 4 VH / (VV + VH)
/// Zero where timestep_mask is 0 or |denominator| < kIndexEpsilon.
Tensor3f compute_index(IndexKind kind, const DataCube& cube, const BandMap& map);
Tensor3f compute_index(IndexKind kind, const DataCube& cube);

/// Appends one "IDX_<kind>" channel per kind; source channels are untouched.
DataCube append_index_channels(const DataCube& cube, std::span<const IndexKind> kinds,
                               std::string_view red_edge = "RE2");

/// Band-wise concatenation of co-registered cubes; timestep masks are OR-ed.
DataCube fuse_early(std::span<const DataCube> cubes);

/// Day indices of the actual season within a cube.
struct SeasonDates {
  Index sow_offset = 0;
  Index transplant_offset = 0;
  Index harvest_offset = 0;

  friend bool operator==(const SeasonDates&, const SeasonDates&) = default;
};

/// Zeroes every timestep before sow_offset and after harvest_offset; the
/// closed interval [sow_offset, harvest_offset] is kept. Throws InvalidWindow.
DataCube mask_actual_season(const DataCube& cube, Index sow_offset, Index harvest_offset);

}  // namespace cropcube
