#pragma once

#include "cropcube/cube.hpp"
#include "cropcube/raster_io.hpp"
#include "cropcube/season_calendar.hpp"
#include "cropcube/spectral.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

namespace cropcube {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct SynthConfig {
  std::uint64_t seed = 0;
  Index height = 64;
  Index width = 64;
  Index n_plots = 16;
  double paddy_fraction = 0.5;
  SeasonRef season{"Samba", 2018};
  std::map<Satellite, int> revisit_days{{Satellite::L8, 16}, {Satellite::S1, 12}, {Satellite::S2, 5}};
  double noise_sigma = 0.01;
  /// Ground sampling distance of the S1/S2 grid in metres; Landsat uses 3x.
  double resolution = 10.0;
  double origin_x = 500000.0;
  double origin_y = 1300000.0;

  // Phenology, in days since the standard sowing day.
  Range sowing_offset{5, 35};
  Range transplant_delay{18, 28};
  Range season_length{105, 130};

  // NDVI curve of a paddy plot.
  double soil_ndvi = 0.10;
  Range amplitude{0.45, 0.75};
  double rise_lag_days = 25.0;
  double rise_steepness_days = 6.0;
  double fall_lead_days = 15.0;
  double fall_steepness_days = 5.0;
  /// Vegetation standing before sowing and regrowing after harvest.
  Range pre_season_ndvi{0.0, 0.35};
  Range post_season_ndvi{0.0, 0.35};

  /// yield = a * (1/T) * sum over [sow, harvest] of NDVI + b, T = sequence length.
  double yield_a = 4000.0;
  double yield_b = 300.0;
};

enum class SynthLandCover { Paddy, Fallow, Orchard };

std::string_view to_string(SynthLandCover kind) noexcept;

struct SynthPlot {
  PlotRecord record;
  SynthLandCover kind = SynthLandCover::Fallow;
  /// Pixel rectangle [row0, row1) x [col0, col1) on the fine grid.
  Index row0 = 0, row1 = 0, col0 = 0, col1 = 0;
  SeasonDates dates;
  double amplitude = 0.0;
  double pre_level = 0.0;
  double post_level = 0.0;
  /// Constant NDVI of fallow and orchard plots.
  double level = 0.0;
  double yield = 0.0;
};

struct SynthTruth {
  /// 1 where the pixel belongs to a paddy plot.
  Image<std::uint8_t> crop_label;
  std::vector<SynthPlot> plots;
  Grid grid;
  SeasonRef season;
  /// Cube sequence length the offsets and the yield integral refer to.
  Index timesteps = 0;
};

struct SynthRegion {
  std::vector<Scene> scenes;
  std::vector<PlotRecord> plots;
  SynthTruth truth;
};

/// Throws RegionTooSmall, InvalidConfig, UnknownSeason.
SynthRegion generate_synthetic_region(const SynthConfig& config, const SeasonCalendar& calendar = builtin_calendar());

/// Noise-free NDVI of a plot on day offset d.
double synth_ndvi(const SynthConfig& config, const SynthPlot& plot, double day);

/// Yield implied by a plot's noise-free curve and dates.
double synth_yield(const SynthConfig& config, const SynthPlot& plot, Index timesteps);

/// Writes scenes/<SAT>_<date>.tif, plots.geojson, truth.json and
/// crop_label.tif below `dir`.
void write_synthetic_region(const SynthRegion& region, const std::filesystem::path& dir);

std::string synth_truth_to_json(const SynthTruth& truth);

}  // namespace cropcube
