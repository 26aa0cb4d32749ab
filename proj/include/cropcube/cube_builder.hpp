#pragma once

#include "cropcube/cube.hpp"
#include "cropcube/raster_io.hpp"
#include "cropcube/season_calendar.hpp"

#include <functional>
#include <span>
#include <vector>

namespace cropcube {

/// Per-pixel NaN-skipping mean of scenes sharing satellite, date, bands and
/// grid. The result does not depend on input order.
Scene merge_same_day(std::span<const Scene> scenes);

/// Nearest-neighbour resampling onto `target`; uncovered pixels become NaN.
Scene resample_nearest(const Scene& scene, const Grid& target);

struct CubeRequest {
  SeasonRef season;
  Grid target;
  /// One entry per satellite, in channel-block order.
  std::vector<BandSelection> bands;
  /// Use the season's own duration as T instead of the calendar maximum.
  bool exact_window = false;
};

/// Aligns scenes into a [T, C, H, W] cube indexed by days since the standard
/// sowing day. Scenes outside the season window or from unselected
/// satellites are ignored; days without imagery stay zero.
DataCube build_cube(std::span<const Scene> scenes, const SeasonCalendar& calendar, const CubeRequest& request);

/// Season for a plot: its season_name when present, otherwise the window
/// containing the sowing date whose standard sowing day is nearest.
SeasonRef assign_season(const PlotRecord& plot, const SeasonCalendar& calendar);

/// Grid snapped to multiples of `resolution` covering the plot's bounding box.
Grid plot_grid(const PlotRecord& plot, double resolution);

struct PlotSampleOptions {
  double resolution = 10.0;
  std::vector<BandSelection> bands;
  bool exact_window = false;
  int jobs = 1;
};

struct PlotSample {
  PlotRecord plot;
  SeasonRef season;
  DataCube cube;
  /// No scene covered any in-plot pixel; the cube is all padding.
  bool outside_coverage = false;
};

std::vector<PlotSample> build_plot_samples(std::span<const Scene> scenes, std::span<const PlotRecord> plots,
                                           const SeasonCalendar& calendar, const PlotSampleOptions& options);

/// Runs fn(i) for i in [0, n) over `jobs` threads. Iterations must write
/// disjoint outputs.
void parallel_for(Index n, int jobs, const std::function<void(Index)>& fn);

}  // namespace cropcube
