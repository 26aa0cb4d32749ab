#include "cropcube/cube_builder.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <thread>

namespace cropcube {

void parallel_for(Index n, int jobs, const std::function<void(Index)>& fn) {
  const Index workers = std::clamp<Index>(jobs, 1, std::max<Index>(n, 1));
  if (workers <= 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (Index w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (Index i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

Scene merge_same_day(std::span<const Scene> scenes) {
  if (scenes.empty()) fail(ErrorCode::EmptyInput, "merge_same_day needs at least one scene");
  const Scene& first = scenes.front();
  for (const Scene& s : scenes) {
    if (s.satellite != first.satellite || s.acquisition_date != first.acquisition_date)
      fail(ErrorCode::GridMismatch, "merged scenes must share satellite and date");
    if (s.bands != first.bands) fail(ErrorCode::BandMismatch, "merged scenes must share the band list");
    if (!(s.grid() == first.grid())) fail(ErrorCode::GridMismatch, "merged scenes must share the grid");
  }
  Scene out = first;
  if (scenes.size() == 1) return out;

  std::vector<float> values;
  values.reserve(scenes.size());
  auto& dst = out.pixels.array();
  for (Index i = 0; i < dst.size(); ++i) {
    values.clear();
    for (const Scene& s : scenes) {
      const float v = s.pixels.array()[i];
      if (!std::isnan(v)) values.push_back(v);
    }
    if (values.empty()) {
      dst[i] = std::nanf("");
      continue;
    }
    // Sorting fixes the summation order, so the mean is bitwise order-free.
    std::sort(values.begin(), values.end());
    double sum = 0.0;
    for (float v : values) sum += v;
    dst[i] = static_cast<float>(sum / static_cast<double>(values.size()));
  }
  return out;
}

namespace {

/// Source row/column for every target row/column, -1 when uncovered.
struct NearestIndex {
  std::vector<Index> rows;
  std::vector<Index> cols;
};

NearestIndex nearest_index(const Grid& source, const Grid& target) {
  NearestIndex idx;
  const auto& s = source.transform;
  idx.rows.resize(static_cast<std::size_t>(target.height));
  idx.cols.resize(static_cast<std::size_t>(target.width));
  for (Index r = 0; r < target.height; ++r) {
    const double fr = std::floor((target.transform.center_y(r) - s.origin_y) / s.pixel_size_y);
    idx.rows[static_cast<std::size_t>(r)] = (fr >= 0 && fr < static_cast<double>(source.height)) ? static_cast<Index>(fr) : -1;
  }
  for (Index c = 0; c < target.width; ++c) {
    const double fc = std::floor((target.transform.center_x(c) - s.origin_x) / s.pixel_size_x);
    idx.cols[static_cast<std::size_t>(c)] = (fc >= 0 && fc < static_cast<double>(source.width)) ? static_cast<Index>(fc) : -1;
  }
  return idx;
}

}  // namespace

Scene resample_nearest(const Scene& scene, const Grid& target) {
  if (target.height < 1 || target.width < 1) fail(ErrorCode::GridMismatch, "target grid is empty");
  if (scene.grid() == target) return scene;
  const NearestIndex idx = nearest_index(scene.grid(), target);
  Scene out = scene;
  out.geotransform = target.transform;
  out.pixels = Tensor3f::Constant({scene.channels(), target.height, target.width}, std::nanf(""));
  for (Index c = 0; c < scene.channels(); ++c) {
    auto src = scene.pixels.plane(c);
    auto dst = out.pixels.plane(c);
    for (Index r = 0; r < target.height; ++r) {
      const Index sr = idx.rows[static_cast<std::size_t>(r)];
      if (sr < 0) continue;
      for (Index col = 0; col < target.width; ++col) {
        const Index sc = idx.cols[static_cast<std::size_t>(col)];
        if (sc >= 0) dst(r, col) = src(sr, sc);
      }
    }
  }
  return out;
}

namespace {

Scene select_bands(const Scene& scene, const std::vector<std::string>& bands) {
  Scene out = scene;
  out.bands = bands;
  out.pixels = Tensor3f::Zero({static_cast<Index>(bands.size()), scene.height(), scene.width()});
  for (std::size_t k = 0; k < bands.size(); ++k) {
    auto it = std::find(scene.bands.begin(), scene.bands.end(), bands[k]);
    if (it == scene.bands.end())
      fail(ErrorCode::BandMismatch, std::string(to_string(scene.satellite)) + " scene of " +
                                        format_iso_date(scene.acquisition_date) + " lacks band " + bands[k]);
    out.pixels.plane(static_cast<Index>(k)) = scene.pixels.plane(static_cast<Index>(it - scene.bands.begin()));
  }
  return out;
}

}  // namespace

DataCube build_cube(std::span<const Scene> scenes, const SeasonCalendar& calendar, const CubeRequest& request) {
  const SeasonWindow& window = calendar.window(request.season.name);
  const SeasonSpan span = resolve_season(calendar, request.season.name, request.season.year);
  if (request.bands.empty()) fail(ErrorCode::EmptyBandSelection, "no satellite band selection given");
  for (const auto& sel : request.bands) validate_band_selection(sel);
  if (request.target.height < 1 || request.target.width < 1) fail(ErrorCode::GridMismatch, "target grid is empty");

  const Index t_len = request.exact_window ? window.duration_days : calendar.max_duration_days();
  const Index h = request.target.height, w = request.target.width;

  DataCube cube;
  std::map<Satellite, std::pair<Index, const BandSelection*>> blocks;  // channel offset per satellite
  Index c_len = 0;
  for (const auto& sel : request.bands) {
    if (blocks.count(sel.satellite))
      fail(ErrorCode::BandMismatch, "satellite " + std::string(to_string(sel.satellite)) + " selected twice");
    blocks[sel.satellite] = {c_len, &sel};
    c_len += static_cast<Index>(sel.bands.size());
    cube.satellite_order.push_back(sel.satellite);
    for (const auto& b : sel.bands) {
      cube.band_names.push_back(b);
      cube.channel_sources.emplace_back(to_string(sel.satellite));
    }
  }
  cube.data = Tensor4f::Zero({t_len, c_len, h, w});
  cube.timestep_mask.assign(static_cast<std::size_t>(t_len), 0);
  cube.pixel_mask = Tensor3u8::Zero({t_len, h, w});
  cube.season_name = window.name;
  cube.year = request.season.year;
  cube.geotransform = request.target.transform;

  // (satellite, day offset) -> scenes resampled to the target grid
  std::map<std::pair<Satellite, long>, std::vector<Scene>> groups;
  for (const Scene& s : scenes) {
    auto block = blocks.find(s.satellite);
    if (block == blocks.end()) continue;
    const long off = days_between(span.start, s.acquisition_date);
    if (off < 0 || off >= window.duration_days || off >= t_len) continue;
    groups[{s.satellite, off}].push_back(resample_nearest(select_bands(s, block->second.second->bands), request.target));
  }

  for (auto& [key, group] : groups) {
    const auto [sat, off] = key;
    const Scene merged = merge_same_day(group);
    const Index c0 = blocks[sat].first;
    auto valid = cube.pixel_mask->plane(off);
    for (Index k = 0; k < merged.channels(); ++k) {
      auto src = merged.pixels.plane(k);
      cube.data.plane(off, c0 + k) = src.isNaN().select(0.0f, src);
      valid = (src.isNaN()).select(valid, std::uint8_t{1});
    }
  }
  for (Index t = 0; t < t_len; ++t)
    cube.timestep_mask[static_cast<std::size_t>(t)] = (cube.pixel_mask->plane(t) != 0).any() ? 1 : 0;
  return cube;
}

SeasonRef assign_season(const PlotRecord& plot, const SeasonCalendar& calendar) {
  if (plot.season_name) {
    calendar.window(*plot.season_name);
    return {*plot.season_name, plot.year};
  }
  if (!plot.sowing_date)
    fail(ErrorCode::UnassignableSeason, "plot " + plot.plot_id + " has neither season_name nor sowing_date");
  const Date sow = *plot.sowing_date;
  std::optional<SeasonRef> best;
  long best_distance = 0;
  const int sow_year = static_cast<int>(sow.year());
  for (int year : {sow_year - 1, sow_year}) {
    for (const auto& w : calendar.windows()) {
      const SeasonSpan span = resolve_season(calendar, w.name, year);
      if (sow < span.start || span.end < sow) continue;
      const long distance = std::abs(days_between(span.start, sow));
      if (!best || distance < best_distance) {
        best = SeasonRef{w.name, year};
        best_distance = distance;
      }
    }
  }
  if (!best)
    fail(ErrorCode::UnassignableSeason,
         "no standard season window contains sowing date " + format_iso_date(sow) + " of plot " + plot.plot_id);
  return *best;
}

Grid plot_grid(const PlotRecord& plot, double resolution) {
  if (!(resolution > 0.0)) fail(ErrorCode::InvalidConfig, "resolution must be positive");
  check_plot_invariants(plot);
  double min_x = plot.polygon.front()[0], max_x = min_x;
  double min_y = plot.polygon.front()[1], max_y = min_y;
  for (const auto& v : plot.polygon) {
    min_x = std::min(min_x, v[0]);
    max_x = std::max(max_x, v[0]);
    min_y = std::min(min_y, v[1]);
    max_y = std::max(max_y, v[1]);
  }
  constexpr double kSnap = 1e-9;
  Grid g;
  g.transform.pixel_size_x = resolution;
  g.transform.pixel_size_y = -resolution;
  g.transform.origin_x = std::floor(min_x / resolution + kSnap) * resolution;
  g.transform.origin_y = std::ceil(max_y / resolution - kSnap) * resolution;
  g.width = std::max<Index>(1, static_cast<Index>(std::ceil((max_x - g.transform.origin_x) / resolution - kSnap)));
  g.height = std::max<Index>(1, static_cast<Index>(std::ceil((g.transform.origin_y - min_y) / resolution - kSnap)));
  return g;
}

std::vector<PlotSample> build_plot_samples(std::span<const Scene> scenes, std::span<const PlotRecord> plots,
                                           const SeasonCalendar& calendar, const PlotSampleOptions& options) {
  std::vector<PlotSample> samples(plots.size());
  parallel_for(static_cast<Index>(plots.size()), options.jobs, [&](Index i) {
    const PlotRecord& plot = plots[static_cast<std::size_t>(i)];
    PlotSample& sample = samples[static_cast<std::size_t>(i)];
    sample.plot = plot;
    sample.season = assign_season(plot, calendar);
    const Grid grid = plot_grid(plot, options.resolution);
    DataCube cube = build_cube(scenes, calendar, {sample.season, grid, options.bands, options.exact_window});

    Image<std::uint8_t> inside(grid.height, grid.width);
    for (Index r = 0; r < grid.height; ++r)
      for (Index c = 0; c < grid.width; ++c)
        inside(r, c) = point_in_polygon(plot.polygon, grid.transform.center_x(c), grid.transform.center_y(r)) ? 1 : 0;
    for (Index t = 0; t < cube.timesteps(); ++t) {
      auto pm = cube.pixel_mask->plane(t);
      pm = (inside == 0).select(std::uint8_t{0}, pm);
      for (Index c = 0; c < cube.channels(); ++c) {
        auto p = cube.data.plane(t, c);
        p = (pm == 0).select(0.0f, p);
      }
      const bool any = (pm != 0).any();
      cube.timestep_mask[static_cast<std::size_t>(t)] = any ? 1 : 0;
    }
    cube.plot_id = plot.plot_id;
    sample.outside_coverage =
        std::none_of(cube.timestep_mask.begin(), cube.timestep_mask.end(), [](std::uint8_t m) { return m != 0; });
    if (sample.outside_coverage)
      std::clog << "warning: PlotOutsideCoverage: plot " << plot.plot_id << " has no imagery in "
                << sample.season.name << " " << sample.season.year << "\n";
    sample.cube = std::move(cube);
  });
  return samples;
}

}  // namespace cropcube
