#include "cropcube/synth.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <random>

namespace cropcube {

std::string_view to_string(SynthLandCover kind) noexcept {
  switch (kind) {
    case SynthLandCover::Paddy: return "paddy";
    case SynthLandCover::Fallow: return "fallow";
    case SynthLandCover::Orchard: return "orchard";
  }
  return "?";
}

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_range(const Range& r, const char* name) {
  if (!(r.lo <= r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi))
    fail(ErrorCode::InvalidConfig, std::string(name) + " range must satisfy lo <= hi");
}

std::mt19937_64 substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

/// Uniform draw from [lo, hi] using the top 53 bits of one engine output.
double uniform(std::mt19937_64& rng, const Range& r) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return r.lo + (r.hi - r.lo) * u;
}

void validate(const SynthConfig& c) {
  if (c.height < 8 || c.width < 8)
    fail(ErrorCode::RegionTooSmall, "region must be at least 8 x 8 pixels, got " + std::to_string(c.height) + " x " +
                                        std::to_string(c.width));
  if (c.n_plots < 1) fail(ErrorCode::InvalidConfig, "n_plots must be >= 1");
  if (!(c.paddy_fraction >= 0.0 && c.paddy_fraction <= 1.0))
    fail(ErrorCode::InvalidConfig, "paddy_fraction must lie in [0, 1]");
  if (!(c.noise_sigma >= 0.0)) fail(ErrorCode::InvalidConfig, "noise_sigma must be >= 0");
  if (!(c.resolution > 0.0)) fail(ErrorCode::InvalidConfig, "resolution must be positive");
  if (c.revisit_days.empty()) fail(ErrorCode::InvalidConfig, "at least one satellite is required");
  for (const auto& [sat, days] : c.revisit_days)
    if (days < 1) fail(ErrorCode::InvalidConfig, std::string(to_string(sat)) + " revisit_days must be >= 1");
  check_range(c.sowing_offset, "sowing_offset");
  check_range(c.transplant_delay, "transplant_delay");
  check_range(c.season_length, "season_length");
  check_range(c.amplitude, "amplitude");
  check_range(c.pre_season_ndvi, "pre_season_ndvi");
  check_range(c.post_season_ndvi, "post_season_ndvi");
  if (c.sowing_offset.lo < 0 || c.transplant_delay.lo < 0 || c.season_length.lo < 1)
    fail(ErrorCode::InvalidConfig, "phenology ranges must be non-negative");
}

/// Plot layout: rows x cols with rows the largest divisor of n not above sqrt(n).
std::pair<Index, Index> plot_layout(Index n) {
  Index rows = 1;
  for (Index r = 1; r * r <= n; ++r)
    if (n % r == 0) rows = r;
  return {rows, n / rows};
}

struct Reflectance {
  // Band values from a single NDVI value. NIR + R is held fixed so that
  // (NIR - R) / (NIR + R) reproduces the NDVI exactly.
  static double band(std::string_view name, double v) {
    constexpr double kSum = 0.45;
    const double nir = kSum * (1.0 + v) / 2.0, red = kSum * (1.0 - v) / 2.0;
    if (name == "NIR") return nir;
    if (name == "R") return red;
    if (name == "G") return 0.04 + 0.04 * (1.0 - v);
    if (name == "B") return 0.03 + 0.025 * (1.0 - v);
    if (name == "UB") return 0.04 + 0.025 * (1.0 - v);
    if (name == "RE1") return 0.4 * (red + nir);
    if (name == "RE2") return red + 0.6 * (nir - red);
    if (name == "RE3") return red + 0.85 * (nir - red);
    if (name == "RE4") return 0.98 * nir;
    if (name == "SWIR1") return 0.25 - 0.1 * v;
    if (name == "SWIR2") return 0.18 - 0.1 * v;
    if (name == "THERMAL") return 300.0 - 5.0 * v;
    if (name == "VH") return 0.01 + 0.05 * v;
    if (name == "VV") return 0.08 + 0.06 * v;
    if (name == "ANGLE") return 38.0;
    return 0.0;
  }
};

}  // namespace

double synth_ndvi(const SynthConfig& c, const SynthPlot& plot, double d) {
  switch (plot.kind) {
    case SynthLandCover::Fallow: return plot.level;
    case SynthLandCover::Orchard: return plot.level + 0.03 * std::sin(2.0 * M_PI * d / 365.0);
    case SynthLandCover::Paddy: break;
  }
  const double sow = static_cast<double>(plot.dates.sow_offset);
  const double harvest = static_cast<double>(plot.dates.harvest_offset);
  const double crop = plot.amplitude * logistic((d - sow - c.rise_lag_days) / c.rise_steepness_days) *
                      logistic((harvest - c.fall_lead_days - d) / c.fall_steepness_days);
  double extra = 0.0;
  if (d < sow) extra = plot.pre_level;  // cleared on the sowing day
  if (d > harvest) extra = plot.post_level * logistic((d - harvest - 10.0) / 4.0);
  return c.soil_ndvi + crop + extra;
}

double synth_yield(const SynthConfig& c, const SynthPlot& plot, Index timesteps) {
  if (plot.kind != SynthLandCover::Paddy) return 0.0;
  double sum = 0.0;
  for (Index d = plot.dates.sow_offset; d <= plot.dates.harvest_offset; ++d) sum += synth_ndvi(c, plot, static_cast<double>(d));
  return c.yield_a * sum / static_cast<double>(timesteps) + c.yield_b;
}

SynthRegion generate_synthetic_region(const SynthConfig& c, const SeasonCalendar& calendar) {
  validate(c);
  const SeasonWindow& win = calendar.window(c.season.name);
  const Date start = win.standard_sowing_day(c.season.year);
  const Index duration = win.duration_days;
  const Index t_len = calendar.max_duration_days();

  const auto [grid_rows, grid_cols] = plot_layout(c.n_plots);
  if (c.height / grid_rows < 2 || c.width / grid_cols < 2)
    fail(ErrorCode::RegionTooSmall, std::to_string(c.n_plots) + " plots do not fit a " + std::to_string(c.height) +
                                        " x " + std::to_string(c.width) + " region");

  SynthRegion region;
  SynthTruth& truth = region.truth;
  truth.season = c.season;
  truth.timesteps = t_len;
  truth.grid = Grid{GeoTransform{c.origin_x, c.origin_y, c.resolution, -c.resolution}, c.height, c.width};
  truth.crop_label = Image<std::uint8_t>::Zero(c.height, c.width);

  std::mt19937_64 rng = substream(c.seed, 0, 0);
  const Index n = c.n_plots;
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
  const auto n_paddy = static_cast<std::size_t>(std::lround(c.paddy_fraction * static_cast<double>(n)));
  std::vector<bool> is_paddy(static_cast<std::size_t>(n), false);
  for (std::size_t i = 0; i < n_paddy; ++i) is_paddy[static_cast<std::size_t>(order[i])] = true;

  const double pixel_area_acre = c.resolution * c.resolution / 4046.8564224;
  for (Index k = 0; k < n; ++k) {
    SynthPlot plot;
    const Index gr = k / grid_cols, gc = k % grid_cols;
    plot.row0 = gr * c.height / grid_rows;
    plot.row1 = (gr + 1) * c.height / grid_rows;
    plot.col0 = gc * c.width / grid_cols;
    plot.col1 = (gc + 1) * c.width / grid_cols;

    if (is_paddy[static_cast<std::size_t>(k)]) {
      plot.kind = SynthLandCover::Paddy;
      const Index last = duration - 1;
      const Index sow = std::min<Index>(std::lround(uniform(rng, c.sowing_offset)), last);
      const Index harvest = std::min<Index>(sow + std::lround(uniform(rng, c.season_length)), last);
      const Index transplant = std::min<Index>(sow + std::lround(uniform(rng, c.transplant_delay)), harvest);
      plot.dates = {sow, transplant, harvest};
      plot.amplitude = uniform(rng, c.amplitude);
      plot.pre_level = uniform(rng, c.pre_season_ndvi);
      plot.post_level = uniform(rng, c.post_season_ndvi);
    } else {
      const bool orchard = (rng() & 1U) != 0;
      plot.kind = orchard ? SynthLandCover::Orchard : SynthLandCover::Fallow;
      plot.level = orchard ? uniform(rng, {0.6, 0.8}) : uniform(rng, {0.05, 0.2});
    }

    PlotRecord& rec = plot.record;
    char id[32];
    std::snprintf(id, sizeof id, "P%03lld", static_cast<long long>(k));
    rec.plot_id = id;
    const double x0 = c.origin_x + static_cast<double>(plot.col0) * c.resolution;
    const double x1 = c.origin_x + static_cast<double>(plot.col1) * c.resolution;
    const double y0 = c.origin_y - static_cast<double>(plot.row0) * c.resolution;
    const double y1 = c.origin_y - static_cast<double>(plot.row1) * c.resolution;
    rec.polygon = {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
    rec.crop_type = plot.kind == SynthLandCover::Paddy ? "paddy" : plot.kind == SynthLandCover::Orchard ? "coconut" : "fallow";
    rec.season_name = c.season.name;
    rec.year = c.season.year;
    rec.area_acre = static_cast<double>((plot.row1 - plot.row0) * (plot.col1 - plot.col0)) * pixel_area_acre;
    if (plot.kind == SynthLandCover::Paddy) {
      rec.sowing_date = add_days(start, plot.dates.sow_offset);
      rec.transplanting_date = add_days(start, plot.dates.transplant_offset);
      rec.harvesting_date = add_days(start, plot.dates.harvest_offset);
      plot.yield = synth_yield(c, plot, t_len);
      rec.yield_kg_per_acre = plot.yield;
      truth.crop_label.block(plot.row0, plot.col0, plot.row1 - plot.row0, plot.col1 - plot.col0).setConstant(1);
    }
    region.plots.push_back(rec);
    truth.plots.push_back(std::move(plot));
  }

  // Plot index per fine pixel; every pixel belongs to exactly one plot.
  Image<std::int32_t> owner(c.height, c.width);
  for (std::size_t k = 0; k < truth.plots.size(); ++k) {
    const SynthPlot& p = truth.plots[k];
    owner.block(p.row0, p.col0, p.row1 - p.row0, p.col1 - p.col0).setConstant(static_cast<std::int32_t>(k));
  }

  for (const auto& [sat, revisit] : c.revisit_days) {
    const Index factor = sat == Satellite::L8 ? 3 : 1;
    const Index h = (c.height + factor - 1) / factor, w = (c.width + factor - 1) / factor;
    const double res = c.resolution * static_cast<double>(factor);
    const std::vector<std::string>& bands = default_bands(sat);
    for (Index offset = 0, k = 0; offset < duration; offset += revisit, ++k) {
      Scene scene;
      scene.satellite = sat;
      scene.acquisition_date = add_days(start, offset);
      scene.bands = bands;
      scene.geotransform = GeoTransform{c.origin_x, c.origin_y, res, -res};
      scene.pixels = Tensor3f::Zero({static_cast<Index>(bands.size()), h, w});
      std::mt19937_64 noise_rng = substream(c.seed, static_cast<std::uint64_t>(sat) + 1, static_cast<std::uint64_t>(k));
      std::normal_distribution<double> noise(0.0, c.noise_sigma);
      std::vector<double> ndvi_of_plot(truth.plots.size());
      for (std::size_t p = 0; p < truth.plots.size(); ++p)
        ndvi_of_plot[p] = synth_ndvi(c, truth.plots[p], static_cast<double>(offset));
      for (std::size_t b = 0; b < bands.size(); ++b) {
        auto plane = scene.pixels.plane(static_cast<Index>(b));
        for (Index r = 0; r < h; ++r)
          for (Index col = 0; col < w; ++col) {
            // Coarse pixels sample the fine pixel under their centre.
            const Index fr = std::min(r * factor + factor / 2, c.height - 1);
            const Index fc = std::min(col * factor + factor / 2, c.width - 1);
            const double v = ndvi_of_plot[static_cast<std::size_t>(owner(fr, fc))];
            const double value = Reflectance::band(bands[b], v) + (c.noise_sigma > 0 ? noise(noise_rng) : 0.0);
            plane(r, col) = static_cast<float>(value);
          }
      }
      region.scenes.push_back(std::move(scene));
    }
  }
  return region;
}

std::string synth_truth_to_json(const SynthTruth& truth) {
  nlohmann::json plots = nlohmann::json::array();
  for (const SynthPlot& p : truth.plots) {
    nlohmann::json j = {{"plot_id", p.record.plot_id},
                        {"land_cover", std::string(to_string(p.kind))},
                        {"pixel_rows", {p.row0, p.row1}},
                        {"pixel_cols", {p.col0, p.col1}}};
    if (p.kind == SynthLandCover::Paddy) {
      j["sow_offset"] = p.dates.sow_offset;
      j["transplant_offset"] = p.dates.transplant_offset;
      j["harvest_offset"] = p.dates.harvest_offset;
      j["amplitude"] = p.amplitude;
      j["pre_season_ndvi"] = p.pre_level;
      j["post_season_ndvi"] = p.post_level;
      j["yield_kg_per_acre"] = p.yield;
    } else {
      j["ndvi_level"] = p.level;
    }
    plots.push_back(std::move(j));
  }
  const GeoTransform& gt = truth.grid.transform;
  const nlohmann::json j = {{"season", truth.season.name},
                            {"year", truth.season.year},
                            {"timesteps", truth.timesteps},
                            {"height", truth.grid.height},
                            {"width", truth.grid.width},
                            {"geotransform", {gt.origin_x, gt.origin_y, gt.pixel_size_x, gt.pixel_size_y}},
                            {"plots", plots}};
  return j.dump(1) + "\n";
}

void write_synthetic_region(const SynthRegion& region, const std::filesystem::path& dir) {
  const auto scene_dir = dir / "scenes";
  std::filesystem::create_directories(scene_dir);
  GeoTiffWriteOptions options;
  options.compression = TiffCompression::Deflate;
  for (const Scene& s : region.scenes)
    write_geotiff(s, scene_dir / scene_filename(s.satellite, s.acquisition_date), options);
  write_plot_manifest(region.plots, dir / "plots.geojson");
  write_text_file(dir / "truth.json", synth_truth_to_json(region.truth));

  Scene label;
  label.satellite = Satellite::S2;
  label.acquisition_date = resolve_season(builtin_calendar(), region.truth.season.name, region.truth.season.year).start;
  label.bands = {"crop_label"};
  label.geotransform = region.truth.grid.transform;
  label.pixels = Tensor3f::Zero({1, region.truth.grid.height, region.truth.grid.width});
  label.pixels.plane(0) = region.truth.crop_label.cast<float>();
  GeoTiffWriteOptions label_options;
  label_options.compression = TiffCompression::Deflate;
  label_options.sample_type = TiffSampleType::U8;
  write_geotiff(label, dir / "crop_label.tif", label_options);
}

}  // namespace cropcube
