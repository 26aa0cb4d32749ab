#include "cropcube/cli.hpp"

#include "cropcube/cube_builder.hpp"
#include "cropcube/metrics.hpp"
#include "cropcube/pipeline.hpp"
#include "cropcube/predictors.hpp"
#include "cropcube/raster_io.hpp"
#include "cropcube/season_calendar.hpp"
#include "cropcube/synth.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <iostream>
#include <set>

namespace cropcube {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Flag parsing helpers

std::vector<BandSelection> parse_bands(const std::vector<std::string>& specs) {
  std::vector<BandSelection> out;
  for (const std::string& spec : specs) {
    const auto colon = spec.find(':');
    if (colon == std::string::npos) fail(ErrorCode::UsageError, "--bands expects SAT:B1,B2, got '" + spec + "'");
    const auto sat = parse_satellite(spec.substr(0, colon));
    if (!sat) fail(ErrorCode::UsageError, "unknown satellite in --bands '" + spec + "'");
    BandSelection sel{*sat, {}};
    std::string rest = spec.substr(colon + 1);
    for (std::size_t pos = 0; pos <= rest.size();) {
      const auto comma = std::min(rest.find(',', pos), rest.size());
      if (comma > pos) sel.bands.push_back(rest.substr(pos, comma - pos));
      pos = comma + 1;
    }
    try {
      validate_band_selection(sel);
    } catch (const Error& e) {
      fail(ErrorCode::UsageError, std::string("--bands ") + spec + ": " + e.what());
    }
    out.push_back(std::move(sel));
  }
  return out;
}

std::map<Task, ExternalEndpoint> parse_external(const std::vector<std::string>& specs, int timeout_ms) {
  std::map<Task, ExternalEndpoint> out;
  for (const std::string& spec : specs) {
    const auto eq = spec.find('=');
    const auto task = eq == std::string::npos ? std::nullopt : parse_task(spec.substr(0, eq));
    if (!task || eq + 1 >= spec.size())
      fail(ErrorCode::UsageError, "--external-model expects task=command, got '" + spec + "'");
    out[*task] = ExternalEndpoint{spec.substr(eq + 1), std::chrono::milliseconds(timeout_ms)};
  }
  return out;
}

std::vector<IndexKind> parse_kinds(const std::vector<std::string>& names) {
  std::vector<IndexKind> kinds;
  for (const std::string& n : names) {
    const auto k = parse_index_kind(n);
    if (!k) fail(ErrorCode::UsageError, "unknown vegetation index '" + n + "'");
    kinds.push_back(*k);
  }
  return kinds;
}

/// Refuses to touch existing outputs unless `overwrite`; with it, removes them
/// so every run starts from the same state.
void claim_outputs(const std::vector<fs::path>& paths, bool overwrite) {
  for (const fs::path& p : paths) {
    if (!fs::exists(p)) continue;
    if (!overwrite) fail(ErrorCode::OutputExists, p.string() + " exists; pass --overwrite to replace it");
    fs::remove_all(p);
  }
}

/// Appends flags from a JSON object file for keys not given on the command line.
std::vector<std::string> apply_config_overlay(std::vector<std::string> args) {
  std::optional<fs::path> config;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      break;
    }
    if (args[i].starts_with("--config=")) {
      config = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (!config) return args;
  if (!fs::exists(*config)) fail(ErrorCode::UsageError, "config file " + config->string() + " not found");
  const json j = json::parse(read_text_file(*config), nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ErrorCode::UsageError, "config file must hold a JSON object");
  std::set<std::string> given;
  for (const auto& a : args)
    if (a.starts_with("--")) given.insert(a.substr(0, a.find('=')));
  for (const auto& [key, value] : j.items()) {
    const std::string flag = "--" + key;
    if (given.count(flag)) continue;
    auto scalar = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back(flag);
    } else if (value.is_array()) {
      for (const auto& v : value) {
        args.push_back(flag);
        args.push_back(scalar(v));
      }
    } else {
      args.push_back(flag);
      args.push_back(scalar(value));
    }
  }
  return args;
}

// ---------------------------------------------------------------------------
// Sample directories written by build-cubes

struct SampleEntry {
  std::string plot_id;
  SeasonRef season;
  std::string crop_type;
  bool paddy = false;
  std::optional<Index> sow, transplant, harvest;
  std::optional<double> yield;
  fs::path cube_path;
};

constexpr const char* kSamplesIndex = "samples.json";
constexpr const char* kTrainingRecord = "training.json";

bool is_paddy_crop(const std::string& crop_type) {
  std::string lower;
  for (char ch : crop_type) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  return lower == "paddy" || lower == "rice";
}

std::vector<SampleEntry> load_samples(const fs::path& dir) {
  const fs::path index = dir / kSamplesIndex;
  if (!fs::exists(index)) fail(ErrorCode::IoError, index.string() + " not found; run build-cubes first");
  const json j = json::parse(read_text_file(index), nullptr, false);
  if (j.is_discarded() || !j.contains("samples")) fail(ErrorCode::SchemaMismatch, index.string() + " is malformed");
  std::vector<SampleEntry> out;
  try {
    for (const auto& s : j.at("samples")) {
      SampleEntry e;
      e.plot_id = s.at("plot_id").get<std::string>();
      e.season = {s.at("season").get<std::string>(), s.at("year").get<int>()};
      e.crop_type = s.at("crop_type").get<std::string>();
      e.paddy = s.at("paddy").get<bool>();
      auto opt_index = [&](const char* key) -> std::optional<Index> {
        if (!s.contains(key) || s.at(key).is_null()) return std::nullopt;
        return s.at(key).get<Index>();
      };
      e.sow = opt_index("sow_offset");
      e.transplant = opt_index("transplant_offset");
      e.harvest = opt_index("harvest_offset");
      if (s.contains("yield_kg_per_acre") && !s.at("yield_kg_per_acre").is_null())
        e.yield = s.at("yield_kg_per_acre").get<double>();
      e.cube_path = dir / s.at("cube").get<std::string>();
      out.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    fail(ErrorCode::SchemaMismatch, index.string() + ": " + ex.what());
  }
  return out;
}

std::vector<std::string> ids_of(const std::vector<SampleEntry>& entries) {
  std::vector<std::string> ids;
  for (const auto& e : entries) ids.push_back(e.plot_id);
  return ids;
}

json split_to_json(const DatasetSplit& s) {
  return {{"seed", s.seed}, {"train", s.train_ids}, {"val", s.val_ids}, {"test", s.test_ids}};
}

DatasetSplit split_from_json(const json& j) {
  DatasetSplit s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.train_ids = j.at("train").get<std::vector<std::string>>();
  s.val_ids = j.at("val").get<std::vector<std::string>>();
  s.test_ids = j.at("test").get<std::vector<std::string>>();
  return s;
}

std::vector<SampleEntry> select(const std::vector<SampleEntry>& all, const std::vector<std::string>& ids) {
  const std::set<std::string> wanted(ids.begin(), ids.end());
  std::vector<SampleEntry> out;
  for (const auto& e : all)
    if (wanted.count(e.plot_id)) out.push_back(e);
  return out;
}

/// Pixels that belong to the plot: any timestep with the pixel-mask bit set.
Image<std::uint8_t> plot_footprint(const DataCube& cube) {
  Image<std::uint8_t> fp = Image<std::uint8_t>::Zero(cube.height(), cube.width());
  if (!cube.pixel_mask) {
    fp.setConstant(1);
    return fp;
  }
  for (Index t = 0; t < cube.timesteps(); ++t) fp = fp.max(cube.pixel_mask->plane(t));
  return fp;
}

Index to_offset(double v, Index timesteps) {
  if (!std::isfinite(v)) return 0;
  return static_cast<Index>(std::clamp(std::round(v), 0.0, static_cast<double>(timesteps - 1)));
}

// ---------------------------------------------------------------------------
// Subcommands

struct SynthArgs {
  fs::path out;
  std::uint64_t seed = 0;
  Index height = 64, width = 64, plots = 16;
  double paddy_fraction = 0.5;
  std::string season = "Samba";
  int year = 2018;
  double noise = 0.01;
  bool overwrite = false;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  SynthConfig c;
  c.seed = a.seed;
  c.height = a.height;
  c.width = a.width;
  c.n_plots = a.plots;
  c.paddy_fraction = a.paddy_fraction;
  c.season = {a.season, a.year};
  c.noise_sigma = a.noise;
  const SynthRegion region = generate_synthetic_region(c);
  claim_outputs({a.out / "scenes", a.out / "plots.geojson", a.out / "truth.json", a.out / "crop_label.tif"},
                a.overwrite);
  write_synthetic_region(region, a.out);
  out << "wrote " << region.scenes.size() << " scenes and " << region.plots.size() << " plots to " << a.out.string()
      << "\n";
  return 0;
}

struct BuildArgs {
  fs::path scenes, plots, out;
  std::optional<fs::path> calendar;
  int resolution = 10;
  std::vector<std::string> bands;
  bool exact_window = false;
  int jobs = 1;
  bool overwrite = false;
};

int cmd_build(const BuildArgs& a, std::ostream& out) {
  const SeasonCalendar calendar = load_calendar(a.calendar);
  PlotSampleOptions opt;
  opt.resolution = a.resolution;
  opt.bands = parse_bands(a.bands);
  opt.exact_window = a.exact_window;
  opt.jobs = a.jobs;
  const std::vector<PlotRecord> plots = read_plot_manifest(a.plots);
  const std::vector<Scene> scenes = read_scene_dir(a.scenes);
  if (scenes.empty()) fail(ErrorCode::NoScenes, "no scenes in " + a.scenes.string());
  if (opt.bands.empty()) {
    for (Satellite sat : {Satellite::L8, Satellite::S1, Satellite::S2}) {
      const auto it = std::find_if(scenes.begin(), scenes.end(), [&](const Scene& s) { return s.satellite == sat; });
      if (it != scenes.end()) opt.bands.push_back({sat, it->bands});
    }
  }
  claim_outputs({a.out / "cubes", a.out / kSamplesIndex}, a.overwrite);
  const std::vector<PlotSample> samples = build_plot_samples(scenes, plots, calendar, opt);

  fs::create_directories(a.out / "cubes");
  json entries = json::array();
  for (const PlotSample& s : samples) {
    const std::string rel = "cubes/" + s.plot.plot_id + ".cube";
    write_cube(s.cube, a.out / rel);
    const Date start = calendar.window(s.season.name).standard_sowing_day(s.season.year);
    const Index t_len = s.cube.timesteps();
    auto offset = [&](const std::optional<Date>& d) -> json {
      if (!d) return nullptr;
      const long off = days_between(start, *d);
      if (off < 0 || off >= t_len) {
        std::clog << "warning: " << s.plot.plot_id << " date " << format_iso_date(*d) << " lies outside the season\n";
        return nullptr;
      }
      return off;
    };
    entries.push_back({{"plot_id", s.plot.plot_id},
                       {"season", s.season.name},
                       {"year", s.season.year},
                       {"crop_type", s.plot.crop_type},
                       {"paddy", is_paddy_crop(s.plot.crop_type)},
                       {"sow_offset", offset(s.plot.sowing_date)},
                       {"transplant_offset", offset(s.plot.transplanting_date)},
                       {"harvest_offset", offset(s.plot.harvesting_date)},
                       {"yield_kg_per_acre", s.plot.yield_kg_per_acre ? json(*s.plot.yield_kg_per_acre) : json(nullptr)},
                       {"outside_coverage", s.outside_coverage},
                       {"cube", rel}});
  }
  json bands = json::array();
  for (const auto& b : opt.bands) bands.push_back(std::string(to_string(b.satellite)) + ":" + [&] {
    std::string joined;
    for (const auto& n : b.bands) joined += (joined.empty() ? "" : ",") + n;
    return joined;
  }());
  const json index = {{"resolution", a.resolution}, {"exact_window", a.exact_window}, {"bands", bands}, {"samples", entries}};
  write_text_file(a.out / kSamplesIndex, index.dump(1) + "\n");
  out << "wrote " << samples.size() << " plot cubes to " << (a.out / "cubes").string() << "\n";
  return 0;
}

struct TrainArgs {
  fs::path samples, out;
  std::uint64_t seed = 0;
  double ridge_lambda = kDefaultRidgeLambda;
  std::vector<std::string> indices{"NDVI", "GCVI"};
  bool raw_bands = false;
  bool standard_season = false;
  Index pixels_per_plot = 16;
  bool overwrite = false;
};

std::vector<BandSelection> samples_bands(const fs::path& dir) {
  const json j = json::parse(read_text_file(dir / kSamplesIndex), nullptr, false);
  if (j.is_discarded() || !j.contains("bands")) return {};
  return parse_bands(j.at("bands").get<std::vector<std::string>>());
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  if (a.pixels_per_plot < 1) fail(ErrorCode::UsageError, "--pixels-per-plot must be >= 1");
  const std::vector<SampleEntry> all = load_samples(a.samples);
  const DatasetSplit split = split_dataset(ids_of(all), a.seed);
  const std::vector<SampleEntry> train = select(all, split.train_ids);

  FeatureSpec spec;
  spec.kinds = parse_kinds(a.indices);
  spec.bands = samples_bands(a.samples);
  spec.raw_bands = a.raw_bands;

  std::vector<fs::path> outputs{a.out / kTrainingRecord};
  for (Task t : {Task::CropCover, Task::Sowing, Task::Transplanting, Task::Harvesting, Task::Yield})
    outputs.push_back(model_path(a.out, t));
  claim_outputs(outputs, a.overwrite);

  // Pixel rows for the classifier: an even subsample of each plot's footprint.
  std::vector<Eigen::MatrixXd> blocks;
  std::vector<std::uint8_t> pixel_labels;
  std::map<Task, std::vector<FeatureSequence>> feats;
  std::map<Task, std::vector<double>> labels;
  Index timesteps = 0, rows = 0;
  for (const SampleEntry& e : train) {
    const DataCube cube = read_cube(e.cube_path);
    timesteps = cube.timesteps();
    const Image<std::uint8_t> fp = plot_footprint(cube);
    const Index n_valid = (fp != 0).count();
    if (n_valid == 0) continue;
    const Eigen::MatrixXd x = pixel_features(cube, spec);
    const Index stride = std::max<Index>(1, n_valid / a.pixels_per_plot);
    std::vector<Index> picked;
    for (Index i = 0, seen = 0; i < fp.size(); ++i)
      if (fp.data()[i] && seen++ % stride == 0 && static_cast<Index>(picked.size()) < a.pixels_per_plot)
        picked.push_back(i);
    Eigen::MatrixXd block(static_cast<Index>(picked.size()), x.cols());
    for (std::size_t k = 0; k < picked.size(); ++k) block.row(static_cast<Index>(k)) = x.row(picked[k]);
    rows += block.rows();
    blocks.push_back(std::move(block));
    pixel_labels.insert(pixel_labels.end(), picked.size(), e.paddy ? 1 : 0);

    const FeatureSequence f = extract_features(cube, spec);
    auto add = [&](Task t, std::optional<double> y) {
      if (!y) return;
      feats[t].push_back(f);
      labels[t].push_back(*y);
    };
    add(Task::Sowing, e.sow ? std::optional<double>(static_cast<double>(*e.sow)) : std::nullopt);
    add(Task::Transplanting, e.transplant ? std::optional<double>(static_cast<double>(*e.transplant)) : std::nullopt);
    add(Task::Harvesting, e.harvest ? std::optional<double>(static_cast<double>(*e.harvest)) : std::nullopt);
    if (e.yield) {
      if (a.standard_season) {
        feats[Task::Yield].push_back(f);
        labels[Task::Yield].push_back(*e.yield);
      } else if (e.sow && e.harvest && *e.sow <= *e.harvest) {
        feats[Task::Yield].push_back(extract_features(mask_actual_season(cube, *e.sow, *e.harvest), spec));
        labels[Task::Yield].push_back(*e.yield);
      }
    }
  }
  if (blocks.empty()) fail(ErrorCode::TooFewSamples, "no training plot has in-plot pixels");
  Eigen::MatrixXd x(rows, blocks.front().cols());
  Index r0 = 0;
  for (const auto& b : blocks) {
    x.middleRows(r0, b.rows()) = b;
    r0 += b.rows();
  }
  fs::create_directories(a.out);
  const PixelClassifier clf = fit_pixel_classifier(x, pixel_labels, timesteps, spec);
  persist_model(clf, model_path(a.out, Task::CropCover));
  out << "crop_cover: " << rows << " pixels, " << clf.iterations << " iterations\n";
  for (Task t : {Task::Sowing, Task::Transplanting, Task::Harvesting, Task::Yield}) {
    if (feats[t].empty()) fail(ErrorCode::TooFewSamples, "no training plot carries a " + std::string(to_string(t)) + " label");
    const LinearModel m = fit_linear(feats[t], labels[t], a.ridge_lambda, t, spec);
    persist_model(m, model_path(a.out, t));
    out << to_string(t) << ": " << feats[t].size() << " plots\n";
  }
  const json record = {{"split", split_to_json(split)},
                       {"season_mode", a.standard_season ? "standard" : "actual"},
                       {"ridge_lambda", a.ridge_lambda},
                       {"samples", fs::absolute(a.samples).string()}};
  write_text_file(a.out / kTrainingRecord, record.dump(1) + "\n");
  return 0;
}

struct EvalArgs {
  fs::path samples, models, out;
  std::string split = "test";
  std::uint64_t seed = 0;
  bool actual_season = false, standard_season = false;
  std::vector<std::string> external;
  int timeout_ms = 30000;
  bool overwrite = false;
};

int cmd_evaluate(const EvalArgs& a, std::ostream& out) {
  const std::vector<SampleEntry> all = load_samples(a.samples);
  std::optional<json> record;
  if (fs::exists(a.models / kTrainingRecord)) record = json::parse(read_text_file(a.models / kTrainingRecord));
  const DatasetSplit split = record ? split_from_json(record->at("split")) : split_dataset(ids_of(all), a.seed);
  bool standard = record && record->value("season_mode", "actual") == "standard";
  if (a.standard_season) standard = true;
  if (a.actual_season) standard = false;

  std::vector<SampleEntry> chosen;
  if (a.split == "test") chosen = select(all, split.test_ids);
  else if (a.split == "val") chosen = select(all, split.val_ids);
  else if (a.split == "train") chosen = select(all, split.train_ids);
  else chosen = all;

  const ModelSet models = load_model_set(a.models, parse_external(a.external, a.timeout_ms));
  claim_outputs({a.out / "metrics.json", a.out / "metrics.txt"}, a.overwrite);

  std::vector<std::uint8_t> pred_px, target_px;
  std::map<Task, std::vector<double>> targets, preds;
  for (const SampleEntry& e : chosen) {
    const DataCube cube = read_cube(e.cube_path);
    const Imagef cover = models.crop_cover->predict(cube);
    const Image<std::uint8_t> fp = plot_footprint(cube);
    for (Index i = 0; i < fp.size(); ++i) {
      if (!fp.data()[i]) continue;
      pred_px.push_back(cover.data()[i] >= 0.5f ? 1 : 0);
      target_px.push_back(e.paddy ? 1 : 0);
    }
    const Index t_len = cube.timesteps();
    const Index sow = to_offset(models.sowing->predict(cube), t_len);
    const Index transplant = to_offset(models.transplanting->predict(cube), t_len);
    const Index harvest = to_offset(models.harvesting->predict(cube), t_len);
    auto record_pair = [&](Task t, std::optional<Index> truth, Index p) {
      if (!truth) return;
      targets[t].push_back(static_cast<double>(*truth));
      preds[t].push_back(static_cast<double>(p));
    };
    record_pair(Task::Sowing, e.sow, sow);
    record_pair(Task::Transplanting, e.transplant, transplant);
    record_pair(Task::Harvesting, e.harvest, harvest);
    if (e.yield) {
      const double y = standard ? models.yield->predict(cube)
                                : models.yield->predict(mask_actual_season(cube, std::min(sow, harvest), std::max(sow, harvest)));
      targets[Task::Yield].push_back(*e.yield);
      preds[Task::Yield].push_back(y);
    }
  }

  std::vector<MetricReport> reports;
  if (!pred_px.empty()) {
    const auto n = static_cast<Index>(pred_px.size());
    const Image<std::uint8_t> p = Eigen::Map<const Image<std::uint8_t>>(pred_px.data(), 1, n);
    const Image<std::uint8_t> t = Eigen::Map<const Image<std::uint8_t>>(target_px.data(), 1, n);
    reports.push_back({"crop_cover", "accuracy", pixel_accuracy(p, t, Image<std::uint8_t>::Zero(1, n)), "fraction", n, {}});
  }
  for (Task task : {Task::Sowing, Task::Transplanting, Task::Harvesting}) {
    if (targets[task].empty()) continue;
    reports.push_back({std::string(to_string(task)), "rmse", rmse(targets[task], preds[task]), "days",
                       static_cast<Index>(targets[task].size()), {}});
  }
  if (!targets[Task::Yield].empty()) {
    const double r = rmse(targets[Task::Yield], preds[Task::Yield]);
    const double mu = mean(targets[Task::Yield]);
    const auto n = static_cast<Index>(targets[Task::Yield].size());
    reports.push_back({"yield", "rmse", r, "kg/acre", n, mu});
    reports.push_back({"yield", "error_pct", error_pct(r, mu), "percent", n, mu});
  }
  fs::create_directories(a.out);
  write_text_file(a.out / "metrics.json", reports_to_json(reports));
  const std::string table = reports_to_text(reports);
  write_text_file(a.out / "metrics.txt", table);
  out << "split " << a.split << ", " << (standard ? "standard" : "actual") << " season\n" << table;
  return 0;
}

struct InferArgs {
  fs::path scenes, models, out;
  std::optional<fs::path> calendar;
  std::string season;
  int year = 0;
  std::optional<int> resolution;
  std::vector<std::string> bands;
  Index patch = 32;
  Index tile = 32;
  bool exact_window = false;
  std::vector<std::string> external;
  int timeout_ms = 30000;
  int jobs = 1;
  bool no_png = false;
  bool overwrite = false;
};

int cmd_infer(const InferArgs& a, std::ostream& out) {
  if (a.patch < 1 || a.tile < 1) fail(ErrorCode::UsageError, "--patch and --tile must be >= 1");
  const SeasonCalendar calendar = load_calendar(a.calendar);
  calendar.window(a.season);
  PipelineConfig config;
  config.patch_h = config.patch_w = a.patch;
  config.tile_h = config.tile_w = a.tile;
  config.jobs = a.jobs;
  config.bands = parse_bands(a.bands);
  config.exact_window = a.exact_window;
  const ModelSet models = load_model_set(a.models, parse_external(a.external, a.timeout_ms));

  if (!fs::is_directory(a.scenes)) fail(ErrorCode::NoScenes, "scene directory " + a.scenes.string() + " does not exist");
  const std::vector<Scene> scenes = read_scene_dir(a.scenes);
  if (scenes.empty()) fail(ErrorCode::NoScenes, "no scenes in " + a.scenes.string());
  if (a.resolution) {
    // Same footprint as the finest scene, resampled to the requested spacing.
    const Scene* finest = &scenes.front();
    for (const Scene& s : scenes)
      if (s.geotransform.pixel_size_x < finest->geotransform.pixel_size_x) finest = &s;
    const GeoTransform& gt = finest->geotransform;
    const double res = *a.resolution;
    const double extent_x = gt.pixel_size_x * static_cast<double>(finest->width());
    const double extent_y = std::abs(gt.pixel_size_y) * static_cast<double>(finest->height());
    config.target = Grid{GeoTransform{gt.origin_x, gt.origin_y, res, gt.pixel_size_y < 0 ? -res : res},
                         static_cast<Index>(std::ceil(extent_y / res - 1e-9)),
                         static_cast<Index>(std::ceil(extent_x / res - 1e-9))};
  }

  const fs::path maps_path = a.out / "parameter_maps.cube";
  claim_outputs({maps_path, cube_sidecar_path(maps_path), a.out / "qa.json", a.out / "png"}, a.overwrite);
  const PipelineResult result = get_crop_parameters(std::span<const Scene>(scenes), {a.season, a.year}, calendar,
                                                    models, config);
  fs::create_directories(a.out);
  write_cube(parameter_maps_to_cube(result.maps), maps_path);
  write_text_file(a.out / "qa.json", qa_to_json(result.qa, result.maps));
  if (!a.no_png) write_parameter_pngs(result.maps, a.out / "png", "parameter_maps");
  out << "paddy pixels " << result.qa.paddy_pixels << " (" << result.qa.paddy_fraction * 100.0 << "%), repaired "
      << result.qa.repaired.size() << "; wrote " << maps_path.string() << "\n";
  return 0;
}

int dispatch(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  const std::vector<std::string> args = apply_config_overlay(raw_args);

  CLI::App app{"Season-standardized satellite data cubes and crop parameter maps", "cropcube"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "cropcube 1.0");

  std::optional<std::string> calendar_file;
  auto* cal = app.add_subcommand("calendar", "Print the standard season table");
  cal->add_option("--calendar", calendar_file, "JSON calendar replacing the built-in table");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth-gen", "Generate a synthetic region with known truth");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--seed", sa.seed, "Random seed");
  synth->add_option("--height", sa.height, "Region height in pixels")->check(CLI::PositiveNumber);
  synth->add_option("--width", sa.width, "Region width in pixels")->check(CLI::PositiveNumber);
  synth->add_option("--plots", sa.plots, "Number of plots")->check(CLI::PositiveNumber);
  synth->add_option("--paddy-fraction", sa.paddy_fraction, "Share of paddy plots")->check(CLI::Range(0.0, 1.0));
  synth->add_option("--season", sa.season, "Standard season name");
  synth->add_option("--year", sa.year, "Season year");
  synth->add_option("--noise", sa.noise, "Reflectance noise sigma")->check(CLI::NonNegativeNumber);
  synth->add_flag("--overwrite", sa.overwrite, "Replace existing outputs");

  BuildArgs ba;
  std::optional<std::string> build_calendar;
  auto* build = app.add_subcommand("build-cubes", "Build one season-standardized cube per plot");
  build->add_option("--scenes", ba.scenes, "Scene directory")->required()->check(CLI::ExistingDirectory);
  build->add_option("--plots", ba.plots, "Plot manifest (GeoJSON)")->required()->check(CLI::ExistingFile);
  build->add_option("--out", ba.out, "Output directory")->required();
  build->add_option("--resolution", ba.resolution, "Pixel size in metres")->check(CLI::IsMember({30, 10, 3}));
  build->add_option("--bands", ba.bands, "Band selection SAT:B1,B2 (repeatable)");
  build->add_flag("--exact-window", ba.exact_window, "Use the season's own duration as sequence length");
  build->add_option("--calendar", build_calendar, "JSON calendar replacing the built-in table");
  build->add_option("--jobs", ba.jobs, "Worker threads")->check(CLI::PositiveNumber);
  build->add_flag("--overwrite", ba.overwrite, "Replace existing outputs");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Fit the baseline models for every task");
  train->add_option("--samples", ta.samples, "Directory written by build-cubes")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", ta.out, "Model directory")->required();
  train->add_option("--seed", ta.seed, "Seed of the train/val/test split");
  train->add_option("--ridge-lambda", ta.ridge_lambda, "Ridge penalty")->check(CLI::NonNegativeNumber);
  train->add_option("--indices", ta.indices, "Vegetation indices used as features");
  train->add_flag("--raw-bands", ta.raw_bands, "Also use pooled raw bands as features");
  train->add_option("--pixels-per-plot", ta.pixels_per_plot, "Classifier pixels sampled per plot");
  auto* train_actual = train->add_flag("--actual-season", "Mask yield inputs to [sowing, harvesting] (default)");
  auto* train_standard = train->add_flag("--standard-season", ta.standard_season, "Feed yield the full standard season");
  train_actual->excludes(train_standard);
  train->add_flag("--overwrite", ta.overwrite, "Replace existing outputs");

  EvalArgs ea;
  auto* eval = app.add_subcommand("evaluate", "Report metrics on held-out plots");
  eval->add_option("--samples", ea.samples, "Directory written by build-cubes")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--models", ea.models, "Model directory")->required();
  eval->add_option("--out", ea.out, "Report directory")->required();
  eval->add_option("--split", ea.split, "Subset to evaluate")->check(CLI::IsMember({"test", "val", "train", "all"}));
  eval->add_option("--seed", ea.seed, "Split seed when the model directory has no training record");
  auto* eval_actual = eval->add_flag("--actual-season", ea.actual_season, "Mask yield inputs with predicted dates");
  auto* eval_standard = eval->add_flag("--standard-season", ea.standard_season, "Feed yield the full standard season");
  eval_actual->excludes(eval_standard);
  eval->add_option("--external-model", ea.external, "task=command or task=unix:/path (repeatable)");
  eval->add_option("--external-timeout-ms", ea.timeout_ms, "External model timeout")->check(CLI::PositiveNumber);
  eval->add_flag("--overwrite", ea.overwrite, "Replace existing outputs");

  InferArgs ia;
  std::optional<std::string> infer_calendar;
  auto* infer = app.add_subcommand("infer", "Produce crop parameter maps for a region");
  infer->add_option("--scenes", ia.scenes, "Scene directory")->required();
  infer->add_option("--models", ia.models, "Model directory")->required();
  infer->add_option("--out", ia.out, "Output directory")->required();
  infer->add_option("--season", ia.season, "Standard season name")->required();
  infer->add_option("--year", ia.year, "Season year")->required();
  infer->add_option("--resolution", ia.resolution, "Pixel size in metres")->check(CLI::IsMember({30, 10, 3}));
  infer->add_option("--bands", ia.bands, "Band selection SAT:B1,B2 (repeatable)");
  infer->add_option("--patch", ia.patch, "Side of the per-pixel patch");
  infer->add_option("--tile", ia.tile, "Side of the crop-cover tiles");
  infer->add_flag("--exact-window", ia.exact_window, "Use the season's own duration as sequence length");
  infer->add_option("--external-model", ia.external, "task=command or task=unix:/path (repeatable)");
  infer->add_option("--external-timeout-ms", ia.timeout_ms, "External model timeout")->check(CLI::PositiveNumber);
  infer->add_option("--calendar", infer_calendar, "JSON calendar replacing the built-in table");
  infer->add_option("--jobs", ia.jobs, "Worker threads")->check(CLI::PositiveNumber);
  infer->add_flag("--no-png", ia.no_png, "Skip PNG renderings");
  infer->add_flag("--overwrite", ia.overwrite, "Replace existing outputs");

  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "UsageError: " << msg << "\n";
    return 2;
  }

  if (cal->parsed()) {
    out << format_calendar(load_calendar(calendar_file ? std::optional<fs::path>(*calendar_file) : std::nullopt));
    return 0;
  }
  if (synth->parsed()) return cmd_synth(sa, out);
  if (build->parsed()) {
    if (build_calendar) ba.calendar = *build_calendar;
    return cmd_build(ba, out);
  }
  if (train->parsed()) return cmd_train(ta, out);
  if (eval->parsed()) return cmd_evaluate(ea, out);
  if (infer->parsed()) {
    if (infer_calendar) ia.calendar = *infer_calendar;
    return cmd_infer(ia, out);
  }
  return 2;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(args, out, err);
  } catch (const Error& e) {
    err << to_string(e.code()) << ": " << e.what() << "\n";
    return e.code() == ErrorCode::UsageError ? 2 : 1;
  } catch (const fs::filesystem_error& e) {
    err << "IoError: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "Error: " << e.what() << "\n";
    return 1;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace cropcube
