#include "cropcube/raster_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

namespace cropcube {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// files

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
}

std::string read_text_file(const fs::path& path) {
  auto bytes = read_file_bytes(path);
  return {bytes.begin(), bytes.end()};
}

void write_text_file(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

// ---------------------------------------------------------------------------
// geometry

double polygon_area(const std::vector<std::array<double, 2>>& polygon) {
  double twice = 0.0;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = polygon[i];
    const auto& b = polygon[(i + 1) % n];
    twice += a[0] * b[1] - b[0] * a[1];
  }
  return std::abs(twice) / 2.0;
}

bool point_in_polygon(const std::vector<std::array<double, 2>>& polygon, double x, double y) {
  bool inside = false;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const auto& a = polygon[i];
    const auto& b = polygon[j];
    if ((a[1] > y) != (b[1] > y) && x < (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0])
      inside = !inside;
  }
  return inside;
}

void check_plot_invariants(const PlotRecord& plot) {
  if (plot.polygon.size() < 3 || polygon_area(plot.polygon) <= 0.0)
    fail(ErrorCode::InvalidPlot, "plot " + plot.plot_id + " polygon needs >= 3 vertices and nonzero area");
  std::vector<Date> dates;
  for (const auto& d : {plot.sowing_date, plot.transplanting_date, plot.harvesting_date})
    if (d) dates.push_back(*d);
  if (!std::is_sorted(dates.begin(), dates.end()))
    fail(ErrorCode::InvalidPlot, "plot " + plot.plot_id + " dates violate sowing <= transplanting <= harvesting");
  if (plot.yield_kg_per_acre && !(*plot.yield_kg_per_acre >= 0.0))
    fail(ErrorCode::InvalidPlot, "plot " + plot.plot_id + " has negative yield");
  if (plot.area_acre && !(*plot.area_acre > 0.0))
    fail(ErrorCode::InvalidPlot, "plot " + plot.plot_id + " has non-positive area");
}

// ---------------------------------------------------------------------------
// scenes

void check_scene_invariants(const Scene& scene) {
  if (static_cast<Index>(scene.bands.size()) != scene.channels())
    fail(ErrorCode::CorruptFile, "scene band list length differs from channel count");
  if (scene.height() < 1 || scene.width() < 1) fail(ErrorCode::CorruptFile, "scene has an empty grid");
  validate_geotransform(scene.geotransform);
  std::set<std::string> seen(scene.bands.begin(), scene.bands.end());
  if (seen.size() != scene.bands.size()) fail(ErrorCode::CorruptFile, "duplicate band names in scene");
}

std::string scene_filename(Satellite sat, const Date& date) {
  return std::string(to_string(sat)) + "_" + format_compact_date(date) + ".tif";
}

SceneManifest load_scene_manifest(const fs::path& dir) {
  SceneManifest manifest;
  const fs::path path = dir / "scenes.json";
  if (!fs::exists(path)) return manifest;
  const auto doc = json::parse(read_text_file(path), nullptr, false);
  if (!doc.is_object()) fail(ErrorCode::CorruptFile, "scenes.json must be an object keyed by filename");
  for (const auto& [name, entry] : doc.items()) {
    SceneOverride o;
    if (!entry.is_object()) fail(ErrorCode::CorruptFile, "scenes.json entry for " + name + " is not an object");
    if (entry.contains("satellite")) {
      o.satellite = parse_satellite(entry["satellite"].get<std::string>());
      if (!o.satellite) fail(ErrorCode::CorruptFile, "unknown satellite in scenes.json for " + name);
    }
    if (entry.contains("date")) {
      o.date = parse_iso_date(entry["date"].get<std::string>());
      if (!o.date) fail(ErrorCode::InvalidDate, "bad date in scenes.json for " + name);
    }
    if (entry.contains("bands")) o.bands = entry["bands"].get<std::vector<std::string>>();
    manifest[name] = std::move(o);
  }
  return manifest;
}

namespace {

struct FilenameMeta {
  std::optional<Satellite> satellite;
  std::optional<Date> date;
};

FilenameMeta parse_scene_filename(const fs::path& path) {
  const std::string stem = path.stem().string();
  FilenameMeta meta;
  const auto sep = stem.find('_');
  if (sep == std::string::npos) return meta;
  meta.satellite = parse_satellite(std::string_view(stem).substr(0, sep));
  meta.date = parse_compact_date(std::string_view(stem).substr(sep + 1));
  return meta;
}

bool is_cube_file(const fs::path& path) { return path.extension() == ".cube"; }
bool is_tiff_file(const fs::path& path) { return path.extension() == ".tif" || path.extension() == ".tiff"; }

}  // namespace

Scene read_scene(const fs::path& path, const SceneOverride* override) {
  const FilenameMeta meta = parse_scene_filename(path);
  Scene scene;
  const auto sat = (override && override->satellite) ? override->satellite : meta.satellite;
  const auto date = (override && override->date) ? override->date : meta.date;
  if (!sat || !date)
    fail(ErrorCode::MalformedFilename,
         "scene filename '" + path.filename().string() + "' does not follow {SAT}_{YYYYMMDD}");
  scene.satellite = *sat;
  scene.acquisition_date = *date;

  if (is_cube_file(path)) {
    DataCube cube = read_cube(path);
    if (cube.timesteps() != 1) fail(ErrorCode::UnsupportedProfile, "scene containers must have T == 1");
    scene.pixels = Tensor3f::Zero({cube.channels(), cube.height(), cube.width()});
    for (Index c = 0; c < cube.channels(); ++c) {
      auto dst = scene.pixels.plane(c);
      dst = cube.data.plane(0, c);
      if (cube.pixel_mask) dst = (cube.pixel_mask->plane(0) == 0).select(std::nanf(""), dst);
    }
    scene.bands = cube.band_names;
    scene.geotransform = cube.geotransform;
  } else {
    GeoTiffImage img = decode_geotiff(read_file_bytes(path));
    scene.pixels = std::move(img.pixels);
    scene.geotransform = img.geotransform;
    scene.nodata_value = img.nodata_value;
    if (img.band_names) {
      scene.bands = *img.band_names;
    } else if (static_cast<Index>(default_bands(scene.satellite).size()) == scene.channels()) {
      scene.bands = default_bands(scene.satellite);
    } else {
      for (Index c = 0; c < scene.channels(); ++c) scene.bands.push_back("B" + std::to_string(c + 1));
    }
    if (scene.nodata_value) {
      const float nd = *scene.nodata_value;
      auto& a = scene.pixels.array();
      if (!std::isnan(nd)) a = (a == nd).select(std::nanf(""), a);
    }
  }
  if (override && override->bands) {
    if (static_cast<Index>(override->bands->size()) != scene.channels())
      fail(ErrorCode::CorruptFile, "scenes.json band list length differs from the file for " + path.string());
    scene.bands = *override->bands;
  }
  check_scene_invariants(scene);
  return scene;
}

std::vector<Scene> read_scene_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorCode::IoError, dir.string() + " is not a directory");
  const SceneManifest manifest = load_scene_manifest(dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto& p = entry.path();
    if (entry.is_regular_file() && (is_tiff_file(p) || is_cube_file(p))) files.push_back(p);
  }
  std::sort(files.begin(), files.end());
  std::vector<Scene> scenes;
  scenes.reserve(files.size());
  for (const auto& p : files) {
    auto it = manifest.find(p.filename().string());
    scenes.push_back(read_scene(p, it == manifest.end() ? nullptr : &it->second));
  }
  return scenes;
}

// ---------------------------------------------------------------------------
// plot manifest

namespace {

std::optional<Date> optional_date(const json& props, const char* key, const std::string& plot_id) {
  if (!props.contains(key) || props[key].is_null()) return std::nullopt;
  if (!props[key].is_string()) fail(ErrorCode::InvalidDate, std::string(key) + " of plot " + plot_id + " is not a string");
  auto d = parse_iso_date(props[key].get<std::string>());
  if (!d)
    fail(ErrorCode::InvalidDate,
         std::string(key) + " '" + props[key].get<std::string>() + "' of plot " + plot_id + " is not ISO-8601");
  return d;
}

std::optional<double> optional_number(const json& props, const char* key, const std::string& plot_id) {
  if (!props.contains(key) || props[key].is_null()) return std::nullopt;
  if (!props[key].is_number()) fail(ErrorCode::InvalidPlot, std::string(key) + " of plot " + plot_id + " is not a number");
  return props[key].get<double>();
}

}  // namespace

std::vector<PlotRecord> parse_plot_manifest(const std::string& geojson) {
  const auto doc = json::parse(geojson, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || doc.value("type", "") != "FeatureCollection" ||
      !doc.contains("features") || !doc["features"].is_array())
    fail(ErrorCode::CorruptFile, "plot manifest is not a GeoJSON FeatureCollection");

  std::vector<PlotRecord> plots;
  for (const auto& feature : doc["features"]) {
    const json props = feature.value("properties", json::object());
    if (!props.contains("plot_id") || props["plot_id"].is_null())
      fail(ErrorCode::MissingPlotId, "feature without plot_id");
    PlotRecord plot;
    plot.plot_id = props["plot_id"].is_string() ? props["plot_id"].get<std::string>() : props["plot_id"].dump();

    const json geom = feature.value("geometry", json::object());
    if (geom.value("type", "") != "Polygon" || !geom.contains("coordinates") || !geom["coordinates"].is_array() ||
        geom["coordinates"].empty())
      fail(ErrorCode::NotAPolygon, "geometry of plot " + plot.plot_id + " is not a Polygon");
    for (const auto& v : geom["coordinates"][0]) {
      if (!v.is_array() || v.size() < 2 || !v[0].is_number() || !v[1].is_number())
        fail(ErrorCode::NotAPolygon, "malformed vertex in plot " + plot.plot_id);
      plot.polygon.push_back({v[0].get<double>(), v[1].get<double>()});
    }
    if (plot.polygon.size() > 1 && plot.polygon.front() == plot.polygon.back()) plot.polygon.pop_back();

    plot.crop_type = props.value("crop_type", std::string{});
    if (props.contains("season_name") && props["season_name"].is_string())
      plot.season_name = props["season_name"].get<std::string>();
    plot.sowing_date = optional_date(props, "sowing_date", plot.plot_id);
    plot.transplanting_date = optional_date(props, "transplanting_date", plot.plot_id);
    plot.harvesting_date = optional_date(props, "harvesting_date", plot.plot_id);
    plot.yield_kg_per_acre = optional_number(props, "yield_kg_per_acre", plot.plot_id);
    plot.area_acre = optional_number(props, "area_acre", plot.plot_id);
    if (props.contains("year") && props["year"].is_number_integer()) {
      plot.year = props["year"].get<int>();
    } else if (plot.sowing_date) {
      plot.year = static_cast<int>(plot.sowing_date->year());
    } else {
      fail(ErrorCode::InvalidPlot, "plot " + plot.plot_id + " has no year");
    }
    check_plot_invariants(plot);
    plots.push_back(std::move(plot));
  }
  return plots;
}

std::vector<PlotRecord> read_plot_manifest(const fs::path& path) {
  return parse_plot_manifest(read_text_file(path));
}

std::string format_plot_manifest(const std::vector<PlotRecord>& plots) {
  json features = json::array();
  for (const auto& p : plots) {
    json ring = json::array();
    for (const auto& v : p.polygon) ring.push_back({v[0], v[1]});
    if (!p.polygon.empty()) ring.push_back({p.polygon.front()[0], p.polygon.front()[1]});
    json props = {{"plot_id", p.plot_id}, {"crop_type", p.crop_type}, {"year", p.year}};
    if (p.season_name) props["season_name"] = *p.season_name;
    if (p.sowing_date) props["sowing_date"] = format_iso_date(*p.sowing_date);
    if (p.transplanting_date) props["transplanting_date"] = format_iso_date(*p.transplanting_date);
    if (p.harvesting_date) props["harvesting_date"] = format_iso_date(*p.harvesting_date);
    if (p.yield_kg_per_acre) props["yield_kg_per_acre"] = *p.yield_kg_per_acre;
    if (p.area_acre) props["area_acre"] = *p.area_acre;
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "Polygon"}, {"coordinates", json::array({ring})}}},
                        {"properties", props}});
  }
  return json{{"type", "FeatureCollection"}, {"features", features}}.dump(1);
}

void write_plot_manifest(const std::vector<PlotRecord>& plots, const fs::path& path) {
  write_text_file(path, format_plot_manifest(plots));
}

// ---------------------------------------------------------------------------
// cube container

namespace {

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int n) {
  for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::uint8_t* p, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::array<std::uint8_t, kCubeHeaderBytes> encode_cube_header(const CubeHeader& header) {
  std::vector<std::uint8_t> out;
  for (char ch : header.magic) out.push_back(static_cast<std::uint8_t>(ch));
  put_le(out, header.format_version, 2);
  for (std::uint32_t d : {header.t, header.c, header.h, header.w}) put_le(out, d, 4);
  out.push_back(header.dtype_code);
  out.push_back(header.has_pixel_mask ? 1 : 0);
  std::array<std::uint8_t, kCubeHeaderBytes> bytes{};
  std::copy(out.begin(), out.end(), bytes.begin());
  return bytes;
}

CubeHeader decode_cube_header(const std::uint8_t* bytes, std::size_t size) {
  if (size < kCubeHeaderBytes) fail(ErrorCode::TruncatedPayload, "cube file shorter than its header");
  CubeHeader h;
  std::copy(bytes, bytes + 4, h.magic.begin());
  if (h.magic != kCubeMagic) fail(ErrorCode::BadMagic, "cube magic is not SCKL");
  h.format_version = static_cast<std::uint16_t>(get_le(bytes + 4, 2));
  if (h.format_version != kCubeFormatVersion)
    fail(ErrorCode::VersionMismatch, "cube format version " + std::to_string(h.format_version) + " unsupported");
  h.t = static_cast<std::uint32_t>(get_le(bytes + 6, 4));
  h.c = static_cast<std::uint32_t>(get_le(bytes + 10, 4));
  h.h = static_cast<std::uint32_t>(get_le(bytes + 14, 4));
  h.w = static_cast<std::uint32_t>(get_le(bytes + 18, 4));
  h.dtype_code = bytes[22];
  if (bytes[23] > 1) fail(ErrorCode::CorruptFile, "pixel-mask flag must be 0 or 1");
  h.has_pixel_mask = bytes[23] == 1;
  if (h.dtype_code != kDtypeF32) fail(ErrorCode::CorruptFile, "dtype code must be 1 (f32 LE)");
  if (h.t == 0 || h.c == 0 || h.h == 0 || h.w == 0) fail(ErrorCode::CorruptFile, "cube dims must be >= 1");
  return h;
}

fs::path cube_sidecar_path(const fs::path& cube_path) {
  fs::path p = cube_path;
  return p.replace_extension(".json");
}

EncodedCube encode_cube(const DataCube& input) {
  check_cube_invariants(input);
  DataCube cube = input;
  auto& values = cube.data.array();
  if (values.isNaN().any()) {
    if (!cube.pixel_mask) {
      cube.pixel_mask = Tensor3u8::Zero({cube.timesteps(), cube.height(), cube.width()});
      for (Index t = 0; t < cube.timesteps(); ++t)
        cube.pixel_mask->plane(t).setConstant(cube.timestep_mask[static_cast<std::size_t>(t)]);
    }
    for (Index t = 0; t < cube.timesteps(); ++t)
      for (Index c = 0; c < cube.channels(); ++c) {
        auto p = cube.data.plane(t, c);
        cube.pixel_mask->plane(t) = p.isNaN().select(std::uint8_t{0}, cube.pixel_mask->plane(t));
        p = p.isNaN().select(0.0f, p);
      }
  }

  CubeHeader header;
  header.t = static_cast<std::uint32_t>(cube.timesteps());
  header.c = static_cast<std::uint32_t>(cube.channels());
  header.h = static_cast<std::uint32_t>(cube.height());
  header.w = static_cast<std::uint32_t>(cube.width());
  header.has_pixel_mask = cube.pixel_mask.has_value();

  EncodedCube out;
  const auto hb = encode_cube_header(header);
  out.payload.assign(hb.begin(), hb.end());
  out.payload.reserve(kCubeHeaderBytes + static_cast<std::size_t>(values.size()) * 4);
  for (Index i = 0; i < values.size(); ++i) put_le(out.payload, std::bit_cast<std::uint32_t>(values[i]), 4);
  if (cube.pixel_mask) {
    const auto& m = cube.pixel_mask->array();
    out.payload.insert(out.payload.end(), m.data(), m.data() + m.size());
  }

  json side;
  side["format_version"] = kCubeFormatVersion;
  side["dims"] = {header.t, header.c, header.h, header.w};
  side["band_names"] = cube.band_names;
  side["channel_sources"] = cube.channel_sources;
  json sats = json::array();
  for (Satellite s : cube.satellite_order) sats.push_back(std::string(to_string(s)));
  side["satellite_order"] = sats;
  side["season_name"] = cube.season_name;
  side["year"] = cube.year;
  side["sequence_length_days"] = header.t;
  const auto& gt = cube.geotransform;
  side["geotransform"] = {gt.origin_x, gt.origin_y, gt.pixel_size_x, gt.pixel_size_y};
  side["plot_id"] = cube.plot_id ? json(*cube.plot_id) : json(nullptr);
  side["timestep_mask"] = cube.timestep_mask;
  out.sidecar = side.dump(1) + "\n";
  return out;
}

DataCube decode_cube(const std::vector<std::uint8_t>& payload, const std::string& sidecar) {
  const CubeHeader h = decode_cube_header(payload.data(), payload.size());
  const std::uint64_t n = std::uint64_t{h.t} * h.c * h.h * h.w;
  const std::uint64_t mask_bytes = h.has_pixel_mask ? std::uint64_t{h.t} * h.h * h.w : 0;
  const std::uint64_t expected = kCubeHeaderBytes + 4 * n + mask_bytes;
  if (payload.size() < expected)
    fail(ErrorCode::TruncatedPayload, "cube payload has " + std::to_string(payload.size()) + " bytes, expected " +
                                          std::to_string(expected));
  if (payload.size() > expected) fail(ErrorCode::CorruptFile, "trailing bytes after cube payload");

  DataCube cube;
  cube.data = Tensor4f::Zero({h.t, h.c, h.h, h.w});
  auto& values = cube.data.array();
  const std::uint8_t* p = payload.data() + kCubeHeaderBytes;
  for (Index i = 0; i < values.size(); ++i)
    values[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(p + 4 * i, 4)));
  if (h.has_pixel_mask) {
    cube.pixel_mask = Tensor3u8::Zero({h.t, h.h, h.w});
    std::copy(p + 4 * n, p + 4 * n + mask_bytes, cube.pixel_mask->data());
  }

  const auto side = json::parse(sidecar, nullptr, false);
  if (side.is_discarded() || !side.is_object()) fail(ErrorCode::CorruptFile, "cube sidecar is not a JSON object");
  try {
    cube.band_names = side.at("band_names").get<std::vector<std::string>>();
    cube.channel_sources = side.at("channel_sources").get<std::vector<std::string>>();
    for (const auto& s : side.at("satellite_order")) {
      auto sat = parse_satellite(s.get<std::string>());
      if (!sat) fail(ErrorCode::CorruptFile, "unknown satellite in cube sidecar");
      cube.satellite_order.push_back(*sat);
    }
    cube.season_name = side.at("season_name").get<std::string>();
    cube.year = side.at("year").get<int>();
    const auto gt = side.at("geotransform").get<std::vector<double>>();
    if (gt.size() != 4) fail(ErrorCode::CorruptFile, "sidecar geotransform needs 4 numbers");
    cube.geotransform = {gt[0], gt[1], gt[2], gt[3]};
    if (!side.at("plot_id").is_null()) cube.plot_id = side.at("plot_id").get<std::string>();
    cube.timestep_mask = side.at("timestep_mask").get<std::vector<std::uint8_t>>();
    const auto dims = side.at("dims").get<std::vector<std::uint32_t>>();
    if (dims != std::vector<std::uint32_t>{h.t, h.c, h.h, h.w})
      fail(ErrorCode::CorruptFile, "sidecar dims disagree with the container header");
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptFile, std::string("malformed cube sidecar: ") + e.what());
  }
  check_cube_invariants(cube);
  return cube;
}

void write_cube(const DataCube& cube, const fs::path& path) {
  if (path.extension() == ".json") fail(ErrorCode::InvalidConfig, "cube path must not use the sidecar extension");
  const EncodedCube enc = encode_cube(cube);
  write_file_bytes(path, enc.payload);
  write_text_file(cube_sidecar_path(path), enc.sidecar);
}

DataCube read_cube(const fs::path& path) {
  const fs::path side = cube_sidecar_path(path);
  auto payload = read_file_bytes(path);
  if (!fs::exists(side)) fail(ErrorCode::SidecarMissing, "sidecar " + side.string() + " not found");
  return decode_cube(payload, read_text_file(side));
}

}  // namespace cropcube
