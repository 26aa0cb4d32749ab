#pragma once

#include "cropcube/core.hpp"
#include "cropcube/cube.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cropcube {

/// One georeferenced acquisition. Nodata pixels are NaN.
struct Scene {
  Satellite satellite = Satellite::S2;
  Date acquisition_date{};
  std::vector<std::string> bands;
  Tensor3f pixels;  // [C, H, W]
  GeoTransform geotransform;
  std::optional<float> nodata_value;

  Index channels() const { return pixels.dim(0); }
  Index height() const { return pixels.dim(1); }
  Index width() const { return pixels.dim(2); }
  Grid grid() const { return Grid{geotransform, height(), width()}; }
};

void check_scene_invariants(const Scene& scene);

struct PlotRecord {
  std::string plot_id;
  std::vector<std::array<double, 2>> polygon;
  std::string crop_type;
  std::optional<std::string> season_name;
  int year = 0;
  std::optional<Date> sowing_date;
  std::optional<Date> transplanting_date;
  std::optional<Date> harvesting_date;
  std::optional<double> yield_kg_per_acre;
  std::optional<double> area_acre;
};

/// Shoelace area of the polygon in square meters (unsigned).
double polygon_area(const std::vector<std::array<double, 2>>& polygon);
bool point_in_polygon(const std::vector<std::array<double, 2>>& polygon, double x, double y);
void check_plot_invariants(const PlotRecord& plot);

// ---------------------------------------------------------------------------
// GeoTIFF profile

enum class TiffCompression : std::uint16_t { None = 1, Deflate = 8 };
enum class TiffSampleType { U8, U16, F32 };

struct GeoTiffWriteOptions {
  TiffCompression compression = TiffCompression::None;
  TiffSampleType sample_type = TiffSampleType::F32;
  bool planar = true;              // band-sequential (PlanarConfiguration 2)
  std::optional<Index> tile_size;  // tiles of tile_size x tile_size, else strips
  Index rows_per_strip = 16;
};

/// Raw decode of a profile-conforming GeoTIFF.
struct GeoTiffImage {
  Tensor3f pixels;  // [C, H, W] as stored (no nodata mapping)
  GeoTransform geotransform;
  std::optional<float> nodata_value;
  std::optional<std::vector<std::string>> band_names;  // from ImageDescription JSON
};

GeoTiffImage decode_geotiff(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_geotiff(const Scene& scene, const GeoTiffWriteOptions& options = {});
void write_geotiff(const Scene& scene, const std::filesystem::path& path,
                   const GeoTiffWriteOptions& options = {});

// ---------------------------------------------------------------------------
// Scenes

/// Per-file metadata override, as stored in a directory's scenes.json.
struct SceneOverride {
  std::optional<Satellite> satellite;
  std::optional<Date> date;
  std::optional<std::vector<std::string>> bands;
};

using SceneManifest = std::map<std::string, SceneOverride>;

/// Canonical filename "{SAT}_{YYYYMMDD}.tif".
std::string scene_filename(Satellite sat, const Date& date);

/// Loads `scenes.json` from `dir` when present; empty manifest otherwise.
SceneManifest load_scene_manifest(const std::filesystem::path& dir);

/// Decodes a GeoTIFF (or a T == 1 cube container) into a Scene. Satellite and
/// date come from the filename convention unless `override` supplies them.
Scene read_scene(const std::filesystem::path& path, const SceneOverride* override = nullptr);

/// Every *.tif / *.cube scene in `dir`, sorted by filename, honoring scenes.json.
std::vector<Scene> read_scene_dir(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Plot manifest (GeoJSON)

std::vector<PlotRecord> read_plot_manifest(const std::filesystem::path& path);
std::vector<PlotRecord> parse_plot_manifest(const std::string& geojson);
std::string format_plot_manifest(const std::vector<PlotRecord>& plots);
void write_plot_manifest(const std::vector<PlotRecord>& plots, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Cube container

inline constexpr std::array<char, 4> kCubeMagic{'S', 'C', 'K', 'L'};
inline constexpr std::uint16_t kCubeFormatVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;
inline constexpr std::size_t kCubeHeaderBytes = 24;

struct CubeHeader {
  std::array<char, 4> magic = kCubeMagic;
  std::uint16_t format_version = kCubeFormatVersion;
  std::uint32_t t = 0, c = 0, h = 0, w = 0;
  std::uint8_t dtype_code = kDtypeF32;
  bool has_pixel_mask = false;
};

std::array<std::uint8_t, kCubeHeaderBytes> encode_cube_header(const CubeHeader& header);
CubeHeader decode_cube_header(const std::uint8_t* bytes, std::size_t size);

/// Sidecar path for a cube file: same stem, ".json" extension.
std::filesystem::path cube_sidecar_path(const std::filesystem::path& cube_path);

/// Serialized payload and sidecar text. NaN data values are written as 0 with
/// the pixel-mask bit cleared.
struct EncodedCube {
  std::vector<std::uint8_t> payload;
  std::string sidecar;
};

EncodedCube encode_cube(const DataCube& cube);
DataCube decode_cube(const std::vector<std::uint8_t>& payload, const std::string& sidecar);

void write_cube(const DataCube& cube, const std::filesystem::path& path);
DataCube read_cube(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace cropcube
