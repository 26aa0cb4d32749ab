#include "cropcube/core.hpp"

#include <charconv>
#include <cstdio>

namespace cropcube {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::UnsupportedProfile: return "UnsupportedProfile";
    case ErrorCode::MalformedFilename: return "MalformedFilename";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::NotAPolygon: return "NotAPolygon";
    case ErrorCode::MissingPlotId: return "MissingPlotId";
    case ErrorCode::InvalidDate: return "InvalidDate";
    case ErrorCode::InvalidPlot: return "InvalidPlot";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::SidecarMissing: return "SidecarMissing";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::DuplicateSeasonName: return "DuplicateSeasonName";
    case ErrorCode::NonPositiveDuration: return "NonPositiveDuration";
    case ErrorCode::UnknownSeason: return "UnknownSeason";
    case ErrorCode::OutOfWindow: return "OutOfWindow";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::BandMismatch: return "BandMismatch";
    case ErrorCode::EmptyBandSelection: return "EmptyBandSelection";
    case ErrorCode::UnassignableSeason: return "UnassignableSeason";
    case ErrorCode::MissingBand: return "MissingBand";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::SeasonMismatch: return "SeasonMismatch";
    case ErrorCode::InvalidWindow: return "InvalidWindow";
    case ErrorCode::EmptyPlotMask: return "EmptyPlotMask";
    case ErrorCode::DegenerateSystem: return "DegenerateSystem";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::SingleClassData: return "SingleClassData";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::ExternalTimeout: return "ExternalTimeout";
    case ErrorCode::ProtocolError: return "ProtocolError";
    case ErrorCode::CenterOutOfBounds: return "CenterOutOfBounds";
    case ErrorCode::NoScenes: return "NoScenes";
    case ErrorCode::ModelMissing: return "ModelMissing";
    case ErrorCode::AllUnknown: return "AllUnknown";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::NonPositiveMean: return "NonPositiveMean";
    case ErrorCode::UnsortedBreakpoints: return "UnsortedBreakpoints";
    case ErrorCode::RegionTooSmall: return "RegionTooSmall";
    case ErrorCode::UsageError: return "UsageError";
    case ErrorCode::OutputExists: return "OutputExists";
  }
  return "Error";
}

std::string_view to_string(Satellite sat) noexcept {
  switch (sat) {
    case Satellite::L8: return "L8";
    case Satellite::S1: return "S1";
    case Satellite::S2: return "S2";
  }
  return "?";
}

std::optional<Satellite> parse_satellite(std::string_view text) noexcept {
  if (text == "L8") return Satellite::L8;
  if (text == "S1") return Satellite::S1;
  if (text == "S2") return Satellite::S2;
  return std::nullopt;
}

const std::vector<std::string>& default_bands(Satellite sat) {
  static const std::vector<std::string> l8{"UB", "B", "G", "R", "NIR", "SWIR1", "SWIR2", "THERMAL"};
  static const std::vector<std::string> s1{"VV", "VH", "ANGLE"};
  static const std::vector<std::string> s2{"B", "G", "R", "RE1", "RE2", "RE3", "NIR", "RE4", "SWIR1", "SWIR2"};
  switch (sat) {
    case Satellite::L8: return l8;
    case Satellite::S1: return s1;
    case Satellite::S2: return s2;
  }
  return s2;
}

namespace {

bool parse_digits(std::string_view text, int& out) {
  if (text.empty()) return false;
  for (char ch : text)
    if (ch < '0' || ch > '9') return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc{} && ptr == text.data() + text.size();
}

std::optional<Date> make_date(int y, int m, int d) {
  Date date{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)},
            std::chrono::day{static_cast<unsigned>(d)}};
  if (m < 1 || m > 12 || d < 1 || !date.ok()) return std::nullopt;
  return date;
}

}  // namespace

std::optional<Date> parse_iso_date(std::string_view text) noexcept {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  int y = 0, m = 0, d = 0;
  if (!parse_digits(text.substr(0, 4), y) || !parse_digits(text.substr(5, 2), m) ||
      !parse_digits(text.substr(8, 2), d))
    return std::nullopt;
  return make_date(y, m, d);
}

std::optional<Date> parse_compact_date(std::string_view text) noexcept {
  if (text.size() != 8) return std::nullopt;
  int y = 0, m = 0, d = 0;
  if (!parse_digits(text.substr(0, 4), y) || !parse_digits(text.substr(4, 2), m) ||
      !parse_digits(text.substr(6, 2), d))
    return std::nullopt;
  return make_date(y, m, d);
}

std::string format_iso_date(const Date& d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()),
                static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
  return buf;
}

std::string format_compact_date(const Date& d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d%02u%02u", static_cast<int>(d.year()),
                static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
  return buf;
}

void validate_geotransform(const GeoTransform& gt) {
  if (!(gt.pixel_size_x > 0.0) || gt.pixel_size_y == 0.0)
    fail(ErrorCode::CorruptFile, "geotransform needs pixel_size_x > 0 and pixel_size_y != 0");
}

}  // namespace cropcube
