#pragma once

#include "cropcube/error.hpp"
#include "cropcube/tensor.hpp"

#include <chrono>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cropcube {

enum class Satellite { L8, S1, S2 };

std::string_view to_string(Satellite sat) noexcept;
std::optional<Satellite> parse_satellite(std::string_view text) noexcept;

/// Canonical band names each sensor exposes, in default storage order.
const std::vector<std::string>& default_bands(Satellite sat);

using Date = std::chrono::year_month_day;

/// Strict ISO-8601 calendar date, "YYYY-MM-DD".
std::optional<Date> parse_iso_date(std::string_view text) noexcept;
std::string format_iso_date(const Date& d);

/// Compact "YYYYMMDD" form used by scene filenames.
std::optional<Date> parse_compact_date(std::string_view text) noexcept;
std::string format_compact_date(const Date& d);

inline long days_between(const Date& from, const Date& to) {
  return (std::chrono::sys_days{to} - std::chrono::sys_days{from}).count();
}

inline Date add_days(const Date& d, long n) {
  return Date{std::chrono::sys_days{d} + std::chrono::days{n}};
}

/// North-up affine georeferencing in projected meters. Pixel (row, col) has
/// its upper-left corner at (origin_x + col * pixel_size_x,
/// origin_y + row * pixel_size_y).
struct GeoTransform {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double pixel_size_x = 1.0;
  double pixel_size_y = -1.0;

  double center_x(Index col) const { return origin_x + (static_cast<double>(col) + 0.5) * pixel_size_x; }
  double center_y(Index row) const { return origin_y + (static_cast<double>(row) + 0.5) * pixel_size_y; }

  friend bool operator==(const GeoTransform&, const GeoTransform&) = default;
};

/// A georeferenced raster footprint.
struct Grid {
  GeoTransform transform;
  Index height = 0;
  Index width = 0;

  friend bool operator==(const Grid&, const Grid&) = default;
};

void validate_geotransform(const GeoTransform& gt);

}  // namespace cropcube
