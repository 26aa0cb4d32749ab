#pragma once

#include "cropcube/core.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cropcube {

struct SeasonWindow {
  std::string name;
  int sowing_month_start = 1;
  int sowing_month_end = 1;
  int duration_days = 1;

  /// Day 1 of sowing_month_start in `year`. Ranges that wrap the year end
  /// (e.g. Dec - Jan) anchor on the December of `year`.
  Date standard_sowing_day(int year) const;
};

struct SeasonSpan {
  Date start;
  Date end;  // inclusive
};

class SeasonCalendar {
 public:
  SeasonCalendar() = default;
  /// Throws DuplicateSeasonName / NonPositiveDuration / InvalidConfig.
  explicit SeasonCalendar(std::vector<SeasonWindow> windows);

  const std::vector<SeasonWindow>& windows() const { return windows_; }
  int max_duration_days() const { return max_duration_days_; }

  /// Throws UnknownSeason.
  const SeasonWindow& window(std::string_view name) const;
  const SeasonWindow* find(std::string_view name) const;

 private:
  std::vector<SeasonWindow> windows_;
  int max_duration_days_ = 0;
};

/// Paddy calendar of the Cauvery Delta: eleven standard seasons.
const SeasonCalendar& builtin_calendar();

/// Built-in calendar when `path` is empty, otherwise a JSON list of
/// {name, sowing_month_start, sowing_month_end, duration_days}.
SeasonCalendar load_calendar(const std::optional<std::filesystem::path>& path = std::nullopt);
SeasonCalendar parse_calendar(const std::string& json_text);

SeasonSpan resolve_season(const SeasonCalendar& calendar, std::string_view name, int year);

/// Whole days from season_start to d; OutOfWindow unless 0 <= offset < sequence_length.
long day_offset(const Date& season_start, const Date& d, long sequence_length);

/// Plain-text rendering used by the `calendar` subcommand.
std::string format_calendar(const SeasonCalendar& calendar);

}  // namespace cropcube
