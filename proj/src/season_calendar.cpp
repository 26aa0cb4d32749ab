#include "cropcube/season_calendar.hpp"
#include "cropcube/raster_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cstdio>
#include <set>

namespace cropcube {

Date SeasonWindow::standard_sowing_day(int year) const {
  return Date{std::chrono::year{year}, std::chrono::month{static_cast<unsigned>(sowing_month_start)},
              std::chrono::day{1}};
}

SeasonCalendar::SeasonCalendar(std::vector<SeasonWindow> windows) : windows_(std::move(windows)) {
  std::set<std::string> names;
  for (const auto& w : windows_) {
    if (!names.insert(w.name).second) fail(ErrorCode::DuplicateSeasonName, "season '" + w.name + "' listed twice");
    if (w.duration_days <= 0)
      fail(ErrorCode::NonPositiveDuration, "season '" + w.name + "' has non-positive duration");
    if (w.sowing_month_start < 1 || w.sowing_month_start > 12 || w.sowing_month_end < 1 || w.sowing_month_end > 12)
      fail(ErrorCode::InvalidConfig, "season '" + w.name + "' has a sowing month outside 1-12");
    max_duration_days_ = std::max(max_duration_days_, w.duration_days);
  }
}

const SeasonWindow* SeasonCalendar::find(std::string_view name) const {
  auto it = std::find_if(windows_.begin(), windows_.end(), [&](const SeasonWindow& w) { return w.name == name; });
  return it == windows_.end() ? nullptr : &*it;
}

const SeasonWindow& SeasonCalendar::window(std::string_view name) const {
  const SeasonWindow* w = find(name);
  if (!w) fail(ErrorCode::UnknownSeason, "unknown season '" + std::string(name) + "'");
  return *w;
}

const SeasonCalendar& builtin_calendar() {
  static const SeasonCalendar calendar({
      {"Navarai", 12, 1, 120},
      {"Sornavari", 4, 5, 120},
      {"Early Kar", 4, 5, 120},
      {"Kar", 5, 6, 120},
      {"Kuruvai", 6, 7, 120},
      {"Early Samba", 7, 8, 135},
      {"Samba", 8, 8, 180},
      {"Late Samba", 9, 10, 135},
      {"Thaladi", 9, 10, 135},
      {"Late Pishanam", 9, 10, 135},
      {"Late Thaladi", 10, 11, 120},
  });
  return calendar;
}

SeasonCalendar parse_calendar(const std::string& json_text) {
  const auto doc = nlohmann::json::parse(json_text, nullptr, false);
  if (doc.is_discarded() || !doc.is_array()) fail(ErrorCode::InvalidConfig, "calendar config must be a JSON list");
  std::vector<SeasonWindow> windows;
  try {
    for (const auto& e : doc) {
      windows.push_back({e.at("name").get<std::string>(), e.at("sowing_month_start").get<int>(),
                         e.at("sowing_month_end").get<int>(), e.at("duration_days").get<int>()});
    }
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::InvalidConfig, std::string("malformed calendar entry: ") + ex.what());
  }
  return SeasonCalendar(std::move(windows));
}

SeasonCalendar load_calendar(const std::optional<std::filesystem::path>& path) {
  if (!path) return builtin_calendar();
  return parse_calendar(read_text_file(*path));
}

SeasonSpan resolve_season(const SeasonCalendar& calendar, std::string_view name, int year) {
  const SeasonWindow& w = calendar.window(name);
  const Date start = w.standard_sowing_day(year);
  return {start, add_days(start, w.duration_days - 1)};
}

long day_offset(const Date& season_start, const Date& d, long sequence_length) {
  const long off = days_between(season_start, d);
  if (off < 0 || off >= sequence_length)
    fail(ErrorCode::OutOfWindow, format_iso_date(d) + " is outside the " + std::to_string(sequence_length) +
                                     "-day window starting " + format_iso_date(season_start));
  return off;
}

std::string format_calendar(const SeasonCalendar& calendar) {
  static constexpr std::array<const char*, 12> kMonths{"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                                       "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
  std::string out;
  char line[128];
  std::snprintf(line, sizeof line, "%-14s %-10s %s\n", "season", "sowing", "duration_days");
  out += line;
  for (const auto& w : calendar.windows()) {
    std::string months = kMonths[static_cast<std::size_t>(w.sowing_month_start - 1)];
    if (w.sowing_month_end != w.sowing_month_start)
      months += std::string("-") + kMonths[static_cast<std::size_t>(w.sowing_month_end - 1)];
    std::snprintf(line, sizeof line, "%-14s %-10s %d\n", w.name.c_str(), months.c_str(), w.duration_days);
    out += line;
  }
  std::snprintf(line, sizeof line, "max_duration_days %d\n", calendar.max_duration_days());
  out += line;
  return out;
}

}  // namespace cropcube
