#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "mobiscope/common.hpp"

namespace mobiscope {

// Days since 1970-01-01 for a proleptic Gregorian civil date.
std::int64_t days_from_civil(int y, int m, int d);
void civil_from_days(std::int64_t z, int& y, int& m, int& d);

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}

// Calendar month, encoded as year*12 + (month-1) so arithmetic is plain ints.
struct YearMonth {
  int code = 0;

  YearMonth() = default;
  explicit YearMonth(int c) : code(c) {}
  YearMonth(int y, int m) : code(y * 12 + (m - 1)) {}

  int year() const { return code >= 0 ? code / 12 : -((-code + 11) / 12); }
  int month() const { return code - year() * 12 + 1; }
  YearMonth next() const { return YearMonth(code + 1); }

  std::string str() const;                                  // "2018-07"
  static std::optional<YearMonth> parse(std::string_view);  // "YYYY-MM"

  auto operator<=>(const YearMonth&) const = default;
};

std::int64_t epoch_from_civil(int y, int mo, int d, int h, int mi, int s);

// Strict "YYYY-MM-DDTHH:MM:SSZ".
std::optional<std::int64_t> parse_iso_utc(std::string_view);
std::string format_iso_utc(std::int64_t t);

// Fixed-offset timezones: "America/Bogota" (-05:00, no DST since 1993),
// "UTC", "UTC±HH[:MM]", "±HH:MM". Returns offset minutes east of UTC.
int parse_tz_offset_minutes(std::string_view name);

// Civil-time helpers for a fixed UTC offset.
struct LocalClock {
  int offset_min = 0;

  std::int64_t local_secs(std::int64_t t) const { return t + std::int64_t(offset_min) * 60; }
  std::int64_t civil_day(std::int64_t t) const { return floor_div(local_secs(t), 86400); }
  int sec_of_day(std::int64_t t) const {
    return int(local_secs(t) - civil_day(t) * 86400);
  }
  YearMonth month_of_day(std::int64_t day) const {
    int y, m, d;
    civil_from_days(day, y, m, d);
    return YearMonth(y, m);
  }
  int year_of_day(std::int64_t day) const {
    int y, m, d;
    civil_from_days(day, y, m, d);
    return y;
  }

  // Night window [22:30, 05:30) local; a night belongs to the civil date of
  // its 22:30 anchor. Returns the anchor day, or nullopt outside the window.
  std::optional<std::int64_t> night_anchor_day(std::int64_t t) const {
    int s = sec_of_day(t);
    std::int64_t day = civil_day(t);
    if (s >= kNightStartSec) return day;
    if (s < kNightEndSec) return day - 1;
    return std::nullopt;
  }

  static constexpr int kNightStartSec = 22 * 3600 + 30 * 60;  // 22:30
  static constexpr int kNightEndSec = 5 * 3600 + 30 * 60;     // 05:30
};

// Inclusive month range evaluated in a fixed-offset local timezone.
struct StudyWindow {
  YearMonth first{};
  YearMonth last{};
  LocalClock clock{};
  std::int64_t utc_begin = 0;  // local first-of-month 00:00, as UTC epoch
  std::int64_t utc_end = 0;    // exclusive

  static StudyWindow make(YearMonth first, YearMonth last, int tz_offset_min);

  bool contains(std::int64_t t) const { return t >= utc_begin && t < utc_end; }
  int n_months() const { return last.code - first.code + 1; }
  int month_index(YearMonth ym) const { return ym.code - first.code; }
  bool has_month(YearMonth ym) const {
    return ym.code >= first.code && ym.code <= last.code;
  }
};

}  // namespace mobiscope
