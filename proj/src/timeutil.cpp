#include "mobiscope/timeutil.hpp"

#include <charconv>
#include <cstdio>

namespace mobiscope {

std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = unsigned(y - era * 400);
  const unsigned doy = (153u * unsigned(m + (m > 2 ? -3 : 9)) + 2u) / 5u + unsigned(d) - 1u;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + std::int64_t(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = unsigned(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yy = std::int64_t(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = int(doy - (153 * mp + 2) / 5 + 1);
  m = int(mp + (mp < 10 ? 3 : -9));
  y = int(yy + (m <= 2));
}

std::string YearMonth::str() const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02d", year(), month());
  return buf;
}

namespace {

bool parse_int(std::string_view s, int& out) {
  auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc{} && r.ptr == s.data() + s.size();
}

}  // namespace

std::optional<YearMonth> YearMonth::parse(std::string_view s) {
  if (s.size() != 7 || s[4] != '-') return std::nullopt;
  int y, m;
  if (!parse_int(s.substr(0, 4), y) || !parse_int(s.substr(5, 2), m)) return std::nullopt;
  if (m < 1 || m > 12) return std::nullopt;
  return YearMonth(y, m);
}

std::int64_t epoch_from_civil(int y, int mo, int d, int h, int mi, int s) {
  return days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + s;
}

std::optional<std::int64_t> parse_iso_utc(std::string_view s) {
  // YYYY-MM-DDTHH:MM:SSZ
  if (s.size() != 20 || s[4] != '-' || s[7] != '-' || s[10] != 'T' || s[13] != ':' ||
      s[16] != ':' || s[19] != 'Z')
    return std::nullopt;
  int y, mo, d, h, mi, sec;
  if (!parse_int(s.substr(0, 4), y) || !parse_int(s.substr(5, 2), mo) ||
      !parse_int(s.substr(8, 2), d) || !parse_int(s.substr(11, 2), h) ||
      !parse_int(s.substr(14, 2), mi) || !parse_int(s.substr(17, 2), sec))
    return std::nullopt;
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || sec > 60) return std::nullopt;
  return epoch_from_civil(y, mo, d, h, mi, sec);
}

std::string format_iso_utc(std::int64_t t) {
  std::int64_t day = floor_div(t, 86400);
  int rem = int(t - day * 86400);
  int y, m, d;
  civil_from_days(day, y, m, d);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02dZ", y, m, d, rem / 3600,
                (rem / 60) % 60, rem % 60);
  return buf;
}

int parse_tz_offset_minutes(std::string_view name) {
  if (name == "America/Bogota") return -300;
  if (name == "UTC" || name == "utc" || name.empty()) return 0;
  std::string_view s = name;
  if (s.rfind("UTC", 0) == 0) s.remove_prefix(3);
  if (s.empty()) return 0;
  int sign = s[0] == '-' ? -1 : 1;
  if (s[0] == '+' || s[0] == '-') s.remove_prefix(1);
  int h = 0, m = 0;
  auto colon = s.find(':');
  if (colon == std::string_view::npos) {
    if (!parse_int(s, h)) throw ConfigError("bad timezone: " + std::string(name));
  } else {
    if (!parse_int(s.substr(0, colon), h) || !parse_int(s.substr(colon + 1), m))
      throw ConfigError("bad timezone: " + std::string(name));
  }
  if (h > 14 || m > 59) throw ConfigError("bad timezone: " + std::string(name));
  return sign * (h * 60 + m);
}

StudyWindow StudyWindow::make(YearMonth first, YearMonth last, int tz_offset_min) {
  if (last < first) throw ConfigError("study window end precedes start");
  StudyWindow w;
  w.first = first;
  w.last = last;
  w.clock = LocalClock{tz_offset_min};
  auto local_begin = epoch_from_civil(first.year(), first.month(), 1, 0, 0, 0);
  auto after = last.next();
  auto local_end = epoch_from_civil(after.year(), after.month(), 1, 0, 0, 0);
  w.utc_begin = local_begin - std::int64_t(tz_offset_min) * 60;
  w.utc_end = local_end - std::int64_t(tz_offset_min) * 60;
  return w;
}

}  // namespace mobiscope
