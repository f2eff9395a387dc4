#include "mobiscope/timeutil.hpp"

#include "doctest.h"

using namespace mobiscope;

TEST_CASE("civil date round trips") {
  CHECK(days_from_civil(1970, 1, 1) == 0);
  CHECK(days_from_civil(2018, 7, 1) == 17713);
  for (std::int64_t d : {-1000, 0, 17713, 20000, 40000}) {
    int y, m, day;
    civil_from_days(d, y, m, day);
    CHECK(days_from_civil(y, m, day) == d);
  }
}

TEST_CASE("iso parse and format") {
  auto t = parse_iso_utc("2018-12-01T13:45:02Z");
  REQUIRE(t.has_value());
  CHECK(format_iso_utc(*t) == "2018-12-01T13:45:02Z");
  CHECK(!parse_iso_utc("2018-12-01 13:45:02"));
  CHECK(!parse_iso_utc("2018-13-01T13:45:02Z"));
  CHECK(!parse_iso_utc("not a time"));
}

TEST_CASE("year month parsing") {
  auto ym = YearMonth::parse("2018-07");
  REQUIRE(ym.has_value());
  CHECK(ym->year() == 2018);
  CHECK(ym->month() == 7);
  CHECK(ym->str() == "2018-07");
  CHECK(YearMonth(2018, 12).next() == YearMonth(2019, 1));
  CHECK(!YearMonth::parse("2018/07"));
  CHECK(!YearMonth::parse("2018-13"));
}

TEST_CASE("timezone offsets") {
  CHECK(parse_tz_offset_minutes("America/Bogota") == -300);
  CHECK(parse_tz_offset_minutes("UTC") == 0);
  CHECK(parse_tz_offset_minutes("UTC-05:00") == -300);
  CHECK(parse_tz_offset_minutes("+03:30") == 210);
  CHECK_THROWS_AS(parse_tz_offset_minutes("UTC-99"), ConfigError);
}

TEST_CASE("night window boundaries in local time") {
  LocalClock bogota{-300};
  // 2018-07-10 22:30:00 local = 2018-07-11 03:30:00 UTC.
  std::int64_t at_2230 = epoch_from_civil(2018, 7, 11, 3, 30, 0);
  auto anchor = bogota.night_anchor_day(at_2230);
  REQUIRE(anchor.has_value());
  CHECK(*anchor == days_from_civil(2018, 7, 10));

  // One second before 22:30 is not night.
  CHECK(!bogota.night_anchor_day(at_2230 - 1).has_value());

  // 05:29:59 local next morning anchors to the previous day; 05:30:00 does not.
  std::int64_t at_0530 = epoch_from_civil(2018, 7, 11, 10, 30, 0);
  CHECK(bogota.night_anchor_day(at_0530 - 1).has_value());
  CHECK(*bogota.night_anchor_day(at_0530 - 1) == days_from_civil(2018, 7, 10));
  CHECK(!bogota.night_anchor_day(at_0530).has_value());
}

TEST_CASE("study window bounds respect the local offset") {
  auto w = StudyWindow::make(YearMonth(2018, 7), YearMonth(2019, 6), -300);
  CHECK(w.n_months() == 12);
  // Local 2018-07-01 00:00 = 05:00 UTC.
  CHECK(w.utc_begin == epoch_from_civil(2018, 7, 1, 5, 0, 0));
  CHECK(w.contains(w.utc_begin));
  CHECK(!w.contains(w.utc_begin - 1));
  CHECK(!w.contains(w.utc_end));
  CHECK(w.month_index(YearMonth(2018, 12)) == 5);
  CHECK(w.has_month(YearMonth(2019, 6)));
  CHECK(!w.has_month(YearMonth(2019, 7)));
}
