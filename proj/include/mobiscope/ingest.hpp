#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mobiscope/csv.hpp"
#include "mobiscope/geo.hpp"
#include "mobiscope/timeutil.hpp"

namespace mobiscope {

struct Ping {
  DeviceIdx device = 0;
  std::int64_t t = 0;  // UTC epoch seconds
  double lat = 0.0;
  double lon = 0.0;
  float accuracy_m = -1.0f;  // <0 means absent

  GeoPoint loc() const { return GeoPoint{lat, lon}; }
};

enum class RejectReason : int {
  missing_field,
  bad_timestamp,
  bad_number,
  lat_out_of_range,
  lon_out_of_range,
  bad_accuracy,
  out_of_window,
  duplicate,
  kCount
};

std::string_view reject_reason_name(RejectReason);

struct RejectReport {
  std::array<std::uint64_t, std::size_t(RejectReason::kCount)> counts{};
  std::uint64_t rows_in = 0;
  std::uint64_t emitted = 0;

  void add(RejectReason r) { ++counts[std::size_t(r)]; }
  std::uint64_t total_rejected() const {
    std::uint64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
  void merge(const RejectReport& o) {
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    rows_in += o.rows_in;
    emitted += o.emitted;
  }
};

struct ParseResult {
  std::vector<Ping> pings;  // valid pings, input order
  RejectReport report;
};

// Parses one ping CSV (`device_id,timestamp,lat,lon,accuracy_m`, optional
// header). Timestamps are ISO-8601 UTC or integer epoch seconds; the format
// is auto-detected from the first data row and then fixed for the file.
// Malformed rows and exact duplicate (device,t,lat,lon) observations are
// counted per reason, never silently dropped.
ParseResult parse_pings(const std::string& path, const StudyWindow& window, StringPool& devices);

// Streaming variant over an open reader (used to concatenate shards).
void parse_pings_into(CsvReader& reader, const StudyWindow& window, StringPool& devices,
                      ParseResult& out);

// Same result as parse_pings; plain (non-gz) files are split at line
// boundaries and parsed on several workers, with a sequential merge that
// preserves first-occurrence duplicate semantics and output order.
ParseResult parse_pings_parallel(const std::string& path, const StudyWindow& window,
                                 StringPool& devices, int threads);

struct DeviceFilterParams {
  int min_pings_per_month = 50;   // mean over observed months, inclusive
  int min_active_days = 10;       // per calendar year of appearance, inclusive
};

// Applies the device-quality rule: mean pings per observed month >= 50 and,
// in every calendar year the device appears, >= 10 distinct local-time active
// days. Input must be sorted by (device, t). Returns one flag per device idx.
std::vector<std::uint8_t> filter_devices(std::span<const Ping> pings, std::size_t n_devices,
                                         const StudyWindow& window, const DeviceFilterParams& p);

// Sorts by (device, t) and drops pings of failing devices; keeps relative
// order stable within a device.
void sort_pings(std::vector<Ping>& pings);

}  // namespace mobiscope
