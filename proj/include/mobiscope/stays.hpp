#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mobiscope/geo.hpp"
#include "mobiscope/ingest.hpp"
#include "mobiscope/timeutil.hpp"

namespace mobiscope {

struct Stay {
  DeviceIdx device = 0;
  std::int64_t start = 0;
  std::int64_t end = 0;
  double lat = 0.0;  // centroid
  double lon = 0.0;
  std::uint32_t ping_count = 0;

  // Annotations filled by the pipeline; sentinel values mean "absent".
  std::int32_t month_idx = -1;           // study-window month of local start date
  std::uint64_t hex = kNoHex;
  std::int8_t stratum = 0;               // 0 = outside all zones
  std::int16_t region = -1;              // index into region table
  std::int32_t poi = -1;                 // index into POI table
  std::uint8_t is_trip = 0;              // > outside-home radius from that month's home

  static constexpr std::uint64_t kNoHex = ~0ull;
  GeoPoint centroid() const { return GeoPoint{lat, lon}; }
};

struct StayParams {
  double radius_m = 100.0;
  std::int64_t min_duration_s = 5 * 60;
  std::int64_t max_duration_s = 24 * 3600;
};

// Greedy sequential clustering over one device's time-ordered pings: a ping
// joins the open cluster while it stays within radius_m of the running
// centroid and the cluster keeps satisfying its own radius invariant; clusters
// longer than max_duration_s are cut there and the remainder starts fresh.
// Emitted stays are time-disjoint, ordered, and re-checkable against the raw
// pings (every member within radius_m of the final centroid).
std::vector<Stay> detect_stays(std::span<const Ping> pings, const StayParams& p);

// Runs detect_stays per device over a (device, t)-sorted span, in parallel.
std::vector<Stay> detect_stays_all(std::span<const Ping> pings, const StayParams& p, int threads);

struct HomeLocation {
  DeviceIdx device = 0;
  std::int32_t month_idx = -1;
  double lat = 0.0;
  double lon = 0.0;
  std::uint32_t night_ping_count = 0;
  std::uint64_t hex = Stay::kNoHex;

  GeoPoint loc() const { return GeoPoint{lat, lon}; }
};

struct HomeParams {
  double cluster_radius_m = 100.0;
  int min_night_pings = 5;
};

// Per device-month: clusters night pings ([22:30, 05:30) local, attributed to
// the month of the 22:30 anchor) into running-centroid clusters and keeps the
// modal one. Count ties break toward the cluster whose first ping is earliest.
// Device-months whose modal cluster has fewer than min_night_pings yield
// nothing. Input must be (device, t)-sorted.
std::vector<HomeLocation> infer_homes(std::span<const Ping> pings, const StudyWindow& window,
                                      const HomeParams& p, int threads);

// Marks stays farther than outside_radius_m from the month's home as trips.
// Stays in months without a home are left unmarked (no trips that month).
// Both spans must be sorted by device (stays additionally by start).
void mark_trips(std::span<Stay> stays, std::span<const HomeLocation> homes,
                double outside_radius_m);

// Nearest POI within radius (ties toward the smaller poi_id), else nullopt.
inline std::optional<std::size_t> match_poi(const GeoPoint& stay_centroid, const PoiIndex& index,
                                            double radius_m) {
  return index.nearest_within(stay_centroid, radius_m);
}

}  // namespace mobiscope
