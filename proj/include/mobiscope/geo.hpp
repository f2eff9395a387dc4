#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mobiscope/common.hpp"

namespace mobiscope {

inline constexpr double kEarthRadiusM = 6'371'000.0;
inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr double kDegToRad = kPi / 180.0;
inline constexpr double kMetersPerDegLat = kEarthRadiusM * kDegToRad;  // ~111194.93

struct GeoPoint {
  double lat = 0.0;  // degrees WGS84, [-90, 90]
  double lon = 0.0;  // degrees WGS84, [-180, 180]
};

inline bool valid_point(const GeoPoint& p) {
  return std::isfinite(p.lat) && std::isfinite(p.lon) && p.lat >= -90.0 && p.lat <= 90.0 &&
         p.lon >= -180.0 && p.lon <= 180.0;
}

// Great-circle (haversine) distance on a sphere of radius 6,371,000 m.
inline double geodesic_distance(const GeoPoint& a, const GeoPoint& b) {
  double phi1 = a.lat * kDegToRad;
  double phi2 = b.lat * kDegToRad;
  double s1 = std::sin((b.lat - a.lat) * kDegToRad * 0.5);
  double s2 = std::sin((b.lon - a.lon) * kDegToRad * 0.5);
  double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  double root = std::sqrt(h);
  return 2.0 * kEarthRadiusM * std::asin(root < 1.0 ? root : 1.0);
}

// Local planar coordinates, meters. +x east, +y north.
struct LocalXY {
  double x = 0.0;
  double y = 0.0;
};

// Azimuthal-equidistant projection about a fixed origin (spherical).
LocalXY aeq_forward(const GeoPoint& origin, const GeoPoint& p);
GeoPoint aeq_inverse(const GeoPoint& origin, const LocalXY& xy);

// --- Stations and buffers ---------------------------------------------------

enum class Line : std::uint8_t { treatment, control };

std::string_view line_name(Line l);
std::optional<Line> parse_line(std::string_view);

struct Station {
  std::string station_id;
  GeoPoint location;
  Line line = Line::treatment;
  double buffer_m = 500.0;
};

// Nearest station whose distance is <= its buffer (closed interval).
// Equal distances break toward the lexicographically smaller station_id.
std::optional<std::size_t> in_buffer(const GeoPoint& p, std::span<const Station> stations);

// --- Polygon layers ----------------------------------------------------------

using Ring = std::vector<GeoPoint>;  // closed or open; treated as cyclic

struct StratumZone {
  std::string zone_id;
  std::vector<Ring> rings;  // outer ring plus holes, even-odd semantics
  int stratum = 0;          // 1..6
};

struct Region {
  std::string region_id;
  std::vector<Ring> rings;
};

// Even-odd rule over all rings; boundary points resolve by the crossing
// parity, callers break zone ties by file order.
bool point_in_polygon(const GeoPoint& p, std::span<const Ring> rings);

std::optional<int> stratum_lookup(const GeoPoint& p, std::span<const StratumZone> zones);
std::optional<std::size_t> region_lookup(const GeoPoint& p, std::span<const Region> regions);

struct BBox {
  double min_lat = 1e9, max_lat = -1e9, min_lon = 1e9, max_lon = -1e9;
  void grow(const GeoPoint& p) {
    min_lat = p.lat < min_lat ? p.lat : min_lat;
    max_lat = p.lat > max_lat ? p.lat : max_lat;
    min_lon = p.lon < min_lon ? p.lon : min_lon;
    max_lon = p.lon > max_lon ? p.lon : max_lon;
  }
  bool contains(const GeoPoint& p) const {
    return p.lat >= min_lat && p.lat <= max_lat && p.lon >= min_lon && p.lon <= max_lon;
  }
};

BBox rings_bbox(std::span<const Ring> rings);

// Bounding-box prefilter over a polygon layer; first-match-in-order semantics
// identical to the plain lookups.
class PolygonLayerIndex {
 public:
  PolygonLayerIndex() = default;
  static PolygonLayerIndex over_zones(std::span<const StratumZone> zones);
  static PolygonLayerIndex over_regions(std::span<const Region> regions);

  // Index of the first polygon containing p, in layer order.
  std::optional<std::size_t> first_hit(const GeoPoint& p) const;

 private:
  std::vector<BBox> boxes_;
  std::vector<std::span<const Ring>> rings_;
};

// --- Hexagonal grid ----------------------------------------------------------

struct GridSpec {
  GeoPoint origin;
  double side_m = 100.0;
};

struct HexCellRef {
  std::int32_t q = 0;
  std::int32_t r = 0;
  auto operator<=>(const HexCellRef&) const = default;
};

inline std::uint64_t hex_key(HexCellRef c) {
  return (std::uint64_t(std::uint32_t(c.q)) << 32) | std::uint64_t(std::uint32_t(c.r));
}
inline HexCellRef hex_from_key(std::uint64_t k) {
  return HexCellRef{std::int32_t(std::uint32_t(k >> 32)), std::int32_t(std::uint32_t(k))};
}

// Flat-top hexagons of fixed side length laid out in the azimuthal-equidistant
// plane about the grid origin. Points farther than 100 km from the origin are
// rejected (projection distortion guard).
class HexGrid {
 public:
  explicit HexGrid(GridSpec spec) : spec_(spec) {}

  const GridSpec& spec() const { return spec_; }
  HexCellRef assign(const GeoPoint& p) const;
  GeoPoint center(HexCellRef c) const;
  LocalXY center_xy(HexCellRef c) const;

  static std::string cell_id(HexCellRef c);  // "h<q>_<r>"
  static std::optional<HexCellRef> parse_cell_id(std::string_view);

  static constexpr double kMaxRangeM = 100'000.0;

 private:
  GridSpec spec_;
};

// --- POI spatial index -------------------------------------------------------

struct Poi {
  std::string poi_id;
  GeoPoint loc;
  std::string category;
};

// Dense lat/lon bin grid (CSR layout) for fixed-radius nearest-neighbor
// queries over a bounded point set.
class PoiIndex {
 public:
  PoiIndex() = default;
  explicit PoiIndex(std::span<const Poi> pois, double bin_m = 100.0);

  // Nearest POI within radius_m (closed interval); distance ties break toward
  // the smaller poi_id. Returns an index into the construction span.
  std::optional<std::size_t> nearest_within(const GeoPoint& p, double radius_m) const;

  bool empty() const { return pois_.empty(); }

 private:
  std::span<const Poi> pois_;
  double lat0_ = 0.0, lon0_ = 0.0;
  double dlat_ = 1.0, dlon_ = 1.0;
  double bin_m_ = 100.0;
  std::int32_t rows_ = 0, cols_ = 0;
  std::vector<std::uint32_t> bin_start_;  // rows*cols + 1
  std::vector<std::uint32_t> ids_;
};

}  // namespace mobiscope
