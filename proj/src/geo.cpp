#include "mobiscope/geo.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <unordered_map>

namespace mobiscope {

LocalXY aeq_forward(const GeoPoint& origin, const GeoPoint& p) {
  double phi0 = origin.lat * kDegToRad, lam0 = origin.lon * kDegToRad;
  double phi = p.lat * kDegToRad, lam = p.lon * kDegToRad;
  double dlam = lam - lam0;
  double cosc = std::sin(phi0) * std::sin(phi) + std::cos(phi0) * std::cos(phi) * std::cos(dlam);
  cosc = std::clamp(cosc, -1.0, 1.0);
  double c = std::acos(cosc);
  double k = c < 1e-12 ? 1.0 : c / std::sin(c);
  LocalXY xy;
  xy.x = kEarthRadiusM * k * std::cos(phi) * std::sin(dlam);
  xy.y = kEarthRadiusM * k *
         (std::cos(phi0) * std::sin(phi) - std::sin(phi0) * std::cos(phi) * std::cos(dlam));
  return xy;
}

GeoPoint aeq_inverse(const GeoPoint& origin, const LocalXY& xy) {
  double rho = std::hypot(xy.x, xy.y);
  if (rho < 1e-9) return origin;
  double phi0 = origin.lat * kDegToRad, lam0 = origin.lon * kDegToRad;
  double c = rho / kEarthRadiusM;
  double sinc = std::sin(c), cosc = std::cos(c);
  double phi = std::asin(std::clamp(cosc * std::sin(phi0) + xy.y * sinc * std::cos(phi0) / rho,
                                    -1.0, 1.0));
  double lam = lam0 + std::atan2(xy.x * sinc,
                                 rho * std::cos(phi0) * cosc - xy.y * std::sin(phi0) * sinc);
  return GeoPoint{phi / kDegToRad, lam / kDegToRad};
}

std::string_view line_name(Line l) {
  return l == Line::treatment ? "treatment" : "control";
}

std::optional<Line> parse_line(std::string_view s) {
  if (s == "treatment") return Line::treatment;
  if (s == "control") return Line::control;
  return std::nullopt;
}

std::optional<std::size_t> in_buffer(const GeoPoint& p, std::span<const Station> stations) {
  std::optional<std::size_t> best;
  double best_d = 0.0;
  for (std::size_t i = 0; i < stations.size(); ++i) {
    double d = geodesic_distance(p, stations[i].location);
    if (d > stations[i].buffer_m) continue;
    if (!best || d < best_d ||
        (d == best_d && stations[i].station_id < stations[*best].station_id)) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

namespace {

bool ring_crossings(const GeoPoint& p, const Ring& ring) {
  bool inside = false;
  std::size_t n = ring.size();
  if (n < 3) return false;
  // Skip a duplicated closing vertex so the cyclic walk does not double-count.
  if (ring.front().lat == ring.back().lat && ring.front().lon == ring.back().lon) --n;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const GeoPoint& a = ring[j];
    const GeoPoint& b = ring[i];
    if ((a.lat > p.lat) != (b.lat > p.lat)) {
      double x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
      if (p.lon < x) inside = !inside;
    }
  }
  return inside;
}

}  // namespace

bool point_in_polygon(const GeoPoint& p, std::span<const Ring> rings) {
  bool inside = false;
  for (const Ring& r : rings)
    if (ring_crossings(p, r)) inside = !inside;
  return inside;
}

std::optional<int> stratum_lookup(const GeoPoint& p, std::span<const StratumZone> zones) {
  for (const StratumZone& z : zones)
    if (point_in_polygon(p, z.rings)) return z.stratum;
  return std::nullopt;
}

std::optional<std::size_t> region_lookup(const GeoPoint& p, std::span<const Region> regions) {
  for (std::size_t i = 0; i < regions.size(); ++i)
    if (point_in_polygon(p, regions[i].rings)) return i;
  return std::nullopt;
}

namespace {

constexpr double kSqrt3 = 1.7320508075688772935;

// Cube-coordinate rounding for axial (q, r).
HexCellRef hex_round(double qf, double rf) {
  double sf = -qf - rf;
  double q = std::round(qf), r = std::round(rf), s = std::round(sf);
  double dq = std::abs(q - qf), dr = std::abs(r - rf), ds = std::abs(s - sf);
  if (dq > dr && dq > ds)
    q = -r - s;
  else if (dr > ds)
    r = -q - s;
  return HexCellRef{std::int32_t(q), std::int32_t(r)};
}

}  // namespace

HexCellRef HexGrid::assign(const GeoPoint& p) const {
  LocalXY xy = aeq_forward(spec_.origin, p);
  if (std::hypot(xy.x, xy.y) > kMaxRangeM)
    throw DataError("hex_assign: point farther than 100 km from grid origin");
  double s = spec_.side_m;
  double qf = (2.0 / 3.0) * xy.x / s;
  double rf = (-1.0 / 3.0 * xy.x + kSqrt3 / 3.0 * xy.y) / s;
  return hex_round(qf, rf);
}

LocalXY HexGrid::center_xy(HexCellRef c) const {
  double s = spec_.side_m;
  return LocalXY{s * 1.5 * c.q, s * kSqrt3 * (c.r + 0.5 * c.q)};
}

GeoPoint HexGrid::center(HexCellRef c) const {
  return aeq_inverse(spec_.origin, center_xy(c));
}

std::string HexGrid::cell_id(HexCellRef c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "h%d_%d", c.q, c.r);
  return buf;
}

std::optional<HexCellRef> HexGrid::parse_cell_id(std::string_view s) {
  if (s.size() < 4 || s[0] != 'h') return std::nullopt;
  auto sep = s.find('_');
  if (sep == std::string_view::npos) return std::nullopt;
  HexCellRef c;
  auto r1 = std::from_chars(s.data() + 1, s.data() + sep, c.q);
  auto r2 = std::from_chars(s.data() + sep + 1, s.data() + s.size(), c.r);
  if (r1.ec != std::errc{} || r1.ptr != s.data() + sep || r2.ec != std::errc{} ||
      r2.ptr != s.data() + s.size())
    return std::nullopt;
  return c;
}

BBox rings_bbox(std::span<const Ring> rings) {
  BBox box;
  for (const Ring& r : rings)
    for (const GeoPoint& p : r) box.grow(p);
  return box;
}

PolygonLayerIndex PolygonLayerIndex::over_zones(std::span<const StratumZone> zones) {
  PolygonLayerIndex ix;
  for (const StratumZone& z : zones) {
    ix.boxes_.push_back(rings_bbox(z.rings));
    ix.rings_.push_back(z.rings);
  }
  return ix;
}

PolygonLayerIndex PolygonLayerIndex::over_regions(std::span<const Region> regions) {
  PolygonLayerIndex ix;
  for (const Region& r : regions) {
    ix.boxes_.push_back(rings_bbox(r.rings));
    ix.rings_.push_back(r.rings);
  }
  return ix;
}

std::optional<std::size_t> PolygonLayerIndex::first_hit(const GeoPoint& p) const {
  for (std::size_t i = 0; i < boxes_.size(); ++i)
    if (boxes_[i].contains(p) && point_in_polygon(p, rings_[i])) return i;
  return std::nullopt;
}

PoiIndex::PoiIndex(std::span<const Poi> pois, double bin_m) : pois_(pois), bin_m_(bin_m) {
  if (pois.empty()) return;
  BBox box;
  for (const Poi& p : pois) box.grow(p.loc);
  double lat_ref = 0.5 * (box.min_lat + box.max_lat);
  dlat_ = bin_m / kMetersPerDegLat;
  double coslat = std::max(0.05, std::cos(lat_ref * kDegToRad));
  dlon_ = bin_m / (kMetersPerDegLat * coslat);
  lat0_ = box.min_lat;
  lon0_ = box.min_lon;
  rows_ = std::int32_t((box.max_lat - lat0_) / dlat_) + 1;
  cols_ = std::int32_t((box.max_lon - lon0_) / dlon_) + 1;

  std::vector<std::uint32_t> bin_of(pois.size());
  std::vector<std::uint32_t> counts(std::size_t(rows_) * std::size_t(cols_) + 1, 0);
  for (std::uint32_t i = 0; i < pois.size(); ++i) {
    auto r = std::int32_t((pois[i].loc.lat - lat0_) / dlat_);
    auto c = std::int32_t((pois[i].loc.lon - lon0_) / dlon_);
    r = std::clamp(r, 0, rows_ - 1);
    c = std::clamp(c, 0, cols_ - 1);
    bin_of[i] = std::uint32_t(r) * std::uint32_t(cols_) + std::uint32_t(c);
    ++counts[bin_of[i] + 1];
  }
  for (std::size_t b = 1; b < counts.size(); ++b) counts[b] += counts[b - 1];
  bin_start_ = counts;
  ids_.resize(pois.size());
  std::vector<std::uint32_t> cursor(bin_start_.begin(), bin_start_.end() - 1);
  for (std::uint32_t i = 0; i < pois.size(); ++i) ids_[cursor[bin_of[i]]++] = i;
}

std::optional<std::size_t> PoiIndex::nearest_within(const GeoPoint& p, double radius_m) const {
  if (pois_.empty()) return std::nullopt;
  int span = int(std::ceil(radius_m / bin_m_));
  auto r0 = std::int32_t(std::floor((p.lat - lat0_) / dlat_));
  auto c0 = std::int32_t(std::floor((p.lon - lon0_) / dlon_));
  std::optional<std::size_t> best;
  double best_d = 0.0;
  std::int32_t rlo = std::max(0, r0 - span), rhi = std::min(rows_ - 1, r0 + span);
  std::int32_t clo = std::max(0, c0 - span), chi = std::min(cols_ - 1, c0 + span);
  for (std::int32_t r = rlo; r <= rhi; ++r) {
    for (std::int32_t c = clo; c <= chi; ++c) {
      std::size_t bin = std::size_t(r) * std::size_t(cols_) + std::size_t(c);
      for (std::uint32_t k = bin_start_[bin]; k < bin_start_[bin + 1]; ++k) {
        std::uint32_t id = ids_[k];
        double d = geodesic_distance(p, pois_[id].loc);
        if (d > radius_m) continue;
        if (!best || d < best_d || (d == best_d && pois_[id].poi_id < pois_[*best].poi_id)) {
          best = id;
          best_d = d;
        }
      }
    }
  }
  return best;
}

}  // namespace mobiscope
