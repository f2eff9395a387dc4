#include "mobiscope/stays.hpp"

#include <algorithm>
#include <limits>
#include <mutex>

namespace mobiscope {

namespace {

// Per-cluster state. Centroid is the plain mean of member coordinates kept as
// running sums, so a from-scratch recomputation in the same order is bitwise
// identical.
struct Cluster {
  std::size_t begin = 0;
  std::size_t n = 0;
  double lat_sum = 0.0, lon_sum = 0.0;
  double bound = 0.0;  // upper bound on max member-to-centroid distance
};

constexpr double kBoundSlackM = 1e-6;

}  // namespace

std::vector<Stay> detect_stays(std::span<const Ping> pings, const StayParams& p) {
  std::vector<Stay> out;
  if (pings.empty()) return out;

  DeviceIdx dev = pings[0].device;
  Cluster c;
  auto reset = [&](std::size_t i) {
    c.begin = i;
    c.n = 1;
    c.lat_sum = pings[i].lat;
    c.lon_sum = pings[i].lon;
    c.bound = 0.0;
  };
  auto flush = [&](std::size_t end_idx) {
    std::int64_t dur = pings[end_idx - 1].t - pings[c.begin].t;
    if (dur >= p.min_duration_s && dur <= p.max_duration_s) {
      Stay s;
      s.device = dev;
      s.start = pings[c.begin].t;
      s.end = pings[end_idx - 1].t;
      s.lat = c.lat_sum / double(c.n);
      s.lon = c.lon_sum / double(c.n);
      s.ping_count = std::uint32_t(c.n);
      out.push_back(s);
    }
  };

  reset(0);
  for (std::size_t i = 1; i < pings.size(); ++i) {
    if (pings[i].device != dev) throw DataError("detect_stays: multiple devices in span");
    if (pings[i].t < pings[i - 1].t) throw DataError("detect_stays: pings not sorted by time");

    GeoPoint cen{c.lat_sum / double(c.n), c.lon_sum / double(c.n)};
    double d = geodesic_distance(pings[i].loc(), cen);
    bool too_long = pings[i].t - pings[c.begin].t > p.max_duration_s;
    if (d > p.radius_m || too_long) {
      flush(i);
      reset(i);
      continue;
    }

    // Tentative add; keep the cluster invariant (every member within radius
    // of the updated centroid), not just the running-centroid test.
    double nlat = c.lat_sum + pings[i].lat;
    double nlon = c.lon_sum + pings[i].lon;
    GeoPoint ncen{nlat / double(c.n + 1), nlon / double(c.n + 1)};
    double d_new = geodesic_distance(pings[i].loc(), ncen);
    double shift = geodesic_distance(cen, ncen);
    double bound_new = std::max(c.bound + shift + kBoundSlackM, d_new);
    if (bound_new > p.radius_m) {
      double worst = d_new;
      for (std::size_t j = c.begin; j < i; ++j)
        worst = std::max(worst, geodesic_distance(pings[j].loc(), ncen));
      bound_new = worst;
    }
    if (bound_new <= p.radius_m) {
      c.lat_sum = nlat;
      c.lon_sum = nlon;
      ++c.n;
      c.bound = bound_new;
    } else {
      flush(i);
      reset(i);
    }
  }
  flush(pings.size());
  return out;
}

std::vector<Stay> detect_stays_all(std::span<const Ping> pings, const StayParams& p,
                                   int threads) {
  if (pings.empty()) return {};
  // Device boundaries.
  std::vector<std::size_t> starts;
  starts.push_back(0);
  for (std::size_t i = 1; i < pings.size(); ++i)
    if (pings[i].device != pings[i - 1].device) starts.push_back(i);
  starts.push_back(pings.size());
  std::size_t n_dev = starts.size() - 1;

  std::vector<std::vector<Stay>> parts(n_dev);
  parallel_chunks(n_dev, threads, [&](std::size_t lo, std::size_t hi, int) {
    for (std::size_t d = lo; d < hi; ++d)
      parts[d] = detect_stays(pings.subspan(starts[d], starts[d + 1] - starts[d]), p);
  });

  std::size_t total = 0;
  for (const auto& v : parts) total += v.size();
  std::vector<Stay> out;
  out.reserve(total);
  for (auto& v : parts) out.insert(out.end(), v.begin(), v.end());
  return out;
}

namespace {

struct NightCluster {
  double lat_sum = 0.0, lon_sum = 0.0;
  std::uint32_t n = 0;
  std::int64_t first_t = 0;
};

}  // namespace

std::vector<HomeLocation> infer_homes(std::span<const Ping> pings, const StudyWindow& window,
                                      const HomeParams& p, int threads) {
  if (pings.empty()) return {};
  std::vector<std::size_t> starts;
  starts.push_back(0);
  for (std::size_t i = 1; i < pings.size(); ++i)
    if (pings[i].device != pings[i - 1].device) starts.push_back(i);
  starts.push_back(pings.size());
  std::size_t n_dev = starts.size() - 1;
  int n_months = window.n_months();

  std::vector<std::vector<HomeLocation>> parts(n_dev);
  parallel_chunks(n_dev, threads, [&](std::size_t lo, std::size_t hi, int) {
    std::vector<std::vector<NightCluster>> by_month;
    by_month.resize(std::size_t(n_months));
    for (std::size_t d = lo; d < hi; ++d) {
      for (auto& v : by_month) v.clear();
      auto dev_pings = pings.subspan(starts[d], starts[d + 1] - starts[d]);
      DeviceIdx dev = dev_pings[0].device;
      std::int64_t prev_t = std::numeric_limits<std::int64_t>::min();
      for (const Ping& ping : dev_pings) {
        if (ping.t < prev_t) throw DataError("infer_homes: pings not sorted by time");
        prev_t = ping.t;
        auto anchor = window.clock.night_anchor_day(ping.t);
        if (!anchor) continue;
        int mi = window.month_index(window.clock.month_of_day(*anchor));
        if (mi < 0 || mi >= n_months) continue;  // night anchored outside the window
        auto& clusters = by_month[std::size_t(mi)];
        bool placed = false;
        for (NightCluster& nc : clusters) {
          GeoPoint cen{nc.lat_sum / double(nc.n), nc.lon_sum / double(nc.n)};
          if (geodesic_distance(ping.loc(), cen) <= p.cluster_radius_m) {
            nc.lat_sum += ping.lat;
            nc.lon_sum += ping.lon;
            ++nc.n;
            placed = true;
            break;
          }
        }
        if (!placed) clusters.push_back(NightCluster{ping.lat, ping.lon, 1, ping.t});
      }
      for (int mi = 0; mi < n_months; ++mi) {
        const NightCluster* best = nullptr;
        for (const NightCluster& nc : by_month[std::size_t(mi)]) {
          if (!best || nc.n > best->n || (nc.n == best->n && nc.first_t < best->first_t))
            best = &nc;
        }
        if (best && int(best->n) >= p.min_night_pings) {
          HomeLocation h;
          h.device = dev;
          h.month_idx = mi;
          h.lat = best->lat_sum / double(best->n);
          h.lon = best->lon_sum / double(best->n);
          h.night_ping_count = best->n;
          parts[d].push_back(h);
        }
      }
    }
  });

  std::size_t total = 0;
  for (const auto& v : parts) total += v.size();
  std::vector<HomeLocation> out;
  out.reserve(total);
  for (auto& v : parts) out.insert(out.end(), v.begin(), v.end());
  return out;
}

void mark_trips(std::span<Stay> stays, std::span<const HomeLocation> homes,
                double outside_radius_m) {
  std::size_t hi = 0;
  std::size_t i = 0;
  std::vector<const HomeLocation*> month_home;
  while (i < stays.size()) {
    DeviceIdx dev = stays[i].device;
    while (hi < homes.size() && homes[hi].device < dev) ++hi;
    month_home.clear();
    std::size_t h = hi;
    for (; h < homes.size() && homes[h].device == dev; ++h) {
      std::size_t mi = std::size_t(homes[h].month_idx);
      if (month_home.size() <= mi) month_home.resize(mi + 1, nullptr);
      month_home[mi] = &homes[h];
    }
    for (; i < stays.size() && stays[i].device == dev; ++i) {
      Stay& s = stays[i];
      s.is_trip = 0;
      if (s.month_idx < 0 || std::size_t(s.month_idx) >= month_home.size()) continue;
      const HomeLocation* home = month_home[std::size_t(s.month_idx)];
      if (!home) continue;
      s.is_trip = geodesic_distance(s.centroid(), home->loc()) > outside_radius_m ? 1 : 0;
    }
  }
}

}  // namespace mobiscope
