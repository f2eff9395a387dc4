#include "mobiscope/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "json.hpp"
#include "mobiscope/rng.hpp"

namespace mobiscope {

namespace {

// City extents, meters about the origin.
constexpr double kCityHalfX = 4000.0;
constexpr double kCityHalfY = 6000.0;
constexpr double kBandHeight = 2000.0;
constexpr double kStationTreatY = -5000.0;
constexpr double kStationCtrlY = -3000.0;
constexpr double kRegionHalf = 1500.0;
constexpr double kBackgroundClearM = 600.0;

// RNG stream tags.
constexpr std::uint64_t kStrDevice = 0xD0;
constexpr std::uint64_t kStrMonth = 0xA1;

// Sparse devices: parameters far below the quality filter.
constexpr double kSparseTripRate = 12.0;
constexpr int kSparseNightMin = 2;
constexpr double kSparseNightExtra = 1.0;

struct Flat {
  double mlat, mlon;
  GeoPoint origin;
  GeoPoint to_geo(double x, double y) const {
    return GeoPoint{origin.lat + y / mlat, origin.lon + x / mlon};
  }
};

int band_of_y(double y) {
  int b = 1 + int(std::floor((y + kCityHalfY) / kBandHeight));
  return std::clamp(b, 1, kNumStrata);
}

Ring rect_ring(const Flat& f, double x0, double y0, double x1, double y1) {
  return Ring{f.to_geo(x0, y0), f.to_geo(x1, y0), f.to_geo(x1, y1), f.to_geo(x0, y1),
              f.to_geo(x0, y0)};
}

}  // namespace

ScenarioConfig ScenarioConfig::from_kv(const KvConfig& kv) {
  ScenarioConfig c;
  c.seed = std::uint64_t(kv.get_int("seed", std::int64_t(c.seed)));
  c.devices_per_arm = int(kv.get_int("devices_per_arm", c.devices_per_arm));
  c.background_devices = int(kv.get_int("background_devices", c.background_devices));
  if (auto s = YearMonth::parse(kv.get_str("start_month", c.start_month.str())))
    c.start_month = *s;
  else
    throw ConfigError("scenario: bad start_month");
  c.n_months = int(kv.get_int("months", c.n_months));
  if (auto o = YearMonth::parse(kv.get_str("opening_month", c.opening.str())))
    c.opening = *o;
  else
    throw ConfigError("scenario: bad opening_month");
  c.tz_offset_min = int(kv.get_int("tz_offset_min", c.tz_offset_min));
  c.base_trip_rate = kv.get_double("base_trip_rate", c.base_trip_rate);
  c.effect_trips = kv.get_double("effect_trips", c.effect_trips);
  c.trip_dispersion = kv.get_double("trip_dispersion", c.trip_dispersion);
  c.pings_per_stay_min = int(kv.get_int("pings_per_stay_min", c.pings_per_stay_min));
  c.pings_per_stay_extra_mean =
      kv.get_double("pings_per_stay_extra_mean", c.pings_per_stay_extra_mean);
  c.night_pings_min = int(kv.get_int("night_pings_min", c.night_pings_min));
  c.night_pings_extra_mean = kv.get_double("night_pings_extra_mean", c.night_pings_extra_mean);
  c.device_effect_sd = kv.get_double("device_effect_sd", c.device_effect_sd);
  c.month_effect_amp = kv.get_double("month_effect_amp", c.month_effect_amp);
  c.ping_sigma_m = kv.get_double("ping_sigma_m", c.ping_sigma_m);
  c.ping_jitter_max_m = kv.get_double("ping_jitter_max_m", c.ping_jitter_max_m);
  c.city_origin.lat = kv.get_double("origin_lat", c.city_origin.lat);
  c.city_origin.lon = kv.get_double("origin_lon", c.city_origin.lon);
  c.poi_spacing_m = kv.get_double("poi_spacing_m", c.poi_spacing_m);
  c.home_max_offset_m = kv.get_double("home_max_offset_m", c.home_max_offset_m);
  c.pretrend_slope = kv.get_double("pretrend_slope", c.pretrend_slope);
  c.attrition_hazard = kv.get_double("attrition_hazard", c.attrition_hazard);
  c.sparse_fraction = kv.get_double("sparse_fraction", c.sparse_fraction);
  auto unknown = kv.unknown_keys();
  if (!unknown.empty()) throw ConfigError("scenario: unknown key " + unknown.front());
  return c;
}

std::string ScenarioConfig::to_text() const {
  std::string s;
  auto kv = [&s](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
  kv("seed", std::to_string(seed));
  kv("devices_per_arm", std::to_string(devices_per_arm));
  kv("background_devices", std::to_string(background_devices));
  kv("start_month", start_month.str());
  kv("months", std::to_string(n_months));
  kv("opening_month", opening.str());
  kv("tz_offset_min", std::to_string(tz_offset_min));
  kv("base_trip_rate", format_double(base_trip_rate));
  kv("effect_trips", format_double(effect_trips));
  kv("trip_dispersion", format_double(trip_dispersion));
  kv("pings_per_stay_min", std::to_string(pings_per_stay_min));
  kv("pings_per_stay_extra_mean", format_double(pings_per_stay_extra_mean));
  kv("night_pings_min", std::to_string(night_pings_min));
  kv("night_pings_extra_mean", format_double(night_pings_extra_mean));
  kv("device_effect_sd", format_double(device_effect_sd));
  kv("month_effect_amp", format_double(month_effect_amp));
  kv("ping_sigma_m", format_double(ping_sigma_m));
  kv("ping_jitter_max_m", format_double(ping_jitter_max_m));
  kv("origin_lat", format_double(city_origin.lat));
  kv("origin_lon", format_double(city_origin.lon));
  kv("poi_spacing_m", format_double(poi_spacing_m));
  kv("home_max_offset_m", format_double(home_max_offset_m));
  kv("pretrend_slope", format_double(pretrend_slope));
  kv("attrition_hazard", format_double(attrition_hazard));
  kv("sparse_fraction", format_double(sparse_fraction));
  return s;
}

ScenarioConfig perturb(ScenarioConfig cfg, PerturbKnob knob) {
  switch (knob) {
    case PerturbKnob::pretrend_violation: cfg.pretrend_slope = 1.0; break;
    case PerturbKnob::attrition: cfg.attrition_hazard = 0.08; break;
    case PerturbKnob::sparse_devices: cfg.sparse_fraction = 0.3; break;
  }
  return cfg;
}

GroundTruth::TrueExposure GroundTruth::true_exposure(std::size_t n_pois) const {
  TrueExposure ex;
  std::vector<std::array<std::uint32_t, kNumStrata>> counts(n_pois);
  for (std::size_t d = 0; d < devices.size(); ++d) {
    int stratum = devices[d].stratum;
    if (stratum < 1 || stratum > kNumStrata) continue;
    for (int m = 0; m < n_months; ++m)
      for (std::int32_t poi : visits_of(d, m)) ++counts[std::size_t(poi)][std::size_t(stratum - 1)];
  }
  double nan = std::numeric_limits<double>::quiet_NaN();
  ex.poi_entropy.assign(n_pois, nan);
  ex.poi_high_share.assign(n_pois, nan);
  for (std::size_t p = 0; p < n_pois; ++p) {
    std::uint64_t total = 0, high = 0;
    for (int s = 0; s < kNumStrata; ++s) {
      total += counts[p][std::size_t(s)];
      if (s >= 3) high += counts[p][std::size_t(s)];
    }
    if (total == 0) continue;
    ex.poi_entropy[p] = shannon_entropy(counts[p]);
    ex.poi_high_share[p] = double(high) / double(total);
  }
  ex.mean_entropy.assign(devices.size() * std::size_t(n_months), nan);
  ex.mean_high_share.assign(devices.size() * std::size_t(n_months), nan);
  for (std::size_t d = 0; d < devices.size(); ++d) {
    for (int m = 0; m < n_months; ++m) {
      auto visits = visits_of(d, m);
      if (visits.empty()) continue;
      double se = 0.0, sh = 0.0;
      for (std::int32_t poi : visits) {
        se += ex.poi_entropy[std::size_t(poi)];
        sh += ex.poi_high_share[std::size_t(poi)];
      }
      ex.mean_entropy[d * std::size_t(n_months) + std::size_t(m)] = se / double(visits.size());
      ex.mean_high_share[d * std::size_t(n_months) + std::size_t(m)] = sh / double(visits.size());
    }
  }
  return ex;
}

namespace {

struct Geometry {
  Flat flat;
  std::vector<Poi> pois;
  std::vector<LocalXY> poi_xy;
  std::vector<std::vector<std::uint32_t>> pois_by_band;  // 6 bands
  std::vector<StratumZone> zones;
  std::vector<Region> regions;
  std::vector<Station> stations;
  std::vector<LocalXY> station_xy;
};

Geometry build_geometry(const ScenarioConfig& cfg) {
  Geometry g;
  g.flat.origin = cfg.city_origin;
  g.flat.mlat = kMetersPerDegLat;
  g.flat.mlon = kMetersPerDegLat * std::cos(cfg.city_origin.lat * kDegToRad);

  const char* categories[] = {"shop", "park", "school", "restaurant", "health"};
  double spacing = cfg.poi_spacing_m;
  int ncols = int(std::floor(2.0 * kCityHalfX / spacing));
  int nrows = int(std::floor(2.0 * kCityHalfY / spacing));
  g.pois_by_band.resize(kNumStrata);
  char idbuf[16];
  for (int row = 0; row < nrows; ++row) {
    for (int col = 0; col < ncols; ++col) {
      double x = -kCityHalfX + spacing * (0.5 + col);
      double y = -kCityHalfY + spacing * (0.5 + row);
      std::uint32_t idx = std::uint32_t(g.pois.size());
      std::snprintf(idbuf, sizeof idbuf, "p%05u", idx);
      g.pois.push_back(Poi{idbuf, g.flat.to_geo(x, y), categories[idx % 5]});
      g.poi_xy.push_back(LocalXY{x, y});
      g.pois_by_band[std::size_t(band_of_y(y) - 1)].push_back(idx);
    }
  }

  for (int b = 1; b <= kNumStrata; ++b) {
    StratumZone z;
    z.zone_id = "band" + std::to_string(b);
    z.stratum = b;
    double y0 = -kCityHalfY + kBandHeight * (b - 1);
    z.rings.push_back(rect_ring(g.flat, -kCityHalfX, y0, kCityHalfX, y0 + kBandHeight));
    g.zones.push_back(std::move(z));
  }

  auto region = [&](const char* id, double x0, double y0, double x1, double y1) {
    Region r;
    r.region_id = id;
    r.rings.push_back(rect_ring(g.flat, x0, y0, x1, y1));
    g.regions.push_back(std::move(r));
  };
  region("center", -kRegionHalf, -kRegionHalf, kRegionHalf, kRegionHalf);
  region("north", -kCityHalfX, kRegionHalf, kCityHalfX, kCityHalfY);
  region("south", -kCityHalfX, -kCityHalfY, kCityHalfX, -kRegionHalf);
  region("west", -kCityHalfX, -kRegionHalf, -kRegionHalf, kRegionHalf);
  region("east", kRegionHalf, -kRegionHalf, kCityHalfX, kRegionHalf);

  for (int i = 0; i < 4; ++i) {
    double xt = -2400.0 + 800.0 * i;
    double xc = 800.0 + 800.0 * i;
    g.stations.push_back(
        Station{"T" + std::to_string(i + 1), g.flat.to_geo(xt, kStationTreatY), Line::treatment, 500.0});
    g.station_xy.push_back(LocalXY{xt, kStationTreatY});
    g.stations.push_back(
        Station{"C" + std::to_string(i + 1), g.flat.to_geo(xc, kStationCtrlY), Line::control, 500.0});
    g.station_xy.push_back(LocalXY{xc, kStationCtrlY});
  }
  return g;
}

struct DeviceState {
  Line arm = Line::control;
  bool background = false;
  bool sparse = false;
  LocalXY home{};
  int stratum = 0;
  int lifetime = 0;
  double effect = 0.0;  // device-level trip rate shift
};

LocalXY jitter(CounterRng& rng, double sigma, double max_r, const LocalXY& at) {
  double dx, dy;
  do {
    dx = rng.gauss() * sigma;
    dy = rng.gauss() * sigma;
  } while (dx * dx + dy * dy > max_r * max_r);
  return LocalXY{at.x + dx, at.y + dy};
}

}  // namespace

ScenarioData generate(const ScenarioConfig& cfg) {
  if (cfg.devices_per_arm < 1) throw ConfigError("scenario: devices_per_arm must be >= 1");
  if (cfg.n_months < 2) throw ConfigError("scenario: need >= 2 months");
  if (cfg.base_trip_rate <= 0.0 || cfg.trip_dispersion < 1.0)
    throw ConfigError("scenario: rates must be positive, dispersion >= 1");
  if (cfg.opening < cfg.start_month.next() || cfg.end_month() < cfg.opening)
    throw ConfigError("scenario: opening month must fall inside the window (after month 1)");
  if (cfg.home_max_offset_m >= 500.0)
    throw ConfigError("scenario: home offset must stay inside the 500 m buffer");
  if (cfg.ping_jitter_max_m > 45.0)
    throw ConfigError("scenario: ping jitter cap above 45 m can break the stay radius");
  if (cfg.pings_per_stay_min < 2) throw ConfigError("scenario: stays need >= 2 pings");

  ScenarioData data;
  data.config = cfg;
  Geometry g = build_geometry(cfg);
  data.pois = std::move(g.pois);
  data.zones = std::move(g.zones);
  data.regions = std::move(g.regions);
  data.stations = std::move(g.stations);
  data.grid = GridSpec{cfg.city_origin, 100.0};
  data.window = StudyWindow::make(cfg.start_month, cfg.end_month(), cfg.tz_offset_min);

  const int M = cfg.n_months;
  const std::size_t D =
      std::size_t(cfg.devices_per_arm) * 2 + std::size_t(std::max(0, cfg.background_devices));
  data.truth.n_months = M;
  data.truth.devices.resize(D);
  data.truth.trips.assign(D * std::size_t(M), 0);
  data.truth.visit_offsets.assign(D * std::size_t(M) + 1, 0);

  std::vector<DeviceState> devices(D);
  std::vector<LocalXY> treat_xy, ctrl_xy;
  for (std::size_t i = 0; i < data.stations.size(); ++i)
    (data.stations[i].line == Line::treatment ? treat_xy : ctrl_xy).push_back(g.station_xy[i]);

  data.device_names.resize(D);
  char namebuf[32];
  for (std::size_t d = 0; d < D; ++d) {
    std::snprintf(namebuf, sizeof namebuf, "d%06zu", d);
    data.device_names[d] = namebuf;
    CounterRng rng(cfg.seed, kStrDevice, d);
    DeviceState& dev = devices[d];
    dev.background = d >= std::size_t(cfg.devices_per_arm) * 2;
    if (!dev.background) {
      dev.arm = d < std::size_t(cfg.devices_per_arm) ? Line::treatment : Line::control;
      const auto& sts = dev.arm == Line::treatment ? treat_xy : ctrl_xy;
      LocalXY st = sts[rng.below(sts.size())];
      double ang = rng.uniform() * 2.0 * kPi;
      double r = std::sqrt(rng.uniform()) * cfg.home_max_offset_m;
      dev.home = LocalXY{st.x + r * std::cos(ang), st.y + r * std::sin(ang)};
    } else {
      for (;;) {
        dev.home = LocalXY{rng.uniform(-kCityHalfX, kCityHalfX), rng.uniform(-kCityHalfY, kCityHalfY)};
        bool clear = true;
        for (const LocalXY& st : g.station_xy) {
          double dx = dev.home.x - st.x, dy = dev.home.y - st.y;
          if (dx * dx + dy * dy < kBackgroundClearM * kBackgroundClearM) clear = false;
        }
        if (clear) break;
      }
    }
    dev.stratum = band_of_y(dev.home.y);
    dev.sparse = cfg.sparse_fraction > 0.0 && rng.uniform() < cfg.sparse_fraction;
    dev.effect = rng.gauss() * cfg.device_effect_sd;
    dev.lifetime = M;
    if (cfg.attrition_hazard > 0.0) {
      int life = 1;
      while (life < M && rng.uniform() >= cfg.attrition_hazard) ++life;
      dev.lifetime = life;
    }
    auto& t = data.truth.devices[d];
    t.arm = dev.arm;
    t.background = dev.background;
    t.sparse = dev.sparse;
    t.home = g.flat.to_geo(dev.home.x, dev.home.y);
    t.stratum = dev.stratum;
    t.lifetime_months = dev.lifetime;
  }

  const int opening_idx = data.window.month_index(cfg.opening);
  const double band_weights[kNumStrata] = {0.30, 0.25, 0.20, 0.15, 0.07, 0.03};
  const std::int64_t tz_shift = std::int64_t(cfg.tz_offset_min) * 60;
  constexpr int kTripDays = 28, kTripHours = 12, kFirstTripHour = 8;
  constexpr int kNightDays = 26;
  const int n_slots = kTripDays * kTripHours;

  struct TimedPing {
    std::int64_t t;
    LocalXY at;
  };
  std::vector<TimedPing> month_buf;
  std::vector<std::uint8_t> slot_used;
  slot_used.resize(std::size_t(n_slots));
  std::vector<std::uint32_t> trip_slots;
  data.pings.reserve(D * std::size_t(M) *
                     std::size_t(cfg.base_trip_rate * (cfg.pings_per_stay_min + 1.0)));

  for (std::size_t d = 0; d < D; ++d) {
    const DeviceState& dev = devices[d];
    std::int32_t prev_poi = -1;
    for (int m = 0; m < M; ++m) {
      std::size_t dm = d * std::size_t(M) + std::size_t(m);
      if (m >= dev.lifetime) {
        data.truth.visit_offsets[dm + 1] = data.truth.visit_offsets[dm];
        continue;
      }
      CounterRng rng(cfg.seed, kStrMonth, d, std::uint64_t(m));
      YearMonth ym(cfg.start_month.code + m);
      std::int64_t month_day0 = days_from_civil(ym.year(), ym.month(), 1);

      double rate;
      if (dev.sparse) {
        rate = kSparseTripRate;  // fixed: stays below the quality filter
      } else {
        rate = cfg.base_trip_rate + dev.effect +
               cfg.month_effect_amp * std::sin(2.0 * kPi * double(m) / 12.0);
        if (dev.arm == Line::treatment && !dev.background) {
          if (m >= opening_idx) rate += cfg.effect_trips;
          rate += cfg.pretrend_slope * double(m - opening_idx);
        }
      }
      rate = std::max(1.0, rate);
      std::uint32_t n_trips =
          std::min<std::uint32_t>(rng.overdispersed_count(rate, cfg.trip_dispersion), 300);

      month_buf.clear();
      std::fill(slot_used.begin(), slot_used.end(), 0);

      // Trips: one per distinct (day, hour) slot. Slots are drawn first and
      // walked in time order so the no-repeat destination rule binds between
      // consecutive trips in time, which keeps adjacent stay clusters apart.
      trip_slots.clear();
      for (std::uint32_t trip = 0; trip < n_trips; ++trip) {
        std::uint32_t slot;
        do {
          slot = std::uint32_t(rng.below(std::uint64_t(n_slots)));
        } while (slot_used[slot]);
        slot_used[slot] = 1;
        trip_slots.push_back(slot);
      }
      std::sort(trip_slots.begin(), trip_slots.end());

      for (std::uint32_t slot : trip_slots) {
        std::int32_t poi;
        for (;;) {
          double u = rng.uniform();
          int band = kNumStrata - 1;
          double acc = 0.0;
          for (int b = 0; b < kNumStrata; ++b) {
            acc += band_weights[b];
            if (u < acc) {
              band = b;
              break;
            }
          }
          const auto& list = g.pois_by_band[std::size_t(band)];
          poi = std::int32_t(list[rng.below(list.size())]);
          if (poi == prev_poi) continue;
          double dx = g.poi_xy[std::size_t(poi)].x - dev.home.x;
          double dy = g.poi_xy[std::size_t(poi)].y - dev.home.y;
          if (dx * dx + dy * dy < cfg.poi_spacing_m * cfg.poi_spacing_m) continue;
          break;
        }
        prev_poi = poi;
        data.truth.visit_pois.push_back(poi);
        ++data.truth.trips[dm];

        int day = int(slot) / kTripHours;
        int hour = kFirstTripHour + int(slot) % kTripHours;
        std::int64_t slot_start = (month_day0 + day) * 86400 + std::int64_t(hour) * 3600;
        std::int64_t t0 = slot_start + std::int64_t(rng.below(720));
        std::int64_t dur = 360 + std::int64_t(rng.below(2340));
        int k = cfg.pings_per_stay_min +
                (dev.sparse ? 0 : int(rng.poisson(cfg.pings_per_stay_extra_mean)));
        for (int p = 0; p < k; ++p) {
          std::int64_t tp = t0 + dur * p / (k - 1);
          month_buf.push_back(TimedPing{
              tp - tz_shift, jitter(rng, cfg.ping_sigma_m, cfg.ping_jitter_max_m,
                                    g.poi_xy[std::size_t(poi)])});
        }
      }

      // Night pings at home.
      int n_nights = (dev.sparse ? kSparseNightMin : cfg.night_pings_min) +
                     int(rng.poisson(dev.sparse ? kSparseNightExtra : cfg.night_pings_extra_mean));
      for (int np = 0; np < n_nights; ++np) {
        int day = int(rng.below(kNightDays));
        std::int64_t sec = LocalClock::kNightStartSec +
                           std::int64_t(rng.below(86400 + LocalClock::kNightEndSec -
                                                  LocalClock::kNightStartSec));
        std::int64_t tp = (month_day0 + day) * 86400 + sec;
        month_buf.push_back(
            TimedPing{tp - tz_shift, jitter(rng, cfg.ping_sigma_m, cfg.ping_jitter_max_m, dev.home)});
      }

      std::sort(month_buf.begin(), month_buf.end(),
                [](const TimedPing& a, const TimedPing& b) { return a.t < b.t; });
      for (const TimedPing& tp : month_buf) {
        GeoPoint loc = g.flat.to_geo(tp.at.x, tp.at.y);
        data.pings.push_back(Ping{DeviceIdx(d), tp.t, loc.lat, loc.lon, -1.0f});
      }
      data.truth.visit_offsets[dm + 1] = std::uint32_t(data.truth.visit_pois.size());
    }
  }
  return data;
}

namespace {

nlohmann::json ring_to_json(const Ring& ring) {
  nlohmann::json coords = nlohmann::json::array();
  for (const GeoPoint& p : ring) coords.push_back({p.lon, p.lat});
  return coords;
}

void write_geojson(const std::string& path, const std::vector<StratumZone>* zones,
                   const std::vector<Region>* regions) {
  nlohmann::json features = nlohmann::json::array();
  auto polygon = [](const std::vector<Ring>& rings) {
    nlohmann::json c = nlohmann::json::array();
    for (const Ring& r : rings) c.push_back(ring_to_json(r));
    return nlohmann::json{{"type", "Polygon"}, {"coordinates", c}};
  };
  if (zones)
    for (const StratumZone& z : *zones)
      features.push_back({{"type", "Feature"},
                          {"properties", {{"zone_id", z.zone_id}, {"stratum", z.stratum}}},
                          {"geometry", polygon(z.rings)}});
  if (regions)
    for (const Region& r : *regions)
      features.push_back({{"type", "Feature"},
                          {"properties", {{"region_id", r.region_id}}},
                          {"geometry", polygon(r.rings)}});
  nlohmann::json fc{{"type", "FeatureCollection"}, {"features", features}};
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw ConfigError("cannot create " + path);
  std::string text = fc.dump(2);
  std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
}

}  // namespace

void write_scenario_files(const ScenarioData& data, const std::string& dir, bool gzip_pings) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  // Pings sorted by time (stable: ties keep device order).
  std::vector<std::uint32_t> order(data.pings.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return data.pings[a].t < data.pings[b].t;
  });

  std::string ping_path = dir + (gzip_pings ? "/pings.csv.gz" : "/pings.csv");
  char row[160];
  if (gzip_pings) {
    GzipWriter gz(ping_path);
    gz.write("device_id,timestamp,lat,lon,accuracy_m\n");
    for (std::uint32_t i : order) {
      const Ping& p = data.pings[i];
      int n = std::snprintf(row, sizeof row, "%s,%s,%.7f,%.7f,\n",
                            data.device_names[p.device].c_str(), format_iso_utc(p.t).c_str(),
                            p.lat, p.lon);
      gz.write(std::string_view(row, std::size_t(n)));
    }
  } else {
    CsvWriter w(ping_path);
    w.raw("device_id,timestamp,lat,lon,accuracy_m\n");
    for (std::uint32_t i : order) {
      const Ping& p = data.pings[i];
      int n = std::snprintf(row, sizeof row, "%s,%s,%.7f,%.7f,\n",
                            data.device_names[p.device].c_str(), format_iso_utc(p.t).c_str(),
                            p.lat, p.lon);
      w.raw(std::string_view(row, std::size_t(n)));
    }
  }

  {
    CsvWriter w(dir + "/pois.csv");
    w.raw("poi_id,lat,lon,category\n");
    char buf[128];
    for (const Poi& p : data.pois) {
      int n = std::snprintf(buf, sizeof buf, "%s,%.7f,%.7f,%s\n", p.poi_id.c_str(), p.loc.lat,
                            p.loc.lon, p.category.c_str());
      w.raw(std::string_view(buf, std::size_t(n)));
    }
  }
  {
    CsvWriter w(dir + "/stations.csv");
    w.raw("station_id,lat,lon,line,buffer_m\n");
    char buf[128];
    for (const Station& s : data.stations) {
      int n = std::snprintf(buf, sizeof buf, "%s,%.7f,%.7f,%s,%g\n", s.station_id.c_str(),
                            s.location.lat, s.location.lon, std::string(line_name(s.line)).c_str(),
                            s.buffer_m);
      w.raw(std::string_view(buf, std::size_t(n)));
    }
  }
  write_geojson(dir + "/zones.geojson", &data.zones, nullptr);
  write_geojson(dir + "/regions.geojson", nullptr, &data.regions);

  {
    CsvWriter w(dir + "/truth_devices.csv");
    w.raw("device_id,arm,home_lat,home_lon,stratum,sparse,lifetime_months\n");
    for (std::size_t d = 0; d < data.truth.devices.size(); ++d) {
      const auto& t = data.truth.devices[d];
      w.field(data.device_names[d]);
      w.field(t.background ? std::string_view("background") : line_name(t.arm));
      w.field(t.home.lat);
      w.field(t.home.lon);
      w.field(t.stratum);
      w.field(int(t.sparse));
      w.field(t.lifetime_months);
      w.end_row();
    }
  }
  {
    CsvWriter w(dir + "/truth_trips.csv");
    w.raw("device_id,month,trips,poi_visits\n");
    for (std::size_t d = 0; d < data.truth.devices.size(); ++d) {
      for (int m = 0; m < data.truth.n_months; ++m) {
        w.field(data.device_names[d]);
        w.field(YearMonth(data.config.start_month.code + m).str());
        w.field(std::uint64_t(data.truth.trips_of(d, m)));
        w.field(std::uint64_t(data.truth.visits_of(d, m).size()));
        w.end_row();
      }
    }
  }
  {
    auto ex = data.truth.true_exposure(data.pois.size());
    CsvWriter w(dir + "/truth_exposure.csv");
    w.raw("device_id,month,mean_entropy,mean_high_share\n");
    for (std::size_t d = 0; d < data.truth.devices.size(); ++d) {
      for (int m = 0; m < data.truth.n_months; ++m) {
        std::size_t i = d * std::size_t(data.truth.n_months) + std::size_t(m);
        if (std::isnan(ex.mean_entropy[i])) continue;
        w.field(data.device_names[d]);
        w.field(YearMonth(data.config.start_month.code + m).str());
        w.field(ex.mean_entropy[i]);
        w.field(ex.mean_high_share[i]);
        w.end_row();
      }
    }
  }
  {
    std::FILE* f = std::fopen((dir + "/scenario.cfg").c_str(), "wb");
    if (!f) throw ConfigError("cannot create scenario.cfg");
    std::string text = data.config.to_text();
    std::fwrite(text.data(), 1, text.size(), f);
    std::fclose(f);
  }
}

}  // namespace mobiscope
