#include "mobiscope/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace mobiscope {

namespace {

namespace fs = std::filesystem;

std::string resolve_path(const std::string& base_dir, const std::string& p) {
  if (p.empty()) return p;
  fs::path path(p);
  if (path.is_absolute()) return p;
  return (fs::path(base_dir) / path).lexically_normal().string();
}

}  // namespace

PipelineConfig PipelineConfig::load(const std::string& path) {
  KvConfig kv = KvConfig::parse_file(path);
  std::string base = fs::path(path).parent_path().string();
  if (base.empty()) base = ".";

  PipelineConfig c;
  c.pings = resolve_path(base, kv.get_str("pings", ""));
  c.pois = resolve_path(base, kv.get_str("pois", ""));
  c.zones = resolve_path(base, kv.get_str("zones", ""));
  c.regions = resolve_path(base, kv.get_str("regions", ""));
  c.stations = resolve_path(base, kv.get_str("stations", ""));
  c.workdir = resolve_path(base, kv.get_str("workdir", "work"));
  c.scenario = resolve_path(base, kv.get_str("scenario", ""));
  if (const char* env = std::getenv("MOBISCOPE_WORKDIR"); env && *env) c.workdir = env;

  auto ym = [&](const char* key, YearMonth fallback) {
    std::string s = kv.get_str(key, fallback.str());
    auto v = YearMonth::parse(s);
    if (!v) throw ConfigError(std::string("bad ") + key + ": " + s);
    return *v;
  };
  c.study_start = ym("study_start", c.study_start);
  c.study_end = ym("study_end", c.study_end);
  c.opening = ym("opening_month", c.opening);
  c.base_month = ym("base_month", YearMonth(c.opening.code - 1));
  c.tz_offset_min = parse_tz_offset_minutes(kv.get_str("timezone", "America/Bogota"));

  c.grid.origin.lat = kv.get_double("origin_lat", c.grid.origin.lat);
  c.grid.origin.lon = kv.get_double("origin_lon", c.grid.origin.lon);
  c.grid.side_m = kv.get_double("side_m", c.grid.side_m);

  c.th.stay.radius_m = kv.get_double("stay_radius_m", 100.0);
  c.th.stay.min_duration_s = kv.get_int("stay_min_minutes", 5) * 60;
  c.th.stay.max_duration_s = kv.get_int("stay_max_hours", 24) * 3600;
  c.th.filter.min_pings_per_month = int(kv.get_int("min_pings_per_month", 50));
  c.th.filter.min_active_days = int(kv.get_int("min_active_days", 10));
  c.th.home.cluster_radius_m = kv.get_double("home_cluster_radius_m", 100.0);
  c.th.home.min_night_pings = int(kv.get_int("min_night_pings", 5));
  c.th.poi_radius_m = kv.get_double("poi_radius_m", 50.0);
  c.th.outside_home_m = kv.get_double("outside_home_m", 100.0);
  c.th.high_income_strata = kv.get_int_list("high_income_strata", {4, 5, 6});
  c.th.dest_groups.low = kv.get_int_list("dest_low_strata", {1, 2});
  c.th.dest_groups.mid = kv.get_int_list("dest_mid_strata", {3, 4});
  c.th.dest_groups.high = kv.get_int_list("dest_high_strata", {5, 6});
  std::string weighting = kv.get_str("exposure_weighting", "visits");
  if (weighting == "visits")
    c.th.exposure.by_unique_poi = false;
  else if (weighting == "unique_pois")
    c.th.exposure.by_unique_poi = true;
  else
    throw ConfigError("exposure_weighting must be visits or unique_pois");

  c.outcome = kv.get_str("outcome", "trips_total");
  std::string se = kv.get_str("se_mode", "cluster_by_unit");
  auto mode = parse_se_mode(se);
  if (!mode) throw ConfigError("se_mode must be hc1 or cluster_by_unit");
  c.se_mode = *mode;
  c.weight_by_devices = kv.get_int("weight_by_devices", 0) != 0;
  c.threads = int(kv.get_int("threads", 0));
  c.compress_pings = kv.get_int("compress_pings", 1) != 0;

  if (c.study_end < c.study_start) throw ConfigError("study_end precedes study_start");
  if (c.study_start.next() > c.study_end)
    throw ConfigError("study window must span at least 2 months");
  if (c.opening < c.study_start || c.study_end < c.opening)
    throw ConfigError("opening_month outside the study window");
  if (c.base_month < c.study_start || c.study_end < c.base_month)
    throw ConfigError("base_month outside the study window");
  if (c.th.stay.radius_m <= 0 || c.th.poi_radius_m <= 0 || c.th.outside_home_m <= 0 ||
      c.grid.side_m <= 0)
    throw ConfigError("thresholds must be positive");

  auto unknown = kv.unknown_keys();
  if (!unknown.empty())
    throw ConfigError(path + ": unknown config key " + unknown.front());
  return c;
}

std::string PipelineConfig::semantic_text() const {
  std::string s;
  auto put = [&s](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
  put("study_start", study_start.str());
  put("study_end", study_end.str());
  put("opening_month", opening.str());
  put("base_month", base_month.str());
  put("tz_offset_min", std::to_string(tz_offset_min));
  put("origin_lat", format_double(grid.origin.lat));
  put("origin_lon", format_double(grid.origin.lon));
  put("side_m", format_double(grid.side_m));
  put("stay_radius_m", format_double(th.stay.radius_m));
  put("stay_min_s", std::to_string(th.stay.min_duration_s));
  put("stay_max_s", std::to_string(th.stay.max_duration_s));
  put("min_pings_per_month", std::to_string(th.filter.min_pings_per_month));
  put("min_active_days", std::to_string(th.filter.min_active_days));
  put("home_cluster_radius_m", format_double(th.home.cluster_radius_m));
  put("min_night_pings", std::to_string(th.home.min_night_pings));
  put("poi_radius_m", format_double(th.poi_radius_m));
  put("outside_home_m", format_double(th.outside_home_m));
  auto list = [](const std::vector<int>& v) {
    std::string t;
    for (std::size_t i = 0; i < v.size(); ++i) t += (i ? "," : "") + std::to_string(v[i]);
    return t;
  };
  put("high_income_strata", list(th.high_income_strata));
  put("dest_low_strata", list(th.dest_groups.low));
  put("dest_mid_strata", list(th.dest_groups.mid));
  put("dest_high_strata", list(th.dest_groups.high));
  put("exposure_weighting", th.exposure.by_unique_poi ? "unique_pois" : "visits");
  put("outcome", outcome);
  put("se_mode", std::string(se_mode_name(se_mode)));
  put("weight_by_devices", weight_by_devices ? "1" : "0");
  return s;
}

std::vector<Station> load_stations(const std::string& path) {
  CsvReader r(path);
  std::vector<Station> out;
  bool first = true;
  while (r.next_row()) {
    const auto& f = r.fields();
    if (first) {
      first = false;
      if (!f.empty() && f[0] == "station_id") continue;
    }
    if (f.size() < 4) throw ConfigError(path + ": station rows need station_id,lat,lon,line");
    Station s;
    s.station_id = std::string(f[0]);
    auto lat = parse_double(f[1]), lon = parse_double(f[2]);
    auto line = parse_line(f[3]);
    if (!lat || !lon || !line) throw ConfigError(path + ": bad station row " + std::to_string(r.line_no()));
    s.location = GeoPoint{*lat, *lon};
    if (!valid_point(s.location)) throw ConfigError(path + ": station out of range");
    s.line = *line;
    if (f.size() >= 5 && !f[4].empty()) {
      auto b = parse_double(f[4]);
      if (!b || *b <= 0) throw ConfigError(path + ": bad buffer_m");
      s.buffer_m = *b;
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw ConfigError(path + ": no stations");
  return out;
}

std::vector<Poi> load_pois(const std::string& path) {
  CsvReader r(path);
  std::vector<Poi> out;
  bool first = true;
  while (r.next_row()) {
    const auto& f = r.fields();
    if (first) {
      first = false;
      if (!f.empty() && f[0] == "poi_id") continue;
    }
    if (f.size() < 3) throw ConfigError(path + ": poi rows need poi_id,lat,lon");
    auto lat = parse_double(f[1]), lon = parse_double(f[2]);
    if (!lat || !lon) throw ConfigError(path + ": bad poi row " + std::to_string(r.line_no()));
    Poi p;
    p.poi_id = std::string(f[0]);
    p.loc = GeoPoint{*lat, *lon};
    if (!valid_point(p.loc)) throw ConfigError(path + ": poi out of range");
    if (f.size() >= 4) p.category = std::string(f[3]);
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

std::vector<Ring> parse_geojson_rings(const nlohmann::json& geometry, const std::string& path) {
  std::vector<Ring> rings;
  std::string type = geometry.at("type").get<std::string>();
  auto read_poly = [&rings](const nlohmann::json& poly) {
    for (const auto& ring : poly) {
      Ring r;
      for (const auto& pos : ring) r.push_back(GeoPoint{pos.at(1).get<double>(), pos.at(0).get<double>()});
      rings.push_back(std::move(r));
    }
  };
  if (type == "Polygon")
    read_poly(geometry.at("coordinates"));
  else if (type == "MultiPolygon")
    for (const auto& poly : geometry.at("coordinates")) read_poly(poly);
  else
    throw ConfigError(path + ": unsupported geometry type " + type);
  return rings;
}

nlohmann::json load_feature_collection(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw ConfigError(path + ": bad GeoJSON: " + e.what());
  }
  if (doc.value("type", "") != "FeatureCollection")
    throw ConfigError(path + ": expected a FeatureCollection");
  return doc;
}

}  // namespace

std::vector<StratumZone> load_zones(const std::string& path) {
  nlohmann::json doc = load_feature_collection(path);
  std::vector<StratumZone> out;
  for (const auto& feat : doc.at("features")) {
    StratumZone z;
    const auto& props = feat.at("properties");
    z.stratum = props.at("stratum").get<int>();
    if (z.stratum < 1 || z.stratum > kNumStrata)
      throw ConfigError(path + ": stratum must be 1..6");
    z.zone_id = props.value("zone_id", "zone" + std::to_string(out.size()));
    z.rings = parse_geojson_rings(feat.at("geometry"), path);
    out.push_back(std::move(z));
  }
  return out;
}

std::vector<Region> load_regions(const std::string& path) {
  nlohmann::json doc = load_feature_collection(path);
  std::vector<Region> out;
  for (const auto& feat : doc.at("features")) {
    Region r;
    r.region_id = feat.at("properties").at("region_id").get<std::string>();
    r.rings = parse_geojson_rings(feat.at("geometry"), path);
    out.push_back(std::move(r));
  }
  return out;
}

void annotate_stays(std::vector<Stay>& stays, const StudyWindow& window, const HexGrid& grid,
                    std::span<const StratumZone> zones, std::span<const Region> regions,
                    const PoiIndex& poi_index, double poi_radius_m, const AnnotateOptions& opt,
                    int threads) {
  PolygonLayerIndex zone_index, region_index;
  if (opt.with_zones) zone_index = PolygonLayerIndex::over_zones(zones);
  if (opt.with_regions) region_index = PolygonLayerIndex::over_regions(regions);
  parallel_chunks(stays.size(), threads, [&](std::size_t lo, std::size_t hi, int) {
    for (std::size_t i = lo; i < hi; ++i) {
      Stay& s = stays[i];
      std::int64_t day = window.clock.civil_day(s.start);
      YearMonth ym = window.clock.month_of_day(day);
      int mi = window.month_index(ym);
      s.month_idx = (mi >= 0 && mi < window.n_months()) ? mi : -1;
      if (opt.with_hex) s.hex = hex_key(grid.assign(s.centroid()));
      if (opt.with_zones) {
        auto hit = zone_index.first_hit(s.centroid());
        s.stratum = hit ? std::int8_t(zones[*hit].stratum) : 0;
      }
      if (opt.with_regions) {
        auto hit = region_index.first_hit(s.centroid());
        s.region = hit ? std::int16_t(*hit) : -1;
      }
      if (opt.with_poi && !poi_index.empty()) {
        auto poi = poi_index.nearest_within(s.centroid(), poi_radius_m);
        s.poi = poi ? std::int32_t(*poi) : -1;
      } else {
        s.poi = -1;
      }
    }
  });
}

void annotate_home_hexes(std::vector<HomeLocation>& homes, const HexGrid& grid) {
  for (HomeLocation& h : homes) h.hex = hex_key(grid.assign(h.loc()));
}

HomeStratumTable build_home_stratum_table(std::span<const HomeLocation> homes,
                                          std::span<const StratumZone> zones,
                                          std::size_t n_devices, int n_months) {
  HomeStratumTable table;
  table.init(n_devices, n_months);
  for (const HomeLocation& h : homes) {
    auto stratum = stratum_lookup(h.loc(), zones);
    if (stratum) table.set(h.device, h.month_idx, std::int8_t(*stratum));
  }
  return table;
}

MemoryPipelineResult run_pipeline_memory(const ScenarioData& data, const Thresholds& th,
                                         const OutcomeSelector& outcome, const EventStudySpec& spec,
                                         bool with_poi_stages, int threads) {
  MemoryPipelineResult res;
  const std::size_t n_devices = data.device_names.size();

  // Ingest: generated pings are valid, in-window, deduplicated and sorted by
  // construction, so only the device-quality filter applies here.
  auto pass = filter_devices(std::span(data.pings), n_devices, data.window, th.filter);
  res.reject.rows_in = data.pings.size();
  std::vector<Ping> pings;
  pings.reserve(data.pings.size());
  for (const Ping& p : data.pings)
    if (pass[p.device]) pings.push_back(p);
  res.reject.emitted = pings.size();
  for (auto f : pass) res.devices_passing += f;

  res.stays = detect_stays_all(pings, th.stay, threads);
  HexGrid grid(data.grid);
  PoiIndex poi_index;
  if (with_poi_stages) poi_index = PoiIndex(data.pois, std::max(100.0, th.poi_radius_m));
  // Hex ids on stays are artifact metadata; nothing downstream reads them, so
  // the in-memory path skips them. Zone/region tags only matter when the
  // stratified outcomes (which need the POI stages anyway) are in play.
  AnnotateOptions opt;
  opt.with_hex = false;
  opt.with_zones = with_poi_stages;
  opt.with_regions = with_poi_stages;
  opt.with_poi = with_poi_stages;
  annotate_stays(res.stays, data.window, grid, data.zones, data.regions, poi_index,
                 th.poi_radius_m, opt, threads);

  res.homes = infer_homes(pings, data.window, th.home, threads);
  annotate_home_hexes(res.homes, grid);
  mark_trips(res.stays, res.homes, th.outside_home_m);

  std::vector<Stay> trips;
  trips.reserve(res.stays.size());
  for (const Stay& s : res.stays)
    if (s.is_trip && s.month_idx >= 0) trips.push_back(s);

  if (with_poi_stages) {
    auto strata = build_home_stratum_table(res.homes, data.zones, n_devices,
                                           data.window.n_months());
    res.profiles = poi_profiles(trips, strata, data.pois.size(),
                                strata_mask(th.high_income_strata));
    res.exposure = exposure_by_device_month(trips, res.profiles, data.pois.size(), th.exposure);
  }

  res.records = build_device_records(trips, res.exposure, res.homes, data.stations, grid,
                                     data.regions.size(), th.dest_groups);
  res.panel = build_panel(res.records, outcome, data.window.month_index(data.config.opening),
                          data.stations, grid);
  res.fit = fit_event_study(res.panel, spec);
  return res;
}

}  // namespace mobiscope
