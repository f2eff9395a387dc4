#include "mobiscope/pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "json.hpp"

using namespace mobiscope;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / "mobiscope_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

ScenarioConfig pipeline_scenario(std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.seed = seed;
  cfg.devices_per_arm = 60;
  cfg.background_devices = 30;
  cfg.n_months = 6;
  cfg.start_month = YearMonth(2018, 7);
  cfg.opening = YearMonth(2018, 10);
  cfg.base_trip_rate = 40.0;
  cfg.device_effect_sd = 3.0;  // keep every device safely above the filter
  cfg.effect_trips = 5.0;
  return cfg;
}

}  // namespace

TEST_CASE("memory pipeline recovers ground truth end to end") {
  auto data = generate(pipeline_scenario(42));
  Thresholds th;
  EventStudySpec spec;
  spec.base_month_idx = data.window.month_index(data.config.opening) - 1;
  auto res = run_pipeline_memory(data, th, OutcomeSelector{OutcomeKind::trips_total, -1}, spec,
                                 true, 1);

  // Every cohort device passes the filter and gets a home every month.
  CHECK(res.devices_passing == data.device_names.size());
  std::map<std::pair<DeviceIdx, int>, const HomeLocation*> home_of;
  for (const auto& h : res.homes) home_of[{h.device, h.month_idx}] = &h;
  for (std::size_t d = 0; d < data.truth.devices.size(); ++d) {
    for (int m = 0; m < data.truth.n_months; ++m) {
      auto it = home_of.find({DeviceIdx(d), m});
      REQUIRE(it != home_of.end());
      CHECK(geodesic_distance(it->second->loc(), data.truth.devices[d].home) < 46.0);
    }
  }

  // Detected trips match the truth exactly under default knobs; every trip is
  // matched to its POI.
  std::map<std::pair<DeviceIdx, int>, std::uint32_t> trips, matched;
  for (const Stay& s : res.stays) {
    if (!s.is_trip || s.month_idx < 0) continue;
    ++trips[{s.device, s.month_idx}];
    if (s.poi >= 0) ++matched[{s.device, s.month_idx}];
  }
  for (std::size_t d = 0; d < data.truth.devices.size(); ++d) {
    for (int m = 0; m < data.truth.n_months; ++m) {
      std::uint32_t want = data.truth.trips_of(d, m);
      auto it = trips.find({DeviceIdx(d), m});
      CHECK((it == trips.end() ? 0u : it->second) == want);
      auto mt = matched.find({DeviceIdx(d), m});
      CHECK((mt == matched.end() ? 0u : mt->second) == want);
    }
  }

  // Pipeline profiles equal the ground-truth profiles (same counts).
  auto truth_ex = data.truth.true_exposure(data.pois.size());
  for (const auto& prof : res.profiles) {
    CHECK(prof.entropy ==
          doctest::Approx(truth_ex.poi_entropy[std::size_t(prof.poi)]).epsilon(1e-12));
    CHECK(prof.high_income_share ==
          doctest::Approx(truth_ex.poi_high_share[std::size_t(prof.poi)]).epsilon(1e-12));
  }

  // Exposure records equal the truth (visit-weighted means).
  for (const auto& e : res.exposure) {
    std::size_t i = std::size_t(e.device) * std::size_t(data.truth.n_months) +
                    std::size_t(e.month_idx);
    REQUIRE(e.means_defined);
    CHECK(e.mean_entropy == doctest::Approx(truth_ex.mean_entropy[i]).epsilon(1e-9));
    CHECK(e.mean_high_income_share ==
          doctest::Approx(truth_ex.mean_high_share[i]).epsilon(1e-9));
  }

  // Panel conservation: sum(y * n) = total trips over paneled devices.
  double conserved = 0.0;
  for (const auto& c : res.panel) conserved += c.y * c.n_devices;
  std::uint64_t cohort_trips = 0;
  for (std::size_t d = 0; d < data.truth.devices.size(); ++d) {
    if (data.truth.devices[d].background) continue;
    for (int m = 0; m < data.truth.n_months; ++m) cohort_trips += data.truth.trips_of(d, m);
  }
  CHECK(conserved == doctest::Approx(double(cohort_trips)).epsilon(1e-9));

  // Background devices never enter the panel records.
  for (const auto& r : res.records)
    CHECK(!data.truth.devices[r.device].background);

  // The fit recovers the injected effect within a loose Monte Carlo band.
  CHECK(std::abs(res.fit.pooled_beta - 5.0) < 5.0 * res.fit.pooled_se + 1.0);
}

TEST_CASE("scenario files round trip through the reference loaders") {
  auto data = generate(pipeline_scenario(7));
  std::string dir = fresh_dir("roundtrip");
  write_scenario_files(data, dir, true);

  auto stations = load_stations(dir + "/stations.csv");
  REQUIRE(stations.size() == data.stations.size());
  for (std::size_t i = 0; i < stations.size(); ++i) {
    CHECK(stations[i].station_id == data.stations[i].station_id);
    CHECK(stations[i].line == data.stations[i].line);
    CHECK(geodesic_distance(stations[i].location, data.stations[i].location) < 0.05);
  }

  auto pois = load_pois(dir + "/pois.csv");
  REQUIRE(pois.size() == data.pois.size());
  CHECK(pois[3].poi_id == data.pois[3].poi_id);

  auto zones = load_zones(dir + "/zones.geojson");
  REQUIRE(zones.size() == 6);
  for (const auto& z : zones) CHECK((z.stratum >= 1 && z.stratum <= 6));

  auto regions = load_regions(dir + "/regions.geojson");
  REQUIRE(regions.size() == 5);
  CHECK(regions[0].region_id == "center");

  // Gzip pings parse identically to the in-memory set (modulo coordinate
  // quantization in the CSV).
  StringPool pool;
  auto parsed = parse_pings(dir + "/pings.csv.gz", data.window, pool);
  CHECK(parsed.report.emitted == data.pings.size());
  CHECK(parsed.report.total_rejected() == 0);
}

TEST_CASE("gzip writer output is deterministic") {
  std::string dir = fresh_dir("gzdet");
  for (int i = 0; i < 2; ++i) {
    GzipWriter gz(dir + "/f" + std::to_string(i) + ".gz");
    gz.write("hello,world\n");
    gz.write("1,2\n");
    gz.close();
  }
  std::ifstream a(dir + "/f0.gz", std::ios::binary), b(dir + "/f1.gz", std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), {});
  std::string sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
  CHECK(!sa.empty());
}

TEST_CASE("pipeline config parses, validates, and digests stably") {
  std::string dir = fresh_dir("cfg");
  std::string path = dir + "/pipeline.cfg";
  {
    std::ofstream out(path);
    out << "# test config\n"
        << "pings=pings.csv\npois=pois.csv\nzones=zones.geojson\n"
        << "regions=regions.geojson\nstations=stations.csv\nworkdir=work\n"
        << "study_start=2018-07\nstudy_end=2019-06\nopening_month=2018-12\n"
        << "timezone=America/Bogota\norigin_lat=4.6\norigin_lon=-74.1\n"
        << "outcome=trips_total\n";
  }
  auto cfg = PipelineConfig::load(path);
  CHECK(cfg.base_month == YearMonth(2018, 11));  // defaults to opening - 1
  CHECK(cfg.tz_offset_min == -300);
  CHECK(cfg.th.stay.radius_m == 100.0);
  CHECK(cfg.th.poi_radius_m == 50.0);
  CHECK(cfg.window().n_months() == 12);
  CHECK(fs::path(cfg.pings).is_absolute());
  CHECK(cfg.semantic_text() == PipelineConfig::load(path).semantic_text());

  {
    std::ofstream out(path, std::ios::app);
    out << "bogus_key=1\n";
  }
  CHECK_THROWS_AS(PipelineConfig::load(path), ConfigError);
}

TEST_CASE("MOBISCOPE_WORKDIR overrides the configured workdir") {
  std::string dir = fresh_dir("envwd");
  std::string path = dir + "/c.cfg";
  {
    std::ofstream out(path);
    out << "pings=p.csv\npois=p2.csv\nzones=z.geojson\nregions=r.geojson\nstations=s.csv\n"
        << "workdir=configured\n";
  }
  setenv("MOBISCOPE_WORKDIR", "/tmp/mobiscope_tests/env_override", 1);
  auto cfg = PipelineConfig::load(path);
  CHECK(cfg.workdir == "/tmp/mobiscope_tests/env_override");
  unsetenv("MOBISCOPE_WORKDIR");
  auto cfg2 = PipelineConfig::load(path);
  CHECK(cfg2.workdir.find("configured") != std::string::npos);
}

TEST_CASE("config rejections") {
  std::string dir = fresh_dir("cfg2");
  auto write_cfg = [&](const std::string& extra) {
    std::string path = dir + "/c.cfg";
    std::ofstream out(path);
    out << "pings=p.csv\npois=p2.csv\nzones=z.geojson\nregions=r.geojson\nstations=s.csv\n"
        << extra;
    return path;
  };
  CHECK_THROWS_AS(PipelineConfig::load(write_cfg("se_mode=banana\n")), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::load(write_cfg("study_start=2020-01\nstudy_end=2019-01\n")),
                  ConfigError);
  CHECK_THROWS_AS(PipelineConfig::load(write_cfg("opening_month=2021-01\n")), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::load(write_cfg("exposure_weighting=sometimes\n")), ConfigError);
}

TEST_CASE("digest helpers are stable and content sensitive") {
  CHECK(digest_text("abc") == digest_text("abc"));
  CHECK(digest_text("abc") != digest_text("abd"));
  std::string dir = fresh_dir("digest");
  {
    std::ofstream out(dir + "/x.txt");
    out << "payload";
  }
  CHECK(digest_file(dir + "/x.txt") == digest_text("payload"));
  CHECK_THROWS_AS(digest_file(dir + "/missing.txt"), MissingArtifactError);
}

namespace {

// Writes a scenario + config pair and runs simulate and the full stage chain
// through the file-based driver.
struct DriverResult {
  std::string dir;
  PipelineConfig cfg;
};

DriverResult run_driver_scenario(const std::string& name, double effect, std::uint64_t seed) {
  std::string dir = fresh_dir(name);
  ScenarioConfig scen;
  scen.seed = seed;
  scen.devices_per_arm = 60;
  scen.n_months = 12;
  scen.base_trip_rate = 20.0;
  scen.device_effect_sd = 2.0;
  scen.effect_trips = effect;
  {
    std::ofstream out(dir + "/scenario.cfg");
    out << scen.to_text();
  }
  {
    std::ofstream out(dir + "/pipeline.cfg");
    out << "pings=pings.csv.gz\npois=pois.csv\nzones=zones.geojson\nregions=regions.geojson\n"
        << "stations=stations.csv\nworkdir=.\nscenario=scenario.cfg\n"
        << "study_start=2018-07\nstudy_end=2019-06\nopening_month=2018-12\nthreads=1\n";
  }
  PipelineConfig cfg = PipelineConfig::load(dir + "/pipeline.cfg");
  PipelineDriver driver(cfg, false, 0, false);
  driver.run_stage("simulate");
  driver.run_all();
  return DriverResult{dir, cfg};
}

std::size_t csv_data_rows(const std::string& path) {
  CsvReader r(path);
  std::size_t rows = 0;
  while (r.next_row()) ++rows;
  return rows > 0 ? rows - 1 : 0;
}

}  // namespace

TEST_CASE("file-based driver: fit artifacts and report table") {
  auto run = run_driver_scenario("driver12", 12.0, 31);

  // 12-month window, base omitted: 11 coefficient rows.
  CHECK(csv_data_rows(run.dir + "/fit.csv") == 11);

  PipelineDriver driver(run.cfg, false, 0, false);
  std::string table;
  CHECK(driver.report(&table) == 0);
  CHECK(csv_data_rows(run.dir + "/report.csv") == 11);

  // Post months flagged, pre months not (fixed seed chosen accordingly).
  CsvReader r(run.dir + "/report.csv");
  r.next_row();  // header
  int flagged_post = 0, flagged_pre = 0;
  while (r.next_row()) {
    const auto& f = r.fields();
    auto ym = YearMonth::parse(f[0]);
    REQUIRE(ym.has_value());
    bool sig = f[5] == "1";
    if (*ym >= YearMonth(2018, 12))
      flagged_post += sig;
    else
      flagged_pre += sig;
  }
  CHECK(flagged_post == 7);
  CHECK(flagged_pre == 0);
  CHECK(table.find("pooled post-opening effect") != std::string::npos);

  // Zero-effect fit: no month flagged (fixed seed chosen accordingly).
  auto null_run = run_driver_scenario("driver_null", 0.0, 33);
  PipelineDriver(null_run.cfg, false, 0, false).report(nullptr);
  CsvReader rn(null_run.dir + "/report.csv");
  rn.next_row();  // header
  int flagged = 0;
  while (rn.next_row()) flagged += rn.fields()[5] == "1";
  CHECK(flagged == 0);
}

TEST_CASE("fit stage handles a window with no pre-period besides the base") {
  std::string dir = fresh_dir("nopre");
  {
    std::ofstream scen(dir + "/scenario.cfg");
    scen << "devices_per_arm=25\nmonths=4\nstart_month=2018-07\nopening_month=2018-08\n"
         << "base_trip_rate=15\nseed=3\n";
    std::ofstream out(dir + "/pipeline.cfg");
    out << "pings=pings.csv.gz\npois=pois.csv\nzones=zones.geojson\nregions=regions.geojson\n"
        << "stations=stations.csv\nworkdir=.\nscenario=scenario.cfg\n"
        << "study_start=2018-07\nstudy_end=2018-10\nopening_month=2018-08\nthreads=1\n";
  }
  PipelineConfig cfg = PipelineConfig::load(dir + "/pipeline.cfg");
  CHECK(cfg.base_month == YearMonth(2018, 7));
  PipelineDriver driver(cfg, false, 0, false);
  driver.run_stage("simulate");
  driver.run_all();

  std::ifstream in(dir + "/fit.json");
  nlohmann::json doc;
  in >> doc;
  CHECK(doc.at("pretrend").at("df").get<int>() == 0);
  CHECK(doc.at("pretrend").at("p").is_null());
  std::string table;
  driver.report(&table);
  CHECK(table.find("n/a (no pre-period coefficients)") != std::string::npos);
}

TEST_CASE("simulate honors the seed override and caches by scenario digest") {
  std::string dir = fresh_dir("seedover");
  {
    std::ofstream out(dir + "/pipeline.cfg");
    out << "pings=pings.csv.gz\npois=pois.csv\nzones=zones.geojson\nregions=regions.geojson\n"
        << "stations=stations.csv\nworkdir=.\nstudy_start=2018-07\nstudy_end=2018-10\n"
        << "opening_month=2018-09\nscenario=scenario.cfg\nthreads=1\n";
    std::ofstream scen(dir + "/scenario.cfg");
    scen << "devices_per_arm=10\nmonths=4\nstart_month=2018-07\nopening_month=2018-09\n"
         << "base_trip_rate=15\n";
  }
  PipelineConfig cfg = PipelineConfig::load(dir + "/pipeline.cfg");

  PipelineDriver d1(cfg, false, 111, true);
  d1.run_stage("simulate");
  auto digest1 = digest_file(dir + "/pings.csv.gz");

  // Same seed again: stage skipped, artifact untouched.
  PipelineDriver d2(cfg, false, 111, true);
  d2.run_stage("simulate");
  CHECK(digest_file(dir + "/pings.csv.gz") == digest1);

  // Different seed: regenerated.
  PipelineDriver d3(cfg, false, 222, true);
  d3.run_stage("simulate");
  CHECK(digest_file(dir + "/pings.csv.gz") != digest1);
}

TEST_CASE("unique-poi exposure weighting flows through the memory pipeline") {
  auto data = generate(pipeline_scenario(21));
  Thresholds th;
  th.exposure.by_unique_poi = true;
  EventStudySpec spec;
  spec.base_month_idx = data.window.month_index(data.config.opening) - 1;
  auto res = run_pipeline_memory(data, th, OutcomeSelector{OutcomeKind::mean_entropy, -1}, spec,
                                 true, 1);
  CHECK(!res.exposure.empty());
  CHECK(!res.panel.empty());
}
