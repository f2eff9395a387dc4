#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mobiscope/csv.hpp"
#include "mobiscope/geo.hpp"
#include "mobiscope/ingest.hpp"
#include "mobiscope/segregation.hpp"
#include "mobiscope/timeutil.hpp"

namespace mobiscope {

// Stylized two-arm city: a rectangle split into six horizontal stratum bands,
// a POI lattice, four opened stations and four planned ones. Defaults follow
// the study design (100 trips/person/month, +6.5 after opening).
struct ScenarioConfig {
  std::uint64_t seed = 1;
  int devices_per_arm = 500;
  int background_devices = 0;  // city-wide devices outside both buffers
  YearMonth start_month{2018, 7};
  int n_months = 12;
  YearMonth opening{2018, 12};
  int tz_offset_min = -300;

  double base_trip_rate = 100.0;
  double effect_trips = 6.5;
  double trip_dispersion = 2.0;  // variance = dispersion * mean
  int pings_per_stay_min = 2;
  double pings_per_stay_extra_mean = 0.5;
  int night_pings_min = 6;
  double night_pings_extra_mean = 3.0;
  double device_effect_sd = 6.0;
  double month_effect_amp = 5.0;
  double ping_sigma_m = 15.2;
  double ping_jitter_max_m = 45.0;

  GeoPoint city_origin{4.60, -74.10};
  double poi_spacing_m = 250.0;
  double home_max_offset_m = 450.0;

  // Pathology knobs (see perturb).
  double pretrend_slope = 0.0;    // extra treated trips per month of event time
  double attrition_hazard = 0.0;  // monthly probability of permanent dropout
  double sparse_fraction = 0.0;   // fraction of devices below the ping filter

  YearMonth end_month() const { return YearMonth(start_month.code + n_months - 1); }

  static ScenarioConfig from_kv(const KvConfig&);
  std::string to_text() const;
};

enum class PerturbKnob { pretrend_violation, attrition, sparse_devices };
ScenarioConfig perturb(ScenarioConfig cfg, PerturbKnob knob);

struct GroundTruth {
  struct DeviceTruth {
    Line arm = Line::control;
    bool background = false;
    bool sparse = false;
    GeoPoint home;
    int stratum = 0;
    int lifetime_months = 0;  // observed months (attrition)
  };
  std::vector<DeviceTruth> devices;
  int n_months = 0;
  std::vector<std::uint32_t> trips;          // device-major [d * n_months + m]
  std::vector<std::uint32_t> visit_offsets;  // size D*M+1 into visit_pois
  std::vector<std::int32_t> visit_pois;

  std::uint32_t trips_of(std::size_t d, int m) const { return trips[d * std::size_t(n_months) + std::size_t(m)]; }
  std::span<const std::int32_t> visits_of(std::size_t d, int m) const {
    std::size_t i = d * std::size_t(n_months) + std::size_t(m);
    return std::span<const std::int32_t>(visit_pois.data() + visit_offsets[i],
                                         visit_offsets[i + 1] - visit_offsets[i]);
  }

  // Visit-share profiles implied by the generated visits and true home strata.
  struct TrueExposure {
    std::vector<double> poi_entropy;      // per poi, NaN when unvisited
    std::vector<double> poi_high_share;   // strata {4,5,6}
    std::vector<double> mean_entropy;     // per device-month, NaN if no visits
    std::vector<double> mean_high_share;
  };
  TrueExposure true_exposure(std::size_t n_pois) const;
};

struct ScenarioData {
  ScenarioConfig config;
  std::vector<Ping> pings;  // sorted by (device, t), already deduplicated
  std::vector<std::string> device_names;
  std::vector<Poi> pois;
  std::vector<StratumZone> zones;
  std::vector<Region> regions;
  std::vector<Station> stations;
  GridSpec grid;
  StudyWindow window;
  GroundTruth truth;
};

// Deterministic for a fixed config (counter RNG keyed by seed/device/month).
ScenarioData generate(const ScenarioConfig& cfg);

// Emits the pipeline input files plus ground-truth tables into dir.
void write_scenario_files(const ScenarioData& data, const std::string& dir, bool gzip_pings);

}  // namespace mobiscope
