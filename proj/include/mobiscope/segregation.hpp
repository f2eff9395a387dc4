#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "mobiscope/stays.hpp"

namespace mobiscope {

inline constexpr int kNumStrata = 6;

struct PoiVisitorProfile {
  std::int32_t poi = -1;
  std::array<std::uint32_t, kNumStrata> visits_by_stratum{};
  double entropy = 0.0;            // nats, in [0, ln 6]
  double high_income_share = 0.0;  // share from the configured high strata

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto v : visits_by_stratum) t += v;
    return t;
  }
};

// Shannon entropy in nats of a count vector (zero counts contribute nothing).
double shannon_entropy(std::span<const std::uint32_t> counts);

struct ExposureWeighting {
  bool by_unique_poi = false;  // default: visit-weighted
};

struct ExposureRecord {
  DeviceIdx device = 0;
  std::int32_t month_idx = -1;
  std::uint32_t poi_visit_count = 0;
  std::uint32_t unique_poi_count = 0;
  bool means_defined = false;  // false when no visited POI carries a profile
  double mean_entropy = 0.0;
  double mean_high_income_share = 0.0;
};

// Maps (device, month) to the visitor's home stratum; 0 when unknown.
struct HomeStratumTable {
  int n_months = 0;
  std::vector<std::int8_t> strata;  // device-major, no entry => 0

  void init(std::size_t n_devices, int months) {
    n_months = months;
    strata.assign(n_devices * std::size_t(months), 0);
  }
  std::int8_t get(DeviceIdx d, std::int32_t m) const {
    std::size_t i = std::size_t(d) * std::size_t(n_months) + std::size_t(m);
    return i < strata.size() ? strata[i] : 0;
  }
  void set(DeviceIdx d, std::int32_t m, std::int8_t s) {
    strata[std::size_t(d) * std::size_t(n_months) + std::size_t(m)] = s;
  }
};

// POI-level visitor mix over the full study window. Visits whose device lacks
// a home stratum that month are skipped; POIs with no attributable visits are
// absent from the output. `high_strata` is a bitmask over strata 1..6.
std::vector<PoiVisitorProfile> poi_profiles(std::span<const Stay> matched_trips,
                                            const HomeStratumTable& home_strata,
                                            std::size_t n_pois, unsigned high_strata_mask);

// Per device-month averages of profile entropy / high-income share over the
// device's matched visits, holding profiles fixed. Stays must be sorted by
// (device, start). Only visits to profiled POIs enter the means.
std::vector<ExposureRecord> exposure_by_device_month(std::span<const Stay> matched_trips,
                                                     std::span<const PoiVisitorProfile> profiles,
                                                     std::size_t n_pois,
                                                     const ExposureWeighting& weighting);

inline unsigned strata_mask(std::span<const int> strata) {
  unsigned m = 0;
  for (int s : strata)
    if (s >= 1 && s <= kNumStrata) m |= 1u << (s - 1);
  return m;
}

}  // namespace mobiscope
