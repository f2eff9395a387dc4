#include "mobiscope/segregation.hpp"

#include <algorithm>
#include <cmath>

namespace mobiscope {

double shannon_entropy(std::span<const std::uint32_t> counts) {
  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  if (total == 0) return 0.0;
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    double p = double(c) / double(total);
    h -= p * std::log(p);
  }
  return h;
}

std::vector<PoiVisitorProfile> poi_profiles(std::span<const Stay> matched_trips,
                                            const HomeStratumTable& home_strata,
                                            std::size_t n_pois, unsigned high_strata_mask) {
  std::vector<std::array<std::uint32_t, kNumStrata>> counts(n_pois);
  for (const Stay& s : matched_trips) {
    if (s.poi < 0 || s.month_idx < 0) continue;
    std::int8_t stratum = home_strata.get(s.device, s.month_idx);
    if (stratum < 1 || stratum > kNumStrata) continue;
    ++counts[std::size_t(s.poi)][std::size_t(stratum - 1)];
  }
  std::vector<PoiVisitorProfile> out;
  for (std::size_t i = 0; i < n_pois; ++i) {
    std::uint64_t total = 0, high = 0;
    for (int s = 0; s < kNumStrata; ++s) {
      total += counts[i][std::size_t(s)];
      if (high_strata_mask & (1u << s)) high += counts[i][std::size_t(s)];
    }
    if (total == 0) continue;
    PoiVisitorProfile prof;
    prof.poi = std::int32_t(i);
    prof.visits_by_stratum = counts[i];
    prof.entropy = shannon_entropy(counts[i]);
    prof.high_income_share = double(high) / double(total);
    out.push_back(prof);
  }
  return out;
}

std::vector<ExposureRecord> exposure_by_device_month(std::span<const Stay> matched_trips,
                                                     std::span<const PoiVisitorProfile> profiles,
                                                     std::size_t n_pois,
                                                     const ExposureWeighting& weighting) {
  // Dense poi -> profile lookup.
  std::vector<std::int32_t> profile_of(n_pois, -1);
  for (std::size_t i = 0; i < profiles.size(); ++i)
    profile_of[std::size_t(profiles[i].poi)] = std::int32_t(i);

  std::vector<ExposureRecord> out;
  std::size_t i = 0;
  std::vector<std::int32_t> pois_seen;
  while (i < matched_trips.size()) {
    DeviceIdx dev = matched_trips[i].device;
    std::int32_t month = matched_trips[i].month_idx;
    std::size_t j = i;
    std::uint32_t visits = 0;
    double sum_ent = 0.0, sum_high = 0.0;
    std::uint64_t weighted_n = 0;
    pois_seen.clear();
    for (; j < matched_trips.size() && matched_trips[j].device == dev &&
           matched_trips[j].month_idx == month;
         ++j) {
      const Stay& s = matched_trips[j];
      if (s.poi < 0) continue;
      ++visits;
      pois_seen.push_back(s.poi);
    }
    std::sort(pois_seen.begin(), pois_seen.end());
    std::uint32_t uniques = 0;
    for (std::size_t k = 0; k < pois_seen.size(); ++k) {
      bool first_visit = k == 0 || pois_seen[k] != pois_seen[k - 1];
      if (first_visit) ++uniques;
      std::int32_t pidx = profile_of[std::size_t(pois_seen[k])];
      if (pidx < 0) continue;
      if (weighting.by_unique_poi && !first_visit) continue;
      sum_ent += profiles[std::size_t(pidx)].entropy;
      sum_high += profiles[std::size_t(pidx)].high_income_share;
      ++weighted_n;
    }
    if (visits > 0) {
      ExposureRecord rec;
      rec.device = dev;
      rec.month_idx = month;
      rec.poi_visit_count = visits;
      rec.unique_poi_count = uniques;
      if (weighted_n > 0) {
        rec.means_defined = true;
        rec.mean_entropy = sum_ent / double(weighted_n);
        rec.mean_high_income_share = sum_high / double(weighted_n);
      }
      out.push_back(rec);
    }
    i = j;
  }
  return out;
}

}  // namespace mobiscope
