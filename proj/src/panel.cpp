#include "mobiscope/panel.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>

namespace mobiscope {

std::vector<DevicePanelRecord> build_device_records(
    std::span<const Stay> stays, std::span<const ExposureRecord> exposure,
    std::span<const HomeLocation> homes, std::span<const Station> stations, const HexGrid& grid,
    std::size_t n_regions, const StratumGroups& groups) {
  unsigned low_mask = strata_mask(groups.low);
  unsigned mid_mask = strata_mask(groups.mid);
  unsigned high_mask = strata_mask(groups.high);

  std::vector<DevicePanelRecord> out;
  std::size_t si = 0, ei = 0;
  std::size_t h = 0;
  while (h < homes.size()) {
    DeviceIdx dev = homes[h].device;
    std::size_t dev_first = out.size();
    bool saw_treatment = false, saw_control = false;

    while (si < stays.size() && stays[si].device < dev) ++si;
    while (ei < exposure.size() && exposure[ei].device < dev) ++ei;

    for (; h < homes.size() && homes[h].device == dev; ++h) {
      const HomeLocation& home = homes[h];
      auto station = in_buffer(home.loc(), stations);
      if (!station) continue;  // home outside all buffers: no record this month

      DevicePanelRecord rec;
      rec.device = dev;
      rec.month_idx = home.month_idx;
      rec.home_hex = hex_key(grid.assign(home.loc()));
      rec.arm = stations[*station].line;
      rec.trips_by_region.assign(n_regions, 0);
      (rec.arm == Line::treatment ? saw_treatment : saw_control) = true;

      std::size_t s = si;
      for (; s < stays.size() && stays[s].device == dev; ++s) {
        const Stay& st = stays[s];
        if (st.month_idx != home.month_idx || !st.is_trip) continue;
        ++rec.trips_total;
        if (st.stratum >= 1) {
          unsigned bit = 1u << (st.stratum - 1);
          if (bit & low_mask) ++rec.trips_low;
          if (bit & mid_mask) ++rec.trips_mid;
          if (bit & high_mask) ++rec.trips_high;
        }
        if (st.region >= 0 && std::size_t(st.region) < n_regions)
          ++rec.trips_by_region[std::size_t(st.region)];
      }

      std::size_t e = ei;
      for (; e < exposure.size() && exposure[e].device == dev; ++e) {
        if (exposure[e].month_idx != home.month_idx) continue;
        rec.poi_visits = exposure[e].poi_visit_count;
        rec.unique_pois = exposure[e].unique_poi_count;
        rec.has_exposure = exposure[e].means_defined;
        rec.mean_entropy = exposure[e].mean_entropy;
        rec.mean_high_share = exposure[e].mean_high_income_share;
        break;
      }
      out.push_back(std::move(rec));
    }

    if (saw_treatment && saw_control) out.resize(dev_first);  // arm mover: drop device
  }
  return out;
}

std::string OutcomeSelector::str(std::span<const Region> regions) const {
  switch (kind) {
    case OutcomeKind::trips_total: return "trips_total";
    case OutcomeKind::trips_low: return "trips_low";
    case OutcomeKind::trips_mid: return "trips_mid";
    case OutcomeKind::trips_high: return "trips_high";
    case OutcomeKind::poi_visits: return "poi_visits";
    case OutcomeKind::unique_pois: return "unique_pois";
    case OutcomeKind::mean_entropy: return "mean_entropy";
    case OutcomeKind::mean_high_share: return "mean_high_share";
    case OutcomeKind::trips_region:
      return "trips_region:" +
             (region >= 0 && std::size_t(region) < regions.size()
                  ? regions[std::size_t(region)].region_id
                  : std::string("?"));
  }
  return "?";
}

std::optional<OutcomeSelector> OutcomeSelector::parse(std::string_view s,
                                                      std::span<const Region> regions) {
  if (s == "trips_total") return OutcomeSelector{OutcomeKind::trips_total, -1};
  if (s == "trips_low") return OutcomeSelector{OutcomeKind::trips_low, -1};
  if (s == "trips_mid") return OutcomeSelector{OutcomeKind::trips_mid, -1};
  if (s == "trips_high") return OutcomeSelector{OutcomeKind::trips_high, -1};
  if (s == "poi_visits") return OutcomeSelector{OutcomeKind::poi_visits, -1};
  if (s == "unique_pois") return OutcomeSelector{OutcomeKind::unique_pois, -1};
  if (s == "mean_entropy") return OutcomeSelector{OutcomeKind::mean_entropy, -1};
  if (s == "mean_high_share") return OutcomeSelector{OutcomeKind::mean_high_share, -1};
  constexpr std::string_view prefix = "trips_region:";
  if (s.rfind(prefix, 0) == 0) {
    auto id = s.substr(prefix.size());
    for (std::size_t i = 0; i < regions.size(); ++i)
      if (regions[i].region_id == id) return OutcomeSelector{OutcomeKind::trips_region, std::int32_t(i)};
  }
  return std::nullopt;
}

namespace {

std::optional<double> outcome_value(const DevicePanelRecord& r, const OutcomeSelector& sel) {
  switch (sel.kind) {
    case OutcomeKind::trips_total: return double(r.trips_total);
    case OutcomeKind::trips_low: return double(r.trips_low);
    case OutcomeKind::trips_mid: return double(r.trips_mid);
    case OutcomeKind::trips_high: return double(r.trips_high);
    case OutcomeKind::poi_visits: return double(r.poi_visits);
    case OutcomeKind::unique_pois: return double(r.unique_pois);
    case OutcomeKind::trips_region:
      if (sel.region < 0 || std::size_t(sel.region) >= r.trips_by_region.size()) return std::nullopt;
      return double(r.trips_by_region[std::size_t(sel.region)]);
    case OutcomeKind::mean_entropy:
      if (!r.has_exposure) return std::nullopt;
      return r.mean_entropy;
    case OutcomeKind::mean_high_share:
      if (!r.has_exposure) return std::nullopt;
      return r.mean_high_share;
  }
  return std::nullopt;
}

}  // namespace

std::vector<PanelCell> build_panel(std::span<const DevicePanelRecord> records,
                                   const OutcomeSelector& outcome, std::int32_t opening_month_idx,
                                   std::span<const Station> stations, const HexGrid& grid) {
  struct Agg {
    double sum = 0.0;
    std::uint32_t n = 0;
    std::uint32_t n_treat_records = 0;
    std::uint32_t n_ctrl_records = 0;
  };
  std::map<std::pair<std::uint64_t, std::int32_t>, Agg> cells;
  std::map<std::uint64_t, std::pair<std::uint32_t, std::uint32_t>> hex_arm_votes;

  for (const DevicePanelRecord& r : records) {
    auto& votes = hex_arm_votes[r.home_hex];
    (r.arm == Line::treatment ? votes.first : votes.second)++;
    auto v = outcome_value(r, outcome);
    if (!v) continue;
    Agg& a = cells[{r.home_hex, r.month_idx}];
    a.sum += *v;
    ++a.n;
  }

  // Hex arm: buffer membership of the cell center, else majority of records.
  std::unordered_map<std::uint64_t, bool> hex_treated;
  for (const auto& [hex, votes] : hex_arm_votes) {
    auto station = in_buffer(grid.center(hex_from_key(hex)), stations);
    bool treated;
    if (station)
      treated = stations[*station].line == Line::treatment;
    else
      treated = votes.first > votes.second;
    hex_treated[hex] = treated;
  }

  std::vector<PanelCell> out;
  out.reserve(cells.size());
  for (const auto& [key, agg] : cells) {
    PanelCell c;
    c.hex = key.first;
    c.month_idx = key.second;
    c.y = agg.sum / double(agg.n);
    c.n_devices = agg.n;
    c.treated_arm = hex_treated[key.first];
    c.cable = c.treated_arm && key.second >= opening_month_idx;
    out.push_back(c);
  }
  return out;
}

}  // namespace mobiscope
