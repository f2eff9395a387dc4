#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mobiscope/geo.hpp"
#include "mobiscope/segregation.hpp"
#include "mobiscope/stays.hpp"

namespace mobiscope {

struct StratumGroups {
  std::vector<int> low{1, 2};
  std::vector<int> mid{3, 4};
  std::vector<int> high{5, 6};
};

struct DevicePanelRecord {
  DeviceIdx device = 0;
  std::int32_t month_idx = -1;
  std::uint64_t home_hex = Stay::kNoHex;
  Line arm = Line::control;
  std::uint32_t trips_total = 0;
  std::uint32_t trips_low = 0;
  std::uint32_t trips_mid = 0;
  std::uint32_t trips_high = 0;
  std::vector<std::uint32_t> trips_by_region;  // indexed by region table
  std::uint32_t poi_visits = 0;
  std::uint32_t unique_pois = 0;
  bool has_exposure = false;
  double mean_entropy = 0.0;
  double mean_high_share = 0.0;
};

struct PanelCell {
  std::uint64_t hex = 0;
  std::int32_t month_idx = -1;
  double y = 0.0;
  std::uint32_t n_devices = 0;
  bool cable = false;        // treated hex AND month >= opening
  bool treated_arm = false;  // hex belongs to the treatment-line buffer
};

// Joins trips, exposure, homes and stations into per-device-month records.
// Device-months whose home is outside every station buffer are omitted, and
// devices whose home arm ever changes are dropped entirely. All spans must be
// sorted by device (stays/exposure additionally by month within device).
std::vector<DevicePanelRecord> build_device_records(
    std::span<const Stay> stays, std::span<const ExposureRecord> exposure,
    std::span<const HomeLocation> homes, std::span<const Station> stations, const HexGrid& grid,
    std::size_t n_regions, const StratumGroups& groups);

enum class OutcomeKind : int {
  trips_total,
  trips_low,
  trips_mid,
  trips_high,
  trips_region,
  poi_visits,
  unique_pois,
  mean_entropy,
  mean_high_share,
};

struct OutcomeSelector {
  OutcomeKind kind = OutcomeKind::trips_total;
  std::int32_t region = -1;  // for trips_region

  std::string str(std::span<const Region> regions) const;
  static std::optional<OutcomeSelector> parse(std::string_view, std::span<const Region> regions);
};

// Hexagon x month cells: y is the mean outcome over devices homed in the hex
// that month; cells with no device reporting a defined outcome are absent.
// Hex arm comes from the hex center's buffer membership, falling back to the
// majority arm of its device records when the center sits outside every
// buffer (control on a tie).
std::vector<PanelCell> build_panel(std::span<const DevicePanelRecord> records,
                                   const OutcomeSelector& outcome, std::int32_t opening_month_idx,
                                   std::span<const Station> stations, const HexGrid& grid);

}  // namespace mobiscope
