#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mobiscope/estimator.hpp"
#include "mobiscope/ingest.hpp"
#include "mobiscope/panel.hpp"
#include "mobiscope/segregation.hpp"
#include "mobiscope/stays.hpp"
#include "mobiscope/synth.hpp"

namespace mobiscope {

struct Thresholds {
  StayParams stay{};
  DeviceFilterParams filter{};
  HomeParams home{};
  double poi_radius_m = 50.0;
  double outside_home_m = 100.0;
  StratumGroups dest_groups{};
  std::vector<int> high_income_strata{4, 5, 6};
  ExposureWeighting exposure{};
};

struct PipelineConfig {
  // Input paths, resolved relative to the config file location.
  std::string pings, pois, zones, regions, stations, workdir;
  std::string scenario;  // optional; simulate falls back to built-in defaults

  YearMonth study_start{2018, 7};
  YearMonth study_end{2019, 6};
  YearMonth opening{2018, 12};
  YearMonth base_month{2018, 11};
  int tz_offset_min = -300;
  GridSpec grid{GeoPoint{4.60, -74.10}, 100.0};
  Thresholds th{};
  std::string outcome = "trips_total";
  SeMode se_mode = SeMode::cluster_by_unit;
  bool weight_by_devices = false;
  int threads = 0;
  bool compress_pings = true;

  StudyWindow window() const {
    return StudyWindow::make(study_start, study_end, tz_offset_min);
  }

  // Parses the flat key=value file; MOBISCOPE_WORKDIR overrides workdir.
  static PipelineConfig load(const std::string& path);

  // Canonical semantic form (no paths/threads), the basis of config digests.
  std::string semantic_text() const;
};

// Reference-table loaders.
std::vector<Station> load_stations(const std::string& path);
std::vector<Poi> load_pois(const std::string& path);
std::vector<StratumZone> load_zones(const std::string& path);
std::vector<Region> load_regions(const std::string& path);

// Fills month/hex/stratum/region/poi on detected stays. The hex / zone /
// region / POI passes are individually optional so trip-count-only runs skip
// work that cannot affect their outcome.
struct AnnotateOptions {
  bool with_hex = true;
  bool with_zones = true;
  bool with_regions = true;
  bool with_poi = true;
};

void annotate_stays(std::vector<Stay>& stays, const StudyWindow& window, const HexGrid& grid,
                    std::span<const StratumZone> zones, std::span<const Region> regions,
                    const PoiIndex& poi_index, double poi_radius_m, const AnnotateOptions& opt,
                    int threads);

void annotate_home_hexes(std::vector<HomeLocation>& homes, const HexGrid& grid);

HomeStratumTable build_home_stratum_table(std::span<const HomeLocation> homes,
                                          std::span<const StratumZone> zones,
                                          std::size_t n_devices, int n_months);

// In-memory pipeline over generated data; the same stage functions the CLI
// drives through files, without the CSV round trips. `with_poi_stages`
// disables POI matching/profiles/exposure when only trip outcomes are needed.
struct MemoryPipelineResult {
  RejectReport reject;
  std::size_t devices_passing = 0;
  std::vector<Stay> stays;
  std::vector<HomeLocation> homes;
  std::vector<PoiVisitorProfile> profiles;
  std::vector<ExposureRecord> exposure;
  std::vector<DevicePanelRecord> records;
  std::vector<PanelCell> panel;
  EventStudyFit fit;
};

MemoryPipelineResult run_pipeline_memory(const ScenarioData& data, const Thresholds& th,
                                         const OutcomeSelector& outcome, const EventStudySpec& spec,
                                         bool with_poi_stages, int threads);

// --- Staged CLI driver --------------------------------------------------------

using Digest = std::string;  // "fnv1a64:<16 hex>"

Digest digest_file(const std::string& path);
Digest digest_text(std::string_view text);

struct StageRecord {
  Digest config_digest;
  std::map<std::string, Digest> inputs;             // logical name -> digest
  std::map<std::string, std::pair<Digest, std::uint64_t>> outputs;  // name -> {digest, rows}
  std::map<std::string, std::string> notes;
};

struct Manifest {
  std::map<std::string, std::string> config_kv;  // semantic config echo
  std::map<std::string, StageRecord> stages;
  static Manifest load(const std::string& workdir);
  void save(const std::string& workdir) const;
};

// Stage timings land in a separate timings.json so manifests stay
// byte-identical across runs.
void save_timings(const std::string& workdir, const std::map<std::string, double>& secs);

enum class StageStatus { ran, skipped };

struct StageOutcome {
  StageStatus status = StageStatus::ran;
  double seconds = 0.0;
};

class PipelineDriver {
 public:
  PipelineDriver(PipelineConfig cfg, bool force, std::uint64_t seed_override,
                 bool has_seed_override);

  StageOutcome run_stage(const std::string& name);  // simulate/ingest/.../fit
  void run_all();
  int report(std::string* out_table) const;  // prints fit summary, writes report.csv

  const PipelineConfig& config() const { return cfg_; }

  static const std::vector<std::string>& stage_names();

 private:
  bool try_skip(const std::string& stage, const std::map<std::string, std::string>& inputs,
                const std::vector<std::string>& outputs);
  void record_stage(const std::string& stage, const std::map<std::string, std::string>& inputs,
                    const std::vector<std::string>& outputs,
                    std::map<std::string, std::string> notes);

  void stage_simulate();
  void stage_ingest();
  void stage_stays();
  void stage_homes();
  void stage_profiles();
  void stage_panel();
  void stage_fit();

  std::string wpath(const std::string& name) const;  // workdir-relative
  std::string input_path(const std::string& logical) const;

  PipelineConfig cfg_;
  bool force_ = false;
  std::uint64_t seed_override_ = 0;
  bool has_seed_override_ = false;
  Manifest manifest_;
  std::map<std::string, double> timings_;
  std::map<std::string, std::string> pending_notes_;  // filled by the running stage
};

}  // namespace mobiscope
