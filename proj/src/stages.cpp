#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <unordered_map>

#include "json.hpp"
#include "mobiscope/pipeline.hpp"

namespace mobiscope {

namespace fs = std::filesystem;

Digest digest_text(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Digest digest_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw MissingArtifactError("cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  std::vector<unsigned char> buf(1 << 20);
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), f)) > 0) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= buf[i];
      h *= 0x100000001b3ull;
    }
  }
  std::fclose(f);
  char out[32];
  std::snprintf(out, sizeof out, "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return out;
}

Manifest Manifest::load(const std::string& workdir) {
  Manifest m;
  std::ifstream in(workdir + "/manifest.json");
  if (!in) return m;
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const std::exception&) {
    return m;  // corrupt manifest: treat as absent, stages rerun
  }
  const nlohmann::json stages = doc.value("stages", nlohmann::json::object());
  for (const auto& [stage, rec] : stages.items()) {
    StageRecord r;
    r.config_digest = rec.value("config_digest", "");
    const nlohmann::json inputs = rec.value("inputs", nlohmann::json::object());
    for (const auto& [k, v] : inputs.items()) r.inputs[k] = v.get<std::string>();
    const nlohmann::json outputs = rec.value("outputs", nlohmann::json::object());
    for (const auto& [k, v] : outputs.items())
      r.outputs[k] = {v.value("digest", ""), v.value("rows", std::uint64_t(0))};
    const nlohmann::json notes = rec.value("notes", nlohmann::json::object());
    for (const auto& [k, v] : notes.items())
      r.notes[k] = v.is_string() ? v.get<std::string>() : v.dump();
    m.stages[stage] = std::move(r);
  }
  return m;
}

void Manifest::save(const std::string& workdir) const {
  nlohmann::json stages_json = nlohmann::json::object();
  for (const auto& [stage, rec] : stages) {
    nlohmann::json outputs = nlohmann::json::object();
    for (const auto& [name, d] : rec.outputs)
      outputs[name] = {{"digest", d.first}, {"rows", d.second}};
    nlohmann::json inputs = nlohmann::json::object();
    for (const auto& [name, d] : rec.inputs) inputs[name] = d;
    nlohmann::json notes = nlohmann::json::object();
    for (const auto& [name, v] : rec.notes) notes[name] = v;
    stages_json[stage] = {{"config_digest", rec.config_digest},
                          {"inputs", inputs},
                          {"outputs", outputs},
                          {"notes", notes}};
  }
  nlohmann::json config = nlohmann::json::object();
  for (const auto& [k, v] : config_kv) config[k] = v;
  nlohmann::json doc{{"tool", std::string("mobiscope ") + kVersion},
                     {"config", config},
                     {"stages", stages_json}};
  std::ofstream out(workdir + "/manifest.json");
  if (!out) throw ConfigError("cannot write manifest in " + workdir);
  out << doc.dump(2) << "\n";
}

void save_timings(const std::string& workdir, const std::map<std::string, double>& secs) {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& [k, v] : secs) doc[k] = v;
  std::ofstream out(workdir + "/timings.json");
  out << doc.dump(2) << "\n";
}

namespace {

// Artifact names.
constexpr const char* kPingsClean = "pings_clean.csv";
constexpr const char* kDevices = "devices.csv";
constexpr const char* kRejects = "rejects.csv";
constexpr const char* kStays = "stays.csv";
constexpr const char* kHomes = "homes.csv";
constexpr const char* kProfiles = "profiles.csv";
constexpr const char* kExposure = "exposure.csv";
constexpr const char* kRecords = "device_records.csv";
constexpr const char* kRegionTrips = "device_region_trips.csv";
constexpr const char* kPanel = "panel.csv";
constexpr const char* kFitJson = "fit.json";
constexpr const char* kFitCsv = "fit.csv";

std::string month_str(const StudyWindow& w, std::int32_t idx) {
  return YearMonth(w.first.code + idx).str();
}

struct LoadedPings {
  std::vector<Ping> pings;
  StringPool devices;
  RejectReport report;
};

std::vector<std::string> ping_shards(const std::string& path) {
  if (fs::is_directory(path)) {
    std::vector<std::string> shards;
    for (const auto& e : fs::directory_iterator(path)) {
      auto p = e.path().string();
      if (p.ends_with(".csv") || p.ends_with(".csv.gz")) shards.push_back(p);
    }
    std::sort(shards.begin(), shards.end());
    if (shards.empty()) throw MissingArtifactError("no ping shards in " + path);
    return shards;
  }
  return {path};
}

LoadedPings load_ping_file(const std::string& path, const StudyWindow& window, int threads) {
  LoadedPings lp;
  ParseResult res;
  auto shards = ping_shards(path);
  if (shards.size() == 1) {
    res = parse_pings_parallel(shards[0], window, lp.devices, threads);
  } else {
    for (const auto& shard : shards) {
      CsvReader reader(shard);
      parse_pings_into(reader, window, lp.devices, res);
    }
  }
  lp.pings = std::move(res.pings);
  lp.report = res.report;
  sort_pings(lp.pings);
  return lp;
}

// Formats rows on several workers, then writes the chunks in order.
void write_rows_parallel(CsvWriter& w, std::size_t n, int threads,
                         const std::function<void(std::size_t, std::string&)>& format_row) {
  constexpr std::size_t kBlock = 1 << 15;
  std::size_t n_blocks = (n + kBlock - 1) / kBlock;
  std::vector<std::string> bufs(n_blocks);
  parallel_chunks(n_blocks, threads, [&](std::size_t lo, std::size_t hi, int) {
    for (std::size_t b = lo; b < hi; ++b) {
      std::string& buf = bufs[b];
      std::size_t end = std::min(n, (b + 1) * kBlock);
      for (std::size_t i = b * kBlock; i < end; ++i) format_row(i, buf);
    }
  });
  for (const auto& buf : bufs) w.raw(buf);
}

struct PoiTable {
  std::vector<Poi> pois;
  std::unordered_map<std::string_view, std::int32_t> index;

  explicit PoiTable(std::vector<Poi> p) : pois(std::move(p)) {
    index.reserve(pois.size());
    for (std::size_t i = 0; i < pois.size(); ++i)
      index.emplace(std::string_view(pois[i].poi_id), std::int32_t(i));
  }
};

std::vector<Stay> load_stays_csv(const std::string& path, const StudyWindow& window,
                                 StringPool& devices, const PoiTable* pois) {
  CsvReader r(path);
  std::vector<Stay> out;
  bool first = true;
  while (r.next_row()) {
    const auto& f = r.fields();
    if (first) {
      first = false;
      if (!f.empty() && f[0] == "device_id") continue;
    }
    if (f.size() < 9) throw DataError(path + ": stay rows need 9 fields");
    Stay s;
    s.device = devices.intern(f[0]);
    auto start = parse_iso_utc(f[1]), end = parse_iso_utc(f[2]);
    auto lat = parse_double(f[3]), lon = parse_double(f[4]);
    auto n = parse_i64(f[5]);
    if (!start || !end || !lat || !lon || !n)
      throw DataError(path + ": bad stay row " + std::to_string(r.line_no()));
    s.start = *start;
    s.end = *end;
    s.lat = *lat;
    s.lon = *lon;
    s.ping_count = std::uint32_t(*n);
    if (!f[6].empty()) {
      auto hex = HexGrid::parse_cell_id(f[6]);
      if (hex) s.hex = hex_key(*hex);
    }
    if (!f[7].empty()) {
      auto stratum = parse_i64(f[7]);
      if (stratum) s.stratum = std::int8_t(*stratum);
    }
    if (!f[8].empty() && pois) {
      auto it = pois->index.find(f[8]);
      if (it == pois->index.end())
        throw DataError(path + ": unknown poi_id " + std::string(f[8]));
      s.poi = it->second;
    }
    int mi = window.month_index(window.clock.month_of_day(window.clock.civil_day(s.start)));
    s.month_idx = (mi >= 0 && mi < window.n_months()) ? mi : -1;
    out.push_back(s);
  }
  std::sort(out.begin(), out.end(), [](const Stay& a, const Stay& b) {
    return a.device != b.device ? a.device < b.device : a.start < b.start;
  });
  return out;
}

std::vector<HomeLocation> load_homes_csv(const std::string& path, const StudyWindow& window,
                                         StringPool& devices) {
  CsvReader r(path);
  std::vector<HomeLocation> out;
  bool first = true;
  while (r.next_row()) {
    const auto& f = r.fields();
    if (first) {
      first = false;
      if (!f.empty() && f[0] == "device_id") continue;
    }
    if (f.size() < 6) throw DataError(path + ": home rows need 6 fields");
    HomeLocation h;
    h.device = devices.intern(f[0]);
    auto ym = YearMonth::parse(f[1]);
    auto lat = parse_double(f[2]), lon = parse_double(f[3]);
    auto n = parse_i64(f[4]);
    if (!ym || !lat || !lon || !n)
      throw DataError(path + ": bad home row " + std::to_string(r.line_no()));
    h.month_idx = window.month_index(*ym);
    h.lat = *lat;
    h.lon = *lon;
    h.night_ping_count = std::uint32_t(*n);
    if (!f[5].empty()) {
      auto hex = HexGrid::parse_cell_id(f[5]);
      if (hex) h.hex = hex_key(*hex);
    }
    out.push_back(h);
  }
  std::sort(out.begin(), out.end(), [](const HomeLocation& a, const HomeLocation& b) {
    return a.device != b.device ? a.device < b.device : a.month_idx < b.month_idx;
  });
  return out;
}

std::vector<ExposureRecord> load_exposure_csv(const std::string& path, const StudyWindow& window,
                                              StringPool& devices) {
  CsvReader r(path);
  std::vector<ExposureRecord> out;
  bool first = true;
  while (r.next_row()) {
    const auto& f = r.fields();
    if (first) {
      first = false;
      if (!f.empty() && f[0] == "device_id") continue;
    }
    if (f.size() < 6) throw DataError(path + ": exposure rows need 6 fields");
    ExposureRecord e;
    e.device = devices.intern(f[0]);
    auto ym = YearMonth::parse(f[1]);
    auto visits = parse_i64(f[2]);
    auto uniques = parse_i64(f[3]);
    if (!ym || !visits || !uniques)
      throw DataError(path + ": bad exposure row " + std::to_string(r.line_no()));
    e.month_idx = window.month_index(*ym);
    e.poi_visit_count = std::uint32_t(*visits);
    e.unique_poi_count = std::uint32_t(*uniques);
    if (!f[4].empty() && !f[5].empty()) {
      auto me = parse_double(f[4]);
      auto mh = parse_double(f[5]);
      if (!me || !mh) throw DataError(path + ": bad exposure row " + std::to_string(r.line_no()));
      e.means_defined = true;
      e.mean_entropy = *me;
      e.mean_high_income_share = *mh;
    }
    out.push_back(e);
  }
  std::sort(out.begin(), out.end(), [](const ExposureRecord& a, const ExposureRecord& b) {
    return a.device != b.device ? a.device < b.device : a.month_idx < b.month_idx;
  });
  return out;
}

void region_annotate_trips(std::vector<Stay>& stays, std::span<const Region> regions,
                           int threads) {
  parallel_chunks(stays.size(), threads, [&](std::size_t lo, std::size_t hi, int) {
    for (std::size_t i = lo; i < hi; ++i) {
      if (!stays[i].is_trip) continue;
      auto region = region_lookup(stays[i].centroid(), regions);
      stays[i].region = region ? std::int16_t(*region) : -1;
    }
  });
}

}  // namespace

PipelineDriver::PipelineDriver(PipelineConfig cfg, bool force, std::uint64_t seed_override,
                               bool has_seed_override)
    : cfg_(std::move(cfg)),
      force_(force),
      seed_override_(seed_override),
      has_seed_override_(has_seed_override) {
  if (cfg_.workdir.empty()) throw ConfigError("workdir not set");
  fs::create_directories(cfg_.workdir);
  manifest_ = Manifest::load(cfg_.workdir);
  manifest_.config_kv = KvConfig::parse_text(cfg_.semantic_text(), "semantic").values();
}

const std::vector<std::string>& PipelineDriver::stage_names() {
  static const std::vector<std::string> names{"simulate", "ingest", "stays", "homes",
                                              "profiles", "panel",  "fit"};
  return names;
}

std::string PipelineDriver::wpath(const std::string& name) const {
  return cfg_.workdir + "/" + name;
}

std::string PipelineDriver::input_path(const std::string& logical) const {
  if (logical == "pings") return cfg_.pings;
  if (logical == "pois") return cfg_.pois;
  if (logical == "zones") return cfg_.zones;
  if (logical == "regions") return cfg_.regions;
  if (logical == "stations") return cfg_.stations;
  throw ConfigError("unknown input " + logical);
}

bool PipelineDriver::try_skip(const std::string& stage,
                              const std::map<std::string, std::string>& inputs,
                              const std::vector<std::string>& outputs) {
  if (force_) return false;
  auto it = manifest_.stages.find(stage);
  if (it == manifest_.stages.end()) return false;
  const StageRecord& rec = it->second;
  if (rec.config_digest != digest_text(cfg_.semantic_text())) return false;
  if (rec.inputs.size() != inputs.size()) return false;
  for (const auto& [name, path] : inputs) {
    auto ri = rec.inputs.find(name);
    if (ri == rec.inputs.end()) return false;
    std::string resolved = path.empty() ? std::string() : path;
    if (resolved.empty()) return false;
    if (!fs::exists(resolved)) return false;
    if (digest_file(resolved) != ri->second) return false;
  }
  for (const auto& name : outputs) {
    auto ro = rec.outputs.find(name);
    if (ro == rec.outputs.end()) return false;
    std::string p = wpath(name);
    if (!fs::exists(p)) return false;
    if (digest_file(p) != ro->second.first) return false;
  }
  return true;
}

void PipelineDriver::record_stage(const std::string& stage,
                                  const std::map<std::string, std::string>& inputs,
                                  const std::vector<std::string>& outputs,
                                  std::map<std::string, std::string> notes) {
  StageRecord rec;
  rec.config_digest = digest_text(cfg_.semantic_text());
  for (const auto& [name, path] : inputs) rec.inputs[name] = digest_file(path);
  for (const auto& name : outputs) {
    std::string p = wpath(name);
    std::uint64_t rows = 0;
    {
      CsvReader r(p);
      while (r.next_row()) ++rows;
      if (rows > 0) --rows;  // header
    }
    rec.outputs[name] = {digest_file(p), rows};
  }
  rec.notes = std::move(notes);
  manifest_.stages[stage] = std::move(rec);
  manifest_.save(cfg_.workdir);
}

StageOutcome PipelineDriver::run_stage(const std::string& name) {
  auto t0 = std::chrono::steady_clock::now();
  StageOutcome outcome;

  auto finish = [&](bool skipped) {
    outcome.status = skipped ? StageStatus::skipped : StageStatus::ran;
    outcome.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!skipped) {
      timings_[name] = outcome.seconds;
      save_timings(cfg_.workdir, timings_);
    }
    return outcome;
  };

  if (name == "simulate") {
    stage_simulate();
    return finish(false);
  }

  std::map<std::string, std::string> inputs;
  std::vector<std::string> outputs;
  if (name == "ingest") {
    inputs = {{"pings", cfg_.pings}};
    outputs = {kPingsClean, kDevices, kRejects};
  } else if (name == "stays") {
    inputs = {{"pings_clean", wpath(kPingsClean)}, {"pois", cfg_.pois}, {"zones", cfg_.zones}};
    outputs = {kStays};
  } else if (name == "homes") {
    inputs = {{"pings_clean", wpath(kPingsClean)}};
    outputs = {kHomes};
  } else if (name == "profiles") {
    inputs = {{"stays", wpath(kStays)},
              {"homes", wpath(kHomes)},
              {"pois", cfg_.pois},
              {"zones", cfg_.zones}};
    outputs = {kProfiles, kExposure};
  } else if (name == "panel") {
    inputs = {{"stays", wpath(kStays)},     {"homes", wpath(kHomes)},
              {"exposure", wpath(kExposure)}, {"pois", cfg_.pois},
              {"stations", cfg_.stations},  {"regions", cfg_.regions}};
    outputs = {kRecords, kRegionTrips, kPanel};
  } else if (name == "fit") {
    inputs = {{"panel", wpath(kPanel)}};
    outputs = {kFitJson, kFitCsv};
  } else {
    throw ConfigError("unknown stage " + name);
  }

  // Upstream artifacts must exist before the skip check can compare digests.
  for (const auto& [logical, path] : inputs) {
    if (path.empty()) throw ConfigError("config is missing a path for input " + logical);
    if (!fs::exists(path))
      throw MissingArtifactError(name + ": missing input " + logical + " (" + path + ")");
  }
  if (try_skip(name, inputs, outputs)) return finish(true);

  pending_notes_.clear();
  if (name == "ingest")
    stage_ingest();
  else if (name == "stays")
    stage_stays();
  else if (name == "homes")
    stage_homes();
  else if (name == "profiles")
    stage_profiles();
  else if (name == "panel")
    stage_panel();
  else if (name == "fit")
    stage_fit();

  record_stage(name, inputs, outputs, std::move(pending_notes_));
  return finish(false);
}

void PipelineDriver::run_all() {
  for (const char* stage : {"ingest", "stays", "homes", "profiles", "panel", "fit"}) {
    StageOutcome outcome = run_stage(stage);
    std::printf("%s: %s (%.2fs)\n", stage,
                outcome.status == StageStatus::skipped ? "skipped (up to date)" : "done",
                outcome.seconds);
  }
}

void PipelineDriver::stage_simulate() {
  ScenarioConfig scen;
  std::string scen_text;
  if (!cfg_.scenario.empty()) {
    scen = ScenarioConfig::from_kv(KvConfig::parse_file(cfg_.scenario));
  }
  if (has_seed_override_) scen.seed = seed_override_;
  scen_text = scen.to_text();

  // The scenario echo doubles as the skip key.
  auto it = manifest_.stages.find("simulate");
  std::vector<std::string> outputs{"pois.csv",          "stations.csv",  "zones.geojson",
                                   "regions.geojson",   "truth_devices.csv",
                                   "truth_trips.csv",   "truth_exposure.csv", "scenario.cfg"};
  std::string ping_name = cfg_.compress_pings ? "pings.csv.gz" : "pings.csv";
  outputs.push_back(ping_name);
  if (!force_ && it != manifest_.stages.end() &&
      it->second.config_digest == digest_text(scen_text)) {
    bool ok = true;
    for (const auto& name : outputs) {
      auto ro = it->second.outputs.find(name);
      if (ro == it->second.outputs.end() || !fs::exists(wpath(name)) ||
          digest_file(wpath(name)) != ro->second.first) {
        ok = false;
        break;
      }
    }
    if (ok) return;
  }

  ScenarioData data = generate(scen);
  write_scenario_files(data, cfg_.workdir, cfg_.compress_pings);

  StageRecord rec;
  rec.config_digest = digest_text(scen_text);
  for (const auto& name : outputs) rec.outputs[name] = {digest_file(wpath(name)), 0};
  rec.notes["devices"] = std::to_string(data.device_names.size());
  rec.notes["pings"] = std::to_string(data.pings.size());
  manifest_.stages["simulate"] = std::move(rec);
  manifest_.save(cfg_.workdir);
}

void PipelineDriver::stage_ingest() {
  StudyWindow window = cfg_.window();
  LoadedPings lp = load_ping_file(cfg_.pings, window, cfg_.threads);
  auto pass = filter_devices(lp.pings, lp.devices.size(), window, cfg_.th.filter);

  {
    std::vector<std::uint32_t> keep;
    keep.reserve(lp.pings.size());
    for (std::uint32_t i = 0; i < lp.pings.size(); ++i)
      if (pass[lp.pings[i].device]) keep.push_back(i);
    CsvWriter w(wpath(kPingsClean));
    w.raw("device_id,timestamp,lat,lon,accuracy_m\n");
    write_rows_parallel(w, keep.size(), cfg_.threads, [&](std::size_t i, std::string& buf) {
      const Ping& p = lp.pings[keep[i]];
      buf += lp.devices.name(p.device);
      buf += ',';
      buf += format_iso_utc(p.t);
      buf += ',';
      buf += format_double(p.lat);
      buf += ',';
      buf += format_double(p.lon);
      buf += ',';
      if (p.accuracy_m >= 0) buf += format_double(double(p.accuracy_m));
      buf += '\n';
    });
    w.close();
  }
  {
    CsvWriter w(wpath(kDevices));
    w.raw("device_id,pings,passed\n");
    std::vector<std::uint64_t> counts(lp.devices.size(), 0);
    for (const Ping& p : lp.pings) ++counts[p.device];
    std::vector<std::uint32_t> order(lp.devices.size());
    for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
      return lp.devices.name(a) < lp.devices.name(b);
    });
    for (std::uint32_t d : order) {
      w.field(lp.devices.name(d));
      w.field(counts[d]);
      w.field(int(pass[d]));
      w.end_row();
    }
  }
  {
    CsvWriter w(wpath(kRejects));
    w.raw("reason,count\n");
    for (int i = 0; i < int(RejectReason::kCount); ++i) {
      w.field(reject_reason_name(RejectReason(i)));
      w.field(lp.report.counts[std::size_t(i)]);
      w.end_row();
    }
    w.field(std::string_view("rows_in"));
    w.field(lp.report.rows_in);
    w.end_row();
    w.field(std::string_view("emitted"));
    w.field(lp.report.emitted);
    w.end_row();
  }

  std::size_t devices_passing = 0;
  for (auto f : pass) devices_passing += f;
  pending_notes_["rows_in"] = std::to_string(lp.report.rows_in);
  pending_notes_["rejected"] = std::to_string(lp.report.total_rejected());
  pending_notes_["devices_total"] = std::to_string(lp.devices.size());
  pending_notes_["devices_passing"] = std::to_string(devices_passing);
}

void PipelineDriver::stage_stays() {
  StudyWindow window = cfg_.window();
  LoadedPings lp = load_ping_file(wpath(kPingsClean), window, cfg_.threads);
  PoiTable pois(load_pois(cfg_.pois));
  auto zones = load_zones(cfg_.zones);
  HexGrid grid(cfg_.grid);
  PoiIndex index(pois.pois, std::max(100.0, cfg_.th.poi_radius_m));

  auto stays = detect_stays_all(lp.pings, cfg_.th.stay, cfg_.threads);
  AnnotateOptions opt;
  opt.with_regions = false;  // stays.csv carries no region column
  annotate_stays(stays, window, grid, zones, {}, index, cfg_.th.poi_radius_m, opt,
                 cfg_.threads);

  CsvWriter w(wpath(kStays));
  w.raw("device_id,start,end,lat,lon,ping_count,hex_id,stratum,poi_id\n");
  write_rows_parallel(w, stays.size(), cfg_.threads, [&](std::size_t i, std::string& buf) {
    const Stay& s = stays[i];
    buf += lp.devices.name(s.device);
    buf += ',';
    buf += format_iso_utc(s.start);
    buf += ',';
    buf += format_iso_utc(s.end);
    buf += ',';
    buf += format_double(s.lat);
    buf += ',';
    buf += format_double(s.lon);
    buf += ',';
    buf += std::to_string(s.ping_count);
    buf += ',';
    if (s.hex != Stay::kNoHex) buf += HexGrid::cell_id(hex_from_key(s.hex));
    buf += ',';
    if (s.stratum >= 1) buf += std::to_string(int(s.stratum));
    buf += ',';
    if (s.poi >= 0) buf += pois.pois[std::size_t(s.poi)].poi_id;
    buf += '\n';
  });
  w.close();
}

void PipelineDriver::stage_homes() {
  StudyWindow window = cfg_.window();
  LoadedPings lp = load_ping_file(wpath(kPingsClean), window, cfg_.threads);
  HexGrid grid(cfg_.grid);
  auto homes = infer_homes(lp.pings, window, cfg_.th.home, cfg_.threads);
  annotate_home_hexes(homes, grid);

  CsvWriter w(wpath(kHomes));
  w.raw("device_id,month,lat,lon,night_pings,hex_id\n");
  for (const HomeLocation& h : homes) {
    w.field(lp.devices.name(h.device));
    w.field(month_str(window, h.month_idx));
    w.field(h.lat);
    w.field(h.lon);
    w.field(std::uint64_t(h.night_ping_count));
    w.field(h.hex == Stay::kNoHex ? std::string() : HexGrid::cell_id(hex_from_key(h.hex)));
    w.end_row();
  }
}

void PipelineDriver::stage_profiles() {
  StudyWindow window = cfg_.window();
  StringPool devices;
  PoiTable pois(load_pois(cfg_.pois));
  auto zones = load_zones(cfg_.zones);
  auto stays = load_stays_csv(wpath(kStays), window, devices, &pois);
  auto homes = load_homes_csv(wpath(kHomes), window, devices);
  mark_trips(stays, homes, cfg_.th.outside_home_m);

  std::vector<Stay> trips;
  trips.reserve(stays.size());
  for (const Stay& s : stays)
    if (s.is_trip && s.month_idx >= 0) trips.push_back(s);

  auto strata = build_home_stratum_table(homes, zones, devices.size(), window.n_months());
  auto profiles =
      poi_profiles(trips, strata, pois.pois.size(), strata_mask(cfg_.th.high_income_strata));
  auto exposure = exposure_by_device_month(trips, profiles, pois.pois.size(), cfg_.th.exposure);

  {
    CsvWriter w(wpath(kProfiles));
    w.raw("poi_id,n1,n2,n3,n4,n5,n6,entropy,high_income_share\n");
    for (const PoiVisitorProfile& p : profiles) {
      w.field(pois.pois[std::size_t(p.poi)].poi_id);
      for (int s = 0; s < kNumStrata; ++s) w.field(std::uint64_t(p.visits_by_stratum[std::size_t(s)]));
      w.field(p.entropy);
      w.field(p.high_income_share);
      w.end_row();
    }
  }
  {
    CsvWriter w(wpath(kExposure));
    w.raw("device_id,month,poi_visits,unique_pois,mean_entropy,mean_high_share\n");
    for (const ExposureRecord& e : exposure) {
      w.field(devices.name(e.device));
      w.field(month_str(window, e.month_idx));
      w.field(std::uint64_t(e.poi_visit_count));
      w.field(std::uint64_t(e.unique_poi_count));
      if (e.means_defined) {
        w.field(e.mean_entropy);
        w.field(e.mean_high_income_share);
      } else {
        w.field(std::string_view(""));
        w.field(std::string_view(""));
      }
      w.end_row();
    }
  }
}

void PipelineDriver::stage_panel() {
  StudyWindow window = cfg_.window();
  StringPool devices;
  PoiTable pois(load_pois(cfg_.pois));
  auto regions = load_regions(cfg_.regions);
  auto stations = load_stations(cfg_.stations);
  HexGrid grid(cfg_.grid);
  auto stays = load_stays_csv(wpath(kStays), window, devices, &pois);
  auto homes = load_homes_csv(wpath(kHomes), window, devices);
  auto exposure = load_exposure_csv(wpath(kExposure), window, devices);
  mark_trips(stays, homes, cfg_.th.outside_home_m);
  region_annotate_trips(stays, regions, cfg_.threads);

  std::vector<Stay> trips;
  trips.reserve(stays.size());
  for (const Stay& s : stays)
    if (s.is_trip && s.month_idx >= 0) trips.push_back(s);

  auto records = build_device_records(trips, exposure, homes, stations, grid, regions.size(),
                                      cfg_.th.dest_groups);

  {
    CsvWriter w(wpath(kRecords));
    w.raw(
        "device_id,month,home_hex,arm,trips_total,trips_low,trips_mid,trips_high,poi_visits,"
        "unique_pois,mean_entropy,mean_high_share\n");
    for (const DevicePanelRecord& r : records) {
      w.field(devices.name(r.device));
      w.field(month_str(window, r.month_idx));
      w.field(HexGrid::cell_id(hex_from_key(r.home_hex)));
      w.field(line_name(r.arm));
      w.field(std::uint64_t(r.trips_total));
      w.field(std::uint64_t(r.trips_low));
      w.field(std::uint64_t(r.trips_mid));
      w.field(std::uint64_t(r.trips_high));
      w.field(std::uint64_t(r.poi_visits));
      w.field(std::uint64_t(r.unique_pois));
      if (r.has_exposure) {
        w.field(r.mean_entropy);
        w.field(r.mean_high_share);
      } else {
        w.field(std::string_view(""));
        w.field(std::string_view(""));
      }
      w.end_row();
    }
  }
  {
    CsvWriter w(wpath(kRegionTrips));
    w.raw("device_id,month,region_id,trips\n");
    for (const DevicePanelRecord& r : records) {
      for (std::size_t g = 0; g < r.trips_by_region.size(); ++g) {
        if (r.trips_by_region[g] == 0) continue;
        w.field(devices.name(r.device));
        w.field(month_str(window, r.month_idx));
        w.field(regions[g].region_id);
        w.field(std::uint64_t(r.trips_by_region[g]));
        w.end_row();
      }
    }
  }
  {
    std::int32_t opening_idx = window.month_index(cfg_.opening);
    CsvWriter w(wpath(kPanel));
    w.raw("hex_id,month,outcome,y,n_devices,cable\n");
    std::vector<OutcomeSelector> outcomes;
    for (auto kind : {OutcomeKind::trips_total, OutcomeKind::trips_low, OutcomeKind::trips_mid,
                      OutcomeKind::trips_high, OutcomeKind::poi_visits, OutcomeKind::unique_pois,
                      OutcomeKind::mean_entropy, OutcomeKind::mean_high_share})
      outcomes.push_back(OutcomeSelector{kind, -1});
    for (std::size_t g = 0; g < regions.size(); ++g)
      outcomes.push_back(OutcomeSelector{OutcomeKind::trips_region, std::int32_t(g)});
    for (const OutcomeSelector& sel : outcomes) {
      auto panel = build_panel(records, sel, opening_idx, stations, grid);
      std::string name = sel.str(regions);
      for (const PanelCell& c : panel) {
        w.field(HexGrid::cell_id(hex_from_key(c.hex)));
        w.field(month_str(window, c.month_idx));
        w.field(name);
        w.field(c.y);
        w.field(std::uint64_t(c.n_devices));
        w.field(int(c.cable));
        w.end_row();
      }
    }
  }
}

void PipelineDriver::stage_fit() {
  StudyWindow window = cfg_.window();
  CsvReader r(wpath(kPanel));
  std::vector<PanelCell> cells;
  std::unordered_map<std::uint64_t, bool> treated;
  bool first = true;
  while (r.next_row()) {
    const auto& f = r.fields();
    if (first) {
      first = false;
      if (!f.empty() && f[0] == "hex_id") continue;
    }
    if (f.size() < 6) throw DataError("panel.csv: rows need 6 fields");
    auto hex = HexGrid::parse_cell_id(f[0]);
    auto ym = YearMonth::parse(f[1]);
    auto y = parse_double(f[3]);
    auto n = parse_i64(f[4]);
    auto cable = parse_i64(f[5]);
    if (!hex || !ym || !y || !n || !cable)
      throw DataError("panel.csv: bad row " + std::to_string(r.line_no()));
    std::uint64_t key = hex_key(*hex);
    if (*cable != 0) treated[key] = true;
    if (f[2] != cfg_.outcome) continue;
    PanelCell c;
    c.hex = key;
    c.month_idx = window.month_index(*ym);
    c.y = *y;
    c.n_devices = std::uint32_t(*n);
    c.cable = *cable != 0;
    cells.push_back(c);
  }
  for (PanelCell& c : cells) c.treated_arm = treated.count(c.hex) > 0;

  EventStudySpec spec;
  spec.base_month_idx = window.month_index(cfg_.base_month);
  spec.se_mode = cfg_.se_mode;
  spec.weight_by_devices = cfg_.weight_by_devices;
  EventStudyFit fit = fit_event_study(cells, spec);
  bool has_pre = false;
  for (std::int32_t m : fit.months) has_pre = has_pre || m < fit.opening_month_idx;
  PretrendTest pretrend;
  pretrend.df = 0;
  pretrend.p_value = std::numeric_limits<double>::quiet_NaN();
  if (has_pre) pretrend = pretrend_test(fit);

  nlohmann::json periods = nlohmann::json::array();
  for (std::size_t k = 0; k < fit.months.size(); ++k) {
    double beta = fit.beta[Eigen::Index(k)];
    double se = fit.se[Eigen::Index(k)];
    periods.push_back({{"month", month_str(window, fit.months[k])},
                       {"beta", beta},
                       {"se", se},
                       {"ci_lo", beta - 1.96 * se},
                       {"ci_hi", beta + 1.96 * se}});
  }
  nlohmann::json doc{
      {"outcome", cfg_.outcome},
      {"base_month", cfg_.base_month.str()},
      {"opening_month", cfg_.opening.str()},
      {"periods", periods},
      {"pooled",
       {{"beta", fit.pooled_beta},
        {"se", fit.pooled_se},
        {"ci_lo", fit.pooled_beta - 1.96 * fit.pooled_se},
        {"ci_hi", fit.pooled_beta + 1.96 * fit.pooled_se}}},
      {"pretrend",
       {{"stat", pretrend.df > 0 ? nlohmann::json(pretrend.stat) : nlohmann::json()},
        {"df", pretrend.df},
        {"p", pretrend.df > 0 ? nlohmann::json(pretrend.p_value) : nlohmann::json()}}},
      {"diagnostics",
       {{"n_obs", fit.n_obs},
        {"n_units", fit.n_units},
        {"n_periods", fit.n_periods},
        {"dof", fit.dof},
        {"sweeps", fit.sweeps},
        {"max_abs_score", fit.max_abs_score},
        {"se_mode", std::string(se_mode_name(fit.se_mode))},
        {"weighted", fit.weighted}}}};
  {
    std::ofstream out(wpath(kFitJson));
    out << doc.dump(2) << "\n";
  }
  {
    CsvWriter w(wpath(kFitCsv));
    w.raw("month,beta,se,ci_lo,ci_hi\n");
    for (std::size_t k = 0; k < fit.months.size(); ++k) {
      double beta = fit.beta[Eigen::Index(k)];
      double se = fit.se[Eigen::Index(k)];
      w.field(month_str(window, fit.months[k]));
      w.field(beta);
      w.field(se);
      w.field(beta - 1.96 * se);
      w.field(beta + 1.96 * se);
      w.end_row();
    }
  }
}

int PipelineDriver::report(std::string* out_table) const {
  std::ifstream in(wpath(kFitJson));
  if (!in) throw MissingArtifactError("fit.json not found; run fit first");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("malformed fit.json: ") + e.what());
  }

  std::string table;
  char line[256];
  std::snprintf(line, sizeof line, "event study: outcome %s, base %s\n",
                doc.value("outcome", "?").c_str(), doc.value("base_month", "?").c_str());
  table += line;
  table += "  month      beta        se     ci_lo     ci_hi  sig\n";
  CsvWriter w(wpath("report.csv"));
  w.raw("month,beta,se,ci_lo,ci_hi,significant\n");
  for (const auto& p : doc.at("periods")) {
    double lo = p.at("ci_lo").get<double>(), hi = p.at("ci_hi").get<double>();
    bool sig = (lo > 0.0 && hi > 0.0) || (lo < 0.0 && hi < 0.0);
    std::snprintf(line, sizeof line, "  %-7s %9.4f %9.4f %9.4f %9.4f  %s\n",
                  p.at("month").get<std::string>().c_str(), p.at("beta").get<double>(),
                  p.at("se").get<double>(), lo, hi, sig ? "*" : "");
    table += line;
    w.field(p.at("month").get<std::string>());
    w.field(p.at("beta").get<double>());
    w.field(p.at("se").get<double>());
    w.field(lo);
    w.field(hi);
    w.field(int(sig));
    w.end_row();
  }
  const auto& pooled = doc.at("pooled");
  std::snprintf(line, sizeof line, "pooled post-opening effect: %.4f (se %.4f, ci [%.4f, %.4f])\n",
                pooled.at("beta").get<double>(), pooled.at("se").get<double>(),
                pooled.at("ci_lo").get<double>(), pooled.at("ci_hi").get<double>());
  table += line;
  const auto& pre = doc.at("pretrend");
  if (pre.at("df").get<int>() > 0) {
    std::snprintf(line, sizeof line, "pretrend joint test: stat %.4f, df %d, p %.4f\n",
                  pre.at("stat").get<double>(), pre.at("df").get<int>(), pre.at("p").get<double>());
    table += line;
  } else {
    table += "pretrend joint test: n/a (no pre-period coefficients)\n";
  }
  if (out_table) *out_table = table;
  return 0;
}

}  // namespace mobiscope
