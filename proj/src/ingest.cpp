#include "mobiscope/ingest.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <thread>
#include <unordered_map>
#include <unordered_set>

namespace mobiscope {

std::string_view reject_reason_name(RejectReason r) {
  switch (r) {
    case RejectReason::missing_field: return "missing field";
    case RejectReason::bad_timestamp: return "bad timestamp";
    case RejectReason::bad_number: return "bad number";
    case RejectReason::lat_out_of_range: return "lat out of range";
    case RejectReason::lon_out_of_range: return "lon out of range";
    case RejectReason::bad_accuracy: return "bad accuracy";
    case RejectReason::out_of_window: return "timestamp outside study window";
    case RejectReason::duplicate: return "duplicate";
    default: return "?";
  }
}

namespace {

struct PingKey {
  std::uint64_t a, b;
  bool operator==(const PingKey&) const = default;
};

struct PingKeyHash {
  std::size_t operator()(const PingKey& k) const {
    std::uint64_t z = k.a * 0x9E3779B97F4A7C15ull ^ k.b;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    return std::size_t(z ^ (z >> 31));
  }
};

PingKey make_key(DeviceIdx dev, std::int64_t t, double lat, double lon) {
  std::uint64_t la = std::bit_cast<std::uint64_t>(lat);
  std::uint64_t lo = std::bit_cast<std::uint64_t>(lon);
  return PingKey{std::uint64_t(dev) ^ (la << 17) ^ (la >> 47), std::uint64_t(t) ^ (lo << 31) ^ (lo >> 33)};
}

enum class TsFormat { unknown, iso, epoch };

std::int64_t parse_ts(std::string_view s, TsFormat& fmt, bool& ok) {
  ok = false;
  if (fmt == TsFormat::unknown) {
    if (auto iso = parse_iso_utc(s)) {
      fmt = TsFormat::iso;
      ok = true;
      return *iso;
    }
    if (auto ep = parse_i64(s)) {
      fmt = TsFormat::epoch;
      ok = true;
      return *ep;
    }
    return 0;
  }
  if (fmt == TsFormat::iso) {
    if (auto iso = parse_iso_utc(s)) {
      ok = true;
      return *iso;
    }
    return 0;
  }
  if (auto ep = parse_i64(s)) {
    ok = true;
    return *ep;
  }
  return 0;
}

bool looks_like_header(std::string_view first_field) { return first_field == "device_id"; }

// Shared row validation; fills everything but the device index. Returns the
// reject reason, or nullopt on success.
std::optional<RejectReason> parse_row(std::span<const std::string_view> f, TsFormat& fmt,
                                      const StudyWindow& window, Ping& out) {
  if (f.size() < 4 || f[0].empty() || f[1].empty() || f[2].empty() || f[3].empty())
    return RejectReason::missing_field;
  bool ts_ok = false;
  std::int64_t t = parse_ts(f[1], fmt, ts_ok);
  if (!ts_ok) return RejectReason::bad_timestamp;
  auto lat = parse_double(f[2]);
  auto lon = parse_double(f[3]);
  if (!lat || !lon) return RejectReason::bad_number;
  if (!(*lat >= -90.0 && *lat <= 90.0)) return RejectReason::lat_out_of_range;
  if (!(*lon >= -180.0 && *lon <= 180.0)) return RejectReason::lon_out_of_range;
  float acc = -1.0f;
  if (f.size() >= 5 && !f[4].empty()) {
    auto a = parse_double(f[4]);
    if (!a || *a < 0.0) return RejectReason::bad_accuracy;
    acc = float(*a);
  }
  if (!window.contains(t)) return RejectReason::out_of_window;
  out.t = t;
  out.lat = *lat;
  out.lon = *lon;
  out.accuracy_m = acc;
  return std::nullopt;
}

}  // namespace

void parse_pings_into(CsvReader& reader, const StudyWindow& window, StringPool& devices,
                      ParseResult& out) {
  TsFormat fmt = TsFormat::unknown;
  std::unordered_set<PingKey, PingKeyHash> seen;
  seen.reserve(1 << 16);
  bool first = true;
  while (reader.next_row()) {
    const auto& f = reader.fields();
    if (first) {
      first = false;
      if (!f.empty() && looks_like_header(f[0])) continue;
    }
    ++out.report.rows_in;
    Ping ping;
    if (auto reject = parse_row(f, fmt, window, ping)) {
      out.report.add(*reject);
      continue;
    }
    ping.device = devices.intern(f[0]);
    if (!seen.insert(make_key(ping.device, ping.t, ping.lat, ping.lon)).second) {
      out.report.add(RejectReason::duplicate);
      continue;
    }
    out.pings.push_back(ping);
    ++out.report.emitted;
  }
}

ParseResult parse_pings(const std::string& path, const StudyWindow& window, StringPool& devices) {
  ParseResult out;
  CsvReader reader(path);
  parse_pings_into(reader, window, devices, out);
  return out;
}

namespace {

void split_fields(std::string_view line, std::vector<std::string_view>& fields) {
  fields.clear();
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::size_t start = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == ',') {
      fields.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  fields.push_back(line.substr(start));
}

struct ChunkResult {
  std::vector<Ping> pings;  // device = index into names
  std::vector<std::string_view> names;
  RejectReport report;
};

}  // namespace

ParseResult parse_pings_parallel(const std::string& path, const StudyWindow& window,
                                 StringPool& devices, int threads) {
  bool gz = path.size() > 3 && path.substr(path.size() - 3) == ".gz";
  if (threads == 0) threads = int(std::thread::hardware_concurrency());
  if (gz || threads <= 1) return parse_pings(path, window, devices);

  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw MissingArtifactError("cannot open " + path);
  std::fseek(f, 0, SEEK_END);
  long size = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::string content;
  content.resize(std::size_t(size));
  if (size > 0 && std::fread(content.data(), 1, std::size_t(size), f) != std::size_t(size)) {
    std::fclose(f);
    throw DataError("read error on " + path);
  }
  std::fclose(f);

  std::string_view text(content);
  // Header and timestamp-format prescan.
  std::size_t body_start = 0;
  {
    auto nl = text.find('\n');
    std::string_view first_line = text.substr(0, nl == std::string_view::npos ? text.size() : nl);
    std::vector<std::string_view> fields;
    split_fields(first_line, fields);
    if (!fields.empty() && looks_like_header(fields[0]))
      body_start = nl == std::string_view::npos ? text.size() : nl + 1;
  }
  TsFormat fmt = TsFormat::unknown;
  {
    std::size_t pos = body_start;
    std::vector<std::string_view> fields;
    Ping scratch;
    while (pos < text.size() && fmt == TsFormat::unknown) {
      auto nl = text.find('\n', pos);
      auto line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
      split_fields(line, fields);
      parse_row(fields, fmt, window, scratch);  // sets fmt on the first row that parses
      pos = nl == std::string_view::npos ? text.size() : nl + 1;
    }
  }

  std::size_t workers = std::size_t(threads);
  std::vector<std::size_t> bounds;
  bounds.push_back(body_start);
  for (std::size_t w = 1; w < workers; ++w) {
    std::size_t target = body_start + (text.size() - body_start) * w / workers;
    auto nl = text.find('\n', target);
    bounds.push_back(nl == std::string_view::npos ? text.size() : nl + 1);
  }
  bounds.push_back(text.size());
  std::sort(bounds.begin(), bounds.end());

  std::vector<ChunkResult> chunks(workers);
  parallel_chunks(workers, int(workers), [&](std::size_t lo, std::size_t hi, int) {
    std::vector<std::string_view> fields;
    std::unordered_map<std::string_view, std::uint32_t> local;
    for (std::size_t w = lo; w < hi; ++w) {
      ChunkResult& chunk = chunks[w];
      local.clear();
      TsFormat local_fmt = fmt;
      std::size_t pos = bounds[w];
      const std::size_t end = bounds[w + 1];
      while (pos < end) {
        auto nl = text.find('\n', pos);
        std::size_t line_end = nl == std::string_view::npos ? text.size() : nl;
        auto line = text.substr(pos, line_end - pos);
        pos = line_end + 1;
        ++chunk.report.rows_in;
        split_fields(line, fields);
        Ping ping;
        if (auto reject = parse_row(fields, local_fmt, window, ping)) {
          chunk.report.add(*reject);
          continue;
        }
        auto [it, inserted] = local.try_emplace(fields[0], std::uint32_t(chunk.names.size()));
        if (inserted) chunk.names.push_back(fields[0]);
        ping.device = it->second;
        chunk.pings.push_back(ping);
      }
    }
  });

  // Sequential merge preserves file order, so duplicate detection keeps the
  // first occurrence exactly like the streaming parser.
  ParseResult out;
  std::unordered_set<PingKey, PingKeyHash> seen;
  std::size_t total = 0;
  for (const auto& c : chunks) total += c.pings.size();
  seen.reserve(total * 2);
  out.pings.reserve(total);
  for (const auto& chunk : chunks) {
    out.report.merge(chunk.report);
    std::vector<DeviceIdx> remap(chunk.names.size());
    for (std::size_t i = 0; i < chunk.names.size(); ++i) remap[i] = devices.intern(chunk.names[i]);
    for (Ping ping : chunk.pings) {
      ping.device = remap[ping.device];
      if (!seen.insert(make_key(ping.device, ping.t, ping.lat, ping.lon)).second) {
        out.report.add(RejectReason::duplicate);
        continue;
      }
      out.pings.push_back(ping);
      ++out.report.emitted;
    }
  }
  return out;
}

void sort_pings(std::vector<Ping>& pings) {
  std::stable_sort(pings.begin(), pings.end(), [](const Ping& a, const Ping& b) {
    return a.device != b.device ? a.device < b.device : a.t < b.t;
  });
}

std::vector<std::uint8_t> filter_devices(std::span<const Ping> pings, std::size_t n_devices,
                                         const StudyWindow& window, const DeviceFilterParams& p) {
  std::vector<std::uint8_t> pass(n_devices, 0);
  const LocalClock& clk = window.clock;
  const std::size_t mask_words = std::size_t(window.n_months() + 63) / 64;

  std::size_t i = 0;
  std::vector<std::int64_t> days;
  std::vector<std::uint64_t> months_mask(mask_words);
  while (i < pings.size()) {
    DeviceIdx dev = pings[i].device;
    std::size_t j = i;
    std::uint64_t total = 0;
    std::fill(months_mask.begin(), months_mask.end(), 0);
    days.clear();
    std::int64_t prev_t = std::numeric_limits<std::int64_t>::min();
    for (; j < pings.size() && pings[j].device == dev; ++j) {
      if (pings[j].t < prev_t) throw DataError("filter_devices: pings not sorted by time");
      prev_t = pings[j].t;
      ++total;
      std::int64_t day = clk.civil_day(pings[j].t);
      days.push_back(day);
      int mi = window.month_index(clk.month_of_day(day));
      if (mi >= 0 && mi < window.n_months()) months_mask[mi >> 6] |= (1ull << (mi & 63));
    }
    int observed_months = 0;
    for (std::uint64_t w : months_mask) observed_months += std::popcount(w);
    bool ok = observed_months > 0 &&
              total >= std::uint64_t(p.min_pings_per_month) * std::uint64_t(observed_months);
    if (ok) {
      std::sort(days.begin(), days.end());
      days.erase(std::unique(days.begin(), days.end()), days.end());
      int year = 0, distinct = 0;
      bool have_year = false;
      for (std::int64_t d : days) {
        int y = clk.year_of_day(d);
        if (!have_year || y != year) {
          if (have_year && distinct < p.min_active_days) {
            ok = false;
            break;
          }
          year = y;
          distinct = 0;
          have_year = true;
        }
        ++distinct;
      }
      if (have_year && distinct < p.min_active_days) ok = false;
    }
    pass[dev] = ok ? 1 : 0;
    i = j;
  }
  return pass;
}

}  // namespace mobiscope
