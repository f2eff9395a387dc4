#include "mobiscope/csv.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <thread>

namespace mobiscope {

namespace {

bool has_suffix(std::string_view s, std::string_view suf) {
  return s.size() >= suf.size() && s.substr(s.size() - suf.size()) == suf;
}

}  // namespace

CsvReader::CsvReader(const std::string& path) : path_(path), buf_(1 << 20) {
  if (has_suffix(path, ".gz")) {
    gz_ = gzopen(path.c_str(), "rb");
    if (!gz_) throw MissingArtifactError("cannot open " + path);
    gzbuffer(static_cast<gzFile>(gz_), 1 << 18);
  } else {
    file_ = std::fopen(path.c_str(), "rb");
    if (!file_) throw MissingArtifactError("cannot open " + path);
  }
}

CsvReader::~CsvReader() {
  if (gz_) gzclose(static_cast<gzFile>(gz_));
  if (file_) std::fclose(file_);
}

bool CsvReader::fill() {
  if (eof_) return false;
  long n = 0;
  if (gz_)
    n = gzread(static_cast<gzFile>(gz_), buf_.data(), unsigned(buf_.size()));
  else
    n = long(std::fread(buf_.data(), 1, buf_.size(), file_));
  if (n < 0) throw DataError("read error on " + path_);
  pos_ = 0;
  end_ = std::size_t(n);
  if (n == 0) eof_ = true;
  return n > 0;
}

bool CsvReader::next_row() {
  line_.clear();
  for (;;) {
    if (pos_ >= end_) {
      if (!fill()) {
        if (line_.empty()) return false;
        break;  // final unterminated line
      }
      continue;
    }
    const char* start = buf_.data() + pos_;
    const char* nl = static_cast<const char*>(std::memchr(start, '\n', end_ - pos_));
    if (!nl) {
      line_.append(start, end_ - pos_);
      pos_ = end_;
      continue;
    }
    line_.append(start, std::size_t(nl - start));
    pos_ += std::size_t(nl - start) + 1;
    break;
  }
  if (!line_.empty() && line_.back() == '\r') line_.pop_back();
  ++line_no_;
  fields_.clear();
  const char* p = line_.data();
  const char* lend = p + line_.size();
  const char* field_start = p;
  for (; p != lend; ++p) {
    if (*p == ',') {
      fields_.emplace_back(field_start, std::size_t(p - field_start));
      field_start = p + 1;
    }
  }
  fields_.emplace_back(field_start, std::size_t(lend - field_start));
  return true;
}

CsvWriter::CsvWriter(const std::string& path) : path_(path), buf_(1 << 20) {
  file_ = std::fopen(path.c_str(), "wb");
  if (!file_) throw ConfigError("cannot create " + path);
}

CsvWriter::~CsvWriter() { close(); }

void CsvWriter::close() {
  if (!file_) return;
  if (fill_ > 0) std::fwrite(buf_.data(), 1, fill_, file_);
  fill_ = 0;
  std::fclose(file_);
  file_ = nullptr;
}

void CsvWriter::put(const char* data, std::size_t n) {
  if (fill_ + n > buf_.size()) {
    std::fwrite(buf_.data(), 1, fill_, file_);
    fill_ = 0;
    if (n > buf_.size()) {
      std::fwrite(data, 1, n, file_);
      return;
    }
  }
  std::memcpy(buf_.data() + fill_, data, n);
  fill_ += n;
}

void CsvWriter::raw(std::string_view s) { put(s.data(), s.size()); }

void CsvWriter::field(std::string_view s) {
  if (!at_row_start_) put(",", 1);
  put(s.data(), s.size());
  at_row_start_ = false;
}

void CsvWriter::field(double v) {
  char tmp[32];
  auto r = std::to_chars(tmp, tmp + sizeof tmp, v);
  field(std::string_view(tmp, std::size_t(r.ptr - tmp)));
}

void CsvWriter::field(std::int64_t v) {
  char tmp[24];
  auto r = std::to_chars(tmp, tmp + sizeof tmp, v);
  field(std::string_view(tmp, std::size_t(r.ptr - tmp)));
}

void CsvWriter::field(std::uint64_t v) {
  char tmp[24];
  auto r = std::to_chars(tmp, tmp + sizeof tmp, v);
  field(std::string_view(tmp, std::size_t(r.ptr - tmp)));
}

void CsvWriter::end_row() {
  put("\n", 1);
  at_row_start_ = true;
  ++rows_;
}

GzipWriter::GzipWriter(const std::string& path) : out_(1 << 18) {
  file_ = std::fopen(path.c_str(), "wb");
  if (!file_) throw ConfigError("cannot create " + path);
  auto* strm = new z_stream{};
  if (deflateInit2(strm, 1, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    delete strm;
    std::fclose(file_);
    throw DataError("deflateInit2 failed");
  }
  static gz_header header = [] {
    gz_header h{};
    h.time = 0;
    h.os = 3;  // unix, fixed
    return h;
  }();
  deflateSetHeader(strm, &header);
  strm_ = strm;
}

GzipWriter::~GzipWriter() { close(); }

void GzipWriter::write(std::string_view data) {
  auto* strm = static_cast<z_stream*>(strm_);
  strm->next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data.data()));
  strm->avail_in = uInt(data.size());
  while (strm->avail_in > 0) {
    strm->next_out = out_.data();
    strm->avail_out = uInt(out_.size());
    deflate(strm, Z_NO_FLUSH);
    std::fwrite(out_.data(), 1, out_.size() - strm->avail_out, file_);
  }
}

void GzipWriter::close() {
  if (!strm_) return;
  auto* strm = static_cast<z_stream*>(strm_);
  int rc;
  do {
    strm->next_out = out_.data();
    strm->avail_out = uInt(out_.size());
    rc = deflate(strm, Z_FINISH);
    std::fwrite(out_.data(), 1, out_.size() - strm->avail_out, file_);
  } while (rc != Z_STREAM_END);
  deflateEnd(strm);
  delete strm;
  strm_ = nullptr;
  std::fclose(file_);
  file_ = nullptr;
}

std::string format_double(double v) {
  char tmp[32];
  auto r = std::to_chars(tmp, tmp + sizeof tmp, v);
  return std::string(tmp, r.ptr);
}

std::optional<double> parse_double(std::string_view s) {
  double v;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<std::int64_t> parse_i64(std::string_view s) {
  std::int64_t v;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::uint32_t StringPool::intern(std::string_view s) {
  auto it = index_.find(s);
  if (it != index_.end()) return it->second;
  items_.emplace_back(s);
  std::uint32_t idx = std::uint32_t(items_.size() - 1);
  index_.emplace(std::string_view(items_.back()), idx);
  return idx;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

KvConfig KvConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_text(text, path);
}

KvConfig KvConfig::parse_text(std::string_view text, const std::string& origin) {
  KvConfig cfg;
  cfg.origin_ = origin;
  std::size_t start = 0;
  int line_no = 0;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    std::string_view line =
        text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key=value");
    std::string key(trim(line.substr(0, eq)));
    std::string val(trim(line.substr(eq + 1)));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    if (!cfg.values_.emplace(key, val).second)
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key " + key);
  }
  return cfg;
}

std::string KvConfig::get_str(const std::string& key, const std::string& fallback) const {
  mark_used(key);
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::string KvConfig::require_str(const std::string& key) const {
  mark_used(key);
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(origin_ + ": missing required key " + key);
  return it->second;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  mark_used(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  auto v = parse_double(it->second);
  if (!v) throw ConfigError(origin_ + ": key " + key + " is not a number");
  return *v;
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t fallback) const {
  mark_used(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  auto v = parse_i64(it->second);
  if (!v) throw ConfigError(origin_ + ": key " + key + " is not an integer");
  return *v;
}

std::vector<int> KvConfig::get_int_list(const std::string& key, std::vector<int> fallback) const {
  mark_used(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<int> out;
  std::string_view s = it->second;
  while (!s.empty()) {
    auto comma = s.find(',');
    auto piece = trim(s.substr(0, comma));
    auto v = parse_i64(piece);
    if (!v) throw ConfigError(origin_ + ": key " + key + " is not an integer list");
    out.push_back(int(*v));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

std::vector<std::string> KvConfig::unknown_keys() const {
  std::vector<std::string> sorted_used = used_;
  std::sort(sorted_used.begin(), sorted_used.end());
  std::vector<std::string> unknown;
  for (const auto& [k, v] : values_)
    if (!std::binary_search(sorted_used.begin(), sorted_used.end(), k)) unknown.push_back(k);
  return unknown;
}

void parallel_chunks(std::size_t n, int threads,
                     const std::function<void(std::size_t, std::size_t, int)>& fn) {
  if (threads <= 0) threads = int(std::thread::hardware_concurrency());
  if (threads < 1) threads = 1;
  std::size_t workers = std::min<std::size_t>(std::size_t(threads), std::max<std::size_t>(n, 1));
  if (workers <= 1 || n == 0) {
    fn(0, n, 0);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    std::size_t lo = w * chunk;
    std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi, w] { fn(lo, hi, int(w)); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace mobiscope
