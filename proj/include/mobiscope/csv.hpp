#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mobiscope/common.hpp"

namespace mobiscope {

// Line-oriented CSV reader. Plain files and .gz (zlib) are supported; fields
// are split on commas without quoting (none of the pipeline schemas need it).
class CsvReader {
 public:
  explicit CsvReader(const std::string& path);
  ~CsvReader();
  CsvReader(const CsvReader&) = delete;
  CsvReader& operator=(const CsvReader&) = delete;

  // Advances to the next line; fields() views stay valid until the next call.
  bool next_row();
  const std::vector<std::string_view>& fields() const { return fields_; }
  std::size_t line_no() const { return line_no_; }
  const std::string& path() const { return path_; }

 private:
  bool fill();
  std::string path_;
  void* gz_ = nullptr;
  std::FILE* file_ = nullptr;
  std::vector<char> buf_;
  std::size_t pos_ = 0, end_ = 0;
  std::string carry_;
  std::string line_;
  std::vector<std::string_view> fields_;
  std::size_t line_no_ = 0;
  bool eof_ = false;
};

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path);
  ~CsvWriter();
  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;

  void raw(std::string_view s);
  void field(std::string_view s);
  void field(double v);
  void field(std::int64_t v);
  void field(std::uint64_t v);
  void field(int v) { field(std::int64_t(v)); }
  void field(unsigned v) { field(std::uint64_t(v)); }
  void end_row();
  void close();
  std::size_t rows() const { return rows_; }

 private:
  void put(const char* data, std::size_t n);
  std::string path_;
  std::FILE* file_ = nullptr;
  std::vector<char> buf_;
  std::size_t fill_ = 0;
  bool at_row_start_ = true;
  std::size_t rows_ = 0;
};

// Deterministic gzip stream: fixed header (no mtime), so identical content
// always produces identical bytes.
class GzipWriter {
 public:
  explicit GzipWriter(const std::string& path);
  ~GzipWriter();
  GzipWriter(const GzipWriter&) = delete;
  GzipWriter& operator=(const GzipWriter&) = delete;
  void write(std::string_view data);
  void close();

 private:
  std::FILE* file_ = nullptr;
  void* strm_ = nullptr;
  std::vector<unsigned char> out_;
};

// Shortest round-trip decimal form (std::to_chars).
std::string format_double(double v);

std::optional<double> parse_double(std::string_view);
std::optional<std::int64_t> parse_i64(std::string_view);

// Interns device identifiers to dense indices.
class StringPool {
 public:
  std::uint32_t intern(std::string_view s);
  const std::string& name(std::uint32_t idx) const { return items_[idx]; }
  std::size_t size() const { return items_.size(); }

 private:
  std::deque<std::string> items_;
  std::unordered_map<std::string_view, std::uint32_t> index_;
};

// Flat key=value file with '#' comments. Keys are unique; later duplicates
// are an error so silent config drift cannot happen.
class KvConfig {
 public:
  static KvConfig parse_file(const std::string& path);
  static KvConfig parse_text(std::string_view text, const std::string& origin);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get_str(const std::string& key, const std::string& fallback) const;
  std::string require_str(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  const std::string& origin() const { return origin_; }

  // Keys read through any accessor; lets callers reject unknown keys.
  void mark_used(const std::string& key) const { used_.insert(used_.end(), key); }
  std::vector<std::string> unknown_keys() const;

 private:
  std::map<std::string, std::string> values_;
  std::string origin_;
  mutable std::vector<std::string> used_;
};

// Runs fn(chunk_begin, chunk_end) over [0, n) on up to `threads` workers.
// Chunks are contiguous so callers can keep outputs deterministic by
// concatenating in chunk order.
void parallel_chunks(std::size_t n, int threads,
                     const std::function<void(std::size_t, std::size_t, int)>& fn);

}  // namespace mobiscope
