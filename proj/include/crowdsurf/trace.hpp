/*
Copyright (C) 2026 The crowdsurf authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

// HTTP request log schema: record parsing/serialization, query-string
// extraction, and the third-party test every other component builds on.
//
// Trace files are UTF-8 TSV, one record per line, six columns:
//   ts <TAB> user <TAB> method <TAB> hostname <TAB> path <TAB> referer
// Lines starting with '#' are comments. Files ending in ".gz" are
// transparently decompressed.

#pragma once

#include <zlib.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "crowdsurf/util.hpp"

namespace crowdsurf {

struct HttpRequestRecord {
  double ts = 0;          // seconds since epoch
  std::string user;       // opaque contributor identifier, non-empty
  std::string method;     // GET/POST/...
  std::string hostname;   // lowercase, no '/' or whitespace
  std::string path;       // starts with '/', may carry "?query"
  std::string referer;    // may be empty

  bool operator==(const HttpRequestRecord&) const = default;
};

struct QueryParam {
  std::string key;
  std::string value;  // possibly empty

  bool operator==(const QueryParam&) const = default;
};

inline HttpRequestRecord parse_record(std::string_view line, std::size_t line_number = 0) {
  auto cols = split(line, '\t');
  if (cols.size() != 6)
    throw ParseError(line_number,
                     "expected 6 tab-separated columns, got " + std::to_string(cols.size()));

  HttpRequestRecord r;
  const std::string_view ts_field = cols[0];
  auto res = std::from_chars(ts_field.data(), ts_field.data() + ts_field.size(), r.ts);
  if (res.ec != std::errc() || res.ptr != ts_field.data() + ts_field.size())
    throw ParseError(line_number, "non-numeric timestamp '" + std::string(ts_field) + "'");
  if (!std::isfinite(r.ts) || r.ts < 0)
    throw ParseError(line_number, "timestamp must be finite and non-negative");

  if (cols[1].empty()) throw ParseError(line_number, "empty user identifier");
  r.user = std::string(cols[1]);

  if (cols[2].empty() || contains_whitespace(cols[2]))
    throw ParseError(line_number, "malformed method token");
  r.method = std::string(cols[2]);

  if (cols[3].empty()) throw ParseError(line_number, "empty hostname");
  if (cols[3].find('/') != std::string_view::npos || contains_whitespace(cols[3]))
    throw ParseError(line_number, "hostname contains '/' or whitespace");
  r.hostname = to_lower(cols[3]);

  if (cols[4].empty() || cols[4][0] != '/')
    throw ParseError(line_number, "path must begin with '/'");
  r.path = std::string(cols[4]);

  r.referer = std::string(cols[5]);
  return r;
}

inline std::string serialize_record(const HttpRequestRecord& r) {
  return fmt::format("{}\t{}\t{}\t{}\t{}\t{}", r.ts, r.user, r.method, r.hostname, r.path,
                     r.referer);
}

// Key/value pairs from the substring after the first '?'. Fragments split
// on the first '='; a fragment with no '=' yields an empty value. Order
// and duplicates are preserved, empty keys dropped. Values stay byte-exact
// (no percent-decoding).
inline std::vector<QueryParam> extract_query_params(std::string_view path) {
  std::vector<QueryParam> out;
  std::size_t qpos = path.find('?');
  if (qpos == std::string_view::npos) return out;
  std::string_view query = path.substr(qpos + 1);
  if (query.empty()) return out;
  for (std::string_view fragment : split(query, '&')) {
    std::size_t eq = fragment.find('=');
    std::string_view key = eq == std::string_view::npos ? fragment : fragment.substr(0, eq);
    if (key.empty()) continue;
    std::string_view value =
        eq == std::string_view::npos ? std::string_view{} : fragment.substr(eq + 1);
    out.push_back({std::string(key), std::string(value)});
  }
  return out;
}

// Suffix match at a label boundary: "adnxs.com" matches "ib.adnxs.com" and
// "adnxs.com" itself but never "badnxs.com". Inputs are compared lowercase.
inline bool hostname_matches_suffix(std::string_view hostname, std::string_view suffix) {
  while (!suffix.empty() && suffix.front() == '.') suffix.remove_prefix(1);
  if (suffix.empty() || hostname.empty()) return false;
  std::string h = to_lower(hostname);
  std::string s = to_lower(suffix);
  if (h == s) return true;
  return h.size() > s.size() && h.ends_with(s) && h[h.size() - s.size() - 1] == '.';
}

// Host component of a URL, lowercased; empty string when unparsable.
// Accepts scheme-less referers ("www.example.org/page").
inline std::string url_host(std::string_view url) {
  if (url.empty() || contains_whitespace(url)) return {};
  std::size_t scheme = url.find("://");
  std::string_view rest = scheme == std::string_view::npos ? url : url.substr(scheme + 3);
  std::size_t end = rest.find_first_of("/?#");
  std::string_view authority = end == std::string_view::npos ? rest : rest.substr(0, end);
  std::size_t at = authority.rfind('@');
  if (at != std::string_view::npos) authority = authority.substr(at + 1);
  std::size_t colon = authority.find(':');
  if (colon != std::string_view::npos) authority = authority.substr(0, colon);
  if (authority.empty() || authority.find('/') != std::string_view::npos) return {};
  return to_lower(authority);
}

// True iff the record is a third-party request relative to `target`: the
// hostname does not match target, while the referer's host does.
inline bool is_third_party(const HttpRequestRecord& r, std::string_view target) {
  if (hostname_matches_suffix(r.hostname, target)) return false;
  std::string referer_host = url_host(r.referer);
  if (referer_host.empty()) return false;
  return hostname_matches_suffix(referer_host, target);
}

// Line source over a plain or gzip-compressed trace file.
class TraceReader {
 public:
  explicit TraceReader(const std::string& path) {
    if (path.size() > 3 && path.ends_with(".gz")) {
      gz_ = gzopen(path.c_str(), "rb");
      if (!gz_) throw IoError("cannot open " + path);
    } else {
      stream_.open(path, std::ios::binary);
      if (!stream_) throw IoError("cannot open " + path);
    }
  }

  TraceReader(const TraceReader&) = delete;
  TraceReader& operator=(const TraceReader&) = delete;

  ~TraceReader() {
    if (gz_) gzclose(gz_);
  }

  std::optional<std::string> next_line() {
    ++line_number_;
    if (gz_) {
      std::string line;
      char buf[4096];
      bool got = false;
      while (gzgets(gz_, buf, sizeof buf)) {
        got = true;
        line += buf;
        if (!line.empty() && line.back() == '\n') break;
      }
      if (!got) return std::nullopt;
      if (!line.empty() && line.back() == '\n') line.pop_back();
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    std::string line;
    if (!std::getline(stream_, line)) return std::nullopt;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  }

  std::size_t line_number() const { return line_number_; }

 private:
  std::ifstream stream_;
  gzFile gz_ = nullptr;
  std::size_t line_number_ = 0;
};

inline bool is_comment_or_blank(std::string_view line) {
  return line.empty() || line.front() == '#';
}

// Reads the whole trace; throws ParseError on the first malformed line.
inline std::vector<HttpRequestRecord> read_trace(const std::string& path) {
  TraceReader reader(path);
  std::vector<HttpRequestRecord> records;
  while (auto line = reader.next_line()) {
    if (is_comment_or_blank(*line)) continue;
    records.push_back(parse_record(*line, reader.line_number()));
  }
  return records;
}

struct TraceValidation {
  std::size_t records = 0;
  std::vector<std::pair<std::size_t, std::string>> errors;  // (line, message)
};

// Parses every line, collecting all errors instead of stopping at the first.
inline TraceValidation validate_trace(const std::string& path) {
  TraceReader reader(path);
  TraceValidation v;
  while (auto line = reader.next_line()) {
    if (is_comment_or_blank(*line)) continue;
    try {
      parse_record(*line, reader.line_number());
      ++v.records;
    } catch (const ParseError& e) {
      v.errors.emplace_back(reader.line_number(), e.what());
    }
  }
  return v;
}

inline void write_trace(const std::string& path, const std::vector<HttpRequestRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& r : records) out << serialize_record(r) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace crowdsurf
