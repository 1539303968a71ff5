#pragma once

// Half-hourly price files to daily average series, and daily series I/O.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mrs/diagnostics.hpp"
#include "mrs/errors.hpp"

namespace mrs {

enum class PartialDays { strict, mean_available };

inline PartialDays parse_partial_days(const std::string& s) {
  if (s == "strict") return PartialDays::strict;
  if (s == "mean-available" || s == "mean_available") return PartialDays::mean_available;
  throw ConfigError("unknown partial-days policy '" + s + "' (expected strict|mean-available)");
}

inline std::string to_string(PartialDays p) { return p == PartialDays::strict ? "strict" : "mean-available"; }

using Date = std::chrono::sys_days;

inline std::string format_date(Date d) {
  const std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

/// Monday is 0.
inline int weekday_index(Date d) { return static_cast<int>((std::chrono::weekday{d}.c_encoding() + 6) % 7); }

namespace detail {

inline std::string trim(std::string s) {
  const auto ws = [](unsigned char c) { return std::isspace(c) || c == '"'; };
  while (!s.empty() && ws(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && ws(static_cast<unsigned char>(s[i]))) ++i;
  return s.substr(i);
}

inline std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      out.push_back(trim(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline bool parse_int(std::string_view s, int& v) {
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  return r.ec == std::errc{} && r.ptr == s.data() + s.size();
}

inline bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  char* end = nullptr;
  v = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(v);
}

}  // namespace detail

/// "YYYY-MM-DD" or "YYYY/MM/DD".
inline std::optional<Date> parse_date(std::string_view s) {
  if (s.size() != 10 || (s[4] != '-' && s[4] != '/') || s[7] != s[4]) return std::nullopt;
  int y = 0, m = 0, d = 0;
  if (!detail::parse_int(s.substr(0, 4), y) || !detail::parse_int(s.substr(5, 2), m) ||
      !detail::parse_int(s.substr(8, 2), d))
    return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return std::nullopt;
  return Date{ymd};
}

/// Minutes since the epoch for "date[ T]HH:MM[:SS]".
inline std::optional<long> parse_timestamp(std::string_view s) {
  if (s.size() < 16) return std::nullopt;
  const auto date = parse_date(s.substr(0, 10));
  if (!date || (s[10] != ' ' && s[10] != 'T') || s[13] != ':') return std::nullopt;
  int hh = 0, mm = 0;
  if (!detail::parse_int(s.substr(11, 2), hh) || !detail::parse_int(s.substr(14, 2), mm)) return std::nullopt;
  if (s.size() > 16) {
    int ss = 0;
    if (s.size() != 19 || s[16] != ':' || !detail::parse_int(s.substr(17, 2), ss) || ss != 0) return std::nullopt;
  }
  if (hh < 0 || hh > 24 || mm < 0 || mm > 59 || (hh == 24 && mm != 0)) return std::nullopt;
  return static_cast<long>(date->time_since_epoch().count()) * 1440L + hh * 60L + mm;
}

struct PriceSeries {
  std::vector<Date> dates;
  std::vector<double> values;
  std::vector<int> ticks;        // half-hours averaged into each day (0 when not ingested from ticks)
  int start_weekday = 0;
  std::uint64_t fingerprint = 0;

  std::size_t size() const { return values.size(); }
};

struct IngestOptions {
  std::string region;                 // required when the file holds several regions
  std::optional<Date> from, to;       // inclusive
  PartialDays policy = PartialDays::strict;
};

/// Daily averages of a half-hourly price file.
///
/// AEMO-style files (columns SETTLEMENTDATE, REGION, RRP) stamp the end of each interval, so
/// 00:00 belongs to the previous day. Generic files (timestamp, price[, region]) stamp the start.
inline PriceSeries ingest(std::istream& in, const IngestOptions& opt) {
  std::string line;
  long lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (!detail::trim(line).empty()) {
      header = detail::split_csv(line);
      break;
    }
  }
  if (header.empty()) throw IngestionError("input is empty");
  int c_time = -1, c_price = -1, c_region = -1;
  bool interval_end = false;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto h = detail::lower(header[i]);
    const int ii = static_cast<int>(i);
    if (h == "settlementdate") {
      c_time = ii;
      interval_end = true;
    } else if (h == "timestamp" && c_time < 0) {
      c_time = ii;
    } else if (h == "rrp" || (h == "price" && c_price < 0)) {
      c_price = ii;
    } else if (h == "region" || h == "regionid") {
      c_region = ii;
    }
  }
  if (c_time < 0 || c_price < 0)
    throw IngestionError("line " + std::to_string(lineno) +
                         ": header must name SETTLEMENTDATE/RRP or timestamp/price columns");

  std::map<long, std::pair<double, int>> days;  // day number -> (sum, ticks)
  std::optional<long> last;
  std::string seen_region;
  const std::size_t need = static_cast<std::size_t>(std::max({c_time, c_price, c_region})) + 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv(line);
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (f.size() < need) throw IngestionError(where + "expected at least " + std::to_string(need) + " fields");
    if (c_region >= 0) {
      const auto& reg = f[static_cast<std::size_t>(c_region)];
      if (!opt.region.empty() && reg != opt.region) continue;
      if (opt.region.empty()) {
        if (seen_region.empty()) seen_region = reg;
        if (reg != seen_region)
          throw IngestionError(where + "file holds several regions (" + seen_region + ", " + reg +
                               "); select one with --region");
      }
    }
    const auto ts = parse_timestamp(f[static_cast<std::size_t>(c_time)]);
    if (!ts) throw IngestionError(where + "malformed timestamp '" + f[static_cast<std::size_t>(c_time)] + "'");
    double price = 0.0;
    if (!detail::parse_double(f[static_cast<std::size_t>(c_price)], price))
      throw IngestionError(where + "malformed price '" + f[static_cast<std::size_t>(c_price)] + "'");
    if (last && *ts <= *last) throw IngestionError(where + "timestamps are not strictly increasing");
    last = ts;
    const long start = interval_end ? *ts - 30 : *ts;
    const long day = start >= 0 ? start / 1440 : -((-start + 1439) / 1440);
    const Date d{std::chrono::days{day}};
    if ((opt.from && d < *opt.from) || (opt.to && d > *opt.to)) continue;
    auto& acc = days[day];
    acc.first += price;
    acc.second += 1;
  }
  if (days.empty()) throw IngestionError("no prices fall in the selected region and date range");

  const long first = opt.from ? opt.from->time_since_epoch().count() : days.begin()->first;
  const long final = opt.to ? opt.to->time_since_epoch().count() : days.rbegin()->first;
  std::vector<std::string> gaps, partial;
  PriceSeries out;
  for (long day = first; day <= final; ++day) {
    const Date d{std::chrono::days{day}};
    const auto it = days.find(day);
    if (it == days.end()) {
      gaps.push_back(format_date(d));
      continue;
    }
    const auto [sum, n] = it->second;
    if (n != 48) partial.push_back(format_date(d) + " (" + std::to_string(n) + " prices)");
    out.dates.push_back(d);
    out.values.push_back(sum / n);
    out.ticks.push_back(n);
  }
  const auto listing = [](const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size() && i < 20; ++i) s += (i ? ", " : "") + v[i];
    if (v.size() > 20) s += ", ... (" + std::to_string(v.size()) + " in total)";
    return s;
  };
  if (!gaps.empty()) throw IngestionError("missing days: " + listing(gaps));
  if (!partial.empty() && opt.policy == PartialDays::strict)
    throw IngestionError("incomplete days under the strict policy (48 half-hourly prices expected): " +
                         listing(partial));
  out.start_weekday = weekday_index(out.dates.front());
  out.fingerprint = data_fingerprint(out.values);
  return out;
}

inline PriceSeries ingest_file(const std::string& path, const IngestOptions& opt) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path);
  return ingest(in, opt);
}

/// Writes date, weekday, price and tick count columns.
inline void write_series(std::ostream& out, const PriceSeries& s) {
  out << "date,weekday,price,ticks\n";
  char buf[64];
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", s.values[i]);
    out << (s.dates.empty() ? std::to_string(i) : format_date(s.dates[i])) << ','
        << (s.start_weekday + static_cast<int>(i)) % 7 << ',' << buf << ',' << (s.ticks.empty() ? 0 : s.ticks[i])
        << '\n';
  }
}

/// Reads a daily series with a `price` or `x` column and optional `date` and `weekday` columns.
inline PriceSeries read_series(std::istream& in, std::optional<int> start_weekday = std::nullopt) {
  std::string line;
  if (!std::getline(in, line)) throw IngestionError("series file is empty");
  const auto header = detail::split_csv(line);
  int c_value = -1, c_date = -1, c_weekday = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto h = detail::lower(header[i]);
    if (h == "price" || h == "x") c_value = static_cast<int>(i);
    if (h == "date") c_date = static_cast<int>(i);
    if (h == "weekday") c_weekday = static_cast<int>(i);
  }
  std::optional<int> first_weekday;
  if (c_value < 0) throw IngestionError("line 1: series header needs a 'price' or 'x' column");
  PriceSeries s;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv(line);
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (f.size() <= static_cast<std::size_t>(std::max({c_value, c_date, c_weekday})))
      throw IngestionError(where + "too few fields");
    if (c_weekday >= 0 && !first_weekday) {
      int w = 0;
      if (!detail::parse_int(f[static_cast<std::size_t>(c_weekday)], w) || w < 0 || w > 6)
        throw IngestionError(where + "weekday must be an integer in 0..6");
      first_weekday = w;
    }
    double v = 0.0;
    if (!detail::parse_double(f[static_cast<std::size_t>(c_value)], v))
      throw IngestionError(where + "malformed value '" + f[static_cast<std::size_t>(c_value)] + "'");
    if (c_date >= 0) {
      const auto d = parse_date(f[static_cast<std::size_t>(c_date)]);
      if (!d) throw IngestionError(where + "malformed date '" + f[static_cast<std::size_t>(c_date)] + "'");
      if (!s.dates.empty() && *d != s.dates.back() + std::chrono::days{1})
        throw IngestionError(where + "dates must be consecutive calendar days");
      s.dates.push_back(*d);
    }
    s.values.push_back(v);
  }
  if (s.values.empty()) throw IngestionError("series file has no observations");
  if (start_weekday) {
    s.start_weekday = *start_weekday;
  } else if (!s.dates.empty()) {
    s.start_weekday = weekday_index(s.dates.front());
  } else {
    s.start_weekday = first_weekday.value_or(0);
  }
  s.fingerprint = data_fingerprint(s.values);
  return s;
}

inline PriceSeries read_series_file(const std::string& path, std::optional<int> start_weekday = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path);
  return read_series(in, start_weekday);
}

}  // namespace mrs
