#pragma once

// Price panel loading and validation, log transform, train/test split, and the
// key-value engine configuration.

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
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "ddnm/error.hpp"

namespace ddnm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Calendar date, ISO 8601 (YYYY-MM-DD) only.
struct Date {
  int year = 1970;
  unsigned month = 1;
  unsigned day = 1;

  static std::optional<Date> parse(std::string_view s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
    int y = 0;
    unsigned mo = 0, d = 0;
    auto num = [](std::string_view part, auto& out) {
      auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
      return ec == std::errc() && p == part.data() + part.size();
    };
    if (!num(s.substr(0, 4), y) || !num(s.substr(5, 2), mo) || !num(s.substr(8, 2), d)) return std::nullopt;
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{mo}, std::chrono::day{d}};
    if (!ymd.ok()) return std::nullopt;
    return Date{y, mo, d};
  }

  std::string str() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", year, month, day);
    return buf;
  }

  std::chrono::sys_days days() const {
    return std::chrono::sys_days{std::chrono::year_month_day{std::chrono::year{year}, std::chrono::month{month},
                                                             std::chrono::day{day}}};
  }

  static Date from_days(std::chrono::sys_days sd) {
    const std::chrono::year_month_day ymd{sd};
    return {static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day())};
  }

  friend auto operator<=>(const Date&, const Date&) = default;
};

/// Validated price panel: strictly increasing dates, positive prices, complete.
struct PriceFrame {
  std::vector<Date> dates;
  std::vector<std::string> names;  // modeled series in model order
  Matrix prices;                   // dates x series
  std::optional<int> benchmark;    // index into names
  std::optional<std::string> cta_name;
  std::vector<double> cta;  // comparison column, not modeled

  std::size_t length() const { return dates.size(); }
  int series() const { return static_cast<int>(names.size()); }
};

struct LoadOptions {
  bool ffill = false;  // forward-fill runs of up to 3 missing values
  std::optional<std::string> benchmark;
  std::optional<std::string> cta;
  std::vector<std::string> series_order;  // empty: column order
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_line(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

inline bool is_missing(std::string_view s) { return s.empty() || s == "NA" || s == "NaN" || s == "nan"; }

}  // namespace detail

inline constexpr int kMaxFillGap = 3;

/// Parses `date,NAME1,...,NAMEm[,BENCH][,CTA]` text. The CTA column is kept aside;
/// every other column is a modeled series.
inline PriceFrame parse_prices(std::istream& in, const LoadOptions& opt = {}, const std::string& source = "<input>") {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    for (auto f : detail::split_line(t)) header.emplace_back(f);
    break;
  }
  if (header.size() < 2) throw DataError(source + ": header must be 'date' followed by at least one series column");
  const std::size_t ncol = header.size() - 1;
  {
    std::vector<std::string> sorted(header.begin() + 1, header.end());
    std::sort(sorted.begin(), sorted.end());
    if (auto it = std::adjacent_find(sorted.begin(), sorted.end()); it != sorted.end()) {
      throw DataError(source + ": duplicate column '" + *it + "'");
    }
  }

  std::vector<Date> dates;
  std::vector<std::vector<std::optional<double>>> cols(ncol);
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto fields = detail::split_line(t);
    const std::string where = source + ":" + std::to_string(lineno);
    if (fields.size() != header.size()) {
      throw DataError(where + ": expected " + std::to_string(header.size()) + " fields, found " +
                      std::to_string(fields.size()));
    }
    const auto date = Date::parse(fields[0]);
    if (!date) throw DataError(where + ": unparseable date '" + std::string(fields[0]) + "' (expected YYYY-MM-DD)");
    if (!dates.empty() && !(dates.back() < *date)) {
      throw DataError(where + ": date " + date->str() + (dates.back() == *date ? " is duplicated" : " is out of order"));
    }
    dates.push_back(*date);
    for (std::size_t c = 0; c < ncol; ++c) {
      const auto f = fields[c + 1];
      if (detail::is_missing(f)) {
        cols[c].push_back(std::nullopt);
        continue;
      }
      const auto v = detail::parse_double(f);
      if (!v) throw DataError(where + ", column '" + header[c + 1] + "': cannot parse '" + std::string(f) + "'");
      cols[c].push_back(*v);
    }
  }
  if (dates.empty()) throw DataError(source + ": no data rows");

  PriceFrame frame;
  frame.dates = dates;
  std::vector<std::size_t> modeled;
  for (std::size_t c = 0; c < ncol; ++c) {
    if (opt.cta && header[c + 1] == *opt.cta) continue;
    modeled.push_back(c);
  }
  if (opt.cta && modeled.size() == ncol) throw ConfigError("CTA column '" + *opt.cta + "' not found in " + source);
  if (!opt.series_order.empty()) {
    std::vector<std::size_t> ordered;
    for (const auto& name : opt.series_order) {
      auto it = std::find_if(modeled.begin(), modeled.end(), [&](std::size_t c) { return header[c + 1] == name; });
      if (it == modeled.end()) throw ConfigError("series_order names unknown column '" + name + "'");
      ordered.push_back(*it);
    }
    if (ordered.size() != modeled.size()) throw ConfigError("series_order must list every modeled column exactly once");
    std::vector<std::size_t> check = ordered;
    std::sort(check.begin(), check.end());
    if (std::adjacent_find(check.begin(), check.end()) != check.end()) throw ConfigError("series_order repeats a column");
    modeled = ordered;
  }
  if (modeled.empty()) throw DataError(source + ": no modeled series");

  const std::size_t T = dates.size();
  auto fill = [&](std::vector<std::optional<double>>& col, const std::string& name, bool positive) {
    std::vector<double> out(T);
    std::size_t run = 0;
    for (std::size_t t = 0; t < T; ++t) {
      if (!col[t]) {
        ++run;
        if (!opt.ffill) throw DataError(source + ": missing value for '" + name + "' on " + dates[t].str() + " (use --ffill)");
        if (t == 0) throw DataError(source + ": missing first value for '" + name + "' cannot be forward-filled");
        if (run > static_cast<std::size_t>(kMaxFillGap)) {
          throw DataError(source + ": gap of more than " + std::to_string(kMaxFillGap) + " days for '" + name +
                          "' ending " + dates[t].str());
        }
        out[t] = out[t - 1];
        continue;
      }
      run = 0;
      if (positive && !(*col[t] > 0.0)) {
        throw DataError(source + ": non-positive price " + std::to_string(*col[t]) + " for '" + name + "' on " +
                        dates[t].str());
      }
      out[t] = *col[t];
    }
    return out;
  };

  frame.prices.resize(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(modeled.size()));
  for (std::size_t k = 0; k < modeled.size(); ++k) {
    const std::size_t c = modeled[k];
    frame.names.push_back(header[c + 1]);
    const auto v = fill(cols[c], header[c + 1], true);
    for (std::size_t t = 0; t < T; ++t) frame.prices(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = v[t];
  }
  if (opt.cta) {
    for (std::size_t c = 0; c < ncol; ++c) {
      if (header[c + 1] != *opt.cta) continue;
      frame.cta_name = header[c + 1];
      frame.cta = fill(cols[c], header[c + 1], true);
    }
  }
  if (opt.benchmark) {
    auto it = std::find(frame.names.begin(), frame.names.end(), *opt.benchmark);
    if (it == frame.names.end()) throw ConfigError("benchmark column '" + *opt.benchmark + "' not found among modeled series");
    frame.benchmark = static_cast<int>(it - frame.names.begin());
  }
  return frame;
}

inline PriceFrame load_prices(const std::string& path, const LoadOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open price file '" + path + "'");
  return parse_prices(in, opt, path);
}

inline Matrix to_log_prices(const PriceFrame& frame) { return frame.prices.array().log().matrix(); }

/// Training rows [0, train_end) have dates <= split_date; test rows follow.
struct SplitRange {
  std::size_t train_end = 0;
  std::size_t total = 0;
  std::size_t train_size() const { return train_end; }
  std::size_t test_size() const { return total - train_end; }
};

inline SplitRange split(const PriceFrame& frame, const Date& split_date) {
  SplitRange s;
  s.total = frame.length();
  s.train_end = static_cast<std::size_t>(std::upper_bound(frame.dates.begin(), frame.dates.end(), split_date) -
                                         frame.dates.begin());
  if (s.train_end == 0) throw ConfigError("split date " + split_date.str() + " leaves an empty training period");
  if (s.train_end == s.total) throw ConfigError("split date " + split_date.str() + " leaves an empty test period");
  return s;
}

/// Engine settings; defaults are the case-study control settings.
struct EngineConfig {
  std::vector<double> delta_grid;
  std::vector<double> beta_grid;
  std::vector<double> alpha_grid;
  int max_lag = 2;
  double rho = 0.3;
  double prune_threshold = 0.001;
  std::size_t nmc = 10'000;
  double target_1day = 0.001;
  double target_5day = 0.005;
  std::optional<Date> split_date;
  std::uint64_t seed = 1;
  std::vector<std::string> series_order;
  double c0 = 1.0;
  double n0 = 5.0;
  std::size_t s0_window = 20;
  double s0_floor = 1e-4;
  std::optional<int> max_parents;
  std::map<std::string, std::vector<std::string>> candidates;  // series -> allowed parents
  std::optional<std::string> benchmark;
  std::optional<std::string> cta;
  int workers = 1;
  std::uint64_t max_models = 2'000'000;

  EngineConfig()
      : delta_grid(grid(0.975, 0.005, 0.995)), beta_grid(grid(0.975, 0.005, 0.995)), alpha_grid(grid(0.950, 0.005, 1.000)) {}

  /// Values a, a+s, ... up to b (inclusive within 1e-12).
  static std::vector<double> grid(double a, double s, double b) {
    if (!(s > 0.0) || b < a) throw ConfigError("grid start:step:stop needs step > 0 and stop >= start");
    const auto count = static_cast<std::size_t>(std::floor((b - a) / s + 1e-9)) + 1;
    std::vector<double> v;
    for (std::size_t i = 0; i < count; ++i) {
      const double x = a + static_cast<double>(i) * s;
      if (x > b + 1e-12) break;
      v.push_back(std::round(x * 1e12) / 1e12);
    }
    return v;
  }

  double target_for(int horizon) const {
    if (horizon == 1) return target_1day;
    if (horizon == 5) return target_5day;
    return target_1day * horizon;
  }

  friend bool operator==(const EngineConfig&, const EngineConfig&) = default;
};

namespace detail {

inline std::vector<double> parse_grid(const std::string& key, std::string_view v) {
  if (v.find(':') != std::string_view::npos) {
    const auto parts = split_line(v, ':');
    if (parts.size() != 3) throw ConfigError(key + ": grid must be start:step:stop");
    std::array<double, 3> x{};
    for (std::size_t i = 0; i < 3; ++i) {
      const auto d = parse_double(parts[i]);
      if (!d) throw ConfigError(key + ": cannot parse '" + std::string(parts[i]) + "'");
      x[i] = *d;
    }
    return EngineConfig::grid(x[0], x[1], x[2]);
  }
  std::vector<double> out;
  for (auto part : split_line(v, ',')) {
    const auto d = parse_double(part);
    if (!d) throw ConfigError(key + ": cannot parse '" + std::string(part) + "'");
    out.push_back(*d);
  }
  return out;
}

inline std::vector<std::string> parse_names(std::string_view v) {
  std::vector<std::string> out;
  for (auto part : split_line(v, ','))
    if (!part.empty()) out.emplace_back(part);
  return out;
}

template <typename T>
T parse_number(const std::string& key, std::string_view v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": cannot parse '" + std::string(v) + "'");
  return out;
}

inline std::string fmt_double(double x) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}

inline std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt_double(v[i]);
  return s;
}

inline std::string join_names(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

}  // namespace detail

/// Range checks naming the offending key and bound.
inline void validate(const EngineConfig& c) {
  auto check_grid = [](const char* key, const std::vector<double>& g) {
    if (g.empty()) throw ConfigError(std::string(key) + ": grid is empty");
    for (double x : g)
      if (!(x > 0.0 && x <= 1.0)) throw ConfigError(std::string(key) + ": value " + detail::fmt_double(x) + " outside (0,1]");
  };
  check_grid("delta", c.delta_grid);
  check_grid("beta", c.beta_grid);
  check_grid("alpha", c.alpha_grid);
  if (c.max_lag < 0) throw ConfigError("d: must be >= 0");
  if (!(c.rho > 0.0 && c.rho < 1.0)) throw ConfigError("rho: must lie in (0,1), got " + detail::fmt_double(c.rho));
  if (!(c.prune_threshold >= 0.0 && c.prune_threshold < 1.0)) throw ConfigError("th: must lie in [0,1)");
  if (c.nmc < 2) throw ConfigError("nmc: must be >= 2");
  if (!(c.c0 > 0.0)) throw ConfigError("c0: must be > 0");
  if (!(c.n0 > 0.0)) throw ConfigError("n0: must be > 0");
  if (!(c.s0_floor > 0.0)) throw ConfigError("s0_floor: must be > 0");
  if (c.max_parents && *c.max_parents < 0) throw ConfigError("max_parents: must be >= 0");
  if (c.workers < 1) throw ConfigError("workers: must be >= 1");
}

/// Parses `key = value` lines with `#` comments. Grids accept start:step:stop or
/// comma lists. `candidates.NAME = A,B` restricts the parents of series NAME.
inline EngineConfig parse_config_text(std::istream& in, const std::string& source = "<config>") {
  EngineConfig c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    std::string_view t = detail::trim(std::string_view(line).substr(0, hash));
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key(detail::trim(t.substr(0, eq)));
    const std::string_view val = detail::trim(t.substr(eq + 1));
    if (key == "delta") c.delta_grid = detail::parse_grid(key, val);
    else if (key == "beta") c.beta_grid = detail::parse_grid(key, val);
    else if (key == "alpha") c.alpha_grid = detail::parse_grid(key, val);
    else if (key == "d") c.max_lag = detail::parse_number<int>(key, val);
    else if (key == "rho") c.rho = detail::parse_number<double>(key, val);
    else if (key == "th") c.prune_threshold = detail::parse_number<double>(key, val);
    else if (key == "nmc") c.nmc = detail::parse_number<std::size_t>(key, val);
    else if (key == "target_1day") c.target_1day = detail::parse_number<double>(key, val);
    else if (key == "target_5day") c.target_5day = detail::parse_number<double>(key, val);
    else if (key == "split_date") {
      auto d = Date::parse(val);
      if (!d) throw ConfigError("split_date: expected YYYY-MM-DD, got '" + std::string(val) + "'");
      c.split_date = d;
    } else if (key == "seed") c.seed = detail::parse_number<std::uint64_t>(key, val);
    else if (key == "series_order") c.series_order = detail::parse_names(val);
    else if (key == "c0") c.c0 = detail::parse_number<double>(key, val);
    else if (key == "n0") c.n0 = detail::parse_number<double>(key, val);
    else if (key == "s0_window") c.s0_window = detail::parse_number<std::size_t>(key, val);
    else if (key == "s0_floor") c.s0_floor = detail::parse_number<double>(key, val);
    else if (key == "max_parents") c.max_parents = detail::parse_number<int>(key, val);
    else if (key.rfind("candidates.", 0) == 0) c.candidates[key.substr(11)] = detail::parse_names(val);
    else if (key == "benchmark") c.benchmark = std::string(val);
    else if (key == "cta") c.cta = std::string(val);
    else if (key == "workers") c.workers = detail::parse_number<int>(key, val);
    else if (key == "max_models") c.max_models = detail::parse_number<std::uint64_t>(key, val);
    else throw ConfigError(source + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  validate(c);
  return c;
}

inline EngineConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config_text(in, path);
}

/// Canonical text form; parse_config_text(serialize_config(c)) == c.
inline std::string serialize_config(const EngineConfig& c) {
  std::ostringstream os;
  os << "delta = " << detail::join_doubles(c.delta_grid) << "\n";
  os << "beta = " << detail::join_doubles(c.beta_grid) << "\n";
  os << "alpha = " << detail::join_doubles(c.alpha_grid) << "\n";
  os << "d = " << c.max_lag << "\n";
  os << "rho = " << detail::fmt_double(c.rho) << "\n";
  os << "th = " << detail::fmt_double(c.prune_threshold) << "\n";
  os << "nmc = " << c.nmc << "\n";
  os << "target_1day = " << detail::fmt_double(c.target_1day) << "\n";
  os << "target_5day = " << detail::fmt_double(c.target_5day) << "\n";
  if (c.split_date) os << "split_date = " << c.split_date->str() << "\n";
  os << "seed = " << c.seed << "\n";
  if (!c.series_order.empty()) os << "series_order = " << detail::join_names(c.series_order) << "\n";
  os << "c0 = " << detail::fmt_double(c.c0) << "\n";
  os << "n0 = " << detail::fmt_double(c.n0) << "\n";
  os << "s0_window = " << c.s0_window << "\n";
  os << "s0_floor = " << detail::fmt_double(c.s0_floor) << "\n";
  if (c.max_parents) os << "max_parents = " << *c.max_parents << "\n";
  for (const auto& [name, list] : c.candidates) os << "candidates." << name << " = " << detail::join_names(list) << "\n";
  if (c.benchmark) os << "benchmark = " << *c.benchmark << "\n";
  if (c.cta) os << "cta = " << *c.cta << "\n";
  os << "workers = " << c.workers << "\n";
  os << "max_models = " << c.max_models << "\n";
  return os.str();
}

}  // namespace ddnm
