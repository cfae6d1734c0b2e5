#pragma once

// Command implementations behind the CLI: model counting, training with
// trajectory output, backtesting of the portfolio rules, forecasting, and
// synthetic panel generation. Every CSV starts with a manifest digest line.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddnm/digest.hpp"
#include "ddnm/engine.hpp"
#include "ddnm/forecast.hpp"
#include "ddnm/io.hpp"
#include "ddnm/portfolio.hpp"
#include "ddnm/synthetic.hpp"

namespace ddnm {

inline constexpr const char* kEngineVersion = "1.0.0";

/// Shortest round-trip decimal; "nan"/"inf" for non-finite values.
inline std::string num(double x) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}

/// CSV file whose first line records the run's manifest digest.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::string& digest, const std::vector<std::string>& header)
      : out_(path, std::ios::binary) {
    if (!out_) throw DataError("cannot write '" + path.string() + "'");
    out_ << "# manifest_digest=" << digest << "\n";
    row(header);
  }

  template <typename... Fields>
  void add(const Fields&... fields) {
    bool first = true;
    ((out_ << (first ? "" : ",") << field(fields), first = false), ...);
    out_ << "\n";
  }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) out_ << (i ? "," : "") << fields[i];
    out_ << "\n";
  }

 private:
  static std::string field(double x) { return num(x); }
  static std::string field(const std::string& s) { return s; }
  static std::string field(const char* s) { return s; }
  template <typename T>
    requires std::is_integral_v<T>
  static std::string field(T v) {
    return std::to_string(v);
  }

  std::ofstream out_;
};

/// Resolved inputs shared by the data-driven commands.
struct RunInputs {
  std::optional<std::string> config_path;
  std::string data_path;
  bool ffill = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::vector<double>> alpha_grid;
  std::optional<int> workers;
};

struct RunContext {
  EngineConfig cfg;
  PriceFrame frame;
  Matrix y;  // log prices
  std::string input_digest;
  SplitRange split;
};

inline RunContext prepare(const RunInputs& in) {
  RunContext c;
  c.cfg = in.config_path ? parse_config(*in.config_path) : EngineConfig{};
  if (in.seed) c.cfg.seed = *in.seed;
  if (in.alpha_grid) c.cfg.alpha_grid = *in.alpha_grid;
  if (in.workers) c.cfg.workers = *in.workers;
  validate(c.cfg);
  LoadOptions opt;
  opt.ffill = in.ffill;
  opt.benchmark = c.cfg.benchmark;
  opt.cta = c.cfg.cta;
  opt.series_order = c.cfg.series_order;
  c.input_digest = sha256_file(in.data_path);
  c.frame = load_prices(in.data_path, opt);
  c.y = to_log_prices(c.frame);
  if (!c.cfg.split_date) {
    if (c.frame.length() < 2) throw DataError("need at least two dates to split");
    c.cfg.split_date = c.frame.dates[(c.frame.length() - 1) / 2];
  }
  c.split = split(c.frame, *c.cfg.split_date);
  if (c.split.train_size() <= static_cast<std::size_t>(c.cfg.max_lag)) {
    throw DataError("training period of " + std::to_string(c.split.train_size()) +
                    " dates is too short for max lag " + std::to_string(c.cfg.max_lag));
  }
  return c;
}

inline std::vector<DiscountPair> discount_grid(const EngineConfig& cfg) {
  std::vector<DiscountPair> g;
  for (double d : cfg.delta_grid)
    for (double b : cfg.beta_grid) g.push_back(DiscountPair::make(d, b));
  return g;
}

inline ModelSpaceSettings space_settings(const EngineConfig& cfg, const std::vector<std::string>& names) {
  ModelSpaceSettings s;
  s.m = static_cast<int>(names.size());
  s.max_lag = cfg.max_lag;
  s.discounts = discount_grid(cfg);
  s.rho = cfg.rho;
  s.max_models = cfg.max_models;
  s.restriction.max_parents = cfg.max_parents;
  auto index_of = [&](const std::string& n) {
    auto it = std::find(names.begin(), names.end(), n);
    if (it == names.end()) throw ConfigError("candidates: unknown series '" + n + "'");
    return static_cast<int>(it - names.begin());
  };
  for (const auto& [child, list] : cfg.candidates) {
    const int j = index_of(child);
    auto& cand = s.restriction.candidates[j];
    for (const auto& p : list) {
      const int i = index_of(p);
      if (i <= j) throw ConfigError("candidates." + child + ": '" + p + "' precedes it in the series order and cannot be a parent");
      cand.push_back(i);
    }
  }
  return s;
}

inline EngineSettings engine_settings(const RunContext& c) {
  EngineSettings es;
  es.space = space_settings(c.cfg, c.frame.names);
  es.alphas = c.cfg.alpha_grid;
  es.c0 = c.cfg.c0;
  es.n0 = c.cfg.n0;
  es.workers = c.cfg.workers;
  const auto train = static_cast<Eigen::Index>(c.split.train_size());
  for (Eigen::Index j = 0; j < c.y.cols(); ++j) {
    const Vector col = c.y.col(j).head(train);
    es.s0.push_back(initial_variance_estimate(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())),
                                              c.cfg.s0_window, c.cfg.s0_floor));
  }
  return es;
}

/// Deterministic run description; its digest tags every artifact.
inline nlohmann::ordered_json make_manifest(const std::string& command, const RunContext& c,
                                            const nlohmann::ordered_json& extra = {}) {
  nlohmann::ordered_json j;
  j["tool"] = "ddnm";
  j["engine_version"] = kEngineVersion;
  j["command"] = command;
  j["input_digest"] = c.input_digest;
  j["seed"] = c.cfg.seed;
  j["series_order"] = c.frame.names;
  j["split_date"] = c.cfg.split_date->str();
  j["train_size"] = c.split.train_size();
  j["test_size"] = c.split.test_size();
  j["config"] = serialize_config(c.cfg);
  if (c.frame.benchmark) j["benchmark"] = c.frame.names[static_cast<std::size_t>(*c.frame.benchmark)];
  if (c.frame.cta_name) j["cta"] = *c.frame.cta_name;
  for (auto it = extra.begin(); extra.is_object() && it != extra.end(); ++it) j[it.key()] = it.value();
  return j;
}

inline std::string manifest_digest(const nlohmann::ordered_json& manifest) { return sha256_hex(manifest.dump()); }

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

/// Wall-clock stage timings, kept out of the manifest so artifacts stay byte-stable.
class Timings {
 public:
  void start(const std::string& stage) {
    stage_ = stage;
    t0_ = std::chrono::steady_clock::now();
  }
  void stop() { json_[stage_] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }
  void write(const std::filesystem::path& path) const { write_text(path, json_.dump(2) + "\n"); }

 private:
  std::string stage_;
  std::chrono::steady_clock::time_point t0_;
  nlohmann::ordered_json json_ = nlohmann::ordered_json::object();
};

inline std::string alpha_label(double a) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << a;
  return os.str();
}

inline std::string parent_label(const ModelSpec& s, const std::vector<std::string>& names) {
  std::string out;
  for (int p : s.parents()) out += (out.empty() ? "" : "|") + names[static_cast<std::size_t>(p)];
  return out.empty() ? "-" : out;
}

/// Per-date marginal trajectories: alpha posterior, expected lag/discounts/parent
/// count per alpha replica and mixed over alpha, and mixed parent inclusion.
class TrajectoryWriter {
 public:
  TrajectoryWriter(const std::filesystem::path& dir, const std::string& digest, const std::vector<std::string>& names)
      : names_(names),
        alpha_(dir / "alpha_trajectory.csv", digest, {"date", "alpha", "probability"}),
        structure_(dir / "structure_trajectory.csv", digest,
                   {"date", "alpha", "series", "expected_lag", "expected_delta", "expected_beta", "expected_parents"}),
        parents_(dir / "parent_inclusion.csv", digest, {"date", "series", "parent", "probability"}) {}

  void record(const Date& date, const Engine& e) {
    const std::string d = date.str();
    const auto w = e.alpha_probabilities();
    for (std::size_t a = 0; a < e.replicas(); ++a) alpha_.add(d, alpha_label(e.alpha(a)), w[a]);
    const int m = e.series();
    std::vector<SeriesMarginals> mix;
    for (std::size_t a = 0; a < e.replicas(); ++a) {
      const auto mg = e.marginals(a);
      for (int j = 0; j < m; ++j) write_structure(d, alpha_label(e.alpha(a)), j, mg[static_cast<std::size_t>(j)], e);
      if (a == 0) {
        mix = mg;
        for (auto& sm : mix) scale(sm, w[0]);
      } else {
        for (int j = 0; j < m; ++j) accumulate(mix[static_cast<std::size_t>(j)], mg[static_cast<std::size_t>(j)], w[a]);
      }
    }
    for (int j = 0; j < m; ++j) {
      const auto& sm = mix[static_cast<std::size_t>(j)];
      write_structure(d, "mix", j, sm, e);
      for (int i = j + 1; i < m; ++i) parents_.add(d, names_[static_cast<std::size_t>(j)], names_[static_cast<std::size_t>(i)], sm.parent[static_cast<std::size_t>(i)]);
    }
  }

 private:
  static void scale(SeriesMarginals& sm, double w) {
    for (double& v : sm.lag) v *= w;
    for (double& v : sm.discount) v *= w;
    for (double& v : sm.parent) v *= w;
    sm.expected_parents *= w;
  }
  static void accumulate(SeriesMarginals& acc, const SeriesMarginals& x, double w) {
    for (std::size_t i = 0; i < acc.lag.size(); ++i) acc.lag[i] += w * x.lag[i];
    for (std::size_t i = 0; i < acc.discount.size(); ++i) acc.discount[i] += w * x.discount[i];
    for (std::size_t i = 0; i < acc.parent.size(); ++i) acc.parent[i] += w * x.parent[i];
    acc.expected_parents += w * x.expected_parents;
  }
  void write_structure(const std::string& d, const std::string& alpha, int j, const SeriesMarginals& sm, const Engine& e) {
    double ed = 0.0, eb = 0.0;
    for (std::size_t k = 0; k < sm.discount.size(); ++k) {
      ed += sm.discount[k] * e.grid()[k].delta;
      eb += sm.discount[k] * e.grid()[k].beta;
    }
    structure_.add(d, alpha, names_[static_cast<std::size_t>(j)], sm.expected_lag(), ed, eb, sm.expected_parents);
  }

  std::vector<std::string> names_;
  CsvWriter alpha_;
  CsvWriter structure_;
  CsvWriter parents_;
};

/// Feeds rows [e.observations(), end) into the engine, recording trajectories
/// for every date that updated the filters.
inline void advance(Engine& e, const RunContext& c, std::size_t end, TrajectoryWriter* traj) {
  for (std::size_t t = e.observations(); t < end; ++t) {
    const std::size_t before = e.updates();
    e.observe(c.y.row(static_cast<Eigen::Index>(t)).transpose());
    if (traj && e.updates() != before) traj->record(c.frame.dates[t], e);
  }
}

inline void write_model_summary(const std::filesystem::path& path, const std::string& digest, const Engine& e,
                                const std::vector<std::string>& names) {
  CsvWriter w(path, digest, {"alpha", "series", "model", "parents", "lag", "delta", "beta", "probability"});
  for (std::size_t a = 0; a < e.replicas(); ++a) {
    for (int j = 0; j < e.series(); ++j) {
      const auto p = e.probabilities(a, j);
      const auto& specs = e.specs(j);
      for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto& g = e.grid()[static_cast<std::size_t>(specs[i].discount)];
        w.add(alpha_label(e.alpha(a)), names[static_cast<std::size_t>(j)], i, parent_label(specs[i], names), specs[i].lag,
              g.delta, g.beta, p[i]);
      }
    }
  }
}

inline void save_snapshot(const std::filesystem::path& path, const Engine& e) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write snapshot '" + path.string() + "'");
  e.save(out);
}

inline Engine load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open snapshot '" + path.string() + "'");
  return Engine::load(in);
}

// ---------------------------------------------------------------------------
// enumerate

struct EnumerateReport {
  std::vector<std::uint64_t> per_series;
  std::uint64_t total = 0;
  std::uint64_t formula = 0;
  double log10_joint = 0.0;
  double memory_bytes = 0.0;
  std::string text;
};

inline EnumerateReport run_enumerate(const EngineConfig& cfg, const std::vector<std::string>& names) {
  const auto s = space_settings(cfg, names);
  detail::validate(s);
  EnumerateReport r;
  r.per_series = count_models(s);
  for (auto c : r.per_series) r.total += c;
  const int m = s.m;
  const int d = s.max_lag;
  const auto k = static_cast<std::uint64_t>(s.discounts.size());
  r.formula = unrestricted_model_count(m, d, k);
  r.log10_joint = log10_joint_space_size(m, d, k);
  // state vector, covariance and bookkeeping per model, one log probability per alpha
  for (int j = 0; j < m; ++j) {
    const double dim = 1.0 + d + (m - j - 1) / 2.0;
    r.memory_bytes += static_cast<double>(r.per_series[static_cast<std::size_t>(j)]) *
                      (8.0 * (dim + dim * dim + 2.0) + 96.0 + 8.0 * static_cast<double>(cfg.alpha_grid.size()));
  }
  std::ostringstream os;
  os << "series  models\n";
  for (int j = 0; j < m; ++j) os << names[static_cast<std::size_t>(j)] << "  " << r.per_series[static_cast<std::size_t>(j)] << "\n";
  os << "total univariate DLMs: " << r.total << "\n";
  os << "unrestricted formula (2^m - 1)(d + 1)k = (2^" << m << " - 1)(" << d << " + 1)" << k << " = " << r.formula << "\n";
  if (m == 13 && d == 2 && k == 25) {
    os << "note: \"just over 300,000\" is often quoted for this case; the formula gives " << r.formula
       << " with lags 0:d (" << unrestricted_model_count(m, d - 1, k) << " with lags 1:d)\n";
  }
  os << "joint model space: 10^" << std::fixed << std::setprecision(2) << r.log10_joint << " combinations\n";
  os << "estimated memory: " << std::setprecision(1) << r.memory_bytes / (1024.0 * 1024.0) << " MiB for "
     << cfg.alpha_grid.size() << " alpha replicas\n";
  r.text = os.str();
  return r;
}

// ---------------------------------------------------------------------------
// fit

struct FitOptions {
  std::optional<Date> until;                  // stop after this date, unpruned
  std::optional<std::string> resume;          // snapshot to continue from
};

struct FitResult {
  std::string digest;
  std::size_t updates = 0;
  std::size_t models = 0;
  bool pruned = false;
};

inline FitResult run_fit(const RunContext& c, const std::filesystem::path& out, const FitOptions& opt = {}) {
  std::filesystem::create_directories(out);
  Timings timings;
  nlohmann::ordered_json extra;
  extra["stage"] = "fit";
  if (opt.until) extra["until"] = opt.until->str();
  if (opt.resume) extra["resume_from"] = sha256_file(*opt.resume);
  const auto manifest = make_manifest("fit", c, extra);
  const auto digest = manifest_digest(manifest);
  write_text(out / "manifest.json", manifest.dump(2) + "\n");

  timings.start("setup");
  Engine e = opt.resume ? load_snapshot(*opt.resume) : Engine(engine_settings(c));
  if (opt.resume) {
    e.set_workers(c.cfg.workers);
    if (e.series() != c.frame.series()) throw ConfigError("snapshot was built for a different number of series");
    if (e.observations() > c.split.train_end) throw ConfigError("snapshot already extends past the split date");
  }
  timings.stop();

  std::size_t end = c.split.train_end;
  if (opt.until) {
    const auto pos = static_cast<std::size_t>(std::upper_bound(c.frame.dates.begin(), c.frame.dates.end(), *opt.until) -
                                              c.frame.dates.begin());
    if (pos > c.split.train_end) throw ConfigError("--until must not be after the split date");
    end = pos;
  }
  timings.start("filter");
  TrajectoryWriter traj(out, digest, c.frame.names);
  advance(e, c, end, &traj);
  timings.stop();

  FitResult r;
  r.digest = digest;
  if (end == c.split.train_end) {
    e.prune(c.cfg.prune_threshold);
    r.pruned = true;
    write_model_summary(out / "model_summary.csv", digest, e, c.frame.names);
  }
  save_snapshot(out / "engine.bin", e);
  timings.write(out / "timings.json");
  r.updates = e.updates();
  r.models = e.model_count();
  return r;
}

// ---------------------------------------------------------------------------
// backtest

struct BacktestOptions {
  int horizon = 5;
  std::vector<Rule> rules{Rule::Target, Rule::Constrained, Rule::Neutral};
  std::optional<std::string> state;  // fitted snapshot; fit in-process when absent
};

struct BacktestResult {
  std::string digest;
  std::size_t rebalances = 0;
  std::size_t flagged = 0;
};

namespace detail {

struct Accuracy {
  double se = 0.0;
  double ae = 0.0;
  std::size_t n = 0;
  void add(double err) {
    se += err * err;
    ae += std::abs(err);
    ++n;
  }
};

inline std::uint64_t mc_stream(std::size_t t, std::size_t a) { return (static_cast<std::uint64_t>(t) << 8) | a; }

}  // namespace detail

inline BacktestResult run_backtest(const RunContext& c, const std::filesystem::path& out, const BacktestOptions& opt) {
  if (opt.horizon < 1) throw ConfigError("--horizon must be >= 1");
  std::filesystem::create_directories(out);
  const int m = c.frame.series();
  const std::optional<int> bench = c.frame.benchmark;
  std::vector<Rule> rules = opt.rules;
  for (Rule r : rules)
    if (r == Rule::Neutral && !bench) throw ConfigError("the neutral rule needs a 'benchmark' column in the config");
  std::vector<int> universe;
  for (int j = 0; j < m; ++j)
    if (!bench || j != *bench) universe.push_back(j);
  if (universe.size() < 2) throw ConfigError("portfolio rules need at least two investable series");
  const auto nu = static_cast<Eigen::Index>(universe.size());
  const double target = c.cfg.target_for(opt.horizon);

  Timings timings;
  nlohmann::ordered_json extra;
  extra["stage"] = "backtest";
  extra["horizon"] = opt.horizon;
  extra["target"] = target;
  std::vector<std::string> rule_names;
  for (Rule r : rules) rule_names.emplace_back(rule_name(r));
  extra["rules"] = rule_names;
  if (opt.state) extra["state_digest"] = sha256_file(*opt.state);
  const auto manifest = make_manifest("backtest", c, extra);
  const auto digest = manifest_digest(manifest);
  write_text(out / "manifest.json", manifest.dump(2) + "\n");

  timings.start("fit");
  Engine e;
  std::optional<TrajectoryWriter> traj;
  traj.emplace(out, digest, c.frame.names);
  if (opt.state) {
    e = load_snapshot(*opt.state);
    e.set_workers(c.cfg.workers);
    if (e.series() != m) throw ConfigError("snapshot was built for a different number of series");
    if (e.observations() != c.split.train_end) throw ConfigError("snapshot does not end at the split date; run fit first");
  } else {
    e = Engine(engine_settings(c));
    advance(e, c, c.split.train_end, &*traj);
    e.prune(c.cfg.prune_threshold);
  }
  write_model_summary(out / "model_summary.csv", digest, e, c.frame.names);
  timings.stop();

  const std::size_t A = e.replicas();
  const std::size_t T = c.frame.length();

  std::map<Rule, CsvWriter> portfolio_csv;
  for (Rule r : rules) {
    portfolio_csv.emplace(r, CsvWriter(out / ("portfolio_" + std::string(rule_name(r)) + ".csv"), digest,
                                       {"date", "end_date", "alpha", "RR", "CR", "PR", "PSR", "MRR", "R", "SR",
                                        "SR_annualized", "regularized", "flag"}));
  }
  CsvWriter weights_csv(out / "weights.csv", digest, {"date", "alpha", "rule", "series", "weight"});
  CsvWriter stderr_csv(out / "std_errors.csv", digest, {"date", "alpha", "series", "horizon", "z"});
  CsvWriter probs_csv(out / "model_probs.csv", digest, {"date", "series", "model", "probability"});
  std::optional<CsvWriter> cta_csv;
  if (c.frame.cta_name) cta_csv.emplace(out / "portfolio_cta.csv", digest, std::vector<std::string>{"date", "end_date", "RR", "CR", "MRR", "R", "SR", "SR_annualized"});

  const double per_year = 252.0 / opt.horizon;
  std::vector<std::map<Rule, PerformanceTracker>> trackers(A);
  for (auto& tr : trackers)
    for (Rule r : rules) tr.emplace(r, PerformanceTracker(per_year));
  PerformanceTracker cta_tracker(per_year);
  std::vector<detail::Accuracy> acc1(A), acck(A);

  BacktestResult result;
  result.digest = digest;
  timings.start("test");
  for (std::size_t t = c.split.train_end; t < T; ++t) {
    const std::size_t tau = t - 1;
    const Vector y_now = c.y.row(static_cast<Eigen::Index>(tau)).transpose();
    const Vector y_next = c.y.row(static_cast<Eigen::Index>(t)).transpose();
    const bool rebalance = (t - c.split.train_end) % static_cast<std::size_t>(opt.horizon) == 0 &&
                           tau + static_cast<std::size_t>(opt.horizon) <= T - 1;
    const std::string d_now = c.frame.dates[tau].str();
    const std::string d_next = c.frame.dates[t].str();

    for (std::size_t a = 0; a < A; ++a) {
      const std::string al = alpha_label(e.alpha(a));
      const auto jm = bma_one_step_moments(e.bma_inputs(a));
      for (int j = 0; j < m; ++j) {
        const double err = y_next(j) - jm.f(j);
        acc1[a].add(err);
        stderr_csv.add(d_next, al, c.frame.names[static_cast<std::size_t>(j)], 1, err / std::sqrt(jm.Q(j, j)));
      }
      if (!rebalance) continue;

      const std::size_t end = tau + static_cast<std::size_t>(opt.horizon);
      const Vector y_end = c.y.row(static_cast<Eigen::Index>(end)).transpose();
      const auto req = e.simulation_request(a, opt.horizon, c.cfg.nmc, c.cfg.seed, detail::mc_stream(t, a));
      const auto paths = simulate_paths(req);
      if (opt.horizon > 1) {
        const auto [mu, cov] = path_moments(paths, opt.horizon);
        for (int j = 0; j < m; ++j) {
          const double err = y_end(j) - mu(j);
          acck[a].add(err);
          stderr_csv.add(c.frame.dates[end].str(), al, c.frame.names[static_cast<std::size_t>(j)], opt.horizon,
                         err / std::sqrt(cov(j, j)));
        }
      } else {
        const auto [mu, cov] = path_moments(paths, 1);
        for (int j = 0; j < m; ++j) acck[a].add(y_end(j) - mu(j));
      }
      const auto rm = returns_moments(paths, opt.horizon, y_now);
      Vector f(nu), realized(nu), q_bench(nu);
      Matrix Q(nu, nu);
      for (Eigen::Index u = 0; u < nu; ++u) {
        const int ju = universe[static_cast<std::size_t>(u)];
        f(u) = rm.f(ju);
        realized(u) = std::expm1(y_end(ju) - y_now(ju));
        if (bench) q_bench(u) = rm.Q(ju, *bench);
        for (Eigen::Index v = 0; v < nu; ++v) Q(u, v) = rm.Q(ju, universe[static_cast<std::size_t>(v)]);
      }
      for (Rule r : rules) {
        std::string flag;
        PortfolioWeights pw;
        try {
          switch (r) {
            case Rule::Target: pw = target_portfolio(f, Q, target); break;
            case Rule::Constrained: {
              // An unattainable target is moved to the nearest attainable return.
              const double lo = f.minCoeff(), hi = f.maxCoeff();
              const double rr = std::clamp(target, lo, hi);
              if (rr != target) flag = "target_clipped";
              pw = constrained_target_portfolio(f, Q, rr);
              break;
            }
            case Rule::Neutral: pw = benchmark_neutral_portfolio(f, Q, q_bench, rm.f(*bench), target); break;
          }
        } catch (const Error& ex) {
          flag = "solve_failed";
          pw.w = Vector::Constant(nu, 1.0 / static_cast<double>(nu));
          pw.rule = r;
          pw.regularized = false;
        }
        PerformanceRecord rec;
        auto& tracker = trackers[a].at(r);
        try {
          rec = tracker.evaluate_period(pw.w, f, Q, realized);
        } catch (const Error&) {
          flag += flag.empty() ? "degenerate_risk" : "+degenerate_risk";
          rec = tracker.record_realized(pw.w.dot(realized));
        }
        if (!flag.empty()) ++result.flagged;
        portfolio_csv.at(r).add(d_now, c.frame.dates[end].str(), al, rec.realized, rec.cumulative, rec.projected_risk,
                                rec.projected_sharpe, rec.mean_realized, rec.risk, rec.sharpe, rec.sharpe_annualized,
                                pw.regularized ? 1 : 0, flag.empty() ? "-" : flag);
        for (Eigen::Index u = 0; u < nu; ++u) {
          weights_csv.add(d_now, al, rule_name(r), c.frame.names[static_cast<std::size_t>(universe[static_cast<std::size_t>(u)])], pw.w(u));
        }
      }
      if (a == 0) ++result.rebalances;
    }
    if (rebalance && cta_csv) {
      const std::size_t end = tau + static_cast<std::size_t>(opt.horizon);
      const auto rec = cta_tracker.record_realized(c.frame.cta[end] / c.frame.cta[tau] - 1.0);
      cta_csv->add(d_now, c.frame.dates[end].str(), rec.realized, rec.cumulative, rec.mean_realized, rec.risk, rec.sharpe,
                   rec.sharpe_annualized);
    }

    e.observe(y_next);
    traj->record(c.frame.dates[t], e);
    const auto w = e.alpha_probabilities();
    for (int j = 0; j < m; ++j) {
      std::vector<double> mix(e.specs(j).size(), 0.0);
      for (std::size_t a = 0; a < A; ++a) {
        const auto p = e.probabilities(a, j);
        for (std::size_t i = 0; i < p.size(); ++i) mix[i] += w[a] * p[i];
      }
      for (std::size_t i = 0; i < mix.size(); ++i) probs_csv.add(d_next, c.frame.names[static_cast<std::size_t>(j)], i, mix[i]);
    }
  }
  timings.stop();

  CsvWriter summary(out / "summary.csv", digest, {"alpha", "rule", "periods", "MRR", "Risk", "Sharpe", "Sharpe_annualized", "CR"});
  auto summarize = [&](const std::string& al, const std::string& rn, const PerformanceTracker& tr) {
    const auto& rr = tr.realized();
    if (rr.empty()) {
      summary.add(al, rn, 0, 0.0, 0.0, 0.0, 0.0, 1.0);
      return;
    }
    PerformanceTracker replay(tr.periods_per_year());
    PerformanceRecord last;
    for (double x : rr) last = replay.record_realized(x);
    summary.add(al, rn, rr.size(), last.mean_realized, last.risk, last.sharpe, last.sharpe_annualized, last.cumulative);
  };
  if (c.frame.cta_name) summarize("-", "cta", cta_tracker);
  for (std::size_t a = 0; a < A; ++a)
    for (Rule r : rules) summarize(alpha_label(e.alpha(a)), rule_name(r), trackers[a].at(r));

  CsvWriter accuracy(out / "forecast_accuracy.csv", digest, {"alpha", "horizon", "method", "count", "RMSE", "MAD"});
  for (std::size_t a = 0; a < A; ++a) {
    const std::string al = alpha_label(e.alpha(a));
    auto put = [&](int h, const char* method, const detail::Accuracy& x) {
      const double n = static_cast<double>(std::max<std::size_t>(x.n, 1));
      accuracy.add(al, h, method, x.n, std::sqrt(x.se / n), x.ae / n);
    };
    put(1, "analytic", acc1[a]);
    put(opt.horizon, "simulation", acck[a]);
  }
  timings.write(out / "timings.json");
  return result;
}

// ---------------------------------------------------------------------------
// forecast

struct ForecastOptions {
  int horizon = 5;
  std::optional<std::string> state;
  bool dump_paths = false;
};

struct ForecastResult {
  std::string digest;
  double max_abs_z = 0.0;  // k=1 self-check: worst |MC - analytic| in standard errors
};

inline ForecastResult run_forecast(const RunContext& c, const std::filesystem::path& out, const ForecastOptions& opt) {
  if (opt.horizon < 1) throw ConfigError("--horizon must be >= 1");
  std::filesystem::create_directories(out);
  nlohmann::ordered_json extra;
  extra["stage"] = "forecast";
  extra["horizon"] = opt.horizon;
  if (opt.state) extra["state_digest"] = sha256_file(*opt.state);
  const auto manifest = make_manifest("forecast", c, extra);
  const auto digest = manifest_digest(manifest);
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  Timings timings;
  timings.start("fit");
  Engine e;
  if (opt.state) {
    e = load_snapshot(*opt.state);
    e.set_workers(c.cfg.workers);
    if (e.series() != c.frame.series()) throw ConfigError("snapshot was built for a different number of series");
    if (e.observations() > c.frame.length()) throw ConfigError("snapshot extends past the data");
  } else {
    e = Engine(engine_settings(c));
    advance(e, c, c.split.train_end, nullptr);
    e.prune(c.cfg.prune_threshold);
  }
  advance(e, c, c.frame.length(), nullptr);
  timings.stop();

  const int m = c.frame.series();
  const std::string origin = c.frame.dates.back().str();
  CsvWriter moments(out / "forecast_moments.csv", digest,
                    {"origin", "alpha", "horizon", "method", "series", "mean", "variance", "q05", "q50", "q95"});
  CsvWriter matrices(out / "forecast_matrices.csv", digest, {"alpha", "horizon", "method", "matrix", "row", "col", "value"});
  CsvWriter check(out / "forecast_check.csv", digest,
                  {"alpha", "series", "quantity", "analytic", "simulation", "std_error", "z", "within_4se"});
  ForecastResult result;
  result.digest = digest;
  timings.start("forecast");
  for (std::size_t a = 0; a < e.replicas(); ++a) {
    const std::string al = alpha_label(e.alpha(a));
    const auto jm = bma_one_step_moments(e.bma_inputs(a));
    for (int j = 0; j < m; ++j) {
      moments.add(origin, al, 1, "analytic", c.frame.names[static_cast<std::size_t>(j)], jm.f(j), jm.Q(j, j), "", "", "");
    }
    for (int r = 0; r < m; ++r)
      for (int col = 0; col < m; ++col) {
        matrices.add(al, 1, "analytic", "Q", c.frame.names[static_cast<std::size_t>(r)], c.frame.names[static_cast<std::size_t>(col)], jm.Q(r, col));
        matrices.add(al, 1, "analytic", "K", c.frame.names[static_cast<std::size_t>(r)], c.frame.names[static_cast<std::size_t>(col)], jm.K(r, col));
      }
    const auto paths = simulate_paths(e.simulation_request(a, opt.horizon, c.cfg.nmc, c.cfg.seed, detail::mc_stream(c.frame.length(), a)));
    for (int h = 1; h <= opt.horizon; ++h) {
      const auto [mu, cov] = path_moments(paths, h);
      for (int j = 0; j < m; ++j) {
        moments.add(origin, al, h, "simulation", c.frame.names[static_cast<std::size_t>(j)], mu(j), cov(j, j),
                    path_quantile(paths, h, j, 0.05), path_quantile(paths, h, j, 0.5), path_quantile(paths, h, j, 0.95));
      }
      for (int r = 0; r < m; ++r)
        for (int col = 0; col < m; ++col)
          matrices.add(al, h, "simulation", "Q", c.frame.names[static_cast<std::size_t>(r)], c.frame.names[static_cast<std::size_t>(col)], cov(r, col));
      if (h == 1) {
        const double n = static_cast<double>(paths.nmc());
        for (int j = 0; j < m; ++j) {
          const double se = std::sqrt(cov(j, j) / n);
          const double z = (mu(j) - jm.f(j)) / se;
          result.max_abs_z = std::max(result.max_abs_z, std::abs(z));
          check.add(al, c.frame.names[static_cast<std::size_t>(j)], "mean", jm.f(j), mu(j), se, z, std::abs(z) <= 4.0 ? 1 : 0);
        }
      }
    }
    if (opt.dump_paths) {
      std::ofstream bin(out / ("paths_alpha" + al + ".bin"), std::ios::binary);
      const std::uint64_t hdr[4] = {paths.nmc(), static_cast<std::uint64_t>(paths.horizon()),
                                    static_cast<std::uint64_t>(paths.series()), paths.seed()};
      bin.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
      bin.write(reinterpret_cast<const char*>(paths.data().data()),
                static_cast<std::streamsize>(paths.data().size() * sizeof(double)));
    }
  }
  timings.stop();
  timings.write(out / "timings.json");
  return result;
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  int series = 13;
  std::size_t length = 600;
  std::uint64_t seed = 1;
  bool cta = false;
  std::string start = "2000-01-03";
};

/// Writes a synthetic sparse-DDNM price panel on consecutive weekdays.
inline void run_synth(const SynthOptions& opt, const std::filesystem::path& path) {
  if (opt.series < 2 || opt.series > kMaxSeries) throw ConfigError("--series must lie in [2, 63]");
  auto spec = sparse_panel_spec(opt.series, opt.length, opt.seed);
  spec.discount = DiscountPair::make(0.99, 0.99);
  const Matrix y = simulate_ddnm(spec);
  auto start = Date::parse(opt.start);
  if (!start) throw ConfigError("--start must be YYYY-MM-DD");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "date";
  for (int j = 0; j < opt.series; ++j) {
    char name[16];
    std::snprintf(name, sizeof name, "S%02d", j + 1);
    out << "," << name;
  }
  if (opt.cta) out << ",CTA";
  out << "\n";
  auto rng = stream_engine(opt.seed, 0xC7A);
  std::normal_distribution<double> z;
  double cta = 100.0;
  auto day = start->days();
  for (Eigen::Index t = 0; t < y.rows(); ++t) {
    while (std::chrono::weekday{day}.iso_encoding() > 5) day += std::chrono::days{1};
    out << Date::from_days(day).str();
    for (int j = 0; j < opt.series; ++j) out << "," << num(std::exp(y(t, j)));
    if (opt.cta) {
      if (t > 0) cta *= std::exp(0.0002 + 0.007 * z(rng));
      out << "," << num(cta);
    }
    out << "\n";
    day += std::chrono::days{1};
  }
}

}  // namespace ddnm
