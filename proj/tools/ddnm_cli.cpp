// ddnm: command-line driver for the DDNM forecasting and portfolio engine.

#include <CLI11.hpp>

#include <iostream>

#include "ddnm/commands.hpp"

namespace {

std::vector<ddnm::Rule> parse_rules(const std::string& s) {
  if (s == "all") return {ddnm::Rule::Target, ddnm::Rule::Constrained, ddnm::Rule::Neutral};
  if (s == "target") return {ddnm::Rule::Target};
  if (s == "constrained") return {ddnm::Rule::Constrained};
  if (s == "neutral") return {ddnm::Rule::Neutral};
  throw ddnm::ConfigError("--rule must be target, constrained, neutral or all");
}

std::vector<double> parse_alpha_grid(const std::string& s) {
  std::istringstream in("alpha = " + s);
  return ddnm::parse_config_text(in, "--alpha-grid").alpha_grid;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic dependence network models: sequential fitting, forecasting and portfolio backtests"};
  app.require_subcommand(1);

  std::string config, data, out = "out", alpha_grid, rule = "all", state, until, resume;
  std::uint64_t seed = 0;
  int horizon = 5, workers = 0;
  bool ffill = false, dump_paths = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "key = value configuration file");
    sub->add_option("--data", data, "price CSV: date,NAME1,...")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "random seed (overrides config)");
    sub->add_option("--out", out, "output directory");
    sub->add_flag("--ffill", ffill, "forward-fill gaps of up to 3 missing values");
    sub->add_option("--alpha-grid", alpha_grid, "alpha grid override, start:step:stop or comma list");
    sub->add_option("--workers", workers, "worker threads");
  };

  auto* enumerate = app.add_subcommand("enumerate", "report per-series and total model counts");
  int n_series = 0;
  enumerate->add_option("--config", config, "configuration file");
  enumerate->add_option("--data", data, "price CSV supplying series names")->check(CLI::ExistingFile);
  enumerate->add_option("--series", n_series, "number of series when no data file is given");
  enumerate->add_option("--alpha-grid", alpha_grid, "alpha grid override");

  auto* fit = app.add_subcommand("fit", "filter the training period, prune, write trajectories and a snapshot");
  common(fit);
  fit->add_option("--until", until, "stop after this date without pruning (YYYY-MM-DD)");
  fit->add_option("--resume", resume, "continue from a snapshot")->check(CLI::ExistingFile);

  auto* backtest = app.add_subcommand("backtest", "run the test period and evaluate the portfolio rules");
  common(backtest);
  backtest->add_option("--horizon", horizon, "rebalance horizon in days");
  backtest->add_option("--rule", rule, "target, constrained, neutral or all");
  backtest->add_option("--state", state, "snapshot written by fit")->check(CLI::ExistingFile);

  auto* forecast = app.add_subcommand("forecast", "1-step analytic and k-step simulated forecasts from the last date");
  common(forecast);
  forecast->add_option("--horizon", horizon, "forecast horizon k");
  forecast->add_option("--state", state, "snapshot written by fit")->check(CLI::ExistingFile);
  forecast->add_flag("--dump-paths", dump_paths, "write simulated paths as binary");

  auto* synth = app.add_subcommand("synth", "write a synthetic sparse DDNM price panel");
  ddnm::SynthOptions so;
  std::string synth_out = "synthetic.csv";
  synth->add_option("--series", so.series, "number of series");
  synth->add_option("--length", so.length, "number of dates");
  synth->add_option("--seed", so.seed, "random seed");
  synth->add_flag("--cta", so.cta, "append a CTA comparison column");
  synth->add_option("--out", synth_out, "output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    ddnm::RunInputs in;
    if (!config.empty()) in.config_path = config;
    in.data_path = data;
    in.ffill = ffill;
    if (app.got_subcommand("synth") ? false : (fit->count("--seed") + backtest->count("--seed") + forecast->count("--seed")) > 0) in.seed = seed;
    if (!alpha_grid.empty()) in.alpha_grid = parse_alpha_grid(alpha_grid);
    if (workers > 0) in.workers = workers;

    if (*enumerate) {
      ddnm::EngineConfig cfg = in.config_path ? ddnm::parse_config(*in.config_path) : ddnm::EngineConfig{};
      if (in.alpha_grid) cfg.alpha_grid = *in.alpha_grid;
      std::vector<std::string> names;
      if (!data.empty()) {
        ddnm::LoadOptions opt;
        opt.ffill = true;
        opt.cta = cfg.cta;
        opt.series_order = cfg.series_order;
        names = ddnm::load_prices(data, opt).names;
      } else {
        if (n_series < 1) throw ddnm::ConfigError("enumerate needs --data or --series");
        for (int j = 0; j < n_series; ++j) names.push_back("S" + std::to_string(j + 1));
      }
      std::cout << ddnm::run_enumerate(cfg, names).text;
      return 0;
    }
    if (*synth) {
      ddnm::run_synth(so, synth_out);
      std::cout << "wrote " << synth_out << "\n";
      return 0;
    }
    const auto ctx = ddnm::prepare(in);
    if (*fit) {
      ddnm::FitOptions fo;
      if (!until.empty()) {
        fo.until = ddnm::Date::parse(until);
        if (!fo.until) throw ddnm::ConfigError("--until must be YYYY-MM-DD");
      }
      if (!resume.empty()) fo.resume = resume;
      const auto r = ddnm::run_fit(ctx, out, fo);
      std::cout << "fit: " << r.updates << " updates, " << r.models << " models" << (r.pruned ? " after pruning" : "")
                << ", manifest " << r.digest << "\n";
    } else if (*backtest) {
      ddnm::BacktestOptions bo;
      bo.horizon = horizon;
      bo.rules = parse_rules(rule);
      if (!state.empty()) bo.state = state;
      const auto r = ddnm::run_backtest(ctx, out, bo);
      std::cout << "backtest: " << r.rebalances << " rebalances, " << r.flagged << " flagged rows, manifest " << r.digest
                << "\n";
    } else if (*forecast) {
      ddnm::ForecastOptions fo;
      fo.horizon = horizon;
      if (!state.empty()) fo.state = state;
      fo.dump_paths = dump_paths;
      const auto r = ddnm::run_forecast(ctx, out, fo);
      std::cout << "forecast: worst 1-step mean discrepancy " << r.max_abs_z << " standard errors, manifest " << r.digest
                << "\n";
    }
    return 0;
  } catch (const ddnm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ddnm::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
