#pragma once

// Command-line front end: train-evaders, train-pursuers, eval, gradcheck, plot.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pursuit/config.hpp"
#include "pursuit/error.hpp"
#include "pursuit/evader_policy.hpp"
#include "pursuit/gradcheck.hpp"
#include "pursuit/plot.hpp"
#include "pursuit/trainer.hpp"

namespace pursuit {

enum ExitCode : int {
  kExitOk = 0,
  kExitGradcheckFailed = 1,
  kExitConfig = 2,
  kExitMissingEvaders = 3,
  kExitCorruptCheckpoint = 4,
  kExitMalformedCsv = 5,
  kExitUsage = 64,
};

inline constexpr const char* kExitCodeHelp =
    "Exit codes:\n"
    "  0   success\n"
    "  1   gradient check failed\n"
    "  2   invalid or missing config\n"
    "  3   evader checkpoint missing or unreadable\n"
    "  4   corrupt or unloadable pursuer checkpoint\n"
    "  5   malformed metrics CSV\n"
    "  64  usage error\n"
    "Environment: PURSUIT_SEED sets the seed when neither the config file nor --set does.";

inline constexpr const char* kEvaderMetricsHeader = "episode,steps,captures,mean_reward";

namespace detail {

/// Raised inside a command to leave with a specific exit code.
struct CliExit {
  int code;
  std::string message;
};

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
};

inline void add_config_options(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("-c,--config", a.path, "key=value config file (defaults apply when omitted)");
  cmd->add_option("--set", a.overrides, "override one key, key=value (repeatable)");
}

inline RunConfig load_run_config(const ConfigArgs& a) {
  try {
    ConfigSources src;
    if (!a.path.empty()) {
      if (!std::filesystem::is_regular_file(a.path)) throw ConfigError("config file not found: " + a.path);
      src.file_text = read_text_file(a.path);
    }
    src.overrides = a.overrides;
    if (const char* env = std::getenv("PURSUIT_SEED")) src.env_seed = std::string(env);
    return build_config(src);
  } catch (const Error& e) {
    throw CliExit{kExitConfig, std::string("config: ") + e.what()};
  }
}

inline std::string evader_metrics_csv(const std::vector<EvaderEpisodeStats>& stats) {
  std::string out = std::string(kEvaderMetricsHeader) + "\n";
  char buf[128];
  for (std::size_t i = 0; i < stats.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%d,%d,%.17g\n", i, stats[i].steps, stats[i].captures, stats[i].mean_reward);
    out += buf;
  }
  return out;
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::string item;
  std::stringstream ss(text);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || p != item.data() + item.size()) {
      throw CliExit{kExitUsage, "--seeds: bad seed '" + item + "'"};
    }
    out.push_back(v);
  }
  if (out.empty()) throw CliExit{kExitUsage, "--seeds: empty seed set"};
  return out;
}

inline int cmd_train_evaders(const ConfigArgs& ca, std::string out_dir, std::ostream& out) {
  const RunConfig cfg = load_run_config(ca);
  if (out_dir.empty()) out_dir = cfg.out_dir;
  const RoadNetwork net = cfg.network();
  std::vector<EvaderEpisodeStats> stats;
  const QTableSet tables = pretrain(net, cfg.sim, cfg.evader, &stats);
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path p(out_dir);
  write_text_file((p / "qtables.txt").string(), save_qtables(tables));
  write_text_file((p / "evader_metrics.csv").string(), evader_metrics_csv(stats));
  std::size_t keys = 0;
  for (const auto& t : tables) keys += t.num_keys();
  out << "trained " << tables.size() << " evader tables (" << keys << " states) over " << stats.size()
      << " episodes -> " << (p / "qtables.txt").string() << "\n";
  return kExitOk;
}

inline int cmd_train_pursuers(const ConfigArgs& ca, const std::string& ablation_name, std::string evaders_path,
                              std::string out_dir, std::ostream& out) {
  const auto ablation = parse_ablation(ablation_name);
  if (!ablation) throw CliExit{kExitUsage, "unknown ablation '" + ablation_name + "'"};
  RunConfig cfg = load_run_config(ca);
  cfg.train.apply(*ablation);
  if (evaders_path.empty()) evaders_path = (std::filesystem::path(cfg.out_dir) / "qtables.txt").string();
  if (out_dir.empty()) out_dir = (std::filesystem::path(cfg.out_dir) / to_string(*ablation)).string();

  QTableSet evaders;
  try {
    if (!std::filesystem::is_regular_file(evaders_path)) throw FormatError("not found");
    evaders = load_qtables(read_text_file(evaders_path));
  } catch (const Error& e) {
    throw CliExit{kExitMissingEvaders, "evader checkpoint " + evaders_path + ": " + e.what()};
  }
  if (evaders.size() != static_cast<std::size_t>(cfg.sim.num_evaders)) {
    throw CliExit{kExitMissingEvaders, "evader checkpoint " + evaders_path + " holds " +
                                           std::to_string(evaders.size()) + " tables, config needs " +
                                           std::to_string(cfg.sim.num_evaders)};
  }

  const RoadNetwork net = cfg.network();
  const TrainResult res = train(net, cfg.sim, cfg.train, evaders);
  save_checkpoint(out_dir, res.model, evaders, to_text(cfg));
  write_text_file((std::filesystem::path(out_dir) / "metrics.csv").string(), format_metrics_csv(res.metrics));
  double mean_completion = 0.0;
  for (const auto& m : res.metrics) mean_completion += m.completion_step;
  if (!res.metrics.empty()) mean_completion /= static_cast<double>(res.metrics.size());
  out << "trained pursuers (ablation " << to_string(*ablation) << ") for " << res.metrics.size()
      << " episodes, mean completion step " << mean_completion << " -> " << out_dir << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::vector<std::string> checkpoints;
  std::optional<std::size_t> episodes;
  std::optional<std::string> seeds;
  std::size_t workers = 1;
  std::string out_csv;
};

inline constexpr const char* kEvalHeader =
    "method,episodes,best_return,mean_return,best_completion,mean_completion,capture_rate";

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  std::optional<std::vector<std::uint64_t>> seeds;
  if (a.seeds) seeds = parse_seed_list(*a.seeds);
  if (a.episodes && *a.episodes == 0) throw CliExit{kExitUsage, "--episodes must be >= 1"};
  if (a.workers == 0) throw CliExit{kExitUsage, "--workers must be >= 1"};

  std::string csv = std::string(kEvalHeader) + "\n";
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-20s %8s %12s %12s %10s %10s %8s\n", "method", "episodes", "best_return",
                "mean_return", "best_step", "mean_step", "capture");
  out << buf;
  for (const auto& dir : a.checkpoints) {
    Checkpoint ck;
    RunConfig cfg;
    try {
      ck = load_checkpoint(dir);
      cfg = build_config({ck.config_text, {}, std::nullopt});
    } catch (const Error& e) {
      throw CliExit{kExitCorruptCheckpoint, "checkpoint " + dir + ": " + e.what()};
    }
    const RoadNetwork net = cfg.network();
    EvalSummary s;
    try {
      s = evaluate(net, cfg.sim, ck.model, ck.evaders, a.episodes.value_or(cfg.eval_episodes),
                   seeds.value_or(cfg.eval_seeds), cfg.train.include_adj, a.workers, cfg.train.reward,
                   cfg.train.gamma);
    } catch (const ConfigError& e) {
      throw CliExit{kExitCorruptCheckpoint, "checkpoint " + dir + ": " + e.what()};
    }
    std::string name = std::filesystem::path(dir).lexically_normal().filename().string();
    if (name.empty()) name = std::filesystem::path(dir).lexically_normal().parent_path().filename().string();
    std::snprintf(buf, sizeof buf, "%-20s %8zu %12.4f %12.4f %10.1f %10.2f %8.3f\n", name.c_str(), s.episodes,
                  s.best_return, s.mean_return, s.best_completion, s.mean_completion, s.capture_rate);
    out << buf;
    std::snprintf(buf, sizeof buf, "%s,%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", name.c_str(), s.episodes, s.best_return,
                  s.mean_return, s.best_completion, s.mean_completion, s.capture_rate);
    csv += buf;
  }
  if (!a.out_csv.empty()) {
    const auto parent = std::filesystem::path(a.out_csv).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    write_text_file(a.out_csv, csv);
  }
  return kExitOk;
}

inline int cmd_gradcheck(std::size_t instances, std::uint64_t seed, const std::string& fault, std::ostream& out) {
  GradFault f = GradFault::None;
  if (fault == "sign-flip") {
    f = GradFault::SignFlip;
  } else if (fault != "none") {
    throw CliExit{kExitUsage, "unknown fault '" + fault + "'"};
  }
  if (instances == 0) throw CliExit{kExitUsage, "--instances must be >= 1"};
  bool ok = true;
  char buf[256];
  for (const auto& r : run_gradchecks(instances, seed, f)) {
    std::snprintf(buf, sizeof buf, "%-16s instances=%zu checks=%zu max_rel_error=%.3e tol=%.0e time=%.2fs %s\n",
                  r.name.c_str(), r.instances, r.checks, r.max_rel_error, r.tolerance, r.seconds,
                  r.passed() ? "PASS" : "FAIL");
    out << buf;
    ok = ok && r.passed();
  }
  out << (ok ? "gradcheck: PASS\n" : "gradcheck: FAIL\n");
  return ok ? kExitOk : kExitGradcheckFailed;
}

inline int cmd_plot(const std::string& csv_path, std::string out_dir, std::ostream& out) {
  std::vector<MetricsRow> rows;
  try {
    rows = parse_metrics_csv(read_text_file(csv_path));
  } catch (const FormatError& e) {
    throw CliExit{kExitMalformedCsv, csv_path + ": " + e.what()};
  }
  if (out_dir.empty()) out_dir = std::filesystem::path(csv_path).parent_path().string();
  if (out_dir.empty()) out_dir = ".";
  std::filesystem::create_directories(out_dir);
  const PlotFiles files = render_metrics(rows);
  const std::filesystem::path p(out_dir);
  write_text_file((p / "reward.svg").string(), files.reward_svg);
  write_text_file((p / "loss.svg").string(), files.loss_svg);
  out << "plotted " << rows.size() << " episodes -> " << (p / "reward.svg").string() << ", "
      << (p / "loss.svg").string() << "\n";
  return kExitOk;
}

}  // namespace detail

/// Runs one command; args exclude the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-agent pursuit on a signalized road grid", "pursuit"};
  app.footer(kExitCodeHelp);
  app.require_subcommand(1);

  detail::ConfigArgs ev_cfg, pu_cfg;
  std::string ev_out, pu_out, pu_ablation = "none", pu_evaders;
  auto* ev = app.add_subcommand("train-evaders", "pretrain the evaders' tabular strategy against random pursuers");
  detail::add_config_options(ev, ev_cfg);
  ev->add_option("-o,--out", ev_out, "output directory (default: out_dir)");

  auto* pu = app.add_subcommand("train-pursuers", "train the pursuers against frozen evader tables");
  detail::add_config_options(pu, pu_cfg);
  pu->add_option("--ablation", pu_ablation, "none | no-mi | no-adj")->capture_default_str();
  pu->add_option("--evaders", pu_evaders, "evader tables (default: <out_dir>/qtables.txt)");
  pu->add_option("-o,--out", pu_out, "checkpoint directory (default: <out_dir>/<ablation>)");

  detail::EvalArgs ea;
  std::size_t eval_episodes = 0;
  std::string eval_seeds;
  auto* evc = app.add_subcommand("eval", "greedy evaluation of one or more checkpoints");
  evc->add_option("--checkpoint", ea.checkpoints, "checkpoint directory (repeatable, one row each)")->required();
  auto* ep_opt = evc->add_option("--episodes", eval_episodes, "episodes per seed (default: from checkpoint)");
  auto* seeds_opt = evc->add_option("--seeds", eval_seeds, "comma-separated seeds (default: from checkpoint)");
  evc->add_option("--workers", ea.workers, "parallel evaluation threads")->capture_default_str();
  evc->add_option("--out", ea.out_csv, "summary CSV path");

  std::size_t gc_instances = 20;
  std::uint64_t gc_seed = 7;
  std::string gc_fault = "none";
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every gradient path");
  gc->add_option("--instances", gc_instances, "random instances per suite")->capture_default_str();
  gc->add_option("--seed", gc_seed, "instance seed")->capture_default_str();
  gc->add_option("--inject-fault", gc_fault, "none | sign-flip (negates analytic gradients)")->capture_default_str();

  std::string pl_csv, pl_out;
  auto* pl = app.add_subcommand("plot", "render reward.svg and loss.svg from a metrics CSV");
  pl->add_option("metrics", pl_csv, "metrics CSV from train-pursuers")->required();
  pl->add_option("-o,--out", pl_out, "output directory (default: next to the CSV)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (ev->parsed()) return detail::cmd_train_evaders(ev_cfg, ev_out, out);
    if (pu->parsed()) return detail::cmd_train_pursuers(pu_cfg, pu_ablation, pu_evaders, pu_out, out);
    if (evc->parsed()) {
      if (ep_opt->count()) ea.episodes = eval_episodes;
      if (seeds_opt->count()) ea.seeds = eval_seeds;
      return detail::cmd_eval(ea, out);
    }
    if (gc->parsed()) return detail::cmd_gradcheck(gc_instances, gc_seed, gc_fault, out);
    if (pl->parsed()) return detail::cmd_plot(pl_csv, pl_out, out);
  } catch (const detail::CliExit& e) {
    err << "error: " << e.message << "\n";
    return e.code;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace pursuit
