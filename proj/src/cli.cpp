#include "hcrl/cli.hpp"

#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/chrono.h>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "hcrl/checkpoint.hpp"
#include "hcrl/dataset.hpp"
#include "hcrl/hypercube.hpp"
#include "hcrl/oracle.hpp"
#include "hcrl/trainer.hpp"

namespace fs = std::filesystem;

namespace hcrl {
namespace {

std::string num(double x) { return fmt::format("{:.17g}", x); }

void write_text(const fs::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot open '{}' for writing", path.string()));
  out << text;
  if (!out) throw DataError(fmt::format("write to '{}' failed", path.string()));
}

/// Flags shared by every subcommand plus one option per config key.
struct CommandOptions {
  std::string config_path;
  bool force = false;
  int jobs = 1;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
};

void add_common(CLI::App* sub, CommandOptions& o) {
  sub->add_option("--config", o.config_path, "config file with [env] [data] [train] [oracle] [output] [eval] tables")
      ->check(CLI::ExistingFile);
  sub->add_flag("--force", o.force, "overwrite existing outputs");
  sub->add_option("--jobs", o.jobs, "worker cap for sweeps")->check(CLI::PositiveNumber);
  for (const auto& f : config_fields()) {
    std::string names = "--" + f.name;
    if (f.name == "train.max_epochs") names += ",--epochs";
    if (f.name == "train.use_hypercube") names += ",--use-hypercube";
    if (f.name == "eval.checkpoint") names += ",--checkpoint";
    o.options[f.name] = sub->add_option(names, o.values[f.name], f.doc)
                            ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)
                            ->group("Config keys");
  }
}

RunConfig resolve(const CommandOptions& o) {
  RunConfig cfg;
  if (!o.config_path.empty()) apply_config_file(cfg, o.config_path);
  if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0') cfg.output.root = root;
  for (const auto& f : config_fields()) {
    if (o.options.at(f.name)->count() == 0) continue;
    const std::string& raw = o.values.at(f.name);
    apply_setting(cfg, f.name, f.list ? split_list_value(raw) : std::vector<std::string>{raw});
  }
  cfg.oracle.suite.jobs = o.jobs;
  validate_config(cfg);
  return cfg;
}

fs::path sidecar_path(const fs::path& dataset) { return fs::path(dataset.string() + ".meta.toml"); }

int cmd_gen_data(const RunConfig& cfg, bool force, std::ostream& out) {
  const fs::path path = cfg.data.path;
  const fs::path meta = sidecar_path(path);
  for (const auto& p : {path, meta})
    if (fs::exists(p) && !force)
      throw ConfigError(fmt::format("'{}' already exists; pass --force to overwrite", p.string()));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());

  const StaticDataset ds = generate_dataset(cfg.env, TierSpec{cfg.data.tier, cfg.data.n, cfg.data.seed});
  save_dataset(ds, path);
  const ReferenceReturns refs = compute_reference_returns(cfg.env);
  const double tier_return = behavior_mean_return(cfg.env, cfg.data.tier, kReferenceEpisodes, kReferenceSeed);

  constexpr std::string_view sections[] = {"env", "data"};
  std::string text = render_config(cfg, sections);
  text += fmt::format(
      "\n[reference]\n# behavior-policy episode returns used for score normalization\n"
      "episodes = {}\nseed = {}\nrandom_return = {}\nexpert_return = {}\ntier_return = {}\n",
      kReferenceEpisodes, kReferenceSeed, num(refs.random), num(refs.expert), num(tier_return));
  write_text(meta, text);
  fmt::print(out, "wrote {} rows to {} (tier {}, seed {})\n", ds.size(), path.string(), to_string(cfg.data.tier),
             cfg.data.seed);
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, bool force, std::ostream& out) {
  const StaticDataset ds = load_dataset(cfg.data.path);
  if (ds.state_dim() != cfg.env.state_dim() || ds.action_dim() != cfg.env.action_dim())
    throw DimensionMismatch(fmt::format("dataset has state_dim {} and action_dim {}, env '{}' expects {} and {}",
                                        ds.state_dim(), ds.action_dim(), to_string(cfg.env.kind),
                                        cfg.env.state_dim(), cfg.env.action_dim()));
  const fs::path dir = make_run_dir(cfg, "train", force);
  write_text(dir / "config.toml", render_config(cfg));
  const ReferenceReturns refs = compute_reference_returns(cfg.env);

  std::ofstream metrics(dir / "metrics.csv", std::ios::binary | std::ios::trunc);
  if (!metrics) throw DataError(fmt::format("cannot create metrics in '{}'", dir.string()));
  metrics << kMetricsHeader << '\n' << std::flush;
  const TrainResult result = train(cfg.train, ds, cfg.env, refs, [&](const EpochRecord& rec) {
    metrics << format_metrics_row(rec) << '\n' << std::flush;
  });
  save_checkpoint(result.checkpoint, dir / "checkpoint.hckp");

  const auto& epochs = result.report.epochs;
  const double total = epochs.empty() ? 0.0 : epochs.back().wall_time_s;
  std::string summary = fmt::format(
      "[summary]\nvariant = '{}'\nepochs = {}\nsteps = {}\ntotal_wall_time_s = {:.6f}\n"
      "mean_epoch_wall_time_s = {:.6f}\nreference_random_return = {}\nreference_expert_return = {}\n",
      cfg.train.use_hypercube ? "td3bc_c" : "td3bc", epochs.size(), epochs.empty() ? 0 : epochs.back().step,
      total, epochs.empty() ? 0.0 : total / static_cast<double>(epochs.size()), num(refs.random),
      num(refs.expert));
  if (!epochs.empty())
    summary += fmt::format("final_eval_return_mean = {}\nfinal_normalized_score = {}\n",
                           num(epochs.back().eval_return_mean), num(epochs.back().normalized_score));
  write_text(dir / "summary.toml", summary);

  if (cfg.output.cell_dump && cfg.train.use_hypercube) {
    const GridSpec grid = GridSpec::from_dataset(ds, cfg.train.delta);
    const CellTable table = build_cell_table(grid, ds);
    std::ofstream dump(dir / "cells.csv", std::ios::binary | std::ios::trunc);
    write_cell_dump(dump, grid, table, result.champions);
  }
  fmt::print(out, "run directory: {}\n", dir.string());
  if (!epochs.empty())
    fmt::print(out, "final normalized score: {:.3f} ({} epochs, {:.3f} s)\n", epochs.back().normalized_score,
               epochs.size(), total);
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, bool force, std::ostream& out) {
  if (cfg.eval.checkpoint.empty()) throw ConfigError("eval needs a checkpoint (--checkpoint or eval.checkpoint)");
  const Checkpoint ckpt = load_checkpoint(cfg.eval.checkpoint);
  const ActorPolicy policy(ckpt);
  const ReferenceReturns refs = compute_reference_returns(cfg.env);
  const EvalResult res = evaluate(policy, cfg.env, cfg.eval.n_episodes, cfg.eval.seed, refs);
  const std::string report = fmt::format(
      "[eval]\ncheckpoint = '{}'\nenv = '{}'\nn_episodes = {}\nseed = {}\nmean_return = {}\nstd_return = {}\n"
      "normalized_score = {}\n",
      cfg.eval.checkpoint, to_string(cfg.env.kind), cfg.eval.n_episodes, cfg.eval.seed, num(res.mean_return),
      num(res.std_return), num(res.normalized_score));
  const fs::path dir = make_run_dir(cfg, "eval", force);
  write_text(dir / "config.toml", render_config(cfg));
  write_text(dir / "eval.toml", report);
  out << report;
  return kExitOk;
}

std::string oracle_sweep_csv(std::span<const ImprovementReport> reports) {
  std::string csv = "delta,fraction_non_degraded,worst_violation,s_max_global\n";
  for (const auto& r : reports)
    csv += fmt::format("{},{},{},{}\n", r.delta, num(r.fraction_non_degraded), num(r.worst_violation), num(r.s_max));
  return csv;
}

/// Pools one regime's entries across MDPs, keeping the configured delta order.
std::vector<ImprovementReport> pool_by_delta(const TheoremSuiteResult& res, const std::vector<int>& deltas,
                                             bool noisy) {
  std::vector<ImprovementReport> pooled;
  for (int d : deltas) {
    ImprovementReport acc;
    acc.delta = d;
    double ok = 0.0;
    for (const auto& e : res.entries) {
      if (e.noisy != noisy || e.report.delta != d) continue;
      acc.rows += e.report.rows;
      acc.changed += e.report.changed;
      ok += e.report.fraction_non_degraded * static_cast<double>(e.report.rows);
      acc.worst_violation = std::min(acc.worst_violation, e.report.worst_violation);
      acc.s_max = std::max(acc.s_max, e.report.s_max);
    }
    acc.fraction_non_degraded = acc.rows == 0 ? 1.0 : std::min(1.0, ok / static_cast<double>(acc.rows));
    pooled.push_back(acc);
  }
  return pooled;
}

int cmd_verify_theorem(const RunConfig& cfg, bool force, std::ostream& out) {
  if (cfg.oracle.suite.deltas.empty()) throw ConfigError("oracle.deltas must not be empty");
  const fs::path dir = make_run_dir(cfg, "verify-theorem", force);
  write_text(dir / "config.toml", render_config(cfg));
  const TheoremSuiteResult res = run_theorem_suite(cfg.oracle.suite);

  write_text(dir / "sweep_exact.csv", oracle_sweep_csv(pool_by_delta(res, cfg.oracle.suite.deltas, false)));
  write_text(dir / "sweep_noisy.csv", oracle_sweep_csv(pool_by_delta(res, cfg.oracle.suite.deltas, true)));
  std::string detail = "mdp,regime,delta,fraction_non_degraded,worst_violation,s_max_global,rows,changed\n";
  for (const auto& e : res.entries)
    detail += fmt::format("{},{},{},{},{},{},{},{}\n", e.mdp_id, e.noisy ? "noisy" : "exact", e.report.delta,
                          num(e.report.fraction_non_degraded), num(e.report.worst_violation), num(e.report.s_max),
                          e.report.rows, e.report.changed);
  write_text(dir / "theorem_detail.csv", detail);

  std::string report = fmt::format("[verify_theorem]\npassed = {}\nexact_all_non_degraded = {}\n"
                                   "max_bellman_residual = {}\n",
                                   res.passed(), res.exact_all_non_degraded, num(res.max_bellman_residual));
  std::vector<std::string> thresholds;
  for (const auto& t : res.noisy_thresholds) thresholds.push_back(t ? std::to_string(*t) : "'none'");
  report += fmt::format("noisy_thresholds = [{}]\n", fmt::join(thresholds, ", "));
  write_text(dir / "report.toml", report);
  out << report;
  fmt::print(out, "run directory: {}\n", dir.string());
  return res.passed() ? kExitOk : kExitTheoremViolation;
}

int cmd_sweep_delta(const RunConfig& cfg, bool force, std::ostream& out) {
  const auto& s = cfg.oracle.suite;
  if (s.deltas.empty()) throw ConfigError("oracle.deltas must not be empty");
  std::string csv;
  if (cfg.oracle.mode == "oracle") {
    const fs::path dir = make_run_dir(cfg, "sweep-delta", force);
    write_text(dir / "config.toml", render_config(cfg));
    const TabularMdp mdp = make_family_mdp(s.family, 0, s.shape, s.slip, s.seed);
    const QTable q = solve_exact_q(mdp, s.tol);
    const MdpSample sample = sample_mdp_dataset(mdp, s.n_rows, s.seed + 1);
    const QTable noisy = perturb_q(q, sample, s.noise_fraction * q.range(), s.seed + seed_offset::kOracleNoise);
    const auto reports = sweep_delta_oracle(mdp, q, sample.dataset, s.deltas, &noisy, s.jobs);
    write_text(dir / "sweep.csv", oracle_sweep_csv(reports));
    const auto threshold = find_threshold(reports);
    fmt::print(out, "threshold delta: {}\nrun directory: {}\n", threshold ? std::to_string(*threshold) : "none",
               dir.string());
    return kExitOk;
  }
  const StaticDataset ds = load_dataset(cfg.data.path);
  const fs::path dir = make_run_dir(cfg, "sweep-delta", force);
  write_text(dir / "config.toml", render_config(cfg));
  const ReferenceReturns refs = compute_reference_returns(cfg.env);
  const auto rows = sweep_delta_empirical(cfg.train, ds, cfg.env, s.deltas, refs, s.jobs);
  csv = "delta,eval_return_mean,eval_return_std\n";
  for (const auto& r : rows) csv += fmt::format("{},{},{}\n", r.delta, num(r.eval_return_mean), num(r.eval_return_std));
  write_text(dir / "sweep.csv", csv);
  fmt::print(out, "run directory: {}\n", dir.string());
  return kExitOk;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(tok);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

}  // namespace

fs::path make_run_dir(const RunConfig& cfg, std::string_view command, bool force) {
  if (!cfg.output.dir.empty()) {
    const fs::path dir = cfg.output.dir;
    if (fs::exists(dir)) {
      if (!fs::is_directory(dir)) throw ConfigError(fmt::format("'{}' exists and is not a directory", dir.string()));
      if (!fs::is_empty(dir)) {
        if (!force) throw ConfigError(fmt::format("run directory '{}' is not empty; pass --force", dir.string()));
        fs::remove_all(dir);
      }
    }
    fs::create_directories(dir);
    return dir;
  }
  const fs::path root = cfg.output.root;
  fs::create_directories(root);
  const std::string base = fmt::format("{:%Y%m%d-%H%M%S}-{}", fmt::localtime(std::time(nullptr)), command);
  for (int k = 1;; ++k) {
    const fs::path dir = root / (k == 1 ? base : fmt::format("{}-{}", base, k));
    if (fs::create_directory(dir)) return dir;
  }
}

PlotDataResult collect_plot_data(const std::vector<fs::path>& run_dirs) {
  PlotDataResult res;
  res.csv = "run_id,epoch,metric,value\n";
  std::map<std::string, int> seen;
  for (const auto& d : run_dirs) {
    fs::path norm = d.lexically_normal();
    std::string id = norm.filename().string();
    if (id.empty()) id = norm.parent_path().filename().string();
    if (id.empty() || seen[id]++ > 0) id = d.string();

    std::ifstream in(d / "metrics.csv", std::ios::binary);
    if (!in) {
      res.warnings.push_back(fmt::format("{}: no readable metrics.csv, skipped", d.string()));
      continue;
    }
    std::string line;
    std::vector<std::string> header;
    if (std::getline(in, line)) header = split_csv_line(line);
    const auto epoch_col = std::find(header.begin(), header.end(), "epoch");
    if (header.size() < 2 || epoch_col == header.end()) {
      res.warnings.push_back(fmt::format("{}: metrics.csv has no usable header, skipped", d.string()));
      continue;
    }
    const auto ec = static_cast<std::size_t>(epoch_col - header.begin());
    std::string rows;
    bool ok = true;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto fields = split_csv_line(line);
      if (fields.size() != header.size()) {
        res.warnings.push_back(fmt::format("{}: metrics.csv line {} has {} fields, expected {}; skipped",
                                           d.string(), line_no, fields.size(), header.size()));
        ok = false;
        break;
      }
      for (std::size_t c = 0; c < header.size(); ++c)
        if (c != ec) rows += fmt::format("{},{},{},{}\n", csv_field(id), fields[ec], header[c], fields[c]);
    }
    if (ok) res.csv += rows;
  }
  return res;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Offline RL with hypercube policy regularization", "hcrl"};
  app.require_subcommand(1, 1);
  std::map<std::string, CommandOptions> opts;
  std::vector<std::string> plot_dirs;
  std::string plot_out;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen-data", "generate a behavior-policy dataset and its provenance sidecar"},
      {"train", "train TD3-BC (optionally hypercube-regularized) into a run directory"},
      {"eval", "evaluate a checkpoint"},
      {"verify-theorem", "check policy non-degradation on random tabular MDPs"},
      {"sweep-delta", "sweep the grid resolution (oracle or empirical mode)"},
      {"plot-data", "merge run metrics into one long-format CSV"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    if (name == "plot-data") {
      sub->add_option("dirs", plot_dirs, "run directories")->required();
      sub->add_option("--out", plot_out, "output file (stdout when omitted)");
      sub->add_flag("--force", opts[name].force, "overwrite --out");
      continue;
    }
    add_common(sub, opts[name]);
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    if (cmd == "plot-data") {
      std::vector<fs::path> dirs(plot_dirs.begin(), plot_dirs.end());
      const PlotDataResult res = collect_plot_data(dirs);
      for (const auto& w : res.warnings) fmt::print(err, "warning: {}\n", w);
      if (plot_out.empty()) {
        out << res.csv;
      } else {
        if (fs::exists(plot_out) && !opts[cmd].force)
          throw ConfigError(fmt::format("'{}' already exists; pass --force to overwrite", plot_out));
        write_text(plot_out, res.csv);
      }
      return res.warnings.size() == dirs.size() ? kExitData : kExitOk;
    }
    const RunConfig cfg = resolve(opts[cmd]);
    const bool force = opts[cmd].force;
    if (cmd == "gen-data") return cmd_gen_data(cfg, force, out);
    if (cmd == "train") return cmd_train(cfg, force, out);
    if (cmd == "eval") return cmd_eval(cfg, force, out);
    if (cmd == "verify-theorem") return cmd_verify_theorem(cfg, force, out);
    return cmd_sweep_delta(cfg, force, out);
  } catch (const ConfigError& e) {
    fmt::print(err, "config error: {}\n", e.what());
    return kExitUsage;
  } catch (const DataError& e) {
    fmt::print(err, "data error: {}\n", e.what());
    return kExitData;
  } catch (const DimensionMismatch& e) {
    fmt::print(err, "dimension mismatch: {}\n", e.what());
    return kExitData;
  } catch (const NumericAbort& e) {
    fmt::print(err, "numeric abort: {}\n", e.what());
    return kExitNumeric;
  } catch (const fs::filesystem_error& e) {
    fmt::print(err, "file system error: {}\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitInternal;
  }
}

}  // namespace hcrl
