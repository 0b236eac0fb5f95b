#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "hcrl/cli.hpp"
#include "hcrl/config.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace hcrl {
namespace {

using testing::TempDir;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

TEST(Config, RenderedDefaultsParseBackUnchanged) {
  const RunConfig defaults;
  const std::string text = render_config(defaults);
  RunConfig back;
  back.train.batch_size = 3;
  back.oracle.suite.deltas = {};
  apply_config_text(back, text);
  EXPECT_EQ(render_config(back), text);
  for (const auto& f : config_fields()) EXPECT_NE(text.find(f.name.substr(f.name.find('.') + 1) + " = "), std::string::npos) << f.name;
}

TEST(Config, CustomValuesRoundTrip) {
  RunConfig cfg;
  apply_config_text(cfg, R"(
[env]
type = "point_mass_4d"
goal = [0.25, -0.5]
[data]
tier = 'expert'
n = 1234
[train]
phi = 0.125
actor_hidden = [32, 16, 8]
use_hypercube = false
[oracle]
deltas = [2, 7]
mdp = "grid"
[output]
dir = "it's here"
)");
  EXPECT_EQ(cfg.env.kind, EnvKind::kPointMass4D);
  EXPECT_EQ(cfg.env.goal[1], -0.5);
  EXPECT_EQ(cfg.data.tier, Tier::kExpert);
  EXPECT_EQ(cfg.data.n, 1234u);
  EXPECT_EQ(cfg.train.phi, 0.125);
  EXPECT_EQ(cfg.train.actor_hidden, (std::vector<int>{32, 16, 8}));
  EXPECT_FALSE(cfg.train.use_hypercube);
  EXPECT_EQ(cfg.oracle.suite.deltas, (std::vector<int>{2, 7}));
  EXPECT_EQ(cfg.oracle.suite.family, MdpFamily::kGrid);
  EXPECT_EQ(cfg.output.dir, "it's here");
  RunConfig back;
  apply_config_text(back, render_config(cfg));
  EXPECT_EQ(render_config(back), render_config(cfg));
}

TEST(Config, EmptyListParses) {
  RunConfig cfg;
  apply_config_text(cfg, "[train]\ncritic_hidden = []\n");
  EXPECT_TRUE(cfg.train.critic_hidden.empty());
}

TEST(Config, UnknownKeysAndBadValuesAreRejected) {
  RunConfig cfg;
  EXPECT_THROW(apply_config_text(cfg, "[train]\nlearning_rate = 1\n"), ConfigError);
  EXPECT_THROW(apply_config_text(cfg, "[nope]\nx = 1\n"), ConfigError);
  EXPECT_THROW(apply_config_text(cfg, "[train]\nbatch_size = 12x\n"), ConfigError);
  EXPECT_THROW(apply_config_text(cfg, "[train]\nuse_hypercube = maybe\n"), ConfigError);
  EXPECT_THROW(apply_config_text(cfg, "[data]\ntier = 'perfect'\n"), ConfigError);
  EXPECT_THROW(apply_setting(cfg, "train.nothing", {"1"}), ConfigError);
  EXPECT_THROW(apply_setting(cfg, "env.goal", {"1"}), ConfigError);
}

TEST(Config, SettingsOverrideFileValues) {
  RunConfig cfg;
  apply_config_text(cfg, "[train]\ndelta = 3\nseed = 5\n");
  apply_setting(cfg, "train.delta", {"9"});
  EXPECT_EQ(cfg.train.delta, 9);
  EXPECT_EQ(cfg.train.seed, 5u);
  EXPECT_NE(find_config_field("oracle.deltas"), nullptr);
  EXPECT_TRUE(find_config_field("oracle.deltas")->list);
  EXPECT_FALSE(find_config_field("train.delta")->list);
}

TEST(Config, SplitListValue) {
  EXPECT_EQ(split_list_value("[1, 2]"), (std::vector<std::string>{"1", "2"}));
  EXPECT_EQ(split_list_value("1,2"), (std::vector<std::string>{"1", "2"}));
  EXPECT_EQ(split_list_value("1 2"), (std::vector<std::string>{"1", "2"}));
  EXPECT_TRUE(split_list_value("").empty());
  EXPECT_TRUE(split_list_value("[]").empty());
}

TEST(Config, RenderRestrictsSections) {
  constexpr std::string_view only[] = {"data"};
  const std::string text = render_config(RunConfig{}, only);
  EXPECT_NE(text.find("[data]"), std::string::npos);
  EXPECT_EQ(text.find("[train]"), std::string::npos);
}

TEST(Config, ValidationCoversSections) {
  RunConfig cfg;
  EXPECT_NO_THROW(validate_config(cfg));
  cfg.oracle.mode = "guess";
  EXPECT_THROW(validate_config(cfg), ConfigError);
  cfg = RunConfig{};
  cfg.data.n = 0;
  EXPECT_THROW(validate_config(cfg), ConfigError);
  cfg = RunConfig{};
  cfg.train.batch_size = 0;
  EXPECT_THROW(validate_config(cfg), ConfigError);
  cfg = RunConfig{};
  cfg.env.goal = {5.0, 0.0};
  EXPECT_THROW(validate_config(cfg), ConfigError);
}

/// Runs the CLI inside a scratch directory with small, fast settings.
class Cli : public ::testing::Test {
 protected:
  void SetUp() override { ::unsetenv(kOutputRootEnv); }
  void TearDown() override { ::unsetenv(kOutputRootEnv); }

  int run(std::vector<std::string> args) {
    out_.str("");
    err_.str("");
    return run_cli(args, out_, err_);
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  int gen_data(const std::string& file, const std::string& tier = "random", std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"gen-data", "--data.path", path(file), "--data.n", "400", "--data.tier", tier};
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  }

  std::vector<std::string> train_args(const std::string& data, const std::string& out_dir) const {
    return {"train",           "--data.path",           path(data), "--output.dir", path(out_dir),
            "--epochs",        "2",                     "--train.steps_per_epoch",  "20",
            "--train.batch_size", "16",                 "--train.actor_hidden",     "8,8",
            "--train.critic_hidden", "[8, 8]",          "--train.eval_episodes",    "2"};
  }

  TempDir dir_;
  std::ostringstream out_, err_;
};

TEST_F(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}), kExitOk);
  EXPECT_NE(out_.str().find("gen-data"), std::string::npos);
  EXPECT_EQ(run({}), kExitUsage);
  EXPECT_EQ(run({"bogus"}), kExitUsage);
  EXPECT_EQ(run({"train", "--train.nope", "1"}), kExitUsage);
  EXPECT_EQ(run({"train", "--config", path("missing.toml")}), kExitUsage);
  EXPECT_EQ(run({"train", "--train.batch_size", "abc", "--data.path", path("x")}), kExitUsage);
}

TEST_F(Cli, GenDataWritesLoadableDatasetAndSidecar) {
  ASSERT_EQ(gen_data("d.orld"), kExitOk) << err_.str();
  const auto ds = load_dataset(path("d.orld"));
  EXPECT_EQ(ds.size(), 400u);
  const std::string meta = slurp(path("d.orld.meta.toml"));
  EXPECT_NE(meta.find("[reference]"), std::string::npos);
  EXPECT_NE(meta.find("tier = 'random'"), std::string::npos);
  EXPECT_NE(meta.find("n = 400"), std::string::npos);
  RunConfig parsed;
  EXPECT_THROW(apply_config_text(parsed, meta), ConfigError);  // [reference] is not a config table
}

TEST_F(Cli, GenDataIsDeterministicAndRefusesOverwrite) {
  ASSERT_EQ(gen_data("a.orld"), kExitOk);
  ASSERT_EQ(gen_data("b.orld"), kExitOk);
  EXPECT_EQ(slurp(path("a.orld")), slurp(path("b.orld")));
  const std::string meta = slurp(path("a.orld.meta.toml"));
  EXPECT_EQ(gen_data("a.orld"), kExitUsage);
  EXPECT_EQ(gen_data("a.orld", "random", {"--force"}), kExitOk);
  EXPECT_EQ(slurp(path("a.orld.meta.toml")), meta);
}

double sidecar_value(const std::string& meta, const std::string& key) {
  const auto pos = meta.find("\n" + key + " = ");
  if (pos == std::string::npos) return NAN;
  return std::stod(meta.substr(pos + key.size() + 4));
}

TEST_F(Cli, ExpertSidecarReportsHigherTierReturn) {
  ASSERT_EQ(gen_data("r.orld", "random"), kExitOk);
  ASSERT_EQ(gen_data("e.orld", "expert"), kExitOk);
  const double random = sidecar_value(slurp(path("r.orld.meta.toml")), "tier_return");
  const double expert = sidecar_value(slurp(path("e.orld.meta.toml")), "tier_return");
  EXPECT_GT(expert, random);
}

TEST_F(Cli, TrainWritesRunDirectory) {
  ASSERT_EQ(gen_data("d.orld"), kExitOk);
  ASSERT_EQ(run(train_args("d.orld", "run")), kExitOk) << err_.str();
  const fs::path run_dir = path("run");
  for (const char* f : {"config.toml", "metrics.csv", "checkpoint.hckp", "summary.toml"})
    EXPECT_TRUE(fs::exists(run_dir / f)) << f;
  const std::string metrics = slurp(run_dir / "metrics.csv");
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), kMetricsHeader);
  EXPECT_EQ(count_lines(metrics), 3u);
  // The resolved config reproduces the command-line overrides.
  RunConfig cfg;
  apply_config_file(cfg, run_dir / "config.toml");
  EXPECT_EQ(cfg.train.max_epochs, 2);
  EXPECT_EQ(cfg.train.actor_hidden, (std::vector<int>{8, 8}));
  EXPECT_FALSE(fs::exists(run_dir / "cells.csv"));
}

TEST_F(Cli, TrainZeroEpochsWritesHeaderOnly) {
  ASSERT_EQ(gen_data("d.orld"), kExitOk);
  auto args = train_args("d.orld", "run");
  args.insert(args.end(), {"--epochs", "0"});
  ASSERT_EQ(run(args), kExitOk) << err_.str();
  EXPECT_EQ(slurp(path("run") + "/metrics.csv"), std::string(kMetricsHeader) + "\n");
}

std::vector<std::string> column(const std::string& csv, const std::string& name) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  std::stringstream hs(line);
  for (std::string tok; std::getline(hs, tok, ',');) header.push_back(tok);
  const auto col = static_cast<std::size_t>(std::find(header.begin(), header.end(), name) - header.begin());
  std::vector<std::string> out;
  while (std::getline(in, line)) {
    std::stringstream ls(line);
    std::string tok;
    for (std::size_t c = 0; c <= col; ++c) std::getline(ls, tok, ',');
    out.push_back(tok);
  }
  return out;
}

TEST_F(Cli, BaselineHasNoChampionSwapsAndHypercubeDumpsCells) {
  ASSERT_EQ(gen_data("d.orld"), kExitOk);
  auto base = train_args("d.orld", "base");
  base.insert(base.end(), {"--use-hypercube", "false"});
  ASSERT_EQ(run(base), kExitOk) << err_.str();
  for (const auto& v : column(slurp(path("base") + "/metrics.csv"), "champion_swaps")) EXPECT_EQ(v, "0");

  auto with = train_args("d.orld", "with");
  with.insert(with.end(), {"--output.cell_dump", "true", "--train.delta", "2"});
  ASSERT_EQ(run(with), kExitOk) << err_.str();
  const std::string cells = slurp(path("with") + "/cells.csv");
  EXPECT_EQ(cells.substr(0, cells.find('\n')), "cell_code,occupancy,champion_row,champion_q");
  EXPECT_GT(count_lines(cells), 1u);
}

TEST_F(Cli, TrainRerunIsIdenticalExceptWallTime) {
  ASSERT_EQ(gen_data("d.orld"), kExitOk);
  ASSERT_EQ(run(train_args("d.orld", "a")), kExitOk);
  ASSERT_EQ(run(train_args("d.orld", "b")), kExitOk);
  const std::string a = slurp(path("a") + "/metrics.csv"), b = slurp(path("b") + "/metrics.csv");
  for (const char* col : {"epoch", "critic_loss", "bc_loss", "champion_swaps", "normalized_score"})
    EXPECT_EQ(column(a, col), column(b, col)) << col;
  EXPECT_EQ(slurp(path("a") + "/checkpoint.hckp"), slurp(path("b") + "/checkpoint.hckp"));
}

TEST_F(Cli, ExistingRunDirectoryNeedsForce) {
  ASSERT_EQ(gen_data("d.orld"), kExitOk);
  ASSERT_EQ(run(train_args("d.orld", "run")), kExitOk);
  EXPECT_EQ(run(train_args("d.orld", "run")), kExitUsage);
  auto forced = train_args("d.orld", "run");
  forced.push_back("--force");
  EXPECT_EQ(run(forced), kExitOk);
}

TEST_F(Cli, OutputRootFromEnvironmentAndTimestampedNames) {
  ASSERT_EQ(gen_data("d.orld"), kExitOk);
  ::setenv(kOutputRootEnv, path("envroot").c_str(), 1);
  auto args = train_args("d.orld", "unused");
  args.erase(args.begin() + 3, args.begin() + 5);  // drop --output.dir
  ASSERT_EQ(run(args), kExitOk) << err_.str();
  ASSERT_EQ(run(args), kExitOk) << err_.str();
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(path("envroot"))) names.push_back(e.path().filename().string());
  ASSERT_EQ(names.size(), 2u);
  for (const auto& n : names) EXPECT_NE(n.find("-train"), std::string::npos) << n;

  // A command-line root beats the environment.
  args.insert(args.end(), {"--output.root", path("cliroot")});
  ASSERT_EQ(run(args), kExitOk);
  EXPECT_TRUE(fs::exists(path("cliroot")));
}

TEST_F(Cli, ConfigFileFeedsCommandAndFlagsWin) {
  ASSERT_EQ(gen_data("d.orld"), kExitOk);
  spit(path("cfg.toml"), "[train]\nmax_epochs = 5\nsteps_per_epoch = 10\nbatch_size = 8\n"
                         "actor_hidden = [4]\ncritic_hidden = [4]\neval_episodes = 1\n[data]\npath = '" +
                             path("d.orld") + "'\n[output]\ndir = '" + path("cfgrun") + "'\n");
  ASSERT_EQ(run({"train", "--config", path("cfg.toml"), "--epochs", "1"}), kExitOk) << err_.str();
  EXPECT_EQ(count_lines(slurp(path("cfgrun") + "/metrics.csv")), 2u);
  spit(path("bad.toml"), "[train]\nwhatever = 1\n");
  EXPECT_EQ(run({"train", "--config", path("bad.toml")}), kExitUsage);
}

TEST_F(Cli, DataErrorsExitThree) {
  EXPECT_EQ(run({"train", "--data.path", path("missing.orld"), "--output.dir", path("r")}), kExitData);
  spit(path("junk.orld"), "XXXXjunk");
  EXPECT_EQ(run({"train", "--data.path", path("junk.orld"), "--output.dir", path("r2")}), kExitData);
  EXPECT_NE(err_.str().find("bad magic"), std::string::npos) << err_.str();
}

TEST_F(Cli, TrainingOnWrongEnvironmentIsDimensionMismatch) {
  ASSERT_EQ(gen_data("d.orld"), kExitOk);
  auto args = train_args("d.orld", "run");
  args.insert(args.end(), {"--env.type", "point_mass_4d"});
  EXPECT_EQ(run(args), kExitData);
  EXPECT_NE(err_.str().find("dimension mismatch"), std::string::npos);
}

TEST_F(Cli, EvalIsDeterministicAndChecksDimensions) {
  ASSERT_EQ(gen_data("d.orld"), kExitOk);
  ASSERT_EQ(run(train_args("d.orld", "run")), kExitOk);
  const std::string ckpt = path("run") + "/checkpoint.hckp";
  const std::vector<std::string> eval{"eval", "--checkpoint", ckpt, "--eval.n_episodes", "1", "--eval.seed", "4",
                                      "--output.root", path("evals")};
  ASSERT_EQ(run(eval), kExitOk) << err_.str();
  const std::string first = out_.str();
  ASSERT_EQ(run(eval), kExitOk);
  EXPECT_EQ(out_.str(), first);
  EXPECT_NE(first.find("normalized_score = "), std::string::npos);

  auto wrong = eval;
  wrong.insert(wrong.end(), {"--env.type", "point_mass_4d"});
  EXPECT_EQ(run(wrong), kExitData);
  EXPECT_EQ(run({"eval", "--output.root", path("evals")}), kExitUsage);
  EXPECT_EQ(run({"eval", "--checkpoint", path("nothing.hckp"), "--output.root", path("evals")}), kExitData);
}

TEST_F(Cli, VerifyTheoremExactRegimeNeverDegrades) {
  const std::vector<std::string> args{"verify-theorem", "--oracle.n_mdps", "2", "--oracle.n_rows", "150",
                                      "--oracle.deltas", "1,2,5,20", "--output.dir", path("vt")};
  ASSERT_EQ(run(args), kExitOk) << err_.str() << out_.str();
  const std::string exact = slurp(path("vt") + "/sweep_exact.csv");
  EXPECT_EQ(exact.substr(0, exact.find('\n')), "delta,fraction_non_degraded,worst_violation,s_max_global");
  const auto fractions = column(exact, "fraction_non_degraded");
  EXPECT_EQ(fractions.size(), 4u);
  for (const auto& f : fractions) EXPECT_EQ(f, "1");
  for (const char* f : {"sweep_noisy.csv", "theorem_detail.csv", "report.toml", "config.toml"})
    EXPECT_TRUE(fs::exists(path("vt") + "/" + f)) << f;
}

TEST_F(Cli, VerifyTheoremViolationsPersistingAtLargestDeltaExitOne) {
  const std::vector<std::string> args{"verify-theorem", "--oracle.n_mdps", "4", "--oracle.mdp", "random",
                                      "--oracle.n_rows", "400", "--oracle.noise_fraction", "2.0",
                                      "--oracle.deltas", "[1]", "--output.dir", path("vt")};
  EXPECT_EQ(run(args), kExitTheoremViolation) << out_.str();
  EXPECT_NE(out_.str().find("passed = false"), std::string::npos);
}

TEST_F(Cli, VerifyTheoremRejectsEmptyDeltaList) {
  EXPECT_EQ(run({"verify-theorem", "--oracle.deltas", "[]", "--output.dir", path("vt")}), kExitUsage);
}

TEST_F(Cli, SweepDeltaOracleMode) {
  ASSERT_EQ(run({"sweep-delta", "--oracle.deltas", "1,3,20", "--oracle.n_rows", "150", "--output.dir", path("sw")}),
            kExitOk)
      << err_.str();
  EXPECT_EQ(count_lines(slurp(path("sw") + "/sweep.csv")), 4u);
}

TEST_F(Cli, SweepDeltaEmpiricalMode) {
  ASSERT_EQ(gen_data("d.orld"), kExitOk);
  std::vector<std::string> args{"sweep-delta", "--oracle.mode", "empirical", "--oracle.deltas", "2,1000000",
                                "--data.path", path("d.orld"), "--output.dir", path("sw"), "--epochs", "1",
                                "--train.steps_per_epoch", "10", "--train.batch_size", "8",
                                "--train.actor_hidden", "4", "--train.critic_hidden", "4",
                                "--train.eval_episodes", "1", "--jobs", "2"};
  ASSERT_EQ(run(args), kExitOk) << err_.str();
  const std::string csv = slurp(path("sw") + "/sweep.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "delta,eval_return_mean,eval_return_std");
  EXPECT_EQ(column(csv, "delta"), (std::vector<std::string>{"2", "1000000"}));
}

TEST_F(Cli, PlotDataMergesRuns) {
  fs::create_directories(path("r1"));
  fs::create_directories(path("r2"));
  spit(path("r1") + "/metrics.csv", "epoch,normalized_score\n1,10.5\n2,20\n3,30\n");
  spit(path("r2") + "/metrics.csv", "epoch,normalized_score\n1,-1\n2,-2\n");
  ASSERT_EQ(run({"plot-data", path("r1")}), kExitOk);
  EXPECT_EQ(out_.str(), "run_id,epoch,metric,value\nr1,1,normalized_score,10.5\nr1,2,normalized_score,20\n"
                        "r1,3,normalized_score,30\n");
  ASSERT_EQ(run({"plot-data", path("r1"), path("r2"), "--out", path("all.csv")}), kExitOk);
  const std::string merged = slurp(path("all.csv"));
  EXPECT_EQ(count_lines(merged), 1u + 3 + 2);
  EXPECT_NE(merged.find("r2,2,normalized_score,-2\n"), std::string::npos);
  EXPECT_EQ(run({"plot-data", path("r1"), "--out", path("all.csv")}), kExitUsage);
  EXPECT_EQ(run({"plot-data", path("r1"), "--out", path("all.csv"), "--force"}), kExitOk);
}

TEST_F(Cli, PlotDataSkipsBrokenRunsWithWarnings) {
  fs::create_directories(path("good"));
  fs::create_directories(path("bad"));
  spit(path("good") + "/metrics.csv", "epoch,a\n1,5\n");
  spit(path("bad") + "/metrics.csv", "epoch,a\n1,5,7\n");
  ASSERT_EQ(run({"plot-data", path("good"), path("bad"), path("absent")}), kExitOk);
  EXPECT_EQ(out_.str(), "run_id,epoch,metric,value\ngood,1,a,5\n");
  EXPECT_EQ(count_lines(err_.str()), 2u);
  EXPECT_EQ(run({"plot-data", path("absent")}), kExitData);
}

TEST_F(Cli, PlotDataOnRealTrainingRun) {
  ASSERT_EQ(gen_data("d.orld"), kExitOk);
  ASSERT_EQ(run(train_args("d.orld", "run")), kExitOk);
  ASSERT_EQ(run({"plot-data", path("run")}), kExitOk);
  EXPECT_EQ(count_lines(out_.str()), 1u + 2 * 10);
}

TEST(RunDir, ExplicitDirectoryHandling) {
  TempDir dir;
  RunConfig cfg;
  cfg.output.dir = (dir / "x").string();
  EXPECT_EQ(make_run_dir(cfg, "train", false), dir / "x");
  spit(dir / "x" / "file", "1");
  EXPECT_THROW(make_run_dir(cfg, "train", false), ConfigError);
  EXPECT_EQ(make_run_dir(cfg, "train", true), dir / "x");
  EXPECT_FALSE(fs::exists(dir / "x" / "file"));
  spit(dir / "plain", "1");
  cfg.output.dir = (dir / "plain").string();
  EXPECT_THROW(make_run_dir(cfg, "train", true), ConfigError);
}

}  // namespace
}  // namespace hcrl
