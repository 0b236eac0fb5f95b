#include "hcrl/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

namespace hcrl {
namespace {

using Values = std::vector<std::string>;

const std::string& single(std::string_view key, const Values& v) {
  if (v.size() != 1) throw ConfigError(fmt::format("{} expects one value, got {}", key, v.size()));
  return v.front();
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T out{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError(fmt::format("{}: cannot parse '{}' as a number", key, text));
  return out;
}

double to_double(std::string_view key, const Values& v) { return parse_number<double>(key, single(key, v)); }
int to_int(std::string_view key, const Values& v) { return parse_number<int>(key, single(key, v)); }
std::uint64_t to_u64(std::string_view key, const Values& v) {
  return parse_number<std::uint64_t>(key, single(key, v));
}
std::size_t to_size(std::string_view key, const Values& v) {
  return static_cast<std::size_t>(to_u64(key, v));
}

bool to_bool(std::string_view key, const Values& v) {
  const std::string& s = single(key, v);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(fmt::format("{}: expected true or false, got '{}'", key, s));
}

std::array<double, 2> to_pair(std::string_view key, const Values& v) {
  if (v.size() != 2) throw ConfigError(fmt::format("{} expects two numbers, got {}", key, v.size()));
  return {parse_number<double>(key, v[0]), parse_number<double>(key, v[1])};
}

std::vector<int> to_ints(std::string_view key, const Values& v) {
  std::vector<int> out;
  for (const auto& s : v) out.push_back(parse_number<int>(key, s));
  return out;
}

std::string num(double x) { return fmt::format("{:.17g}", x); }
std::string text(std::string_view s) {
  return s.find('\'') == std::string_view::npos ? fmt::format("'{}'", s) : fmt::format("\"{}\"", s);
}
std::string boolean(bool b) { return b ? "true" : "false"; }
std::string pair(const std::array<double, 2>& p) { return fmt::format("[{}, {}]", num(p[0]), num(p[1])); }
std::string ints(const std::vector<int>& v) { return fmt::format("[{}]", fmt::join(v, ", ")); }

std::string_view mdp_kind_name(MdpFamily k) {
  switch (k) {
    case MdpFamily::kRandom: return "random";
    case MdpFamily::kGrid: return "grid";
    case MdpFamily::kMixed: return "mixed";
  }
  return "mixed";
}

MdpFamily parse_mdp_kind(std::string_view key, std::string_view s) {
  if (s == "random") return MdpFamily::kRandom;
  if (s == "grid") return MdpFamily::kGrid;
  if (s == "mixed") return MdpFamily::kMixed;
  throw ConfigError(fmt::format("{}: expected random, grid or mixed, got '{}'", key, s));
}

#define HCRL_FIELD(NAME, DOC, SET, GET)                                                     \
  ConfigField {                                                                            \
    NAME, DOC, [](RunConfig& c, const Values& v) { [[maybe_unused]] constexpr const char* k = NAME; SET; }, \
        [](const RunConfig& c) -> std::string { return GET; }                              \
  }

std::vector<ConfigField> make_fields() {
  return {
      HCRL_FIELD("env.type", "point_mass (x, y) or point_mass_4d (x, y, vx, vy)",
                 c.env.kind = parse_env_kind(single(k, v)),
                 text(to_string(c.env.kind))),
      HCRL_FIELD("env.low", "lower corner of the position box", c.env.low = to_pair(k, v), pair(c.env.low)),
      HCRL_FIELD("env.high", "upper corner of the position box", c.env.high = to_pair(k, v), pair(c.env.high)),
      HCRL_FIELD("env.goal", "goal position, strictly inside the box", c.env.goal = to_pair(k, v), pair(c.env.goal)),
      HCRL_FIELD("env.dt", "integration step of the 4-D variant", c.env.dt = to_double(k, v), num(c.env.dt)),
      HCRL_FIELD("env.max_steps", "episode step cap", c.env.max_steps = to_int(k, v),
                 std::to_string(c.env.max_steps)),
      HCRL_FIELD("env.action_scale", "displacement (2-D) or velocity change (4-D) of a unit action",
                 c.env.action_scale = to_double(k, v), num(c.env.action_scale)),
      HCRL_FIELD("env.obs_noise_std", "Gaussian transition noise", c.env.obs_noise_std = to_double(k, v),
                 num(c.env.obs_noise_std)),
      HCRL_FIELD("env.max_speed", "velocity bound of the 4-D variant", c.env.max_speed = to_double(k, v),
                 num(c.env.max_speed)),
      HCRL_FIELD("env.goal_tolerance_frac", "goal radius as a fraction of the box diagonal",
                 c.env.goal_tolerance_frac = to_double(k, v), num(c.env.goal_tolerance_frac)),
      HCRL_FIELD("env.sparse_reward", "reward 1 at the goal and 0 elsewhere", c.env.sparse_reward = to_bool(k, v),
                 boolean(c.env.sparse_reward)),

      HCRL_FIELD("data.tier", "random, medium, medium_replay or expert",
                 c.data.tier = parse_tier(single(k, v)),
                 text(to_string(c.data.tier))),
      HCRL_FIELD("data.n", "transitions to generate", c.data.n = to_size(k, v), std::to_string(c.data.n)),
      HCRL_FIELD("data.seed", "generator seed", c.data.seed = to_u64(k, v), std::to_string(c.data.seed)),
      HCRL_FIELD("data.path", "dataset file written by gen-data and read by train", c.data.path = single(k, v),
                 text(c.data.path)),

      HCRL_FIELD("train.discount", "discount factor", c.train.discount = to_double(k, v), num(c.train.discount)),
      HCRL_FIELD("train.policy_lr", "actor Adam step size", c.train.policy_lr = to_double(k, v),
                 num(c.train.policy_lr)),
      HCRL_FIELD("train.qf_lr", "critic Adam step size", c.train.qf_lr = to_double(k, v), num(c.train.qf_lr)),
      HCRL_FIELD("train.tau", "target tracking rate; targets move by tau per update", c.train.tau = to_double(k, v),
                 num(c.train.tau)),
      HCRL_FIELD("train.batch_size", "mini-batch size", c.train.batch_size = to_int(k, v),
                 std::to_string(c.train.batch_size)),
      HCRL_FIELD("train.max_epochs", "epochs; an evaluation follows each", c.train.max_epochs = to_int(k, v),
                 std::to_string(c.train.max_epochs)),
      HCRL_FIELD("train.steps_per_epoch", "gradient steps per epoch", c.train.steps_per_epoch = to_int(k, v),
                 std::to_string(c.train.steps_per_epoch)),
      HCRL_FIELD("train.phi", "Q-term weight numerator", c.train.phi = to_double(k, v), num(c.train.phi)),
      HCRL_FIELD("train.delta", "grid bins per state dimension", c.train.delta = to_int(k, v),
                 std::to_string(c.train.delta)),
      HCRL_FIELD("train.policy_noise", "target smoothing noise std", c.train.policy_noise = to_double(k, v),
                 num(c.train.policy_noise)),
      HCRL_FIELD("train.noise_clip", "target smoothing noise clip", c.train.noise_clip = to_double(k, v),
                 num(c.train.noise_clip)),
      HCRL_FIELD("train.policy_delay", "critic steps per actor step", c.train.policy_delay = to_int(k, v),
                 std::to_string(c.train.policy_delay)),
      HCRL_FIELD("train.eval_episodes", "evaluation episodes per epoch", c.train.eval_episodes = to_int(k, v),
                 std::to_string(c.train.eval_episodes)),
      HCRL_FIELD("train.seed", "run seed", c.train.seed = to_u64(k, v), std::to_string(c.train.seed)),
      HCRL_FIELD("train.use_hypercube", "false gives the plain baseline", c.train.use_hypercube = to_bool(k, v),
                 boolean(c.train.use_hypercube)),
      HCRL_FIELD("train.norm_eps", "added to the state std before normalizing", c.train.norm_eps = to_double(k, v),
                 num(c.train.norm_eps)),
      HCRL_FIELD("train.actor_hidden", "actor hidden layer widths", c.train.actor_hidden = to_ints(k, v),
                 ints(c.train.actor_hidden)),
      HCRL_FIELD("train.critic_hidden", "critic hidden layer widths", c.train.critic_hidden = to_ints(k, v),
                 ints(c.train.critic_hidden)),

      HCRL_FIELD("oracle.n_mdps", "MDPs in the theorem check", c.oracle.suite.n_mdps = to_size(k, v),
                 std::to_string(c.oracle.suite.n_mdps)),
      HCRL_FIELD("oracle.mdp", "random, grid or mixed (alternating)", c.oracle.suite.family = parse_mdp_kind(k, single(k, v)),
                 text(mdp_kind_name(c.oracle.suite.family))),
      HCRL_FIELD("oracle.grid_side", "states per grid side", c.oracle.suite.shape.grid_side = to_size(k, v),
                 std::to_string(c.oracle.suite.shape.grid_side)),
      HCRL_FIELD("oracle.grid_dims", "grid dimensions", c.oracle.suite.shape.grid_dims = to_size(k, v),
                 std::to_string(c.oracle.suite.shape.grid_dims)),
      HCRL_FIELD("oracle.n_actions", "actions, evenly spaced on the unit circle",
                 c.oracle.suite.shape.n_actions = to_size(k, v), std::to_string(c.oracle.suite.shape.n_actions)),
      HCRL_FIELD("oracle.discount", "MDP discount, below 1", c.oracle.suite.shape.discount = to_double(k, v),
                 num(c.oracle.suite.shape.discount)),
      HCRL_FIELD("oracle.slip", "grid MDP slip probability", c.oracle.suite.slip = to_double(k, v),
                 num(c.oracle.suite.slip)),
      HCRL_FIELD("oracle.n_rows", "dataset rows sampled per MDP", c.oracle.suite.n_rows = to_size(k, v),
                 std::to_string(c.oracle.suite.n_rows)),
      HCRL_FIELD("oracle.noise_fraction", "Q noise magnitude as a fraction of the Q range",
                 c.oracle.suite.noise_fraction = to_double(k, v), num(c.oracle.suite.noise_fraction)),
      HCRL_FIELD("oracle.deltas", "delta values to test", c.oracle.suite.deltas = to_ints(k, v),
                 ints(c.oracle.suite.deltas)),
      HCRL_FIELD("oracle.seed", "oracle seed", c.oracle.suite.seed = to_u64(k, v),
                 std::to_string(c.oracle.suite.seed)),
      HCRL_FIELD("oracle.tol", "value iteration tolerance", c.oracle.suite.tol = to_double(k, v),
                 num(c.oracle.suite.tol)),
      HCRL_FIELD("oracle.mode", "sweep-delta mode: oracle or empirical", c.oracle.mode = single(k, v),
                 text(c.oracle.mode)),

      HCRL_FIELD("output.root", "parent of timestamped run directories", c.output.root = single(k, v),
                 text(c.output.root)),
      HCRL_FIELD("output.dir", "explicit run directory; empty picks a timestamped one", c.output.dir = single(k, v),
                 text(c.output.dir)),
      HCRL_FIELD("output.cell_dump", "train also writes cells.csv", c.output.cell_dump = to_bool(k, v),
                 boolean(c.output.cell_dump)),

      HCRL_FIELD("eval.checkpoint", "checkpoint evaluated by eval", c.eval.checkpoint = single(k, v),
                 text(c.eval.checkpoint)),
      HCRL_FIELD("eval.n_episodes", "evaluation episodes", c.eval.n_episodes = to_int(k, v),
                 std::to_string(c.eval.n_episodes)),
      HCRL_FIELD("eval.seed", "evaluation seed", c.eval.seed = to_u64(k, v), std::to_string(c.eval.seed)),
  };
}

#undef HCRL_FIELD

}  // namespace

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    auto f = make_fields();
    for (auto& field : f) field.list = field.get(RunConfig{}).starts_with('[');
    return f;
  }();
  return fields;
}

const ConfigField* find_config_field(std::string_view name) {
  for (const auto& f : config_fields())
    if (f.name == name) return &f;
  return nullptr;
}

void apply_setting(RunConfig& cfg, std::string_view name, const std::vector<std::string>& values) {
  const ConfigField* f = find_config_field(name);
  if (f == nullptr) throw ConfigError(fmt::format("unknown config key '{}'", name));
  f->set(cfg, values);
}

std::vector<std::string> split_list_value(std::string_view text) {
  std::string_view t = text;
  while (!t.empty() && std::isspace(static_cast<unsigned char>(t.front()))) t.remove_prefix(1);
  while (!t.empty() && std::isspace(static_cast<unsigned char>(t.back()))) t.remove_suffix(1);
  if (t.size() >= 2 && t.front() == '[' && t.back() == ']') t = t.substr(1, t.size() - 2);
  std::vector<std::string> out;
  std::string cur;
  for (char ch : t) {
    if (ch == ',' || std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

void apply_config_text(RunConfig& cfg, std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& e) {
    throw ConfigError(fmt::format("config parse error: {}", e.what()));
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    if (item.parents.size() != 1)
      throw ConfigError(fmt::format("config key '{}' must sit in exactly one [section]", item.fullname()));
    apply_setting(cfg, item.fullname(), item.inputs);
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config file '{}'", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  apply_config_text(cfg, buf.str());
}

std::string render_config(const RunConfig& cfg, std::span<const std::string_view> sections) {
  std::string out;
  std::string section;
  for (const auto& f : config_fields()) {
    const auto dot = f.name.find('.');
    const std::string sec = f.name.substr(0, dot);
    if (!sections.empty() && std::find(sections.begin(), sections.end(), sec) == sections.end()) continue;
    if (sec != section) {
      out += fmt::format("{}[{}]\n", section.empty() ? "" : "\n", sec);
      section = sec;
    }
    out += fmt::format("# {}\n{} = {}\n", f.doc, f.name.substr(dot + 1), f.get(cfg));
  }
  return out;
}

void validate_config(const RunConfig& cfg) {
  cfg.env.validate();
  cfg.train.validate();
  if (cfg.data.n < 1) throw ConfigError("data.n must be >= 1");
  const auto& s = cfg.oracle.suite;
  if (s.n_mdps < 1) throw ConfigError("oracle.n_mdps must be >= 1");
  if (s.shape.grid_side < 1 || s.shape.grid_dims < 1) throw ConfigError("oracle grid must be non-empty");
  if (s.shape.n_actions < 1) throw ConfigError("oracle.n_actions must be >= 1");
  if (!(s.shape.discount >= 0.0 && s.shape.discount < 1.0)) throw ConfigError("oracle.discount must lie in [0, 1)");
  if (!(s.slip >= 0.0 && s.slip <= 1.0)) throw ConfigError("oracle.slip must lie in [0, 1]");
  if (s.n_rows < 1) throw ConfigError("oracle.n_rows must be >= 1");
  if (!(s.noise_fraction >= 0.0)) throw ConfigError("oracle.noise_fraction must be >= 0");
  if (!(s.tol > 0.0)) throw ConfigError("oracle.tol must be positive");
  for (int d : s.deltas)
    if (d < 1) throw ConfigError("oracle.deltas entries must be >= 1");
  if (cfg.oracle.mode != "oracle" && cfg.oracle.mode != "empirical")
    throw ConfigError("oracle.mode must be oracle or empirical");
  if (cfg.eval.n_episodes < 1) throw ConfigError("eval.n_episodes must be >= 1");
}

}  // namespace hcrl
