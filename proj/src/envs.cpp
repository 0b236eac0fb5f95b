#include "hcrl/envs.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace hcrl {
namespace {

// Gain of the proportional controller: desired displacement = gain * error.
constexpr double kControllerGain = 1.0;

double clip(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

void check_action(std::span<const double> action, std::size_t dim) {
  if (action.size() != dim)
    throw DimensionMismatch(fmt::format("action has {} components, expected {}", action.size(), dim));
  for (double a : action)
    if (!(std::abs(a) <= 1.0 + kActionSlack))
      throw ContractViolation(fmt::format("action component {} outside [-1, 1]", a));
}

std::vector<double> uniform_action(Rng& rng) { return {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)}; }

std::vector<double> noisy_controller(const PointMassEnv& env, std::span<const double> state,
                                     double sigma, Rng& rng) {
  auto a = expert_controller(env, state);
  for (double& v : a) v = clip(v + sigma * rng.normal(), -1.0, 1.0);
  return a;
}

}  // namespace

double PointMassEnv::box_diagonal() const {
  return std::hypot(high[0] - low[0], high[1] - low[1]);
}

double PointMassEnv::goal_distance(std::span<const double> state) const {
  return std::hypot(state[0] - goal[0], state[1] - goal[1]);
}

void PointMassEnv::validate() const {
  for (int i = 0; i < 2; ++i) {
    if (!(low[i] < high[i])) throw ConfigError("env bounds must satisfy low < high");
    if (!(goal[i] > low[i] && goal[i] < high[i]))
      throw ConfigError("env goal must lie strictly inside the bounds");
  }
  if (max_steps < 1) throw ConfigError("env max_steps must be >= 1");
  if (!(action_scale > 0.0)) throw ConfigError("env action_scale must be positive");
  if (!(obs_noise_std >= 0.0)) throw ConfigError("env obs_noise_std must be >= 0");
  if (!(dt > 0.0)) throw ConfigError("env dt must be positive");
  if (!(max_speed > 0.0)) throw ConfigError("env max_speed must be positive");
  if (!(goal_tolerance_frac > 0.0)) throw ConfigError("env goal_tolerance_frac must be positive");
}

std::string_view to_string(EnvKind kind) {
  return kind == EnvKind::kPointMass2D ? "point_mass" : "point_mass_4d";
}

EnvKind parse_env_kind(std::string_view name) {
  if (name == "point_mass") return EnvKind::kPointMass2D;
  if (name == "point_mass_4d") return EnvKind::kPointMass4D;
  throw ConfigError(fmt::format("unknown env type '{}'", name));
}

std::vector<double> env_reset(const PointMassEnv& env, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> s(env.state_dim());
  s[0] = rng.uniform(env.low[0], env.high[0]);
  s[1] = rng.uniform(env.low[1], env.high[1]);
  if (env.kind == EnvKind::kPointMass4D) {
    s[2] = rng.uniform(-env.max_speed, env.max_speed);
    s[3] = rng.uniform(-env.max_speed, env.max_speed);
  }
  return s;
}

StepResult env_step(const PointMassEnv& env, std::span<const double> state,
                    std::span<const double> action, int step_index, Rng* noise_rng) {
  check_action(action, env.action_dim());
  if (state.size() != env.state_dim())
    throw DimensionMismatch(fmt::format("state has {} components, expected {}", state.size(), env.state_dim()));
  const double sigma = env.obs_noise_std;
  if (sigma > 0.0 && noise_rng == nullptr)
    throw ContractViolation("env_step needs a noise generator when obs_noise_std > 0");
  auto noise = [&] { return sigma > 0.0 ? sigma * noise_rng->normal() : 0.0; };

  StepResult out;
  out.next_state.assign(state.begin(), state.end());
  auto& next = out.next_state;
  if (env.kind == EnvKind::kPointMass2D) {
    for (int i = 0; i < 2; ++i)
      next[i] = clip(state[i] + env.action_scale * action[i] + noise(), env.low[i], env.high[i]);
  } else {
    for (int i = 0; i < 2; ++i) {
      next[2 + i] = clip(state[2 + i] + env.action_scale * action[i], -env.max_speed, env.max_speed);
      next[i] = clip(state[i] + env.dt * next[2 + i] + noise(), env.low[i], env.high[i]);
      // A wall absorbs the velocity component pointing into it.
      if (next[i] == env.low[i] || next[i] == env.high[i]) next[2 + i] = 0.0;
    }
  }

  const double dist = env.goal_distance(next);
  out.reached_goal = dist < env.goal_tolerance();
  out.reward = env.sparse_reward ? (out.reached_goal ? 1.0 : 0.0) : -dist;
  out.done = out.reached_goal || step_index + 1 >= env.max_steps;
  return out;
}

std::string_view to_string(Tier tier) {
  switch (tier) {
    case Tier::kRandom: return "random";
    case Tier::kMedium: return "medium";
    case Tier::kMediumReplay: return "medium_replay";
    case Tier::kExpert: return "expert";
  }
  return "?";
}

Tier parse_tier(std::string_view name) {
  if (name == "random") return Tier::kRandom;
  if (name == "medium") return Tier::kMedium;
  if (name == "medium_replay") return Tier::kMediumReplay;
  if (name == "expert") return Tier::kExpert;
  throw ConfigError(fmt::format("unknown tier '{}'", name));
}

std::vector<double> expert_controller(const PointMassEnv& env, std::span<const double> state) {
  std::vector<double> a(2);
  for (int i = 0; i < 2; ++i) {
    const double err = env.goal[i] - state[i];
    if (env.kind == EnvKind::kPointMass2D) {
      a[i] = clip(kControllerGain * err / env.action_scale, -1.0, 1.0);
    } else {
      // Track a velocity that would close the gap in one time unit.
      const double v_des = clip(err, -env.max_speed, env.max_speed);
      a[i] = clip((v_des - state[2 + i]) / env.action_scale, -1.0, 1.0);
    }
  }
  return a;
}

void BehaviorPolicy::begin_episode(Rng& rng) {
  if (tier_ == Tier::kMediumReplay) replay_random_ = rng.uniform() < 0.5;
}

std::vector<double> BehaviorPolicy::act(const PointMassEnv& env, std::span<const double> state,
                                        Rng& rng) const {
  switch (tier_) {
    case Tier::kRandom: return uniform_action(rng);
    case Tier::kMedium: return noisy_controller(env, state, kMediumNoise, rng);
    case Tier::kMediumReplay:
      return replay_random_ ? uniform_action(rng) : noisy_controller(env, state, kMediumNoise, rng);
    case Tier::kExpert: return noisy_controller(env, state, kExpertNoise, rng);
  }
  return uniform_action(rng);
}

std::vector<double> behavior_action(Tier tier, const PointMassEnv& env,
                                    std::span<const double> state, Rng& rng) {
  BehaviorPolicy policy(tier);
  policy.begin_episode(rng);
  return policy.act(env, state, rng);
}

StaticDataset generate_dataset(const PointMassEnv& env, const TierSpec& spec) {
  env.validate();
  if (spec.n_transitions < 1) throw ContractViolation("n_transitions must be >= 1");
  Rng rng(spec.seed);
  BehaviorPolicy policy(spec.tier);
  std::vector<Transition> rows;
  rows.reserve(spec.n_transitions);
  while (rows.size() < spec.n_transitions) {
    auto state = env_reset(env, rng.next_u64());
    policy.begin_episode(rng);
    for (int t = 0; rows.size() < spec.n_transitions; ++t) {
      auto action = policy.act(env, state, rng);
      auto step = env_step(env, state, action, t, &rng);
      rows.push_back({state, action, step.reward, step.next_state, step.done});
      if (step.done) break;
      state = std::move(step.next_state);
    }
  }
  return StaticDataset::from_transitions(rows);
}

double rollout_return(const PointMassEnv& env, const Policy& policy, std::uint64_t seed) {
  auto state = env_reset(env, seed);
  Rng noise(seed ^ 0x9e3779b97f4a7c15ull);
  double total = 0.0;
  for (int t = 0; t < env.max_steps; ++t) {
    auto action = policy(state);
    for (double& a : action) a = clip(a, -1.0, 1.0);
    auto step = env_step(env, state, action, t, &noise);
    total += step.reward;
    if (step.done) break;
    state = std::move(step.next_state);
  }
  return total;
}

double behavior_mean_return(const PointMassEnv& env, Tier tier, int n_episodes, std::uint64_t seed) {
  Rng rng(seed);
  double sum = 0.0;
  for (int ep = 0; ep < n_episodes; ++ep) {
    const std::uint64_t start_seed = rng.next_u64();
    BehaviorPolicy policy(tier);
    Rng action_rng(rng.next_u64());
    policy.begin_episode(action_rng);
    sum += rollout_return(
        env, [&](std::span<const double> s) { return policy.act(env, s, action_rng); }, start_seed);
  }
  return sum / n_episodes;
}

ReferenceReturns compute_reference_returns(const PointMassEnv& env, int n_episodes,
                                           std::uint64_t seed) {
  return {behavior_mean_return(env, Tier::kRandom, n_episodes, seed),
          behavior_mean_return(env, Tier::kExpert, n_episodes, seed)};
}

double normalized_score(double ret, const ReferenceReturns& refs) {
  return 100.0 * (ret - refs.random) / (refs.expert - refs.random);
}

}  // namespace hcrl
