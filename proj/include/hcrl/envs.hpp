#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hcrl/dataset.hpp"
#include "hcrl/rng.hpp"

namespace hcrl {

enum class EnvKind {
  kPointMass2D,  // state (x, y); action is a displacement
  kPointMass4D,  // state (x, y, vx, vy); action is an acceleration
};

/// Point mass in an axis-aligned box with a dense -distance reward.
struct PointMassEnv {
  EnvKind kind = EnvKind::kPointMass2D;
  std::array<double, 2> low{-1.0, -1.0};
  std::array<double, 2> high{1.0, 1.0};
  std::array<double, 2> goal{0.5, 0.5};
  double dt = 0.1;              // integration step of the 4-D variant
  int max_steps = 200;
  double action_scale = 0.1;    // max displacement (2-D) or velocity change (4-D) per step
  double obs_noise_std = 0.0;   // Gaussian noise added to each transition
  double max_speed = 1.0;       // velocity box of the 4-D variant
  double goal_tolerance_frac = 0.05;
  bool sparse_reward = false;   // reward 1 on reaching the goal, 0 otherwise

  std::size_t state_dim() const { return kind == EnvKind::kPointMass2D ? 2 : 4; }
  std::size_t action_dim() const { return 2; }
  double box_diagonal() const;
  double goal_tolerance() const { return goal_tolerance_frac * box_diagonal(); }
  double goal_distance(std::span<const double> state) const;

  /// Throws ConfigError unless the goal is strictly inside the box and the
  /// scalar parameters are in range.
  void validate() const;
};

std::string_view to_string(EnvKind kind);
EnvKind parse_env_kind(std::string_view name);

struct StepResult {
  std::vector<double> next_state;
  double reward = 0.0;
  bool done = false;
  bool reached_goal = false;
};

/// Uniform start state inside the box, fully determined by `seed`.
std::vector<double> env_reset(const PointMassEnv& env, std::uint64_t seed);

/// Advances one step. `step_index` is the zero-based index of this step in
/// the episode. Noise is drawn from `noise_rng` only when obs_noise_std > 0.
/// Throws ContractViolation for actions outside [-1, 1] beyond 1e-6.
StepResult env_step(const PointMassEnv& env, std::span<const double> state,
                    std::span<const double> action, int step_index, Rng* noise_rng = nullptr);

enum class Tier { kRandom, kMedium, kMediumReplay, kExpert };

std::string_view to_string(Tier tier);
Tier parse_tier(std::string_view name);

struct TierSpec {
  Tier tier = Tier::kExpert;
  std::size_t n_transitions = 5000;
  std::uint64_t seed = 0;
};

inline constexpr double kExpertNoise = 0.05;
inline constexpr double kMediumNoise = 0.5;

/// Noise-free clipped proportional controller toward the goal.
std::vector<double> expert_controller(const PointMassEnv& env, std::span<const double> state);

/// Tier behavior policy. Medium-replay draws random-or-medium once per
/// episode, so episodes must be opened with begin_episode().
class BehaviorPolicy {
 public:
  explicit BehaviorPolicy(Tier tier) : tier_(tier) {}

  void begin_episode(Rng& rng);
  std::vector<double> act(const PointMassEnv& env, std::span<const double> state, Rng& rng) const;
  Tier tier() const { return tier_; }

 private:
  Tier tier_;
  bool replay_random_ = false;
};

/// Single action of a non-episodic tier (random, medium, expert).
/// Medium-replay picks its mixture component on each call.
std::vector<double> behavior_action(Tier tier, const PointMassEnv& env,
                                    std::span<const double> state, Rng& rng);

/// Rolls out the tier's behavior policy until exactly n_transitions rows
/// have been recorded. Deterministic in (env, spec).
StaticDataset generate_dataset(const PointMassEnv& env, const TierSpec& spec);

using Policy = std::function<std::vector<double>(std::span<const double> state)>;

/// Undiscounted return of one episode started from env_reset(env, seed).
double rollout_return(const PointMassEnv& env, const Policy& policy, std::uint64_t seed);

/// Average returns of the random and expert behavior policies, the anchors
/// of the normalized score.
struct ReferenceReturns {
  double random = 0.0;
  double expert = 0.0;
};

inline constexpr int kReferenceEpisodes = 2000;
inline constexpr std::uint64_t kReferenceSeed = 20240601;

ReferenceReturns compute_reference_returns(const PointMassEnv& env,
                                           int n_episodes = kReferenceEpisodes,
                                           std::uint64_t seed = kReferenceSeed);

/// Mean return of a tier's behavior policy over episodes seeded from `seed`.
double behavior_mean_return(const PointMassEnv& env, Tier tier, int n_episodes, std::uint64_t seed);

/// 100 * (ret - random) / (expert - random).
double normalized_score(double ret, const ReferenceReturns& refs);

}  // namespace hcrl
