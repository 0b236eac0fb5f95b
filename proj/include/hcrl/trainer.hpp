#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hcrl/checkpoint.hpp"
#include "hcrl/dataset.hpp"
#include "hcrl/envs.hpp"
#include "hcrl/hypercube.hpp"
#include "hcrl/mlp.hpp"
#include "hcrl/rng.hpp"

namespace hcrl {

struct Td3BcConfig {
  double discount = 0.99;
  double policy_lr = 3e-4;
  double qf_lr = 3e-4;
  double tau = 5e-3;  // Polyak rho = 1 - tau
  int batch_size = 256;
  int max_epochs = 50;
  int steps_per_epoch = 1000;
  double phi = 2.5;
  int delta = 5;
  double policy_noise = 0.2;
  double noise_clip = 0.5;
  int policy_delay = 2;
  int eval_episodes = 10;
  std::uint64_t seed = 0;
  bool use_hypercube = true;
  double norm_eps = 1e-3;
  std::vector<int> actor_hidden{64, 64};
  std::vector<int> critic_hidden{64, 64};

  double rho() const { return 1.0 - tau; }
  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

struct Batch {
  std::vector<std::size_t> rows;
};

struct CriticStats {
  double loss = 0.0;  // sum of both critics' mean squared TD errors
};

struct ActorStats {
  double bc_loss = 0.0;      // mean over batch and action dims of (pi(s) - a_h)^2
  double q_term = 0.0;       // lambda * mean Q1(s, pi(s))
  double mean_abs_q = 0.0;   // mean |Q1(s, pi(s))|, the lambda denominator
  double lambda = 0.0;
};

/// Actor objective mean((pi(s) - a_h)^2) - lambda * mean Q1(s, pi(s)) with
/// lambda = phi / mean |Q1(s, pi(s))| held constant, plus its gradient with
/// respect to the actor parameters. Columns of `states` and `bc_targets` are
/// samples. `fixed_lambda` replaces the computed lambda.
struct ActorObjective {
  ActorStats stats;
  double loss = 0.0;
  MlpGradients grads;
};
ActorObjective actor_objective(const Mlp& actor, const Mlp& critic, const Eigen::MatrixXd& states,
                               const Eigen::MatrixXd& bc_targets, double phi,
                               std::optional<double> fixed_lambda = std::nullopt);

/// Critic regression loss mean((Q(x) - y)^2) and its gradient.
struct CriticObjective {
  double loss = 0.0;
  MlpGradients grads;
};
CriticObjective critic_objective(const Mlp& critic, const Eigen::MatrixXd& inputs,
                                 const Eigen::RowVectorXd& targets);

struct EpochRecord {
  int epoch = 0;
  std::int64_t step = 0;
  double critic_loss = 0.0;
  double actor_q_term = 0.0;
  double bc_loss = 0.0;
  double mean_abs_q = 0.0;
  std::int64_t champion_swaps = 0;
  double eval_return_mean = 0.0;
  double eval_return_std = 0.0;
  double normalized_score = 0.0;
  double wall_time_s = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
};

inline constexpr const char* kMetricsHeader =
    "epoch,step,critic_loss,actor_q_term,bc_loss,mean_abs_q,champion_swaps,eval_return_mean,"
    "eval_return_std,normalized_score,wall_time_s";

std::string format_metrics_row(const EpochRecord& record);

/// Actor plus the state normalizer it was trained with.
class ActorPolicy {
 public:
  ActorPolicy(Mlp actor, StateNormalizer normalizer);
  explicit ActorPolicy(const Checkpoint& ckpt);

  std::vector<double> act(std::span<const double> state) const;
  std::size_t state_dim() const { return normalizer_.dim(); }
  std::size_t action_dim() const { return static_cast<std::size_t>(actor_.output_dim()); }

 private:
  Mlp actor_;
  StateNormalizer normalizer_;
};

struct EvalResult {
  double mean_return = 0.0;
  double std_return = 0.0;
  double normalized_score = 0.0;
};

/// Deterministic rollouts of `policy` from start states drawn from `seed`.
EvalResult evaluate(const Policy& policy, const PointMassEnv& env, int n_episodes, std::uint64_t seed,
                    const ReferenceReturns& refs);

/// Checks that the actor's dimensions match the env, then evaluates.
EvalResult evaluate(const ActorPolicy& actor, const PointMassEnv& env, int n_episodes,
                    std::uint64_t seed, const ReferenceReturns& refs);

/// TD3-BC with optional hypercube regularization. Owns every network,
/// optimizer and the champion cache; strictly single-threaded.
class Td3BcTrainer {
 public:
  Td3BcTrainer(Td3BcConfig config, const StaticDataset& dataset);

  const Td3BcConfig& config() const { return config_; }
  const StaticDataset& dataset() const { return dataset_; }
  const NormalizedStates& normalized() const { return norm_; }
  const GridSpec& grid() const { return grid_; }
  const CellTable& cells() const { return cells_; }
  const ChampionCache& champions() const { return champions_; }
  std::int64_t steps_done() const { return step_; }

  Mlp& actor() { return actor_; }
  Mlp& critic1() { return critic1_; }
  Mlp& critic2() { return critic2_; }
  Mlp& actor_target() { return actor_target_; }
  Mlp& critic1_target() { return critic1_target_; }
  Mlp& critic2_target() { return critic2_target_; }
  const Mlp& actor() const { return actor_; }

  /// Re-derives every target network and optimizer from the current online
  /// networks; lets tests install hand-built networks.
  void reset_targets_and_optimizers();
  /// Rebuilds the champion cache from the current critics.
  void reset_champions();

  Batch sample_batch();

  /// y = r + (1 - done) * gamma * min_i Q_i^-(s', clip(pi^-(s') + clipped noise)).
  Eigen::RowVectorXd td_targets(const Batch& batch);
  CriticStats critic_update(const Batch& batch);
  /// Returns the number of champion swaps (always 0 without the hypercube).
  std::size_t refresh(const Batch& batch);
  /// Rows whose actions are the BC targets of the batch.
  std::vector<std::size_t> bc_target_rows(const Batch& batch) const;
  ActorStats policy_update(const Batch& batch);
  void update_targets();

  /// min(Q1, Q2) of the online critics over dataset pairs.
  PairQ q_min() const;

  struct StepStats {
    CriticStats critic;
    std::optional<ActorStats> actor;
    std::size_t swaps = 0;
  };
  StepStats train_step();

  ActorPolicy policy() const { return {actor_, norm_.normalizer}; }
  Checkpoint checkpoint() const;

 private:
  Eigen::MatrixXd gather_states(std::span<const std::size_t> rows, bool next) const;
  Eigen::MatrixXd gather_actions(std::span<const std::size_t> rows) const;

  Td3BcConfig config_;
  const StaticDataset& dataset_;
  NormalizedStates norm_;
  GridSpec grid_;
  CellTable cells_;
  ChampionCache champions_;

  Mlp actor_, actor_target_;
  Mlp critic1_, critic2_, critic1_target_, critic2_target_;
  AdamState actor_opt_, critic1_opt_, critic2_opt_;

  Rng batch_rng_;
  Rng noise_rng_;
  std::int64_t step_ = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainReport report;
  ChampionCache champions;  // final cache; empty without the hypercube
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Full training loop: max_epochs x steps_per_epoch gradient steps with an
/// evaluation after every epoch. `on_epoch` sees each record as soon as it
/// exists, so callers can persist partial reports.
TrainResult train(const Td3BcConfig& config, const StaticDataset& dataset, const PointMassEnv& env,
                  std::optional<ReferenceReturns> refs = std::nullopt,
                  const EpochCallback& on_epoch = {});

}  // namespace hcrl
