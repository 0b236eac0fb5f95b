#include "hcrl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <fmt/format.h>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace hcrl {
namespace {

// Batch matrices cross glibc's default mmap threshold, which turns every
// temporary into a fresh mapping and makes step time depend on heap history.
void keep_large_blocks_on_heap() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
    return true;
  }();
  (void)once;
#endif
}

std::vector<int> layer_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

Eigen::MatrixXd stack(const Eigen::MatrixXd& top, const Eigen::MatrixXd& bottom) {
  Eigen::MatrixXd out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

}  // namespace

void Td3BcConfig::validate() const {
  if (!(discount > 0.0 && discount <= 1.0)) throw ConfigError("train.discount must lie in (0, 1]");
  if (!(policy_lr > 0.0) || !(qf_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("train.tau must lie in [0, 1]");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (max_epochs < 0) throw ConfigError("train.max_epochs must be >= 0");
  if (steps_per_epoch < 1) throw ConfigError("train.steps_per_epoch must be >= 1");
  if (!(phi >= 0.0)) throw ConfigError("train.phi must be >= 0");
  if (delta < 1) throw ConfigError("train.delta must be >= 1");
  if (!(policy_noise >= 0.0) || !(noise_clip >= 0.0)) throw ConfigError("policy noise parameters must be >= 0");
  if (policy_delay < 1) throw ConfigError("train.policy_delay must be >= 1");
  if (eval_episodes < 1) throw ConfigError("train.eval_episodes must be >= 1");
  if (!(norm_eps > 0.0)) throw ConfigError("train.norm_eps must be positive");
  for (int h : actor_hidden)
    if (h < 1) throw ConfigError("hidden layer sizes must be positive");
  for (int h : critic_hidden)
    if (h < 1) throw ConfigError("hidden layer sizes must be positive");
}

std::string format_metrics_row(const EpochRecord& r) {
  return fmt::format("{},{},{:.10g},{:.10g},{:.10g},{:.10g},{},{:.10g},{:.10g},{:.10g},{:.6f}", r.epoch, r.step,
                     r.critic_loss, r.actor_q_term, r.bc_loss, r.mean_abs_q, r.champion_swaps,
                     r.eval_return_mean, r.eval_return_std, r.normalized_score, r.wall_time_s);
}

ActorPolicy::ActorPolicy(Mlp actor, StateNormalizer normalizer)
    : actor_(std::move(actor)), normalizer_(std::move(normalizer)) {
  if (static_cast<std::size_t>(actor_.input_dim()) != normalizer_.dim())
    throw DimensionMismatch("actor input size differs from the normalizer dimension");
}

ActorPolicy::ActorPolicy(const Checkpoint& ckpt) : ActorPolicy(ckpt.network("actor"), ckpt.normalizer) {}

std::vector<double> ActorPolicy::act(std::span<const double> state) const {
  if (state.size() != state_dim())
    throw DimensionMismatch(fmt::format("policy expects {}-D states, got {}", state_dim(), state.size()));
  Eigen::VectorXd x(static_cast<Eigen::Index>(state_dim()));
  normalizer_.apply<double>(state, {x.data(), state_dim()});
  const Eigen::VectorXd a = actor_.forward(x);
  return {a.data(), a.data() + a.size()};
}

EvalResult evaluate(const Policy& policy, const PointMassEnv& env, int n_episodes, std::uint64_t seed,
                    const ReferenceReturns& refs) {
  if (n_episodes < 1) throw ContractViolation("evaluation needs at least one episode");
  Rng starts(seed);
  std::vector<double> returns;
  returns.reserve(n_episodes);
  for (int ep = 0; ep < n_episodes; ++ep) returns.push_back(rollout_return(env, policy, starts.next_u64()));
  double mean = 0.0;
  for (double r : returns) mean += r;
  mean /= n_episodes;
  double var = 0.0;
  for (double r : returns) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n_episodes);
  return {mean, sd, normalized_score(mean, refs)};
}

EvalResult evaluate(const ActorPolicy& actor, const PointMassEnv& env, int n_episodes, std::uint64_t seed,
                    const ReferenceReturns& refs) {
  if (actor.state_dim() != env.state_dim() || actor.action_dim() != env.action_dim())
    throw DimensionMismatch(fmt::format("checkpoint is for {}-D states / {}-D actions, env has {} / {}",
                                        actor.state_dim(), actor.action_dim(), env.state_dim(),
                                        env.action_dim()));
  return evaluate([&actor](std::span<const double> s) { return actor.act(s); }, env, n_episodes, seed, refs);
}

ActorObjective actor_objective(const Mlp& actor, const Mlp& critic, const Eigen::MatrixXd& states,
                               const Eigen::MatrixXd& bc_targets, double phi,
                               std::optional<double> fixed_lambda) {
  if (bc_targets.rows() != actor.output_dim() || bc_targets.cols() != states.cols())
    throw DimensionMismatch("BC targets do not match the actor output");
  const auto k = static_cast<double>(states.cols());
  const auto ad = static_cast<double>(actor.output_dim());

  const ForwardPass actor_pass = actor.forward_pass(states);
  const Eigen::MatrixXd& pi = actor_pass.output();
  const ForwardPass q_pass = critic.forward_pass(stack(states, pi));
  const Eigen::MatrixXd& q = q_pass.output();

  ActorObjective obj;
  ActorStats& stats = obj.stats;
  stats.mean_abs_q = q.cwiseAbs().mean();
  if (fixed_lambda)
    stats.lambda = *fixed_lambda;
  else
    stats.lambda = phi == 0.0 ? 0.0 : phi / std::max(stats.mean_abs_q, 1e-12);
  const Eigen::MatrixXd err = pi - bc_targets;
  stats.bc_loss = err.squaredNorm() / (k * ad);
  stats.q_term = stats.lambda * q.mean();
  obj.loss = stats.bc_loss - stats.q_term;

  // d loss / d pi = 2 (pi - a_h) / (k ad) - lambda / k * dQ1/da.
  const Eigen::MatrixXd q_upstream = Eigen::MatrixXd::Constant(1, q.cols(), -stats.lambda / k);
  const MlpGradients q_grads = backward(critic, q_pass, q_upstream);
  const Eigen::MatrixXd d_pi = 2.0 * err / (k * ad) + q_grads.input.bottomRows(pi.rows());
  obj.grads = backward(actor, actor_pass, d_pi);
  return obj;
}

CriticObjective critic_objective(const Mlp& critic, const Eigen::MatrixXd& inputs,
                                 const Eigen::RowVectorXd& targets) {
  if (targets.size() != inputs.cols()) throw DimensionMismatch("one TD target per input column required");
  const double k = static_cast<double>(inputs.cols());
  const ForwardPass pass = critic.forward_pass(inputs);
  const Eigen::MatrixXd diff = pass.output() - targets;
  return {diff.squaredNorm() / k, backward(critic, pass, 2.0 * diff / k)};
}

Td3BcTrainer::Td3BcTrainer(Td3BcConfig config, const StaticDataset& dataset)
    : config_(std::move(config)),
      dataset_(dataset),
      batch_rng_(config_.seed + seed_offset::kBatchSampling),
      noise_rng_(config_.seed + seed_offset::kTargetNoise) {
  config_.validate();
  keep_large_blocks_on_heap();
  norm_ = normalize_states(dataset_, config_.norm_eps);
  grid_ = GridSpec::from_dataset(dataset_, config_.delta);
  cells_ = build_cell_table(grid_, dataset_);

  const int sd = static_cast<int>(dataset_.state_dim());
  const int ad = static_cast<int>(dataset_.action_dim());
  Rng init(config_.seed + seed_offset::kNetworkInit);
  // Final actor layer 10x smaller so initial actions sit near zero.
  actor_ = Mlp::initialized(layer_sizes(sd, config_.actor_hidden, ad), OutputHead::kTanh, init, 0.1);
  critic1_ = Mlp::initialized(layer_sizes(sd + ad, config_.critic_hidden, 1), OutputHead::kLinear, init);
  critic2_ = Mlp::initialized(layer_sizes(sd + ad, config_.critic_hidden, 1), OutputHead::kLinear, init);
  reset_targets_and_optimizers();
  reset_champions();
}

void Td3BcTrainer::reset_targets_and_optimizers() {
  actor_target_ = actor_;
  critic1_target_ = critic1_;
  critic2_target_ = critic2_;
  actor_opt_ = AdamState(actor_, config_.policy_lr);
  critic1_opt_ = AdamState(critic1_, config_.qf_lr);
  critic2_opt_ = AdamState(critic2_, config_.qf_lr);
}

void Td3BcTrainer::reset_champions() {
  if (config_.use_hypercube) champions_ = init_champion_cache(cells_, q_min());
}

Eigen::MatrixXd Td3BcTrainer::gather_states(std::span<const std::size_t> rows, bool next) const {
  const std::size_t sd = dataset_.state_dim();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(sd), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto s = next ? norm_.next_state(rows[k]) : norm_.state(rows[k]);
    std::copy(s.begin(), s.end(), out.col(static_cast<Eigen::Index>(k)).data());
  }
  return out;
}

Eigen::MatrixXd Td3BcTrainer::gather_actions(std::span<const std::size_t> rows) const {
  const std::size_t ad = dataset_.action_dim();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(ad), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto a = dataset_.action(rows[k]);
    for (std::size_t d = 0; d < ad; ++d) out(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k)) = a[d];
  }
  return out;
}

Batch Td3BcTrainer::sample_batch() {
  Batch batch;
  batch.rows.resize(static_cast<std::size_t>(config_.batch_size));
  for (auto& r : batch.rows) r = static_cast<std::size_t>(batch_rng_.index(dataset_.size()));
  return batch;
}

PairQ Td3BcTrainer::q_min() const {
  return [this](std::span<const std::size_t> state_rows, std::span<const std::size_t> action_rows,
                std::span<double> out) {
    if (state_rows.empty()) return;
    const Eigen::MatrixXd in = stack(gather_states(state_rows, false), gather_actions(action_rows));
    const Eigen::MatrixXd q = critic1_.forward(in).cwiseMin(critic2_.forward(in));
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = q(0, static_cast<Eigen::Index>(k));
  };
}

Eigen::RowVectorXd Td3BcTrainer::td_targets(const Batch& batch) {
  const Eigen::MatrixXd next_s = gather_states(batch.rows, true);
  Eigen::MatrixXd next_a = actor_target_.forward(next_s);
  for (Eigen::Index j = 0; j < next_a.cols(); ++j)
    for (Eigen::Index i = 0; i < next_a.rows(); ++i) {
      const double eps = std::clamp(config_.policy_noise * noise_rng_.normal(), -config_.noise_clip,
                                    config_.noise_clip);
      next_a(i, j) = std::clamp(next_a(i, j) + eps, -1.0, 1.0);
    }
  const Eigen::MatrixXd in = stack(next_s, next_a);
  const Eigen::MatrixXd q_next = critic1_target_.forward(in).cwiseMin(critic2_target_.forward(in));

  Eigen::RowVectorXd y(static_cast<Eigen::Index>(batch.rows.size()));
  for (std::size_t k = 0; k < batch.rows.size(); ++k) {
    const auto j = static_cast<Eigen::Index>(k);
    const double r = dataset_.reward(batch.rows[k]);
    const double live = dataset_.done(batch.rows[k]) ? 0.0 : 1.0;
    y(j) = r + live * config_.discount * q_next(0, j);
    if (!std::isfinite(y(j)))
      throw NumericAbort(fmt::format("non-finite TD target for dataset row {} at step {}", batch.rows[k], step_));
    if (live == 0.0 && y(j) != r)
      throw NumericAbort(fmt::format("terminal row {} bootstrapped past done", batch.rows[k]));
  }
  return y;
}

CriticStats Td3BcTrainer::critic_update(const Batch& batch) {
  const Eigen::RowVectorXd y = td_targets(batch);
  const Eigen::MatrixXd in = stack(gather_states(batch.rows, false), gather_actions(batch.rows));

  CriticStats stats;
  auto regress = [&](Mlp& critic, AdamState& opt) {
    const CriticObjective obj = critic_objective(critic, in, y);
    stats.loss += obj.loss;
    adam_step(critic, obj.grads, opt);
  };
  regress(critic1_, critic1_opt_);
  regress(critic2_, critic2_opt_);
  if (!std::isfinite(stats.loss)) throw NumericAbort(fmt::format("non-finite critic loss at step {}", step_));
  return stats;
}

std::size_t Td3BcTrainer::refresh(const Batch& batch) {
  if (!config_.use_hypercube) return 0;
  return refresh_champions(champions_, cells_, q_min(), batch.rows);
}

std::vector<std::size_t> Td3BcTrainer::bc_target_rows(const Batch& batch) const {
  std::vector<std::size_t> sources(batch.rows.size());
  if (config_.use_hypercube)
    regularization_sources(champions_, cells_, q_min(), batch.rows, sources);
  else
    sources = batch.rows;
  return sources;
}

ActorStats Td3BcTrainer::policy_update(const Batch& batch) {
  const Eigen::MatrixXd s = gather_states(batch.rows, false);
  const Eigen::MatrixXd a_h = gather_actions(bc_target_rows(batch));
  ActorObjective obj = actor_objective(actor_, critic1_, s, a_h, config_.phi);
  if (!std::isfinite(obj.loss)) throw NumericAbort(fmt::format("non-finite actor loss at step {}", step_));
  adam_step(actor_, obj.grads, actor_opt_);
  return obj.stats;
}

void Td3BcTrainer::update_targets() {
  const double rho = config_.rho();
  polyak_update(actor_target_, actor_, rho);
  polyak_update(critic1_target_, critic1_, rho);
  polyak_update(critic2_target_, critic2_, rho);
}

Td3BcTrainer::StepStats Td3BcTrainer::train_step() {
  StepStats stats;
  const Batch batch = sample_batch();
  stats.critic = critic_update(batch);
  stats.swaps = refresh(batch);
  ++step_;
  if (step_ % config_.policy_delay == 0) {
    stats.actor = policy_update(batch);
    update_targets();
  }
  return stats;
}

Checkpoint Td3BcTrainer::checkpoint() const {
  Checkpoint ckpt;
  ckpt.state_dim = static_cast<std::uint32_t>(dataset_.state_dim());
  ckpt.action_dim = static_cast<std::uint32_t>(dataset_.action_dim());
  ckpt.normalizer = norm_.normalizer;
  ckpt.networks.push_back({"actor", actor_, actor_opt_});
  ckpt.networks.push_back({"critic1", critic1_, critic1_opt_});
  ckpt.networks.push_back({"critic2", critic2_, critic2_opt_});
  ckpt.networks.push_back({"actor_target", actor_target_, std::nullopt});
  ckpt.networks.push_back({"critic1_target", critic1_target_, std::nullopt});
  ckpt.networks.push_back({"critic2_target", critic2_target_, std::nullopt});
  return ckpt;
}

TrainResult train(const Td3BcConfig& config, const StaticDataset& dataset, const PointMassEnv& env,
                  std::optional<ReferenceReturns> refs, const EpochCallback& on_epoch) {
  if (dataset.state_dim() != env.state_dim() || dataset.action_dim() != env.action_dim())
    throw DimensionMismatch("dataset dimensions do not match the environment");
  const auto t0 = std::chrono::steady_clock::now();
  Td3BcTrainer trainer(config, dataset);
  if (!refs) refs = compute_reference_returns(env);

  TrainResult result;
  double last_wall = -1.0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    int actor_steps = 0;
    for (int s = 0; s < config.steps_per_epoch; ++s) {
      const auto st = trainer.train_step();
      rec.critic_loss += st.critic.loss;
      rec.champion_swaps += static_cast<std::int64_t>(st.swaps);
      if (st.actor) {
        ++actor_steps;
        rec.actor_q_term += st.actor->q_term;
        rec.bc_loss += st.actor->bc_loss;
        rec.mean_abs_q += st.actor->mean_abs_q;
      }
    }
    rec.step = trainer.steps_done();
    rec.critic_loss /= config.steps_per_epoch;
    if (actor_steps > 0) {
      rec.actor_q_term /= actor_steps;
      rec.bc_loss /= actor_steps;
      rec.mean_abs_q /= actor_steps;
    }
    const EvalResult ev = evaluate(trainer.policy(), env, config.eval_episodes,
                                   config.seed + seed_offset::kEvaluation, *refs);
    rec.eval_return_mean = ev.mean_return;
    rec.eval_return_std = ev.std_return;
    rec.normalized_score = ev.normalized_score;
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    // Keep the column strictly increasing even at clock resolution.
    rec.wall_time_s = std::max(rec.wall_time_s, std::nextafter(last_wall, INFINITY));
    last_wall = rec.wall_time_s;
    result.report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.checkpoint = trainer.checkpoint();
  if (config.use_hypercube) result.champions = trainer.champions();
  return result;
}

}  // namespace hcrl
