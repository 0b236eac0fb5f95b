#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "hcrl/dataset.hpp"
#include "hcrl/envs.hpp"
#include "hcrl/hypercube.hpp"
#include "hcrl/mlp.hpp"
#include "hcrl/trainer.hpp"

namespace hcrl {

/// Finite MDP whose states and actions carry real coordinates, so the
/// hypercube machinery can run on it. Transitions are dense [s][a][s'].
struct TabularMdp {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  std::vector<double> state_coords;   // n_states x state_dim
  std::vector<double> action_coords;  // n_actions x action_dim, inside [-1, 1]
  std::vector<double> transitions;    // n_states x n_actions x n_states
  std::vector<double> rewards;        // n_states x n_actions
  double discount = 0.9;

  std::span<const double> state(std::size_t s) const {
    return {state_coords.data() + s * state_dim, state_dim};
  }
  std::span<const double> action(std::size_t a) const {
    return {action_coords.data() + a * action_dim, action_dim};
  }
  double prob(std::size_t s, std::size_t a, std::size_t next) const {
    return transitions[(s * n_actions + a) * n_states + next];
  }
  double reward(std::size_t s, std::size_t a) const { return rewards[s * n_actions + a]; }

  /// Throws ContractViolation unless rows sum to 1 and rewards are finite.
  void validate() const;
};

struct QTable {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> values;

  double at(std::size_t s, std::size_t a) const { return values[s * n_actions + a]; }
  double& at(std::size_t s, std::size_t a) { return values[s * n_actions + a]; }
  double range() const;
};

/// Grid states at cell centers of [0, 1]^grid_dims; actions evenly spaced on
/// the unit circle.
struct MdpShape {
  std::size_t grid_side = 6;
  std::size_t grid_dims = 2;
  std::size_t n_actions = 4;
  double discount = 0.9;
};

/// Random successors (up to 3 per pair) with random weights; rewards
/// uniform in [-1, 1].
TabularMdp make_random_mdp(const MdpShape& shape, std::uint64_t seed);

/// Navigation: each action moves one grid step along its direction with
/// probability 1 - slip, otherwise to a uniformly random neighbor or stays.
/// Reward is minus the distance of the successor to a random goal cell.
TabularMdp make_grid_mdp(const MdpShape& shape, double slip, std::uint64_t seed);

class ConvergenceError : public NumericAbort {
 public:
  using NumericAbort::NumericAbort;
};

/// Value iteration until the sup-norm change drops below tol.
QTable solve_exact_q(const TabularMdp& mdp, double tol = 1e-10, int max_iterations = 1'000'000);

/// max |(T Q) - Q| for the Bellman optimality operator T.
double bellman_residual(const TabularMdp& mdp, const QTable& q);

/// Dataset of (state, action) rows drawn uniformly from the MDP, with
/// sampled successors. Index vectors give each row's abstract state/action.
struct MdpSample {
  StaticDataset dataset;
  std::vector<std::size_t> state_index;
  std::vector<std::size_t> action_index;
};

MdpSample sample_mdp_dataset(const TabularMdp& mdp, std::size_t n_rows, std::uint64_t seed);

/// Abstract index of an embedded state/action. Throws DataError when the
/// point is not within 1e-5 of a grid point.
std::size_t locate_state(const TabularMdp& mdp, std::span<const float> coords);
std::size_t locate_action(const TabularMdp& mdp, std::span<const float> coords);

/// Adds i.i.d. U(-magnitude, magnitude) noise to every entry whose pair
/// does not occur in the dataset; dataset pairs stay exact.
QTable perturb_q(const QTable& exact, const MdpSample& sample, double magnitude, std::uint64_t seed);

struct LipschitzEstimate {
  double k_hat = 0.0;
  std::size_t n_pairs = 0;
  std::size_t n_skipped = 0;  // zero-distance pairs
};

using PointFn = std::function<double(std::span<const double>)>;
using PointPair = std::pair<std::vector<double>, std::vector<double>>;

/// max |Q(x1) - Q(x2)| / ||x1 - x2|| over the pairs; a lower bound on K.
LipschitzEstimate estimate_lipschitz(const PointFn& q, std::span<const PointPair> pairs);

/// Spectral norm of a matrix by power iteration on W^T W.
double spectral_norm(const Eigen::MatrixXd& w, int iterations = 200, std::uint64_t seed = 7);

/// Product of layer spectral norms: a Lipschitz upper bound for a network
/// with 1-Lipschitz activations.
double spectral_norm_bound(const Mlp& net, int iterations = 200);

struct CellDiameters {
  std::vector<double> per_cell;  // indexed like CellTable cells
  double global = 0.0;
};

/// Largest pairwise Euclidean distance between member states of each cell.
CellDiameters cell_diameter(const GridSpec& spec, const CellTable& table, const StaticDataset& dataset);

struct ImprovementReport {
  int delta = 0;
  double fraction_non_degraded = 1.0;
  double worst_violation = 0.0;  // most negative Q(s, a_new) - Q(s, a_old), 0 if none
  double s_max = 0.0;
  std::size_t rows = 0;
  std::size_t changed = 0;       // rows whose action was replaced
};

inline constexpr double kViolationTolerance = 1e-9;

/// For every dataset row, picks a_new = the in-cell action maximizing
/// `selection` at the row's state (own action kept on ties) and scores it
/// with `exact`. `selection` defaults to `exact`.
ImprovementReport verify_improvement(const TabularMdp& mdp, const QTable& exact, const GridSpec& spec,
                                     const StaticDataset& dataset, const QTable* selection = nullptr);

/// verify_improvement at each delta, grid bounds taken from the dataset.
std::vector<ImprovementReport> sweep_delta_oracle(const TabularMdp& mdp, const QTable& exact,
                                                  const StaticDataset& dataset, std::span<const int> deltas,
                                                  const QTable* selection = nullptr, int jobs = 1);

/// Smallest tested delta from which every larger tested delta is
/// violation-free. Reports need not be sorted.
std::optional<int> find_threshold(std::span<const ImprovementReport> reports);

struct EmpiricalSweepRow {
  int delta = 0;
  double eval_return_mean = 0.0;
  double eval_return_std = 0.0;
  double normalized_score = 0.0;
};

/// Short trainings per delta; reports the final-epoch evaluation.
std::vector<EmpiricalSweepRow> sweep_delta_empirical(const Td3BcConfig& base, const StaticDataset& dataset,
                                                     const PointMassEnv& env, std::span<const int> deltas,
                                                     const ReferenceReturns& refs, int jobs = 1);

enum class MdpFamily { kRandom, kGrid, kMixed };

/// MDP number `index` of a family; kMixed alternates random and grid.
TabularMdp make_family_mdp(MdpFamily family, std::size_t index, const MdpShape& shape, double slip,
                           std::uint64_t seed);

/// Settings of the randomized theorem check run by verify-theorem.
struct TheoremSuiteSettings {
  std::size_t n_mdps = 10;
  MdpFamily family = MdpFamily::kMixed;
  MdpShape shape{};
  double slip = 0.2;
  std::size_t n_rows = 400;
  double noise_fraction = 0.1;  // noise magnitude as a fraction of the Q range
  std::vector<int> deltas{1, 2, 3, 4, 5, 6, 8, 10, 20};
  std::uint64_t seed = 0;
  double tol = 1e-10;
  int jobs = 1;
};

struct TheoremSuiteEntry {
  std::size_t mdp_id = 0;
  bool noisy = false;
  ImprovementReport report;
};

struct TheoremSuiteResult {
  std::vector<TheoremSuiteEntry> entries;
  bool exact_all_non_degraded = true;
  /// Per MDP: threshold delta of the noisy-Q sweep, if any.
  std::vector<std::optional<int>> noisy_thresholds;
  double max_bellman_residual = 0.0;

  /// Exact Q never degrades and every noisy sweep has a threshold.
  bool passed() const;
};

/// Each MDP of the family gets an exact-Q sweep and a noisy-Q sweep over the
/// same dataset. MDP m uses seed + 1000 m.
TheoremSuiteResult run_theorem_suite(const TheoremSuiteSettings& settings);

}  // namespace hcrl
