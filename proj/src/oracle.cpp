#include "hcrl/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numbers>
#include <set>

#include <fmt/format.h>

namespace hcrl {
namespace {

std::vector<double> grid_centers(const MdpShape& shape) {
  std::size_t n = 1;
  for (std::size_t d = 0; d < shape.grid_dims; ++d) n *= shape.grid_side;
  std::vector<double> coords(n * shape.grid_dims);
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t rest = s;
    for (std::size_t d = 0; d < shape.grid_dims; ++d) {
      coords[s * shape.grid_dims + d] = (static_cast<double>(rest % shape.grid_side) + 0.5) / shape.grid_side;
      rest /= shape.grid_side;
    }
  }
  return coords;
}

TabularMdp empty_mdp(const MdpShape& shape) {
  if (shape.grid_side < 1 || shape.grid_dims < 1 || shape.n_actions < 1)
    throw ContractViolation("MDP shape needs a positive side, dimension and action count");
  if (!(shape.discount >= 0.0 && shape.discount < 1.0))
    throw ContractViolation("MDP discount must lie in [0, 1)");
  TabularMdp mdp;
  mdp.state_dim = shape.grid_dims;
  mdp.state_coords = grid_centers(shape);
  mdp.n_states = mdp.state_coords.size() / shape.grid_dims;
  mdp.n_actions = shape.n_actions;
  mdp.action_dim = 2;
  for (std::size_t a = 0; a < shape.n_actions; ++a) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(a) / shape.n_actions;
    mdp.action_coords.push_back(std::cos(angle));
    mdp.action_coords.push_back(std::sin(angle));
  }
  mdp.transitions.assign(mdp.n_states * mdp.n_actions * mdp.n_states, 0.0);
  mdp.rewards.assign(mdp.n_states * mdp.n_actions, 0.0);
  mdp.discount = shape.discount;
  return mdp;
}

std::size_t locate(std::span<const double> table, std::size_t dim, std::span<const float> coords,
                   const char* what) {
  if (coords.size() != dim) throw DimensionMismatch(fmt::format("{} has {} coordinates, expected {}", what, coords.size(), dim));
  const std::size_t n = table.size() / dim;
  for (std::size_t i = 0; i < n; ++i) {
    bool match = true;
    for (std::size_t d = 0; d < dim && match; ++d)
      match = std::abs(table[i * dim + d] - static_cast<double>(coords[d])) <= 1e-5;
    if (match) return i;
  }
  throw DataError(fmt::format("{} is not on the MDP grid", what));
}

}  // namespace

void TabularMdp::validate() const {
  if (state_coords.size() != n_states * state_dim || action_coords.size() != n_actions * action_dim ||
      transitions.size() != n_states * n_actions * n_states || rewards.size() != n_states * n_actions)
    throw DimensionMismatch("tabular MDP arrays disagree with its declared sizes");
  for (double a : action_coords)
    if (std::abs(a) > 1.0 + kActionSlack) throw ContractViolation("MDP action coordinates must lie in [-1, 1]");
  for (double r : rewards)
    if (!std::isfinite(r)) throw ContractViolation("MDP rewards must be finite");
  for (std::size_t s = 0; s < n_states; ++s)
    for (std::size_t a = 0; a < n_actions; ++a) {
      double sum = 0.0;
      for (std::size_t t = 0; t < n_states; ++t) {
        const double p = prob(s, a, t);
        if (p < 0.0) throw ContractViolation("MDP transition probabilities must be >= 0");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw ContractViolation(fmt::format("transition row ({}, {}) sums to {}", s, a, sum));
    }
}

double QTable::range() const {
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  return *hi - *lo;
}

TabularMdp make_random_mdp(const MdpShape& shape, std::uint64_t seed) {
  TabularMdp mdp = empty_mdp(shape);
  Rng rng(seed);
  for (std::size_t s = 0; s < mdp.n_states; ++s)
    for (std::size_t a = 0; a < mdp.n_actions; ++a) {
      const std::size_t fan = 1 + rng.index(std::min<std::size_t>(3, mdp.n_states));
      std::vector<std::pair<std::size_t, double>> succ;
      double total = 0.0;
      for (std::size_t k = 0; k < fan; ++k) {
        const double w = 0.1 + rng.uniform();
        succ.emplace_back(rng.index(mdp.n_states), w);
        total += w;
      }
      for (auto [t, w] : succ) mdp.transitions[(s * mdp.n_actions + a) * mdp.n_states + t] += w / total;
      mdp.rewards[s * mdp.n_actions + a] = rng.uniform(-1.0, 1.0);
    }
  return mdp;
}

TabularMdp make_grid_mdp(const MdpShape& shape, double slip, std::uint64_t seed) {
  if (!(slip >= 0.0 && slip <= 1.0)) throw ContractViolation("slip must lie in [0, 1]");
  TabularMdp mdp = empty_mdp(shape);
  Rng rng(seed);
  const std::size_t goal = rng.index(mdp.n_states);
  const auto side = static_cast<long>(shape.grid_side);
  const std::size_t dims = shape.grid_dims;

  auto cell_of = [&](std::size_t s) {
    std::vector<long> c(dims);
    for (std::size_t d = 0; d < dims; ++d) {
      c[d] = static_cast<long>(s % shape.grid_side);
      s /= shape.grid_side;
    }
    return c;
  };
  auto index_of = [&](const std::vector<long>& c) {
    std::size_t s = 0;
    for (std::size_t d = dims; d-- > 0;) s = s * shape.grid_side + static_cast<std::size_t>(c[d]);
    return s;
  };
  auto moved = [&](std::size_t s, std::span<const long> step) {
    auto c = cell_of(s);
    for (std::size_t d = 0; d < std::min<std::size_t>(dims, 2); ++d) c[d] = std::clamp(c[d] + step[d], 0L, side - 1);
    return index_of(c);
  };
  auto distance_to_goal = [&](std::size_t s) {
    double acc = 0.0;
    for (std::size_t d = 0; d < dims; ++d) {
      const double diff = mdp.state(s)[d] - mdp.state(goal)[d];
      acc += diff * diff;
    }
    return std::sqrt(acc);
  };

  const std::vector<std::array<long, 2>> neighbors{{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  for (std::size_t s = 0; s < mdp.n_states; ++s)
    for (std::size_t a = 0; a < mdp.n_actions; ++a) {
      const std::array<long, 2> step{std::lround(mdp.action(a)[0]), std::lround(mdp.action(a)[1])};
      auto* row = &mdp.transitions[(s * mdp.n_actions + a) * mdp.n_states];
      row[moved(s, step)] += 1.0 - slip;
      for (const auto& nb : neighbors) row[moved(s, nb)] += slip / neighbors.size();
      double r = 0.0;
      for (std::size_t t = 0; t < mdp.n_states; ++t) r -= row[t] * distance_to_goal(t);
      mdp.rewards[s * mdp.n_actions + a] = r;
    }
  return mdp;
}

QTable solve_exact_q(const TabularMdp& mdp, double tol, int max_iterations) {
  mdp.validate();
  if (!(mdp.discount < 1.0)) throw ContractViolation("value iteration requires discount < 1");
  QTable q{mdp.n_states, mdp.n_actions, std::vector<double>(mdp.n_states * mdp.n_actions, 0.0)};
  std::vector<double> v(mdp.n_states);
  std::vector<double> next(q.values.size());
  for (int it = 0; it < max_iterations; ++it) {
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
      double best = q.at(s, 0);
      for (std::size_t a = 1; a < mdp.n_actions; ++a) best = std::max(best, q.at(s, a));
      v[s] = best;
    }
    double change = 0.0;
    for (std::size_t s = 0; s < mdp.n_states; ++s)
      for (std::size_t a = 0; a < mdp.n_actions; ++a) {
        double expect = 0.0;
        for (std::size_t t = 0; t < mdp.n_states; ++t) expect += mdp.prob(s, a, t) * v[t];
        const double value = mdp.reward(s, a) + mdp.discount * expect;
        change = std::max(change, std::abs(value - q.at(s, a)));
        next[s * mdp.n_actions + a] = value;
      }
    q.values.swap(next);
    if (change < tol) return q;
  }
  throw ConvergenceError(fmt::format("value iteration did not reach tolerance {} in {} iterations", tol, max_iterations));
}

double bellman_residual(const TabularMdp& mdp, const QTable& q) {
  double worst = 0.0;
  for (std::size_t s = 0; s < mdp.n_states; ++s)
    for (std::size_t a = 0; a < mdp.n_actions; ++a) {
      double expect = 0.0;
      for (std::size_t t = 0; t < mdp.n_states; ++t) {
        double best = q.at(t, 0);
        for (std::size_t b = 1; b < mdp.n_actions; ++b) best = std::max(best, q.at(t, b));
        expect += mdp.prob(s, a, t) * best;
      }
      worst = std::max(worst, std::abs(mdp.reward(s, a) + mdp.discount * expect - q.at(s, a)));
    }
  return worst;
}

MdpSample sample_mdp_dataset(const TabularMdp& mdp, std::size_t n_rows, std::uint64_t seed) {
  if (n_rows < 1) throw ContractViolation("MDP dataset needs at least one row");
  Rng rng(seed);
  MdpSample out{StaticDataset::from_transitions({Transition{{0.0}, {0.0}, 0.0, {0.0}, false}}), {}, {}};
  std::vector<Transition> rows;
  rows.reserve(n_rows);
  for (std::size_t i = 0; i < n_rows; ++i) {
    const std::size_t s = rng.index(mdp.n_states);
    const std::size_t a = rng.index(mdp.n_actions);
    double u = rng.uniform();
    std::size_t next = mdp.n_states - 1;
    for (std::size_t t = 0; t < mdp.n_states; ++t) {
      u -= mdp.prob(s, a, t);
      if (u < 0.0) {
        next = t;
        break;
      }
    }
    auto st = mdp.state(s);
    auto ac = mdp.action(a);
    auto nx = mdp.state(next);
    rows.push_back({{st.begin(), st.end()}, {ac.begin(), ac.end()}, mdp.reward(s, a), {nx.begin(), nx.end()}, false});
    out.state_index.push_back(s);
    out.action_index.push_back(a);
  }
  out.dataset = StaticDataset::from_transitions(rows);
  return out;
}

std::size_t locate_state(const TabularMdp& mdp, std::span<const float> coords) {
  return locate(mdp.state_coords, mdp.state_dim, coords, "dataset state");
}

std::size_t locate_action(const TabularMdp& mdp, std::span<const float> coords) {
  return locate(mdp.action_coords, mdp.action_dim, coords, "dataset action");
}

QTable perturb_q(const QTable& exact, const MdpSample& sample, double magnitude, std::uint64_t seed) {
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t i = 0; i < sample.state_index.size(); ++i)
    seen.emplace(sample.state_index[i], sample.action_index[i]);
  QTable noisy = exact;
  Rng rng(seed);
  for (std::size_t s = 0; s < exact.n_states; ++s)
    for (std::size_t a = 0; a < exact.n_actions; ++a) {
      const double noise = rng.uniform(-magnitude, magnitude);
      if (!seen.contains({s, a})) noisy.at(s, a) += noise;
    }
  return noisy;
}

LipschitzEstimate estimate_lipschitz(const PointFn& q, std::span<const PointPair> pairs) {
  LipschitzEstimate est;
  for (const auto& [x1, x2] : pairs) {
    if (x1.size() != x2.size()) throw DimensionMismatch("Lipschitz pair has mismatched lengths");
    double dist2 = 0.0;
    for (std::size_t i = 0; i < x1.size(); ++i) dist2 += (x1[i] - x2[i]) * (x1[i] - x2[i]);
    if (dist2 == 0.0) {
      ++est.n_skipped;
      continue;
    }
    ++est.n_pairs;
    est.k_hat = std::max(est.k_hat, std::abs(q(x1) - q(x2)) / std::sqrt(dist2));
  }
  return est;
}

double spectral_norm(const Eigen::MatrixXd& w, int iterations, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd v(w.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
  if (v.norm() == 0.0) return 0.0;
  v.normalize();
  double sigma = 0.0;
  for (int it = 0; it < iterations; ++it) {
    const Eigen::VectorXd u = w * v;
    sigma = u.norm();
    if (sigma == 0.0) return 0.0;
    v = w.transpose() * u;
    v.normalize();
  }
  return (w * v).norm();
}

double spectral_norm_bound(const Mlp& net, int iterations) {
  double bound = 1.0;
  for (const auto& layer : net.layers()) bound *= spectral_norm(layer.weight, iterations);
  return bound;
}

CellDiameters cell_diameter(const GridSpec& spec, const CellTable& table, const StaticDataset& dataset) {
  if (spec.dim() != dataset.state_dim()) throw DimensionMismatch("grid and dataset dimensions differ");
  CellDiameters out;
  out.per_cell.assign(table.cell_count(), 0.0);
  for (std::size_t cell = 0; cell < table.cell_count(); ++cell) {
    auto members = table.members(cell);
    double best = 0.0;
    for (std::size_t i = 0; i < members.size(); ++i)
      for (std::size_t j = i + 1; j < members.size(); ++j) {
        auto a = dataset.state(members[i]);
        auto b = dataset.state(members[j]);
        double d2 = 0.0;
        for (std::size_t d = 0; d < a.size(); ++d) {
          const double diff = static_cast<double>(a[d]) - b[d];
          d2 += diff * diff;
        }
        best = std::max(best, d2);
      }
    out.per_cell[cell] = std::sqrt(best);
    out.global = std::max(out.global, out.per_cell[cell]);
  }
  return out;
}

ImprovementReport verify_improvement(const TabularMdp& mdp, const QTable& exact, const GridSpec& spec,
                                     const StaticDataset& dataset, const QTable* selection) {
  const QTable& select = selection != nullptr ? *selection : exact;
  const CellTable table = build_cell_table(spec, dataset);
  std::vector<std::size_t> s_idx(dataset.size()), a_idx(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    s_idx[i] = locate_state(mdp, dataset.state(i));
    a_idx[i] = locate_action(mdp, dataset.action(i));
  }

  ImprovementReport rep;
  rep.delta = spec.delta;
  rep.rows = dataset.size();
  rep.s_max = cell_diameter(spec, table, dataset).global;
  std::size_t ok = 0;
  for (std::size_t row = 0; row < dataset.size(); ++row) {
    const std::size_t s = s_idx[row];
    std::size_t a_new = a_idx[row];
    double best = select.at(s, a_new);
    for (std::size_t j : table.members(table.cell_of_row(row)))
      if (select.at(s, a_idx[j]) > best) {
        best = select.at(s, a_idx[j]);
        a_new = a_idx[j];
      }
    if (a_new != a_idx[row]) ++rep.changed;
    const double gap = exact.at(s, a_new) - exact.at(s, a_idx[row]);
    if (gap >= -kViolationTolerance) ++ok;
    rep.worst_violation = std::min(rep.worst_violation, gap < -kViolationTolerance ? gap : 0.0);
  }
  rep.fraction_non_degraded = static_cast<double>(ok) / static_cast<double>(rep.rows);
  return rep;
}

std::vector<ImprovementReport> sweep_delta_oracle(const TabularMdp& mdp, const QTable& exact,
                                                  const StaticDataset& dataset, std::span<const int> deltas,
                                                  const QTable* selection, int jobs) {
  if (deltas.empty()) throw ContractViolation("delta sweep needs at least one delta");
  auto one = [&](int delta) {
    return verify_improvement(mdp, exact, GridSpec::from_dataset(dataset, delta), dataset, selection);
  };
  std::vector<ImprovementReport> out;
  if (jobs <= 1) {
    for (int d : deltas) out.push_back(one(d));
    return out;
  }
  std::vector<std::future<ImprovementReport>> pending;
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    if (pending.size() >= static_cast<std::size_t>(jobs)) {
      out.push_back(pending.front().get());
      pending.erase(pending.begin());
    }
    pending.push_back(std::async(std::launch::async, one, deltas[i]));
  }
  for (auto& f : pending) out.push_back(f.get());
  return out;
}

std::optional<int> find_threshold(std::span<const ImprovementReport> reports) {
  std::vector<ImprovementReport> sorted(reports.begin(), reports.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.delta < b.delta; });
  std::optional<int> threshold;
  for (std::size_t i = sorted.size(); i-- > 0;) {
    if (sorted[i].fraction_non_degraded < 1.0) break;
    threshold = sorted[i].delta;
  }
  return threshold;
}

std::vector<EmpiricalSweepRow> sweep_delta_empirical(const Td3BcConfig& base, const StaticDataset& dataset,
                                                     const PointMassEnv& env, std::span<const int> deltas,
                                                     const ReferenceReturns& refs, int jobs) {
  if (deltas.empty()) throw ContractViolation("delta sweep needs at least one delta");
  auto one = [&](int delta) {
    Td3BcConfig cfg = base;
    cfg.delta = delta;
    const TrainResult res = train(cfg, dataset, env, refs);
    EmpiricalSweepRow row{delta, 0.0, 0.0, 0.0};
    if (!res.report.epochs.empty()) {
      const auto& last = res.report.epochs.back();
      row.eval_return_mean = last.eval_return_mean;
      row.eval_return_std = last.eval_return_std;
      row.normalized_score = last.normalized_score;
    }
    return row;
  };
  std::vector<EmpiricalSweepRow> out;
  if (jobs <= 1) {
    for (int d : deltas) out.push_back(one(d));
    return out;
  }
  std::vector<std::future<EmpiricalSweepRow>> pending;
  for (int d : deltas) {
    if (pending.size() >= static_cast<std::size_t>(jobs)) {
      out.push_back(pending.front().get());
      pending.erase(pending.begin());
    }
    pending.push_back(std::async(std::launch::async, one, d));
  }
  for (auto& f : pending) out.push_back(f.get());
  return out;
}

TabularMdp make_family_mdp(MdpFamily family, std::size_t index, const MdpShape& shape, double slip,
                           std::uint64_t seed) {
  const bool grid = family == MdpFamily::kGrid || (family == MdpFamily::kMixed && index % 2 == 1);
  return grid ? make_grid_mdp(shape, slip, seed) : make_random_mdp(shape, seed);
}

bool TheoremSuiteResult::passed() const {
  if (!exact_all_non_degraded) return false;
  return std::all_of(noisy_thresholds.begin(), noisy_thresholds.end(),
                     [](const auto& t) { return t.has_value(); });
}

TheoremSuiteResult run_theorem_suite(const TheoremSuiteSettings& settings) {
  if (settings.deltas.empty()) throw ConfigError("oracle.deltas must not be empty");
  for (int d : settings.deltas)
    if (d < 1) throw ConfigError("oracle.deltas entries must be >= 1");
  TheoremSuiteResult result;
  for (std::size_t m = 0; m < settings.n_mdps; ++m) {
    const std::uint64_t mdp_seed = settings.seed + 1000 * m;
    const TabularMdp mdp = make_family_mdp(settings.family, m, settings.shape, settings.slip, mdp_seed);
    const QTable q = solve_exact_q(mdp, settings.tol);
    result.max_bellman_residual = std::max(result.max_bellman_residual, bellman_residual(mdp, q));
    const MdpSample sample = sample_mdp_dataset(mdp, settings.n_rows, mdp_seed + 1);
    const QTable noisy =
        perturb_q(q, sample, settings.noise_fraction * q.range(), mdp_seed + seed_offset::kOracleNoise);

    for (const auto& rep : sweep_delta_oracle(mdp, q, sample.dataset, settings.deltas, nullptr, settings.jobs)) {
      result.entries.push_back({m, false, rep});
      if (rep.fraction_non_degraded < 1.0) result.exact_all_non_degraded = false;
    }
    const auto noisy_reps = sweep_delta_oracle(mdp, q, sample.dataset, settings.deltas, &noisy, settings.jobs);
    for (const auto& rep : noisy_reps) result.entries.push_back({m, true, rep});
    result.noisy_thresholds.push_back(find_threshold(noisy_reps));
  }
  return result;
}

}  // namespace hcrl
