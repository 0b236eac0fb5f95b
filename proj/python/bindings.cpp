#include <sstream>
#include <string>
#include <vector>

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hcrl/checkpoint.hpp"
#include "hcrl/cli.hpp"
#include "hcrl/dataset.hpp"
#include "hcrl/envs.hpp"
#include "hcrl/hypercube.hpp"
#include "hcrl/oracle.hpp"
#include "hcrl/trainer.hpp"

namespace py = pybind11;
using namespace hcrl;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::array_t<float> matrix_copy(const std::vector<float>& data, std::size_t rows, std::size_t cols) {
  py::array_t<float> out({rows, cols});
  std::copy(data.begin(), data.end(), out.mutable_data());
  return out;
}

std::vector<float> flatten(const FloatArray& a, std::size_t rows, std::size_t cols, const char* name) {
  if (a.ndim() != 2 || static_cast<std::size_t>(a.shape(0)) != rows || static_cast<std::size_t>(a.shape(1)) != cols)
    throw DimensionMismatch(std::string(name) + " must have shape (" + std::to_string(rows) + ", " +
                            std::to_string(cols) + ")");
  return {a.data(), a.data() + a.size()};
}

StaticDataset dataset_from_numpy(const FloatArray& states, const FloatArray& actions, const FloatArray& rewards,
                                 const FloatArray& next_states, const py::array_t<bool>& dones) {
  if (states.ndim() != 2 || actions.ndim() != 2) throw DimensionMismatch("states and actions must be 2-D");
  const auto n = static_cast<std::size_t>(states.shape(0));
  const auto sd = static_cast<std::size_t>(states.shape(1));
  const auto ad = static_cast<std::size_t>(actions.shape(1));
  if (rewards.size() != static_cast<py::ssize_t>(n) || dones.size() != static_cast<py::ssize_t>(n))
    throw DimensionMismatch("rewards and dones need one entry per row");
  std::vector<std::uint8_t> done(n);
  for (std::size_t i = 0; i < n; ++i) done[i] = dones.at(static_cast<py::ssize_t>(i)) ? 1 : 0;
  return StaticDataset::from_arrays(sd, ad, flatten(states, n, sd, "states"), flatten(actions, n, ad, "actions"),
                                    {rewards.data(), rewards.data() + n}, flatten(next_states, n, sd, "next_states"),
                                    std::move(done));
}

py::int_ to_pyint(CellCode code) { return py::int_(py::str(to_string(code))); }

py::dict epoch_dict(const EpochRecord& e) {
  py::dict d;
  d["epoch"] = e.epoch;
  d["step"] = e.step;
  d["critic_loss"] = e.critic_loss;
  d["actor_q_term"] = e.actor_q_term;
  d["bc_loss"] = e.bc_loss;
  d["mean_abs_q"] = e.mean_abs_q;
  d["champion_swaps"] = e.champion_swaps;
  d["eval_return_mean"] = e.eval_return_mean;
  d["eval_return_std"] = e.eval_return_std;
  d["normalized_score"] = e.normalized_score;
  d["wall_time_s"] = e.wall_time_s;
  return d;
}

py::bytes checkpoint_bytes(const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  return {reinterpret_cast<const char*>(bytes.data()), bytes.size()};
}

Checkpoint checkpoint_from_bytes(const py::bytes& blob) {
  const std::string s = blob;
  return decode_checkpoint({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Hypercube-regularized offline TD3-BC";
  m.attr("__version__") = "0.1.0";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  auto contract = py::register_exception<ContractViolation>(m, "ContractViolation", error.ptr());
  py::register_exception<DimensionMismatch>(m, "DimensionMismatch", contract.ptr());
  py::register_exception<DataError>(m, "DataError", error.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<NumericAbort>(m, "NumericAbort", error.ptr());

  py::class_<StaticDataset>(m, "StaticDataset")
      .def(py::init(&dataset_from_numpy), py::arg("states"), py::arg("actions"), py::arg("rewards"),
           py::arg("next_states"), py::arg("dones"))
      .def("__len__", &StaticDataset::size)
      .def_property_readonly("state_dim", &StaticDataset::state_dim)
      .def_property_readonly("action_dim", &StaticDataset::action_dim)
      .def_property_readonly("states", [](const StaticDataset& d) { return matrix_copy(d.states(), d.size(), d.state_dim()); })
      .def_property_readonly("actions", [](const StaticDataset& d) { return matrix_copy(d.actions(), d.size(), d.action_dim()); })
      .def_property_readonly("next_states",
                             [](const StaticDataset& d) { return matrix_copy(d.next_states(), d.size(), d.state_dim()); })
      .def_property_readonly("rewards", [](const StaticDataset& d) { return py::array_t<float>(d.size(), d.rewards().data()); })
      .def_property_readonly("dones", [](const StaticDataset& d) {
        py::array_t<bool> out(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) out.mutable_at(static_cast<py::ssize_t>(i)) = d.done(i);
        return out;
      })
      .def_property_readonly("state_min", &StaticDataset::state_min)
      .def_property_readonly("state_max", &StaticDataset::state_max)
      .def("__eq__", [](const StaticDataset& a, const StaticDataset& b) { return a == b; });

  m.def("load_dataset", &load_dataset, py::arg("path"));
  m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("path"));

  py::enum_<EnvKind>(m, "EnvKind")
      .value("POINT_MASS_2D", EnvKind::kPointMass2D)
      .value("POINT_MASS_4D", EnvKind::kPointMass4D);
  py::enum_<Tier>(m, "Tier")
      .value("RANDOM", Tier::kRandom)
      .value("MEDIUM", Tier::kMedium)
      .value("MEDIUM_REPLAY", Tier::kMediumReplay)
      .value("EXPERT", Tier::kExpert);

  py::class_<PointMassEnv>(m, "PointMassEnv")
      .def(py::init([](EnvKind kind) {
             PointMassEnv env;
             env.kind = kind;
             return env;
           }),
           py::arg("kind") = EnvKind::kPointMass2D)
      .def_readwrite("kind", &PointMassEnv::kind)
      .def_readwrite("low", &PointMassEnv::low)
      .def_readwrite("high", &PointMassEnv::high)
      .def_readwrite("goal", &PointMassEnv::goal)
      .def_readwrite("dt", &PointMassEnv::dt)
      .def_readwrite("max_steps", &PointMassEnv::max_steps)
      .def_readwrite("action_scale", &PointMassEnv::action_scale)
      .def_readwrite("obs_noise_std", &PointMassEnv::obs_noise_std)
      .def_readwrite("sparse_reward", &PointMassEnv::sparse_reward)
      .def_property_readonly("state_dim", &PointMassEnv::state_dim)
      .def_property_readonly("action_dim", &PointMassEnv::action_dim)
      .def("validate", &PointMassEnv::validate);

  m.def("env_reset", &env_reset, py::arg("env"), py::arg("seed"));
  m.def(
      "env_step",
      [](const PointMassEnv& env, const std::vector<double>& state, const std::vector<double>& action, int step_index) {
        const auto r = env_step(env, state, action, step_index);
        return py::make_tuple(r.next_state, r.reward, r.done);
      },
      py::arg("env"), py::arg("state"), py::arg("action"), py::arg("step_index") = 0);
  m.def(
      "generate_dataset",
      [](const PointMassEnv& env, Tier tier, std::size_t n, std::uint64_t seed) {
        return generate_dataset(env, {tier, n, seed});
      },
      py::arg("env"), py::arg("tier"), py::arg("n") = 5000, py::arg("seed") = 0);

  py::class_<ReferenceReturns>(m, "ReferenceReturns")
      .def(py::init<>())
      .def_readwrite("random", &ReferenceReturns::random)
      .def_readwrite("expert", &ReferenceReturns::expert);
  m.def("compute_reference_returns", &compute_reference_returns, py::arg("env"),
        py::arg("n_episodes") = kReferenceEpisodes, py::arg("seed") = kReferenceSeed);
  m.def("normalized_score", &normalized_score, py::arg("ret"), py::arg("refs"));

  m.def(
      "bin_state",
      [](int delta, std::vector<double> mins, std::vector<double> maxs, const std::vector<double>& state) {
        GridSpec spec{delta, std::move(mins), std::move(maxs)};
        spec.validate();
        return bin_state(spec, state).coords;
      },
      py::arg("delta"), py::arg("mins"), py::arg("maxs"), py::arg("state"));
  m.def(
      "encode_cell",
      [](int delta, const std::vector<std::int32_t>& coords) {
        GridSpec spec{delta, std::vector<double>(coords.size(), 0.0), std::vector<double>(coords.size(), 1.0)};
        return to_pyint(encode_cell(spec, CellKey{coords}));
      },
      py::arg("delta"), py::arg("coords"));
  m.def(
      "cell_assignments",
      [](const StaticDataset& dataset, int delta) {
        const auto table = build_cell_table(GridSpec::from_dataset(dataset, delta), dataset);
        std::vector<std::size_t> cells(dataset.size());
        for (std::size_t r = 0; r < dataset.size(); ++r) cells[r] = table.cell_of_row(r);
        return cells;
      },
      py::arg("dataset"), py::arg("delta"),
      "Dense cell index of every row, numbered in order of first appearance.");

  py::class_<Td3BcConfig>(m, "Td3BcConfig")
      .def(py::init<>())
      .def_readwrite("discount", &Td3BcConfig::discount)
      .def_readwrite("policy_lr", &Td3BcConfig::policy_lr)
      .def_readwrite("qf_lr", &Td3BcConfig::qf_lr)
      .def_readwrite("tau", &Td3BcConfig::tau)
      .def_readwrite("batch_size", &Td3BcConfig::batch_size)
      .def_readwrite("max_epochs", &Td3BcConfig::max_epochs)
      .def_readwrite("steps_per_epoch", &Td3BcConfig::steps_per_epoch)
      .def_readwrite("phi", &Td3BcConfig::phi)
      .def_readwrite("delta", &Td3BcConfig::delta)
      .def_readwrite("policy_noise", &Td3BcConfig::policy_noise)
      .def_readwrite("noise_clip", &Td3BcConfig::noise_clip)
      .def_readwrite("policy_delay", &Td3BcConfig::policy_delay)
      .def_readwrite("eval_episodes", &Td3BcConfig::eval_episodes)
      .def_readwrite("seed", &Td3BcConfig::seed)
      .def_readwrite("use_hypercube", &Td3BcConfig::use_hypercube)
      .def_readwrite("norm_eps", &Td3BcConfig::norm_eps)
      .def_readwrite("actor_hidden", &Td3BcConfig::actor_hidden)
      .def_readwrite("critic_hidden", &Td3BcConfig::critic_hidden)
      .def("validate", &Td3BcConfig::validate);

  m.def(
      "train",
      [](const Td3BcConfig& config, const StaticDataset& dataset, const PointMassEnv& env) {
        TrainResult result;
        {
          py::gil_scoped_release release;
          result = train(config, dataset, env);
        }
        py::list epochs;
        for (const auto& e : result.report.epochs) epochs.append(epoch_dict(e));
        py::dict out;
        out["epochs"] = epochs;
        out["checkpoint"] = checkpoint_bytes(result.checkpoint);
        return out;
      },
      py::arg("config"), py::arg("dataset"), py::arg("env"),
      "Trains and returns {'epochs': [per-epoch metrics], 'checkpoint': bytes}.");
  m.def(
      "evaluate",
      [](const py::bytes& checkpoint, const PointMassEnv& env, int n_episodes, std::uint64_t seed) {
        const ActorPolicy policy(checkpoint_from_bytes(checkpoint));
        const auto r = evaluate(policy, env, n_episodes, seed, compute_reference_returns(env));
        py::dict out;
        out["mean_return"] = r.mean_return;
        out["std_return"] = r.std_return;
        out["normalized_score"] = r.normalized_score;
        return out;
      },
      py::arg("checkpoint"), py::arg("env"), py::arg("n_episodes") = 10, py::arg("seed") = 0);

  py::class_<MdpShape>(m, "MdpShape")
      .def(py::init<>())
      .def_readwrite("grid_side", &MdpShape::grid_side)
      .def_readwrite("grid_dims", &MdpShape::grid_dims)
      .def_readwrite("n_actions", &MdpShape::n_actions)
      .def_readwrite("discount", &MdpShape::discount);
  py::class_<TabularMdp>(m, "TabularMdp")
      .def_readonly("n_states", &TabularMdp::n_states)
      .def_readonly("n_actions", &TabularMdp::n_actions)
      .def_readonly("discount", &TabularMdp::discount);
  py::class_<QTable>(m, "QTable")
      .def_readonly("n_states", &QTable::n_states)
      .def_readonly("n_actions", &QTable::n_actions)
      .def("at", py::overload_cast<std::size_t, std::size_t>(&QTable::at, py::const_), py::arg("state"),
           py::arg("action"))
      .def("range", &QTable::range);
  m.def("make_random_mdp", &make_random_mdp, py::arg("shape"), py::arg("seed"));
  m.def("make_grid_mdp", &make_grid_mdp, py::arg("shape"), py::arg("slip"), py::arg("seed"));
  m.def("solve_exact_q", &solve_exact_q, py::arg("mdp"), py::arg("tol") = 1e-10, py::arg("max_iterations") = 1'000'000);
  m.def("bellman_residual", &bellman_residual, py::arg("mdp"), py::arg("q"));

  py::class_<TheoremSuiteSettings>(m, "TheoremSuiteSettings")
      .def(py::init<>())
      .def_readwrite("n_mdps", &TheoremSuiteSettings::n_mdps)
      .def_readwrite("shape", &TheoremSuiteSettings::shape)
      .def_readwrite("slip", &TheoremSuiteSettings::slip)
      .def_readwrite("n_rows", &TheoremSuiteSettings::n_rows)
      .def_readwrite("noise_fraction", &TheoremSuiteSettings::noise_fraction)
      .def_readwrite("deltas", &TheoremSuiteSettings::deltas)
      .def_readwrite("seed", &TheoremSuiteSettings::seed);
  m.def(
      "run_theorem_suite",
      [](const TheoremSuiteSettings& settings) {
        const auto result = run_theorem_suite(settings);
        py::list entries;
        for (const auto& e : result.entries) {
          py::dict d;
          d["mdp_id"] = e.mdp_id;
          d["noisy"] = e.noisy;
          d["delta"] = e.report.delta;
          d["fraction_non_degraded"] = e.report.fraction_non_degraded;
          d["worst_violation"] = e.report.worst_violation;
          entries.append(d);
        }
        py::dict out;
        out["passed"] = result.passed();
        out["exact_all_non_degraded"] = result.exact_all_non_degraded;
        out["noisy_thresholds"] = result.noisy_thresholds;
        out["max_bellman_residual"] = result.max_bellman_residual;
        out["entries"] = entries;
        return out;
      },
      py::arg("settings"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one subcommand in-process; returns (exit_code, stdout, stderr).");
}
