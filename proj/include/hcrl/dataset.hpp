#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hcrl/errors.hpp"

namespace hcrl {

// ORLD load failures. Each format violation has its own type.
class BadMagicError : public DataError {
 public:
  using DataError::DataError;
};
class UnsupportedVersionError : public DataError {
 public:
  using DataError::DataError;
};
class TruncatedPayloadError : public DataError {
 public:
  using DataError::DataError;
};
class MalformedPayloadError : public DataError {
 public:
  using DataError::DataError;
};
class NonFiniteValueError : public DataError {
 public:
  using DataError::DataError;
};
class ActionRangeError : public DataError {
 public:
  using DataError::DataError;
};

/// Slack tolerated on the [-1, 1] action box.
inline constexpr double kActionSlack = 1e-6;

struct Transition {
  std::vector<double> state;
  std::vector<double> action;
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;
};

/// Immutable table of transitions stored as 32-bit floats, row-major.
///
/// Bounds cover both `state` and `next_state`; mean/std cover `state` only.
/// All statistics are derived from the payload at construction.
class StaticDataset {
 public:
  /// Validates and converts to f32. Throws on empty input, inconsistent
  /// dimensions, non-finite values or actions outside [-1, 1] + slack.
  static StaticDataset from_transitions(const std::vector<Transition>& transitions);

  static StaticDataset from_arrays(std::size_t state_dim, std::size_t action_dim,
                                   std::vector<float> states, std::vector<float> actions,
                                   std::vector<float> rewards, std::vector<float> next_states,
                                   std::vector<std::uint8_t> dones);

  std::size_t size() const { return rewards_.size(); }
  std::size_t state_dim() const { return state_dim_; }
  std::size_t action_dim() const { return action_dim_; }

  std::span<const float> state(std::size_t i) const {
    return {states_.data() + i * state_dim_, state_dim_};
  }
  std::span<const float> action(std::size_t i) const {
    return {actions_.data() + i * action_dim_, action_dim_};
  }
  std::span<const float> next_state(std::size_t i) const {
    return {next_states_.data() + i * state_dim_, state_dim_};
  }
  float reward(std::size_t i) const { return rewards_[i]; }
  bool done(std::size_t i) const { return dones_[i] != 0; }
  Transition transition(std::size_t i) const;

  const std::vector<float>& states() const { return states_; }
  const std::vector<float>& actions() const { return actions_; }
  const std::vector<float>& rewards() const { return rewards_; }
  const std::vector<float>& next_states() const { return next_states_; }
  const std::vector<std::uint8_t>& dones() const { return dones_; }

  const std::vector<double>& state_min() const { return state_min_; }
  const std::vector<double>& state_max() const { return state_max_; }
  const std::vector<double>& state_mean() const { return state_mean_; }
  const std::vector<double>& state_std() const { return state_std_; }

  friend bool operator==(const StaticDataset&, const StaticDataset&) = default;

 private:
  StaticDataset() = default;
  void validate_and_summarize();

  std::size_t state_dim_ = 0;
  std::size_t action_dim_ = 0;
  std::vector<float> states_;
  std::vector<float> actions_;
  std::vector<float> rewards_;
  std::vector<float> next_states_;
  std::vector<std::uint8_t> dones_;
  std::vector<double> state_min_;
  std::vector<double> state_max_;
  std::vector<double> state_mean_;
  std::vector<double> state_std_;
};

StaticDataset load_dataset(const std::filesystem::path& path);
void save_dataset(const StaticDataset& dataset, const std::filesystem::path& path);

/// Serialized ORLD bytes; save_dataset writes exactly this buffer.
std::vector<std::uint8_t> encode_orld(const StaticDataset& dataset);
StaticDataset decode_orld(std::span<const std::uint8_t> bytes);

/// Size in bytes of an ORLD file with the given shape.
std::uint64_t orld_file_size(std::size_t n, std::size_t state_dim, std::size_t action_dim);

/// Exact componentwise extrema over every state and next_state.
std::pair<std::vector<double>, std::vector<double>> compute_state_bounds(
    const StaticDataset& dataset);

/// Affine map x -> (x - mean) / (std + eps). Invertible.
struct StateNormalizer {
  std::vector<double> mean;
  std::vector<double> std;
  double eps = 1e-3;

  std::size_t dim() const { return mean.size(); }

  template <typename T>
  void apply(std::span<const T> x, std::span<double> out) const {
    for (std::size_t i = 0; i < mean.size(); ++i)
      out[i] = (static_cast<double>(x[i]) - mean[i]) / (std[i] + eps);
  }
  std::vector<double> apply(std::span<const double> x) const;
  std::vector<double> invert(std::span<const double> z) const;

  friend bool operator==(const StateNormalizer&, const StateNormalizer&) = default;
};

/// Network-side view of a dataset: normalized copies of state and
/// next_state, row-major (row i occupies [i * dim, (i + 1) * dim)).
struct NormalizedStates {
  StateNormalizer normalizer;
  std::vector<double> states;
  std::vector<double> next_states;

  std::span<const double> state(std::size_t i) const {
    return {states.data() + i * normalizer.dim(), normalizer.dim()};
  }
  std::span<const double> next_state(std::size_t i) const {
    return {next_states.data() + i * normalizer.dim(), normalizer.dim()};
  }
};

NormalizedStates normalize_states(const StaticDataset& dataset, double eps = 1e-3);

}  // namespace hcrl
