#include "hcrl/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

namespace hcrl {
namespace {

constexpr std::uint8_t kMagic[4] = {'O', 'R', 'L', 'D'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderSize = 24;

class ByteWriter {
 public:
  explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  template <typename U>
  void put_uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i)
      out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void put_f32(float v) { put_uint(std::bit_cast<std::uint32_t>(v)); }
  void put_bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }

 private:
  std::vector<std::uint8_t>& out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t remaining() const { return in_.size() - pos_; }

  template <typename U>
  U get_uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  float get_f32() { return std::bit_cast<float>(get_uint<std::uint32_t>()); }
  std::uint8_t get_u8() { return get_uint<std::uint8_t>(); }

 private:
  void need(std::size_t n) const {
    if (remaining() < n)
      throw TruncatedPayloadError(
          fmt::format("ORLD payload truncated at byte {} (need {} more)", pos_, n));
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void check_finite(float v, const char* field, std::size_t row) {
  if (!std::isfinite(v))
    throw NonFiniteValueError(fmt::format("non-finite {} in transition {}", field, row));
}

}  // namespace

StaticDataset StaticDataset::from_transitions(const std::vector<Transition>& transitions) {
  if (transitions.empty()) throw ContractViolation("dataset must contain at least one transition");
  const std::size_t sd = transitions.front().state.size();
  const std::size_t ad = transitions.front().action.size();
  const std::size_t n = transitions.size();

  std::vector<float> states, actions, rewards, next_states;
  std::vector<std::uint8_t> dones;
  states.reserve(n * sd);
  next_states.reserve(n * sd);
  actions.reserve(n * ad);
  rewards.reserve(n);
  dones.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Transition& t = transitions[i];
    if (t.state.size() != sd || t.next_state.size() != sd || t.action.size() != ad)
      throw DimensionMismatch(fmt::format("transition {} has inconsistent dimensions", i));
    for (double v : t.state) states.push_back(static_cast<float>(v));
    for (double v : t.action) actions.push_back(static_cast<float>(v));
    rewards.push_back(static_cast<float>(t.reward));
    for (double v : t.next_state) next_states.push_back(static_cast<float>(v));
    dones.push_back(t.done ? 1 : 0);
  }
  return from_arrays(sd, ad, std::move(states), std::move(actions), std::move(rewards),
                     std::move(next_states), std::move(dones));
}

StaticDataset StaticDataset::from_arrays(std::size_t state_dim, std::size_t action_dim,
                                         std::vector<float> states, std::vector<float> actions,
                                         std::vector<float> rewards,
                                         std::vector<float> next_states,
                                         std::vector<std::uint8_t> dones) {
  if (state_dim == 0 || action_dim == 0)
    throw ContractViolation("state_dim and action_dim must be positive");
  const std::size_t n = rewards.size();
  if (n == 0) throw ContractViolation("dataset must contain at least one transition");
  if (states.size() != n * state_dim || next_states.size() != n * state_dim ||
      actions.size() != n * action_dim || dones.size() != n)
    throw DimensionMismatch("dataset arrays disagree with declared dimensions");

  StaticDataset ds;
  ds.state_dim_ = state_dim;
  ds.action_dim_ = action_dim;
  ds.states_ = std::move(states);
  ds.actions_ = std::move(actions);
  ds.rewards_ = std::move(rewards);
  ds.next_states_ = std::move(next_states);
  ds.dones_ = std::move(dones);
  ds.validate_and_summarize();
  return ds;
}

void StaticDataset::validate_and_summarize() {
  const std::size_t n = size();
  for (std::size_t i = 0; i < n; ++i) {
    for (float v : state(i)) check_finite(v, "state", i);
    for (float v : next_state(i)) check_finite(v, "next_state", i);
    check_finite(rewards_[i], "reward", i);
    for (float v : action(i)) {
      check_finite(v, "action", i);
      if (std::abs(static_cast<double>(v)) > 1.0 + kActionSlack)
        throw ActionRangeError(fmt::format("action component {} in transition {} outside [-1, 1]", v, i));
    }
    if (dones_[i] > 1)
      throw MalformedPayloadError(fmt::format("done flag {} in transition {} is not 0 or 1", dones_[i], i));
  }

  std::tie(state_min_, state_max_) = compute_state_bounds(*this);

  state_mean_.assign(state_dim_, 0.0);
  state_std_.assign(state_dim_, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto s = state(i);
    for (std::size_t d = 0; d < state_dim_; ++d) state_mean_[d] += s[d];
  }
  for (double& m : state_mean_) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto s = state(i);
    for (std::size_t d = 0; d < state_dim_; ++d) {
      const double c = s[d] - state_mean_[d];
      state_std_[d] += c * c;
    }
  }
  for (double& v : state_std_) v = std::sqrt(v / static_cast<double>(n));
}

Transition StaticDataset::transition(std::size_t i) const {
  Transition t;
  t.state.assign(state(i).begin(), state(i).end());
  t.action.assign(action(i).begin(), action(i).end());
  t.reward = reward(i);
  t.next_state.assign(next_state(i).begin(), next_state(i).end());
  t.done = done(i);
  return t;
}

std::pair<std::vector<double>, std::vector<double>> compute_state_bounds(
    const StaticDataset& dataset) {
  const std::size_t sd = dataset.state_dim();
  std::vector<double> lo(sd, INFINITY), hi(sd, -INFINITY);
  auto scan = [&](const std::vector<float>& flat) {
    for (std::size_t k = 0; k < flat.size(); ++k) {
      const double v = flat[k];
      const std::size_t d = k % sd;
      lo[d] = std::min(lo[d], v);
      hi[d] = std::max(hi[d], v);
    }
  };
  scan(dataset.states());
  scan(dataset.next_states());
  return {std::move(lo), std::move(hi)};
}

std::uint64_t orld_file_size(std::size_t n, std::size_t state_dim, std::size_t action_dim) {
  return kHeaderSize + static_cast<std::uint64_t>(n) * (4 * (2 * state_dim + action_dim + 1) + 1);
}

std::vector<std::uint8_t> encode_orld(const StaticDataset& ds) {
  std::vector<std::uint8_t> out;
  out.reserve(orld_file_size(ds.size(), ds.state_dim(), ds.action_dim()));
  ByteWriter w(out);
  w.put_bytes(kMagic);
  w.put_uint<std::uint32_t>(kVersion);
  w.put_uint<std::uint32_t>(static_cast<std::uint32_t>(ds.state_dim()));
  w.put_uint<std::uint32_t>(static_cast<std::uint32_t>(ds.action_dim()));
  w.put_uint<std::uint64_t>(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (float v : ds.state(i)) w.put_f32(v);
    for (float v : ds.action(i)) w.put_f32(v);
    w.put_f32(ds.reward(i));
    for (float v : ds.next_state(i)) w.put_f32(v);
    w.put_uint<std::uint8_t>(ds.done(i) ? 1 : 0);
  }
  return out;
}

StaticDataset decode_orld(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin()))
    throw BadMagicError("not an ORLD file (bad magic)");
  ByteReader r(bytes.subspan(4));
  const auto version = r.get_uint<std::uint32_t>();
  if (version != kVersion)
    throw UnsupportedVersionError(fmt::format("unsupported ORLD version {}", version));
  const auto sd = r.get_uint<std::uint32_t>();
  const auto ad = r.get_uint<std::uint32_t>();
  const auto n = r.get_uint<std::uint64_t>();
  if (sd == 0 || ad == 0) throw MalformedPayloadError("ORLD header declares a zero dimension");
  if (n == 0) throw MalformedPayloadError("ORLD header declares zero transitions");

  const std::uint64_t record = 4ull * (2ull * sd + ad + 1) + 1;
  if (r.remaining() / record < n)
    throw TruncatedPayloadError(
        fmt::format("ORLD payload truncated: {} records declared, {} bytes present", n, r.remaining()));
  if (r.remaining() != n * record)
    throw MalformedPayloadError("ORLD file has trailing bytes after the last record");

  std::vector<float> states(n * sd), actions(n * ad), rewards(n), next_states(n * sd);
  std::vector<std::uint8_t> dones(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    for (std::uint32_t d = 0; d < sd; ++d) states[i * sd + d] = r.get_f32();
    for (std::uint32_t d = 0; d < ad; ++d) actions[i * ad + d] = r.get_f32();
    rewards[i] = r.get_f32();
    for (std::uint32_t d = 0; d < sd; ++d) next_states[i * sd + d] = r.get_f32();
    dones[i] = r.get_u8();
  }
  return StaticDataset::from_arrays(sd, ad, std::move(states), std::move(actions),
                                    std::move(rewards), std::move(next_states), std::move(dones));
}

StaticDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open dataset '{}'", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_orld(bytes);
}

void save_dataset(const StaticDataset& dataset, const std::filesystem::path& path) {
  const auto bytes = encode_orld(dataset);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot open '{}' for writing", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError(fmt::format("write to '{}' failed", path.string()));
}

std::vector<double> StateNormalizer::apply(std::span<const double> x) const {
  std::vector<double> out(dim());
  apply<double>(x, out);
  return out;
}

std::vector<double> StateNormalizer::invert(std::span<const double> z) const {
  std::vector<double> out(dim());
  for (std::size_t i = 0; i < dim(); ++i) out[i] = z[i] * (std[i] + eps) + mean[i];
  return out;
}

NormalizedStates normalize_states(const StaticDataset& dataset, double eps) {
  if (!(eps > 0.0)) throw ContractViolation("normalization eps must be positive");
  NormalizedStates out;
  out.normalizer = {dataset.state_mean(), dataset.state_std(), eps};
  const std::size_t sd = dataset.state_dim();
  out.states.resize(dataset.size() * sd);
  out.next_states.resize(dataset.size() * sd);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out.normalizer.apply<float>(dataset.state(i), {out.states.data() + i * sd, sd});
    out.normalizer.apply<float>(dataset.next_state(i), {out.next_states.data() + i * sd, sd});
  }
  return out;
}

}  // namespace hcrl
