#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hcrl/dataset.hpp"
#include "hcrl/mlp.hpp"

namespace hcrl {

struct NamedNetwork {
  std::string name;
  Mlp net;
  std::optional<AdamState> optimizer;
};

/// Versioned binary blob, little-endian:
///   "HCKP" | u32 version=1 | u32 state_dim | u32 action_dim
///   normalizer: state_dim x f64 mean, state_dim x f64 std, f64 eps
///   u32 n_networks, then per network:
///     u32 name_len | name bytes | u8 head | u32 n_sizes | n_sizes x u32
///     per layer: weight (row-major f64), bias (f64)
///     u8 has_optimizer [ i64 step | f64 lr, beta1, beta2, eps | m, v per layer ]
struct Checkpoint {
  std::uint32_t state_dim = 0;
  std::uint32_t action_dim = 0;
  StateNormalizer normalizer;
  std::vector<NamedNetwork> networks;

  const NamedNetwork* find(std::string_view name) const;
  /// Throws DataError when the network is absent.
  const Mlp& network(std::string_view name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hcrl
