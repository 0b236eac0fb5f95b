#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hcrl/dataset.hpp"

namespace hcrl {

/// Uniform partition of the dataset's state bounding box: each dimension is
/// cut into `delta` equal slabs, plus a boundary slab holding s == max.
struct GridSpec {
  int delta = 1;
  std::vector<double> mins;
  std::vector<double> maxs;

  std::size_t dim() const { return mins.size(); }
  void validate() const;

  static GridSpec from_dataset(const StaticDataset& dataset, int delta);
};

/// Integer cell coordinates, each in [0, delta].
struct CellKey {
  std::vector<std::int32_t> coords;

  friend bool operator==(const CellKey&, const CellKey&) = default;
  friend auto operator<=>(const CellKey&, const CellKey&) = default;
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& key) const noexcept;
};

/// coords[i] = floor(delta * (s[i] - mins[i]) / (maxs[i] - mins[i])), clamped to
/// [0, delta]. Degenerate dimensions (mins == maxs) map to 0.
CellKey bin_state(const GridSpec& spec, std::span<const double> state);
CellKey bin_state(const GridSpec& spec, std::span<const float> state);

__extension__ typedef unsigned __int128 CellCode;

/// Raised when (delta + 1)^state_dim does not fit the 128-bit code.
class CellCodeOverflow : public ContractViolation {
 public:
  using ContractViolation::ContractViolation;
};

/// Mixed-radix code sum_i coords[i] * (delta + 1)^i, injective over valid keys.
/// Throws CellCodeOverflow when state_dim * log2(delta + 1) > 127; key cell
/// maps by CellKey in that regime.
CellCode encode_cell(const GridSpec& spec, const CellKey& key);

std::string to_string(CellCode code);

/// Cell -> member rows. Cells are numbered densely in order of first
/// appearance; members of a cell are ascending row indices.
class CellTable {
 public:
  std::size_t cell_count() const { return keys_.size(); }
  std::size_t total_rows() const { return row_cell_.size(); }

  const CellKey& key(std::size_t cell) const { return keys_[cell]; }
  std::span<const std::size_t> members(std::size_t cell) const { return members_[cell]; }
  std::size_t cell_of_row(std::size_t row) const { return row_cell_[row]; }
  std::optional<std::size_t> find(const CellKey& key) const;

  /// Number of cells holding exactly one row.
  std::size_t singleton_count() const;

 private:
  friend CellTable build_cell_table(const GridSpec&, const StaticDataset&);

  std::vector<CellKey> keys_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<std::size_t> row_cell_;
  std::unordered_map<CellKey, std::size_t, CellKeyHash> index_;
};

/// Places every row i in bin_state(spec, state_i).
CellTable build_cell_table(const GridSpec& spec, const StaticDataset& dataset);

/// Pessimistic Q over dataset pairs: out[k] = q_min(state of state_rows[k],
/// action of action_rows[k]). Every Q query of the champion machinery has
/// this shape, which lets callers evaluate in batches.
using PairQ = std::function<void(std::span<const std::size_t> state_rows,
                                 std::span<const std::size_t> action_rows, std::span<double> out)>;

/// Adapts a pointwise q_min(state, action) on a dataset to PairQ.
PairQ pointwise_pair_q(const StaticDataset& dataset,
                       std::function<double(std::span<const float>, std::span<const float>)> q);

struct Champion {
  std::size_t row = 0;
  double q = 0.0;
  std::int64_t refreshed_at = 0;

  friend bool operator==(const Champion&, const Champion&) = default;
};

/// Per-cell best dataset row under q_min. Single writer.
class ChampionCache {
 public:
  ChampionCache() = default;
  explicit ChampionCache(std::vector<Champion> champions) : champions_(std::move(champions)) {}

  std::size_t size() const { return champions_.size(); }
  const Champion& at(std::size_t cell) const { return champions_[cell]; }
  Champion& at(std::size_t cell) { return champions_[cell]; }

  /// Refresh calls since this cell's champion was last touched.
  std::int64_t age(std::size_t cell) const { return clock_ - champions_[cell].refreshed_at; }
  std::int64_t clock() const { return clock_; }
  void tick() { ++clock_; }

  friend bool operator==(const ChampionCache&, const ChampionCache&) = default;

 private:
  std::vector<Champion> champions_;
  std::int64_t clock_ = 0;
};

/// champion = argmax over members j of q_min(state_j, action_j); ties go to
/// the lowest row index.
ChampionCache init_champion_cache(const CellTable& table, const PairQ& q_min);

/// Re-scores the incumbents of the cells touched by `rows` at their own
/// states, then lets each sampled row challenge its cell's incumbent (higher
/// q wins; equal q goes to the lower row index). Returns the number of
/// champion changes.
std::size_t refresh_champions(ChampionCache& cache, const CellTable& table, const PairQ& q_min,
                              std::span<const std::size_t> rows);

/// Row whose action is the regularization target for `row`: the cell
/// champion when q_min(state_row, champion action) is strictly greater than
/// q_min(state_row, own action), otherwise `row` itself.
std::size_t regularization_source(const ChampionCache& cache, const CellTable& table,
                                  const PairQ& q_min, std::size_t row);

/// Batched regularization_source: out[k] for rows[k].
void regularization_sources(const ChampionCache& cache, const CellTable& table, const PairQ& q_min,
                            std::span<const std::size_t> rows, std::span<std::size_t> out);

/// Action vector a_h for `row`.
std::vector<double> regularization_target(const ChampionCache& cache, const CellTable& table,
                                          const StaticDataset& dataset, const PairQ& q_min,
                                          std::size_t row);

/// CSV dump: cell_code,occupancy,champion_row,champion_q. Cells whose code
/// would overflow are written as colon-joined coordinates.
void write_cell_dump(std::ostream& out, const GridSpec& spec, const CellTable& table,
                     const ChampionCache& cache);

}  // namespace hcrl
