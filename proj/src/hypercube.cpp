#include "hcrl/hypercube.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace hcrl {
namespace {

template <typename T>
CellKey bin_impl(const GridSpec& spec, std::span<const T> state) {
  if (state.size() != spec.dim())
    throw DimensionMismatch(
        fmt::format("state has {} components, grid expects {}", state.size(), spec.dim()));
  CellKey key;
  key.coords.resize(spec.dim());
  for (std::size_t i = 0; i < spec.dim(); ++i) {
    const double range = spec.maxs[i] - spec.mins[i];
    if (!(range > 0.0)) {
      key.coords[i] = 0;
      continue;
    }
    const double t = (static_cast<double>(state[i]) - spec.mins[i]) / range;
    const double c = std::floor(spec.delta * t);
    key.coords[i] = static_cast<std::int32_t>(std::clamp(c, 0.0, static_cast<double>(spec.delta)));
  }
  return key;
}

// Incumbent wins ties unless the challenger has the lower row index.
bool beats(double q, std::size_t row, const Champion& incumbent) {
  return q > incumbent.q || (q == incumbent.q && row < incumbent.row);
}

}  // namespace

void GridSpec::validate() const {
  if (delta < 1) throw ContractViolation("grid delta must be >= 1");
  if (mins.size() != maxs.size()) throw DimensionMismatch("grid mins/maxs length differ");
  for (std::size_t i = 0; i < mins.size(); ++i)
    if (!(mins[i] <= maxs[i])) throw ContractViolation("grid requires mins <= maxs");
}

GridSpec GridSpec::from_dataset(const StaticDataset& dataset, int delta) {
  GridSpec spec{delta, dataset.state_min(), dataset.state_max()};
  spec.validate();
  return spec;
}

std::size_t CellKeyHash::operator()(const CellKey& key) const noexcept {
  // FNV-1a over the coordinates.
  std::uint64_t h = 1469598103934665603ull;
  for (std::int32_t c : key.coords) {
    h ^= static_cast<std::uint32_t>(c);
    h *= 1099511628211ull;
  }
  return static_cast<std::size_t>(h);
}

CellKey bin_state(const GridSpec& spec, std::span<const double> state) {
  return bin_impl(spec, state);
}

CellKey bin_state(const GridSpec& spec, std::span<const float> state) {
  return bin_impl(spec, state);
}

CellCode encode_cell(const GridSpec& spec, const CellKey& key) {
  if (key.coords.size() != spec.dim()) throw DimensionMismatch("cell key length differs from grid");
  const CellCode radix = static_cast<CellCode>(spec.delta) + 1;
  constexpr CellCode kLimit = static_cast<CellCode>(1) << 127;
  CellCode place = 1;
  CellCode code = 0;
  for (std::size_t i = 0; i < key.coords.size(); ++i) {
    const auto c = key.coords[i];
    if (c < 0 || c > spec.delta)
      throw ContractViolation(fmt::format("cell coordinate {} outside [0, {}]", c, spec.delta));
    code += static_cast<CellCode>(c) * place;
    if (place > kLimit / radix)
      throw CellCodeOverflow(fmt::format(
          "(delta + 1)^state_dim = {}^{} exceeds 2^127; use the CellKey vector directly",
          spec.delta + 1, spec.dim()));
    place *= radix;
  }
  return code;
}

std::string to_string(CellCode code) {
  if (code == 0) return "0";
  std::string digits;
  while (code > 0) {
    digits.push_back(static_cast<char>('0' + static_cast<int>(code % 10)));
    code /= 10;
  }
  return {digits.rbegin(), digits.rend()};
}

std::optional<std::size_t> CellTable::find(const CellKey& key) const {
  auto it = index_.find(key);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t CellTable::singleton_count() const {
  return static_cast<std::size_t>(
      std::count_if(members_.begin(), members_.end(), [](const auto& m) { return m.size() == 1; }));
}

CellTable build_cell_table(const GridSpec& spec, const StaticDataset& dataset) {
  spec.validate();
  if (spec.dim() != dataset.state_dim()) throw DimensionMismatch("grid and dataset dimensions differ");
  CellTable table;
  table.row_cell_.resize(dataset.size());
  for (std::size_t row = 0; row < dataset.size(); ++row) {
    CellKey key = bin_state(spec, dataset.state(row));
    auto [it, inserted] = table.index_.try_emplace(key, table.keys_.size());
    if (inserted) {
      table.keys_.push_back(std::move(key));
      table.members_.emplace_back();
    }
    table.members_[it->second].push_back(row);
    table.row_cell_[row] = it->second;
  }
  return table;
}

PairQ pointwise_pair_q(const StaticDataset& dataset,
                       std::function<double(std::span<const float>, std::span<const float>)> q) {
  return [&dataset, q = std::move(q)](std::span<const std::size_t> state_rows,
                                      std::span<const std::size_t> action_rows,
                                      std::span<double> out) {
    for (std::size_t k = 0; k < state_rows.size(); ++k)
      out[k] = q(dataset.state(state_rows[k]), dataset.action(action_rows[k]));
  };
}

ChampionCache init_champion_cache(const CellTable& table, const PairQ& q_min) {
  std::vector<std::size_t> rows(table.total_rows());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  std::vector<double> q(rows.size());
  q_min(rows, rows, q);

  std::vector<Champion> champions(table.cell_count());
  for (std::size_t cell = 0; cell < table.cell_count(); ++cell) {
    auto members = table.members(cell);
    Champion best{members.front(), q[members.front()], 0};
    for (std::size_t j : members.subspan(1))
      if (q[j] > best.q) best = {j, q[j], 0};
    champions[cell] = best;
  }
  return ChampionCache(std::move(champions));
}

std::size_t refresh_champions(ChampionCache& cache, const CellTable& table, const PairQ& q_min,
                              std::span<const std::size_t> rows) {
  cache.tick();
  const std::int64_t now = cache.clock();

  std::vector<std::size_t> cells;
  cells.reserve(rows.size());
  for (std::size_t row : rows) cells.push_back(table.cell_of_row(row));
  std::vector<std::size_t> touched = cells;
  std::sort(touched.begin(), touched.end());
  touched.erase(std::unique(touched.begin(), touched.end()), touched.end());

  // One batched query: sampled rows first, then the touched incumbents.
  std::vector<std::size_t> query(rows.begin(), rows.end());
  for (std::size_t cell : touched) query.push_back(cache.at(cell).row);
  std::vector<double> q(query.size());
  q_min(query, query, q);

  for (std::size_t k = 0; k < touched.size(); ++k) {
    Champion& c = cache.at(touched[k]);
    c.q = q[rows.size() + k];
    c.refreshed_at = now;
  }

  std::size_t swaps = 0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    Champion& c = cache.at(cells[k]);
    if (rows[k] != c.row && beats(q[k], rows[k], c)) {
      c.row = rows[k];
      c.q = q[k];
      ++swaps;
    }
  }
  return swaps;
}

void regularization_sources(const ChampionCache& cache, const CellTable& table, const PairQ& q_min,
                            std::span<const std::size_t> rows, std::span<std::size_t> out) {
  const std::size_t n = rows.size();
  std::vector<std::size_t> state_rows;
  std::vector<std::size_t> action_rows;
  std::vector<std::size_t> pending;
  state_rows.reserve(2 * n);
  action_rows.reserve(2 * n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t champ = cache.at(table.cell_of_row(rows[k])).row;
    out[k] = rows[k];
    if (champ == rows[k]) continue;
    pending.push_back(k);
    state_rows.push_back(rows[k]);
    action_rows.push_back(champ);
  }
  if (pending.empty()) return;
  for (std::size_t k : pending) {
    state_rows.push_back(rows[k]);
    action_rows.push_back(rows[k]);
  }
  std::vector<double> q(state_rows.size());
  q_min(state_rows, action_rows, q);
  const std::size_t m = pending.size();
  for (std::size_t p = 0; p < m; ++p)
    if (q[p] > q[m + p]) out[pending[p]] = action_rows[p];
}

std::size_t regularization_source(const ChampionCache& cache, const CellTable& table,
                                  const PairQ& q_min, std::size_t row) {
  std::size_t out = row;
  regularization_sources(cache, table, q_min, {&row, 1}, {&out, 1});
  return out;
}

std::vector<double> regularization_target(const ChampionCache& cache, const CellTable& table,
                                          const StaticDataset& dataset, const PairQ& q_min,
                                          std::size_t row) {
  auto a = dataset.action(regularization_source(cache, table, q_min, row));
  return {a.begin(), a.end()};
}

void write_cell_dump(std::ostream& out, const GridSpec& spec, const CellTable& table,
                     const ChampionCache& cache) {
  out << "cell_code,occupancy,champion_row,champion_q\n";
  for (std::size_t cell = 0; cell < table.cell_count(); ++cell) {
    std::string code;
    try {
      code = to_string(encode_cell(spec, table.key(cell)));
    } catch (const CellCodeOverflow&) {
      code = fmt::format("{}", fmt::join(table.key(cell).coords, ":"));
    }
    const Champion& c = cache.at(cell);
    out << fmt::format("{},{},{},{:.17g}\n", code, table.members(cell).size(), c.row, c.q);
  }
}

}  // namespace hcrl
