#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

#include "hcrl/hypercube.hpp"
#include "test_util.hpp"

namespace hcrl {
namespace {

using testing::line_dataset;
using testing::random_dataset;

GridSpec unit_grid(int delta, std::size_t dim) {
  return {delta, std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
}

CellKey key(std::vector<std::int32_t> c) { return {std::move(c)}; }

/// Q given by a table indexed by (state row, action row).
PairQ table_q(const std::vector<std::vector<double>>& q) {
  return [&q](std::span<const std::size_t> s, std::span<const std::size_t> a, std::span<double> out) {
    for (std::size_t k = 0; k < s.size(); ++k) out[k] = q[s[k]][a[k]];
  };
}

/// Q that only depends on the action row, so the ranking is the same at every state.
PairQ action_q(const std::vector<double>& q) {
  return [&q](std::span<const std::size_t>, std::span<const std::size_t> a, std::span<double> out) {
    for (std::size_t k = 0; k < a.size(); ++k) out[k] = q[a[k]];
  };
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  return rows;
}

TEST(BinState, Examples) {
  const auto spec = unit_grid(2, 2);
  EXPECT_EQ(bin_state(spec, std::vector<double>{0.6, 0.2}), key({1, 0}));
  EXPECT_EQ(bin_state(spec, std::vector<double>{1.0, 1.0}), key({2, 2}));
  EXPECT_EQ(bin_state(spec, std::vector<double>{-0.5, 0.3}), key({0, 0}));
  EXPECT_EQ(bin_state(spec, std::vector<double>{7.0, 0.5}), key({2, 1}));
}

TEST(BinState, DegenerateDimensionMapsToZero) {
  const GridSpec spec{3, {0.0, 2.0}, {1.0, 2.0}};
  EXPECT_EQ(bin_state(spec, std::vector<double>{0.5, 2.0}), key({1, 0}));
}

TEST(BinState, FloatAndDoubleAgree) {
  const GridSpec spec{7, {-1.0, -1.0}, {1.0, 1.0}};
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const std::vector<float> f{static_cast<float>(rng.uniform(-1, 1)), static_cast<float>(rng.uniform(-1, 1))};
    const std::vector<double> d{f[0], f[1]};
    EXPECT_EQ(bin_state(spec, f), bin_state(spec, d));
  }
}

TEST(BinState, WrongLengthIsDimensionMismatch) {
  EXPECT_THROW(bin_state(unit_grid(2, 2), std::vector<double>{0.1}), DimensionMismatch);
}

TEST(EncodeCell, Examples) {
  EXPECT_EQ(encode_cell(unit_grid(2, 2), key({1, 0})), CellCode{1});
  EXPECT_EQ(encode_cell(unit_grid(2, 2), key({1, 2})), CellCode{7});
  EXPECT_EQ(encode_cell(unit_grid(2, 3), key({2, 2, 2})), CellCode{26});
}

TEST(EncodeCell, OverflowBoundary) {
  // 2^127 distinct codes still fit; 2^128 do not.
  const auto fits = unit_grid(1, 127);
  CellKey top{std::vector<std::int32_t>(127, 1)};
  EXPECT_EQ(encode_cell(fits, top), (CellCode{1} << 127) - 1);
  EXPECT_THROW(encode_cell(unit_grid(1, 128), CellKey{std::vector<std::int32_t>(128, 0)}), CellCodeOverflow);
  EXPECT_THROW(encode_cell(unit_grid(20, 30), CellKey{std::vector<std::int32_t>(30, 0)}), CellCodeOverflow);
}

TEST(EncodeCell, RejectsOutOfRangeCoordinates) {
  EXPECT_THROW(encode_cell(unit_grid(2, 2), key({3, 0})), ContractViolation);
  EXPECT_THROW(encode_cell(unit_grid(2, 2), key({0})), DimensionMismatch);
}

TEST(EncodeCell, DecimalRendering) {
  EXPECT_EQ(to_string(CellCode{0}), "0");
  EXPECT_EQ(to_string(CellCode{26}), "26");
  EXPECT_EQ(to_string(~CellCode{0}), "340282366920938463463374607431768211455");
}

TEST(CellTable, MatchesBruteForcePartition) {
  const auto ds = random_dataset(300, 3, 2, 17);
  for (int delta : {1, 3, 10}) {
    const auto spec = GridSpec::from_dataset(ds, delta);
    const auto table = build_cell_table(spec, ds);
    EXPECT_EQ(table.total_rows(), ds.size());
    std::map<std::vector<std::int32_t>, std::set<std::size_t>> groups;
    for (std::size_t i = 0; i < ds.size(); ++i) groups[bin_state(spec, ds.state(i)).coords].insert(i);
    ASSERT_EQ(table.cell_count(), groups.size());
    for (std::size_t c = 0; c < table.cell_count(); ++c) {
      const auto members = table.members(c);
      EXPECT_TRUE(std::is_sorted(members.begin(), members.end()));
      EXPECT_EQ(std::set<std::size_t>(members.begin(), members.end()), groups.at(table.key(c).coords));
      for (std::size_t r : members) EXPECT_EQ(table.cell_of_row(r), c);
      EXPECT_EQ(table.find(table.key(c)), c);
    }
  }
}

TEST(CellTable, DeltaOneOnLineHasAtMostTwoCells) {
  const auto ds = line_dataset({0.0, 0.2, 0.9, 1.0, 0.5});
  const auto table = build_cell_table(GridSpec::from_dataset(ds, 1), ds);
  ASSERT_EQ(table.cell_count(), 2u);
  EXPECT_EQ(table.key(0), key({0}));
  EXPECT_EQ(table.key(1), key({1}));
  EXPECT_EQ(table.members(1).size(), 1u);
  EXPECT_EQ(table.members(1)[0], 3u);
}

TEST(CellTable, LargeDeltaGivesSingletons) {
  const auto ds = random_dataset(200, 2, 2, 1);
  const auto table = build_cell_table(GridSpec::from_dataset(ds, 1'000'000), ds);
  EXPECT_EQ(table.cell_count(), ds.size());
  EXPECT_EQ(table.singleton_count(), ds.size());
}

TEST(CellTable, DoublingDeltaRefinesPartition) {
  const auto ds = random_dataset(500, 2, 2, 6);
  for (int delta : {1, 2, 5, 10}) {
    const auto coarse = build_cell_table(GridSpec::from_dataset(ds, delta), ds);
    const auto fine = build_cell_table(GridSpec::from_dataset(ds, 2 * delta), ds);
    EXPECT_GE(fine.cell_count(), coarse.cell_count());
    for (std::size_t c = 0; c < fine.cell_count(); ++c) {
      const auto m = fine.members(c);
      for (std::size_t r : m) EXPECT_EQ(coarse.cell_of_row(r), coarse.cell_of_row(m[0]));
    }
  }
}

TEST(Champion, ZeroQPicksLowestRow) {
  const auto ds = random_dataset(100, 2, 2, 3);
  const auto table = build_cell_table(GridSpec::from_dataset(ds, 2), ds);
  const std::vector<double> zero(ds.size(), 0.0);
  const auto cache = init_champion_cache(table, action_q(zero));
  for (std::size_t c = 0; c < table.cell_count(); ++c) EXPECT_EQ(cache.at(c).row, table.members(c)[0]);
}

TEST(Champion, SingletonIsItsOwnChampion) {
  const auto ds = random_dataset(50, 2, 2, 2);
  const auto table = build_cell_table(GridSpec::from_dataset(ds, 100000), ds);
  std::vector<double> q(ds.size());
  Rng rng(1);
  for (auto& v : q) v = rng.normal();
  const auto cache = init_champion_cache(table, action_q(q));
  for (std::size_t c = 0; c < table.cell_count(); ++c) EXPECT_EQ(cache.at(c).row, table.members(c)[0]);
}

TEST(Champion, InitMatchesExhaustiveArgmax) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const auto ds = random_dataset(20, 2, 2, 100 + trial);
    const auto table = build_cell_table(GridSpec::from_dataset(ds, 2), ds);
    std::vector<double> q(ds.size());
    for (auto& v : q) v = std::round(4 * rng.uniform());  // frequent ties
    const auto cache = init_champion_cache(table, action_q(q));
    for (std::size_t c = 0; c < table.cell_count(); ++c) {
      std::size_t best = table.members(c)[0];
      for (std::size_t j : table.members(c))
        if (q[j] > q[best]) best = j;
      EXPECT_EQ(cache.at(c).row, best);
      EXPECT_EQ(cache.at(c).q, q[best]);
    }
  }
}

TEST(Champion, RefreshNoSwapRescoresIncumbent) {
  // Row 3 sits on the upper boundary and gets a cell of its own.
  const auto ds = line_dataset({0.1, 0.2, 0.3, 1.0});
  const auto table = build_cell_table(GridSpec::from_dataset(ds, 1), ds);
  std::vector<double> q{5.0, 1.0, 2.0, 0.0};
  auto cache = init_champion_cache(table, action_q(q));
  ASSERT_EQ(cache.at(0).row, 0u);
  q[0] = 4.0;
  const std::vector<std::size_t> sampled{1};
  EXPECT_EQ(refresh_champions(cache, table, action_q(q), sampled), 0u);
  EXPECT_EQ(cache.at(0).row, 0u);
  EXPECT_EQ(cache.at(0).q, 4.0);
  EXPECT_EQ(cache.at(0).refreshed_at, 1);
  EXPECT_EQ(cache.age(0), 0);
}

TEST(Champion, RefreshSwapsOnStrictImprovement) {
  // Row 3 sits on the upper boundary and gets a cell of its own.
  const auto ds = line_dataset({0.1, 0.2, 0.3, 1.0});
  const auto table = build_cell_table(GridSpec::from_dataset(ds, 1), ds);
  std::vector<double> q{5.0, 1.0, 2.0, 0.0};
  auto cache = init_champion_cache(table, action_q(q));
  q[2] = 6.0;
  const std::vector<std::size_t> sampled{2};
  EXPECT_EQ(refresh_champions(cache, table, action_q(q), sampled), 1u);
  EXPECT_EQ(cache.at(0).row, 2u);
  EXPECT_EQ(cache.at(0).q, 6.0);

  // An equal-q challenger with a higher row index leaves the incumbent in place.
  q[1] = 6.0;
  const std::vector<std::size_t> again{1};
  EXPECT_EQ(refresh_champions(cache, table, action_q(q), again), 1u);
  EXPECT_EQ(cache.at(0).row, 1u);
  q[2] = 6.0;
  const std::vector<std::size_t> third{2};
  EXPECT_EQ(refresh_champions(cache, table, action_q(q), third), 0u);
  EXPECT_EQ(cache.at(0).row, 1u);
}

TEST(Champion, FrozenQRefreshOverAllRowsEqualsInit) {
  const auto ds = random_dataset(400, 2, 2, 33);
  const auto table = build_cell_table(GridSpec::from_dataset(ds, 4), ds);
  std::vector<double> q(ds.size());
  Rng rng(5);
  for (auto& v : q) v = std::round(8 * rng.uniform());
  const auto ref = init_champion_cache(table, action_q(q));

  // Start from the all-zero cache and stream every row through refresh in random order.
  auto cache = init_champion_cache(table, action_q(std::vector<double>(ds.size(), -1e9)));
  auto rows = all_rows(ds.size());
  for (std::size_t i = rows.size() - 1; i > 0; --i) std::swap(rows[i], rows[rng.index(i + 1)]);
  for (std::size_t start = 0; start < rows.size(); start += 64) {
    const std::size_t end = std::min(rows.size(), start + 64);
    refresh_champions(cache, table, action_q(q), std::span(rows).subspan(start, end - start));
  }
  for (std::size_t c = 0; c < table.cell_count(); ++c) {
    EXPECT_EQ(cache.at(c).row, ref.at(c).row);
    EXPECT_EQ(cache.at(c).q, ref.at(c).q);
  }
}

TEST(Champion, ChampionDominatesSampledMembers) {
  const auto ds = random_dataset(300, 2, 2, 8);
  const auto table = build_cell_table(GridSpec::from_dataset(ds, 3), ds);
  std::vector<double> q(ds.size());
  Rng rng(9);
  for (auto& v : q) v = rng.normal();
  auto cache = init_champion_cache(table, action_q(q));
  for (int round = 0; round < 20; ++round) {
    for (auto& v : q) v += 0.3 * rng.normal();
    std::vector<std::size_t> batch(32);
    for (auto& r : batch) r = rng.index(ds.size());
    refresh_champions(cache, table, action_q(q), batch);
    for (std::size_t r : batch) EXPECT_GE(cache.at(table.cell_of_row(r)).q, q[r]);
  }
}

TEST(RegularizationTarget, SingletonRowKeepsOwnAction) {
  const auto ds = random_dataset(60, 2, 2, 4);
  const auto table = build_cell_table(GridSpec::from_dataset(ds, 100000), ds);
  std::vector<double> q(ds.size());
  Rng rng(3);
  for (auto& v : q) v = rng.normal();
  const auto cache = init_champion_cache(table, action_q(q));
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const auto a = regularization_target(cache, table, ds, action_q(q), r);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), ds.action(r).begin()));
  }
}

TEST(RegularizationTarget, EqualQKeepsOwnAction) {
  std::vector<Transition> rows{{{0.1}, {0.5}, 0, {0.1}, false}, {{0.2}, {-0.5}, 0, {0.2}, false}};
  const auto ds = StaticDataset::from_transitions(rows);
  const auto table = build_cell_table(GridSpec::from_dataset(ds, 1), ds);
  const std::vector<double> q{1.0, 1.0};
  const auto cache = init_champion_cache(table, action_q(q));
  EXPECT_EQ(regularization_source(cache, table, action_q(q), 1), 1u);
  EXPECT_EQ(regularization_target(cache, table, ds, action_q(q), 1), std::vector<double>{-0.5});
}

StaticDataset three_row_cell() {
  std::vector<Transition> rows{{{0.1}, {0.9}, 0, {0.1}, false},
                               {{0.2}, {0.0}, 0, {0.2}, false},
                               {{0.3}, {-0.9}, 0, {0.3}, false}};
  return StaticDataset::from_transitions(rows);
}

TEST(RegularizationTarget, ThreeRowCellMatchesExhaustiveArgmax) {
  const auto ds = three_row_cell();
  const auto table = build_cell_table(GridSpec{1, {0.0}, {1.0}}, ds);
  ASSERT_EQ(table.cell_count(), 1u);
  // Q[state row][action row] = gain[action] * (1 + state row / 10).
  const std::vector<double> gain{0.2, 1.0, 0.5};
  std::vector<std::vector<double>> q(3, std::vector<double>(3));
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t a = 0; a < 3; ++a) q[s][a] = gain[a] * (1.0 + 0.1 * static_cast<double>(s));
  const auto cache = init_champion_cache(table, table_q(q));
  for (std::size_t r = 0; r < 3; ++r) {
    std::size_t best = r;
    for (std::size_t j = 0; j < 3; ++j)
      if (q[r][j] > q[r][best]) best = j;
    const auto a_h = regularization_target(cache, table, ds, table_q(q), r);
    EXPECT_EQ(a_h[0], static_cast<double>(ds.action(best)[0])) << "row " << r;
  }
}

TEST(RegularizationTarget, ComparesChampionAgainstOwnActionAtRowState) {
  const auto ds = three_row_cell();
  const auto table = build_cell_table(GridSpec{1, {0.0}, {1.0}}, ds);
  const std::vector<std::vector<double>> q{{0.0, 1.0, 3.0}, {0.5, 0.7, 2.0}, {-1.0, 0.0, 0.2}};
  const auto cache = init_champion_cache(table, table_q(q));
  EXPECT_EQ(cache.at(0).row, 1u);  // own-state scores 0.0, 0.7, 0.2
  EXPECT_EQ(regularization_source(cache, table, table_q(q), 0), 1u);
  EXPECT_EQ(regularization_source(cache, table, table_q(q), 1), 1u);
  EXPECT_EQ(regularization_source(cache, table, table_q(q), 2), 2u);
}

TEST(RegularizationTarget, StateIndependentQMatchesExhaustiveArgmax) {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const auto ds = random_dataset(30, 2, 2, 500 + trial);
    const auto table = build_cell_table(GridSpec::from_dataset(ds, 2), ds);
    std::vector<double> q(ds.size());
    for (auto& v : q) v = std::round(3 * rng.uniform());
    const auto cache = init_champion_cache(table, action_q(q));
    for (std::size_t r = 0; r < ds.size(); ++r) {
      std::size_t best = r;
      for (std::size_t j : table.members(table.cell_of_row(r)))
        if (q[j] > q[best]) best = j;
      const auto got = regularization_source(cache, table, action_q(q), r);
      EXPECT_EQ(q[got], q[best]);
      if (q[best] == q[r]) {
        EXPECT_EQ(got, r);
      }
    }
  }
}

TEST(RegularizationTarget, BatchedMatchesSingle) {
  const auto ds = random_dataset(200, 2, 2, 71);
  const auto table = build_cell_table(GridSpec::from_dataset(ds, 3), ds);
  std::vector<std::vector<double>> q(ds.size(), std::vector<double>(ds.size()));
  Rng rng(2);
  for (auto& row : q)
    for (auto& v : row) v = rng.normal();
  const auto cache = init_champion_cache(table, table_q(q));
  const auto rows = all_rows(ds.size());
  std::vector<std::size_t> out(rows.size());
  regularization_sources(cache, table, table_q(q), rows, out);
  for (std::size_t r : rows) EXPECT_EQ(out[r], regularization_source(cache, table, table_q(q), r));
}

TEST(CellDump, HeaderAndOneLinePerCell) {
  const auto ds = line_dataset({0.1, 0.2, 0.9, 1.0});
  const auto spec = GridSpec::from_dataset(ds, 2);
  const auto table = build_cell_table(spec, ds);
  const std::vector<double> q{1.0, 2.0, 0.5, 0.25};
  const auto cache = init_champion_cache(table, action_q(q));
  std::ostringstream out;
  write_cell_dump(out, spec, table, cache);
  EXPECT_EQ(out.str(),
            "cell_code,occupancy,champion_row,champion_q\n"
            "0,2,1,2\n"
            "1,1,2,0.5\n"
            "2,1,3,0.25\n");
}

TEST(CellDump, OverflowingCodesUseCoordinates) {
  std::vector<Transition> rows{{std::vector<double>(40, 0.0), {0.0}, 0, std::vector<double>(40, 1.0), false}};
  const auto ds = StaticDataset::from_transitions(rows);
  const auto spec = GridSpec::from_dataset(ds, 20);
  const auto table = build_cell_table(spec, ds);
  const std::vector<double> q{3.0};
  const auto cache = init_champion_cache(table, action_q(q));
  std::ostringstream out;
  write_cell_dump(out, spec, table, cache);
  std::string expected_code = "0";
  for (int i = 1; i < 40; ++i) expected_code += ":0";
  EXPECT_EQ(out.str(), "cell_code,occupancy,champion_row,champion_q\n" + expected_code + ",1,0,3\n");
}

}  // namespace
}  // namespace hcrl
