#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "progdet/hungarian.hpp"

using namespace progdet;

namespace {

CostMatrix random_costs(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double forbidden_p) {
  std::uniform_real_distribution<double> u(-3.0, 10.0), coin(0.0, 1.0);
  CostMatrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = coin(rng) < forbidden_p ? kForbidden : u(rng);
  return m;
}

void expect_consistent(const CostMatrix& c, const MatchResult& m) {
  std::vector<char> row_seen(static_cast<std::size_t>(c.rows()), 0),
      col_seen(static_cast<std::size_t>(c.cols()), 0);
  double total = 0.0;
  std::size_t prev_row = 0;
  for (std::size_t k = 0; k < m.pairs.size(); ++k) {
    const auto [r, col] = m.pairs[k];
    if (k > 0) {
      EXPECT_GT(r, prev_row);
    }
    prev_row = r;
    EXPECT_TRUE(std::isfinite(c(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col))));
    EXPECT_FALSE(col_seen[col]);
    row_seen[r] = col_seen[col] = 1;
    total += c(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col));
  }
  EXPECT_EQ(total, m.total_cost);
  EXPECT_EQ(m.pairs.size() + m.unmatched_rows.size(), static_cast<std::size_t>(c.rows()));
  EXPECT_EQ(m.pairs.size() + m.unmatched_cols.size(), static_cast<std::size_t>(c.cols()));
  for (auto r : m.unmatched_rows) EXPECT_FALSE(row_seen[r]);
  for (auto col : m.unmatched_cols) EXPECT_FALSE(col_seen[col]);
}

}  // namespace

TEST(Hungarian, SingleEntry) {
  CostMatrix c(1, 1);
  c << 4.5;
  const auto m = hungarian(c);
  ASSERT_EQ(m.pairs.size(), 1u);
  EXPECT_EQ(m.pairs[0], (std::pair<std::size_t, std::size_t>{0, 0}));
  EXPECT_EQ(m.total_cost, 4.5);
}

TEST(Hungarian, TwoByTwo) {
  CostMatrix c(2, 2);
  c << 1, 2, 3, 1;
  const auto m = hungarian(c);
  ASSERT_EQ(m.pairs.size(), 2u);
  EXPECT_EQ(m.pairs[0], (std::pair<std::size_t, std::size_t>{0, 0}));
  EXPECT_EQ(m.pairs[1], (std::pair<std::size_t, std::size_t>{1, 1}));
  EXPECT_EQ(m.total_cost, 2.0);
}

TEST(Hungarian, AllForbidden) {
  CostMatrix c = CostMatrix::Constant(3, 2, kForbidden);
  const auto m = hungarian(c);
  EXPECT_TRUE(m.pairs.empty());
  EXPECT_EQ(m.unmatched_rows.size(), 3u);
  EXPECT_EQ(m.unmatched_cols.size(), 2u);
}

TEST(Hungarian, EmptyDimensions) {
  EXPECT_TRUE(hungarian(CostMatrix(0, 4)).pairs.empty());
  EXPECT_EQ(hungarian(CostMatrix(3, 0)).unmatched_rows.size(), 3u);
}

TEST(Hungarian, PrefersMoreMatchesOverCheaperFewer) {
  // Row 0 alone could take column 0 for 0; matching both rows needs the 100s.
  CostMatrix c(2, 2);
  c << 0, 100, 100, kForbidden;
  const auto m = hungarian(c);
  EXPECT_EQ(m.pairs.size(), 2u);
  EXPECT_EQ(m.total_cost, 200.0);
}

TEST(Hungarian, RejectsNanAndNegativeInfinity) {
  CostMatrix c(1, 2);
  c << 1, std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(hungarian(c), std::invalid_argument);
  c << 1, -std::numeric_limits<double>::infinity();
  EXPECT_THROW(hungarian(c), std::invalid_argument);
}

TEST(Hungarian, MatchesBruteForceOnRandomMatrices) {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> dim(1, 6);
  for (int t = 0; t < 300; ++t) {
    const CostMatrix c = random_costs(rng, dim(rng), dim(rng), t % 3 == 0 ? 0.4 : 0.1);
    const auto m = hungarian(c);
    const auto brute = oracle::brute_force_assignment(c);
    expect_consistent(c, m);
    EXPECT_EQ(m.pairs.size(), brute.cardinality);
    EXPECT_NEAR(m.total_cost, brute.cost, 1e-9);
  }
}

TEST(Hungarian, InvariantToConstantShiftOnSquareFiniteMatrices) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 50; ++t) {
    const CostMatrix c = random_costs(rng, 5, 5, 0.0);
    const auto a = hungarian(c);
    const auto b = hungarian((c.array() + 17.0).matrix());
    EXPECT_NEAR(b.total_cost - 5 * 17.0, a.total_cost, 1e-9);
  }
}

TEST(Hungarian, Deterministic) {
  std::mt19937_64 rng(8);
  const CostMatrix c = random_costs(rng, 6, 4, 0.2);
  const auto a = hungarian(c), b = hungarian(c);
  EXPECT_EQ(a.pairs, b.pairs);
  EXPECT_EQ(a.total_cost, b.total_cost);
}
