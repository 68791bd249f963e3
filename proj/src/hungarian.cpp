#include "progdet/hungarian.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace progdet {

namespace {

// Shortest augmenting path with potentials on a square matrix, 1-based.
// Returns assignment[row] = col.
std::vector<Eigen::Index> solve_square(const CostMatrix& a) {
  const Eigen::Index n = a.rows();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<Eigen::Index> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (Eigen::Index i = 1; i <= n; ++i) {
    p[0] = i;
    Eigen::Index j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const Eigen::Index i0 = p[j0];
      double delta = inf;
      Eigen::Index j1 = 0;
      for (Eigen::Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Eigen::Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const Eigen::Index j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Eigen::Index> assignment(n, -1);
  for (Eigen::Index j = 1; j <= n; ++j)
    if (p[j] != 0) assignment[p[j] - 1] = j - 1;
  return assignment;
}

}  // namespace

MatchResult hungarian(const CostMatrix& cost) {
  const Eigen::Index rows = cost.rows(), cols = cost.cols();
  MatchResult result;

  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  bool any_finite = false;
  for (Eigen::Index i = 0; i < cost.size(); ++i) {
    const double c = cost.data()[i];
    if (std::isnan(c) || c == -std::numeric_limits<double>::infinity())
      throw std::invalid_argument("hungarian: cost entries must be finite or +inf");
    if (std::isfinite(c)) {
      lo = std::min(lo, c);
      hi = std::max(hi, c);
      any_finite = true;
    }
  }

  std::vector<char> row_used(static_cast<std::size_t>(rows), 0);
  std::vector<char> col_used(static_cast<std::size_t>(cols), 0);
  if (any_finite) {
    const Eigen::Index n = std::max(rows, cols);
    // Shift finite costs to [0, range]. Swapping one forbidden pair for a
    // finite one changes the finite sum by at most n * range, so a penalty
    // above that enforces maximum cardinality first.
    const double range = hi - lo;
    const double forbidden = static_cast<double>(n) * range + 1.0 + range;
    const double padding = 0.0;
    CostMatrix square = CostMatrix::Constant(n, n, padding);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) {
        const double c = cost(i, j);
        square(i, j) = std::isfinite(c) ? c - lo : forbidden;
      }
    const auto assignment = solve_square(square);
    for (Eigen::Index i = 0; i < rows; ++i) {
      const Eigen::Index j = assignment[static_cast<std::size_t>(i)];
      if (j < 0 || j >= cols || !std::isfinite(cost(i, j))) continue;
      result.pairs.emplace_back(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      result.total_cost += cost(i, j);
      row_used[static_cast<std::size_t>(i)] = 1;
      col_used[static_cast<std::size_t>(j)] = 1;
    }
  }
  for (Eigen::Index i = 0; i < rows; ++i)
    if (!row_used[static_cast<std::size_t>(i)])
      result.unmatched_rows.push_back(static_cast<std::size_t>(i));
  for (Eigen::Index j = 0; j < cols; ++j)
    if (!col_used[static_cast<std::size_t>(j)])
      result.unmatched_cols.push_back(static_cast<std::size_t>(j));
  return result;
}

}  // namespace progdet
