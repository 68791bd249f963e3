#pragma once

#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace progdet {

/// Rows are predictions, columns are targets. +infinity marks a forbidden pair.
using CostMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kForbidden = std::numeric_limits<double>::infinity();

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col), ascending row
  std::vector<std::size_t> unmatched_rows;
  std::vector<std::size_t> unmatched_cols;
  double total_cost = 0.0;  // summed in ascending row order
};

/// Minimum-cost matching of maximum cardinality among the finite entries.
/// Rectangular input is padded to square; forbidden pairs carry a penalty
/// larger than any difference of realisable finite sums, so cardinality is
/// maximised before cost.
MatchResult hungarian(const CostMatrix& cost);

}  // namespace progdet
