#include "progdet/assignment.hpp"

#include <algorithm>
#include <cmath>

namespace progdet {

double focal_class_cost(double p, double alpha, double gamma) {
  constexpr double eps = 1e-8;
  const double neg = (1.0 - alpha) * std::pow(p, gamma) * -std::log(1.0 - p + eps);
  const double pos = alpha * std::pow(1.0 - p, gamma) * -std::log(p + eps);
  return pos - neg;
}

double matching_cost(const Prediction& pred, const BoundingBox& target, const LossWeights& weights,
                     const ImageSize& image, double alpha, double gamma) {
  if (!center_inside(pred.box, target)) return kForbidden;
  const auto& a = pred.box;
  const auto& b = target;
  const double l1 = std::abs(a.x1 - b.x1) / image.width + std::abs(a.y1 - b.y1) / image.height +
                    std::abs(a.x2 - b.x2) / image.width + std::abs(a.y2 - b.y2) / image.height;
  return weights.cls * focal_class_cost(pred.score, alpha, gamma) + weights.l1 * l1 +
         weights.giou * (1.0 - giou(a, b));
}

CostMatrix cost_matrix(std::span<const Prediction> preds, std::span<const BoundingBox> targets,
                       const LossWeights& weights, const ImageSize& image) {
  CostMatrix c(static_cast<Eigen::Index>(preds.size()), static_cast<Eigen::Index>(targets.size()));
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < targets.size(); ++j)
      c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          matching_cost(preds[i], targets[j], weights, image);
  return c;
}

Assignment assign_progressive(std::span<const Prediction> accepted,
                              std::span<const Prediction> noisy, const GroundTruth& truth,
                              const LossWeights& weights, const ImageSize& image) {
  Assignment out;
  out.accepted = hungarian(cost_matrix(accepted, truth.boxes, weights, image));

  // Remaining targets, remembered by their index into truth.boxes.
  const auto& remaining = out.accepted.unmatched_cols;
  std::vector<BoundingBox> rest;
  rest.reserve(remaining.size());
  for (std::size_t j : remaining) rest.push_back(truth.boxes[j]);

  MatchResult local = hungarian(cost_matrix(noisy, rest, weights, image));
  for (auto& [row, col] : local.pairs) col = remaining[col];
  for (auto& col : local.unmatched_cols) col = remaining[col];
  out.noisy = std::move(local);
  return out;
}

Assignment assign_merged(std::span<const Prediction> accepted, std::span<const Prediction> noisy,
                         const GroundTruth& truth, const LossWeights& weights,
                         const ImageSize& image) {
  std::vector<Prediction> merged(accepted.begin(), accepted.end());
  merged.insert(merged.end(), noisy.begin(), noisy.end());
  const CostMatrix cost = cost_matrix(merged, truth.boxes, weights, image);
  const MatchResult all = hungarian(cost);

  Assignment out;
  std::vector<char> col_in_accepted(truth.boxes.size(), 0), col_in_noisy(truth.boxes.size(), 0);
  for (const auto& [row, col] : all.pairs) {
    if (row < accepted.size()) {
      out.accepted.pairs.emplace_back(row, col);
      col_in_accepted[col] = 1;
    } else {
      out.noisy.pairs.emplace_back(row - accepted.size(), col);
      col_in_noisy[col] = 1;
    }
  }
  for (const auto& [row, col] : out.accepted.pairs)
    out.accepted.total_cost += cost(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col));
  for (const auto& [row, col] : out.noisy.pairs)
    out.noisy.total_cost += cost(static_cast<Eigen::Index>(row + accepted.size()),
                                 static_cast<Eigen::Index>(col));

  auto fill_unmatched = [&](MatchResult& m, std::size_t rows, const std::vector<char>& taken) {
    std::vector<char> used(rows, 0);
    for (const auto& [row, col] : m.pairs) used[row] = 1;
    for (std::size_t i = 0; i < rows; ++i)
      if (!used[i]) m.unmatched_rows.push_back(i);
    for (std::size_t j = 0; j < truth.boxes.size(); ++j)
      if (!taken[j]) m.unmatched_cols.push_back(j);
  };
  fill_unmatched(out.accepted, accepted.size(), col_in_accepted);
  fill_unmatched(out.noisy, noisy.size(), col_in_noisy);
  return out;
}

Assignment assign(AssignmentStrategy strategy, std::span<const Prediction> accepted,
                  std::span<const Prediction> noisy, const GroundTruth& truth,
                  const LossWeights& weights, const ImageSize& image) {
  return strategy == AssignmentStrategy::Progressive
             ? assign_progressive(accepted, noisy, truth, weights, image)
             : assign_merged(accepted, noisy, truth, weights, image);
}

std::vector<std::size_t> filter_training_samples(std::span<const Prediction> noisy,
                                                 std::span<const double> scores,
                                                 const MatchResult& noisy_matches,
                                                 std::span<const BoundingBox> ignore_regions,
                                                 const StageConfig& config) {
  std::vector<char> positive(noisy.size(), 0);
  for (const auto& [row, col] : noisy_matches.pairs) positive[row] = 1;
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    if (positive[i]) {
      kept.push_back(i);
      continue;
    }
    if (scores[i] < config.negative_filter) continue;
    const bool ignored = std::any_of(ignore_regions.begin(), ignore_regions.end(),
                                     [&](const BoundingBox& r) {
                                       return ioa(noisy[i].box, r) > config.ignore_ioa;
                                     });
    if (!ignored) kept.push_back(i);
  }
  return kept;
}

Var set_loss(Var noisy_logits, const MatchResult& noisy_matches,
             std::span<const std::size_t> kept, const StageConfig& config) {
  Tape& tape = *noisy_logits.tape();
  std::vector<char> positive(static_cast<std::size_t>(noisy_logits.rows()), 0);
  for (const auto& [row, col] : noisy_matches.pairs) positive[row] = 1;

  std::vector<Eigen::Index> rows(kept.begin(), kept.end());
  Tensor2 targets(static_cast<Eigen::Index>(rows.size()), 1);
  double positives = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double t = positive[static_cast<std::size_t>(rows[i])] ? 1.0 : 0.0;
    targets(static_cast<Eigen::Index>(i), 0) = t;
    positives += t;
  }
  if (rows.empty()) return tape.constant(Tensor2::Zero(1, 1));
  Var loss = focal_bce(gather_rows(noisy_logits, rows), targets, config.focal_alpha,
                       config.focal_gamma);
  return scale(loss, config.weights.cls / std::max(1.0, positives));
}

}  // namespace progdet
