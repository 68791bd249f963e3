#pragma once

#include <span>
#include <vector>

#include "progdet/hungarian.hpp"
#include "progdet/stage.hpp"

namespace progdet {

struct ImageSize {
  double width = 1.0;
  double height = 1.0;
};

/// Focal-style classification cost for the positive class at probability p.
double focal_class_cost(double p, double alpha = 0.25, double gamma = 2.0);

/// Matching cost of one prediction/target pair, or kForbidden when the
/// prediction's center lies outside the target (spatial prior).
double matching_cost(const Prediction& pred, const BoundingBox& target, const LossWeights& weights,
                     const ImageSize& image, double alpha = 0.25, double gamma = 2.0);

CostMatrix cost_matrix(std::span<const Prediction> preds, std::span<const BoundingBox> targets,
                       const LossWeights& weights, const ImageSize& image);

enum class AssignmentStrategy { Progressive, Merged };

/// Pairs are (index into the prediction list, index into G.boxes).
struct Assignment {
  MatchResult accepted;
  MatchResult noisy;
};

/// Accepted predictions claim targets first; noisy predictions are matched
/// against the targets that remain.
Assignment assign_progressive(std::span<const Prediction> accepted,
                              std::span<const Prediction> noisy, const GroundTruth& truth,
                              const LossWeights& weights, const ImageSize& image);

/// One matching over accepted ∪ noisy, split afterwards by membership.
Assignment assign_merged(std::span<const Prediction> accepted, std::span<const Prediction> noisy,
                         const GroundTruth& truth, const LossWeights& weights,
                         const ImageSize& image);

Assignment assign(AssignmentStrategy strategy, std::span<const Prediction> accepted,
                  std::span<const Prediction> noisy, const GroundTruth& truth,
                  const LossWeights& weights, const ImageSize& image);

/// Indices of noisy predictions that take part in the loss. Matched
/// predictions are always kept; negatives are dropped when their score is
/// below the negative filter or their IoA with an ignore region exceeds the
/// ignore threshold.
std::vector<std::size_t> filter_training_samples(std::span<const Prediction> noisy,
                                                 std::span<const double> scores,
                                                 const MatchResult& noisy_matches,
                                                 std::span<const BoundingBox> ignore_regions,
                                                 const StageConfig& config);

/// Focal classification loss over the kept noisy predictions (positives are
/// the matched ones), scaled by the classification weight and normalised by
/// max(1, positives). No box term: last-stage boxes are identity-mapped.
Var set_loss(Var noisy_logits, const MatchResult& noisy_matches,
             std::span<const std::size_t> kept, const StageConfig& config);

}  // namespace progdet
