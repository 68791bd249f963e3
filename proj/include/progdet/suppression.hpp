#pragma once

#include <span>
#include <vector>

#include "progdet/stage.hpp"

namespace progdet {

/// Greedy suppression in descending score order (ties: lower input index
/// first); a box is dropped when its IoU with a kept box is >= iou_threshold.
/// Kept predictions are returned in selection order.
std::vector<Prediction> nms(std::span<const Prediction> preds, double iou_threshold);

enum class SoftNmsMode { Linear, Hard };

/// Iterative max-score selection with score decay instead of removal.
/// Linear mode multiplies overlapping (IoU >= threshold) scores by (1 - IoU);
/// hard mode sets them to zero. Predictions below `score_floor` are dropped
/// at the end.
std::vector<Prediction> soft_nms(std::span<const Prediction> preds, double iou_threshold,
                                 SoftNmsMode mode = SoftNmsMode::Linear,
                                 double score_floor = 1e-3);

}  // namespace progdet
