#pragma once

#include <span>
#include <string>
#include <vector>

#include "progdet/geometry.hpp"
#include "progdet/stage.hpp"

namespace progdet {

struct EvalScene {
  std::string image_id;
  std::vector<Prediction> detections;
  GroundTruth truth;
};

struct EvalConfig {
  double iou_threshold = 0.5;     // AP-style matching, IoU >= threshold
  double ignore_ioa = 0.7;        // detections with IoA above this to an ignore region are dropped
  double ji_score_cutoff = 0.5;   // detection-set membership for JI
  double ji_iou_threshold = 0.5;  // JI edges require IoU > threshold
};

enum class Outcome { TruePositive, Duplicate, Localization, Background };

/// One detection after greedy per-image matching, in global rank order.
struct RankedDetection {
  std::size_t scene = 0;
  std::size_t index = 0;  // position in the scene's detection list
  double score = 0.0;
  Outcome outcome = Outcome::Background;
};

struct MatchedDetections {
  std::vector<RankedDetection> ranked;
  std::size_t total_truth = 0;
  std::size_t images = 0;
};

/// Greedy score-descending matching inside each image: a detection takes the
/// unmatched target of highest IoU >= threshold. Ties in score are broken by
/// ascending image_id, then ascending detection index.
MatchedDetections match_detections(std::span<const EvalScene> scenes, const EvalConfig& config = {});

struct CurvePoint {
  double score = 0.0;
  std::size_t false_positives = 0;
  std::size_t true_positives = 0;
};

struct ApResult {
  double ap = 0.0;
  /// Cumulative (FP, TP) after each ranked detection.
  std::vector<CurvePoint> curve;
  std::size_t total_truth = 0;
};

ApResult average_precision(std::span<const EvalScene> scenes, const EvalConfig& config = {});

/// Log-average miss rate over nine FPPI points spaced log-uniformly in [0.01, 1].
double log_average_miss_rate(std::span<const EvalScene> scenes, const EvalConfig& config = {});

/// Size of the maximum bipartite matching between `detections` and `truth`
/// with edges at IoU > iou_threshold.
std::size_t max_bipartite_matching(std::span<const BoundingBox> detections,
                                   std::span<const BoundingBox> truth, double iou_threshold);

/// Mean over images of |M| / (|D| + |G| - |M|).
double jaccard_index(std::span<const EvalScene> scenes, const EvalConfig& config = {});

struct HistogramBin {
  double low = 0.0;
  double high = 0.0;
  double tp_ratio = 0.0;
  double fp_ratio = 0.0;
};

std::vector<double> uniform_bin_edges(int bins);

/// Per score bin, TP and FP counts divided by the total detection count.
/// `edges` must start at 0, end at 1 and increase strictly.
std::vector<HistogramBin> score_histogram(std::span<const EvalScene> scenes,
                                          std::span<const double> edges,
                                          const EvalConfig& config = {});

struct ErrorReport {
  std::size_t true_positives = 0;
  std::size_t duplicate = 0;
  std::size_t localization = 0;
  std::size_t background = 0;
  std::size_t missing = 0;
  double recall = 0.0;        // achieved at the operating point
  double score_cutoff = 0.0;  // score of the last detection taken
  std::size_t false_positives() const { return duplicate + localization + background; }
};

/// Error types of the false positives ranked above the point where recall
/// first reaches `recall_target` (all detections if it is never reached).
ErrorReport error_decomposition(std::span<const EvalScene> scenes, double recall_target = 0.9,
                                const EvalConfig& config = {});

}  // namespace progdet
