#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "progdet/geometry.hpp"
#include "progdet/tensor.hpp"

namespace progdet {

struct Prediction {
  BoundingBox box;
  double score = 0.0;
  /// Slot of the query that produced this prediction.
  std::size_t query_index = 0;

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

/// Accepted (score >= s) and noisy (score < s) predictions, each with the
/// position it held in the input list. Input order is kept within each part.
struct PredictionSplit {
  std::vector<Prediction> accepted;
  std::vector<Prediction> noisy;
  std::vector<std::size_t> accepted_positions;
  std::vector<std::size_t> noisy_positions;
};

struct LossWeights {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
};

struct StageConfig {
  double score_threshold = 0.7;  // s
  double iou_threshold = 0.4;    // theta
  int dim = 256;
  int encoding_dim = 320;
  int heads = 8;
  /// Rows of the learnable embedding table (query capacity).
  int query_capacity = 256;
  LossWeights weights;
  double negative_filter = 0.05;
  double ignore_ioa = 0.7;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;

  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
};

/// Weights of the relation extractor, query updater and classification head.
struct StageParams {
  TwoLayerMlp geometry;   // applied to encoded (box, neighbor) pairs
  TwoLayerMlp query;      // applied to detached query features
  Linear fuse;            // single fc after pooled + query sum
  Param embeddings;       // query_capacity x dim
  AttentionParams attention;
  Linear classifier;      // dim -> 1

  StageParams() = default;
  StageParams(const StageConfig& config, std::uint64_t seed);

  std::vector<Param*> all();
  std::vector<const Param*> all() const;
};

PredictionSplit select_predictions(std::span<const Prediction> preds, double score_threshold);

/// Encoded (noisy box, accepted neighbor) pairs grouped per noisy prediction.
struct NeighborPairs {
  Tensor2 encodings;  // total_pairs x encoding_dim
  std::vector<RowSegment> segments;
};

NeighborPairs collect_neighbor_pairs(std::span<const Prediction> noisy,
                                     std::span<const Prediction> accepted, double iou_threshold,
                                     int encoding_dim);

/// Relation features of every noisy prediction from its accepted neighbors.
/// Gradients never reach `noisy_queries`.
Var relation_features(Tape& tape, std::span<const Prediction> noisy, Var noisy_queries,
                      std::span<const Prediction> accepted, const StageConfig& config,
                      const StageParams& params);

/// IoU > 0 mask of `rows` against `cols` boxes.
BoolMatrix overlap_mask(std::span<const Prediction> rows, std::span<const Prediction> cols);

struct QueryUpdate {
  Var complemented;  // relation + embedding rows
  Var updated;       // after local self-attention
};

/// Adds slot embeddings to the relation features and runs local self-attention
/// of the noisy queries over the whole prediction set. Accepted entries take
/// part as read-only (detached) keys and values.
QueryUpdate update_queries(Tape& tape, Var relation, std::span<const Prediction> noisy,
                           std::span<const Prediction> accepted, Var accepted_queries,
                           const StageParams& params);

/// Classification logits (rows x 1). Boxes are never regressed here.
Var classify(Tape& tape, Var updated, const StageParams& params);

/// Rescored noisy predictions: sigmoid scores, boxes copied unchanged.
std::vector<Prediction> refine_heads(std::span<const Prediction> noisy, const Tensor2& logits);

struct StageForward {
  PredictionSplit split;
  Var relation;
  Var complemented;
  Var updated;
  Var logits;  // |noisy| x 1, empty when nothing is noisy
  /// Input order; accepted entries untouched, noisy entries rescored.
  std::vector<Prediction> output;
};

/// Selector, relation extractor, query updater and heads on one tape.
/// `queries` has one row per prediction, aligned with `preds`.
StageForward forward_stage(Tape& tape, std::span<const Prediction> preds, Var queries,
                           const StageConfig& config, const StageParams& params);

/// Inference convenience around forward_stage.
std::vector<Prediction> run_stage(std::span<const Prediction> preds, const Tensor2& queries,
                                  const StageConfig& config, const StageParams& params);

// Simplified earlier decoding stages: global self-attention, a linear feature
// mixing layer and box/score heads, producing the inputs of the last stage.

struct PriorStageParams {
  AttentionParams attention;
  Linear mixing;
  Linear box_head;    // dim -> 4, offsets relative to box size
  Linear score_head;  // dim -> 1

  PriorStageParams() = default;
  PriorStageParams(const std::string& name, int dim, int heads, std::uint64_t seed);

  /// Zero attention output, identity mixing, zero box head.
  static PriorStageParams identity(const std::string& name, int dim, int heads);
};

struct SceneFeatures {
  std::vector<BoundingBox> boxes;  // initial proposal boxes
  Tensor2 features;                // rows aligned with boxes
};

struct PriorOutput {
  std::vector<Prediction> predictions;
  Tensor2 queries;
};

PriorOutput toy_prior_stages(const SceneFeatures& scene, std::span<const PriorStageParams> stages);

}  // namespace progdet
