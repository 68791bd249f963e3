#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "progdet/assignment.hpp"
#include "progdet/geometry.hpp"
#include "progdet/stage.hpp"

namespace progdet {

class InfeasibleSceneError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Instance-density targets of a synthetic crowded dataset.
struct SceneSpec {
  double objects_per_image = 22.64;
  /// Mean count of ground-truth pairs with IoU > 0.5.
  double overlaps_per_image = 2.40;
  double width = 1024.0;
  double height = 768.0;
  double min_height = 60.0;
  double max_height = 240.0;
  std::uint64_t seed = 0;
};

/// Simulates the output distribution of earlier decoding stages.
struct CorruptionSpec {
  double jitter = 0.05;  // corner noise std, relative to box size
  double duplicate_rate = 0.4;
  double dropout_rate = 0.03;
  double background_per_image = 6.0;
  /// 0 gives ideal scores (1 for primary copies, 0 otherwise); 1 gives pure Beta draws.
  double score_noise = 1.0;
  double feature_noise = 0.1;
  /// Weight of the score-logit direction mixed into the query features.
  double score_evidence = 1.0;
  double primary_alpha = 8.0, primary_beta = 2.0;
  double duplicate_alpha = 3.0, duplicate_beta = 3.0;
  double background_alpha = 1.2, background_beta = 6.0;

  void validate() const;
};

/// Per-image generator seed. Training scenes take slot 2*index, held-out scenes 2*index+1.
std::uint64_t scene_seed(std::uint64_t base, std::uint64_t index, bool held_out);

GroundTruth generate_scene(const SceneSpec& spec);

/// Number of ground-truth pairs with IoU strictly above `threshold`.
std::size_t count_overlaps(std::span<const BoundingBox> boxes, double threshold = 0.5);

/// Sinusoidal embedding of the image-normalised corners (dim divisible by 8).
Eigen::RowVectorXd box_embedding(const BoundingBox& box, double width, double height, int dim);

struct CorruptedScene {
  std::vector<Prediction> predictions;  // query_index == position
  Tensor2 queries;                      // one row per prediction
};

CorruptedScene corrupt(const GroundTruth& truth, const CorruptionSpec& spec, double width,
                       double height, int dim, std::uint64_t seed);

/// A complete synthetic training/evaluation example.
struct SyntheticScene {
  GroundTruth truth;
  CorruptedScene corrupted;
  ImageSize image;
};

SyntheticScene make_synthetic_scene(const SceneSpec& spec, const CorruptionSpec& corruption,
                                    int dim, std::uint64_t base_seed, std::uint64_t index,
                                    bool held_out);

}  // namespace progdet
