#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "progdet/assignment.hpp"
#include "progdet/metrics.hpp"
#include "progdet/scene.hpp"
#include "progdet/stage.hpp"

namespace progdet {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  SceneSpec scene;
  CorruptionSpec corruption;
  StageConfig stage;
  int epochs = 4;
  int scenes_per_epoch = 400;
  double learning_rate = 0.003;
  AssignmentStrategy strategy = AssignmentStrategy::Progressive;
  std::uint64_t seed = 7;
};

struct TrainResult {
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;  // mean of the epoch's step losses
};

/// Loss of one scene with gradients recorded on `tape`.
Var scene_loss(Tape& tape, const SyntheticScene& scene, const StageConfig& config,
               const StageParams& params, AssignmentStrategy strategy);

/// Plain SGD, one step per scene, scenes visited in a fixed order each epoch.
TrainResult train_stage(StageParams& params, std::span<const SyntheticScene> scenes,
                        const StageConfig& config, int epochs, double learning_rate,
                        AssignmentStrategy strategy);

/// Generates the training scenes (even seeds) and runs train_stage.
TrainResult train_toy(StageParams& params, const TrainConfig& config);

struct ArmMetrics {
  double ap = 0.0;
  double mr2 = 0.0;
  double ji = 0.0;
  ErrorReport errors;
};

struct ComparisonReport {
  std::size_t images = 0;
  ArmMetrics raw;
  ArmMetrics nms;
  ArmMetrics refined;
};

ArmMetrics evaluate_arm(std::span<const EvalScene> scenes, double recall_target = 0.9,
                        const EvalConfig& config = {});

/// Raw predictions vs an NMS baseline vs the progressively refined stage on
/// held-out scenes (odd seeds).
ComparisonReport ab_compare(const TrainConfig& config, const StageParams& params,
                            std::size_t held_out_images, double nms_threshold = 0.5);

}  // namespace progdet
