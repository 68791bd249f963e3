#include "progdet/training.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "progdet/suppression.hpp"

namespace progdet {

Var scene_loss(Tape& tape, const SyntheticScene& scene, const StageConfig& config,
               const StageParams& params, AssignmentStrategy strategy) {
  const auto& preds = scene.corrupted.predictions;
  StageForward fw = forward_stage(tape, preds, tape.constant(scene.corrupted.queries), config, params);
  if (fw.split.noisy.empty()) return tape.constant(Tensor2::Zero(1, 1));

  // Assignment sees the stage's outputs: refined scores for noisy entries.
  std::vector<Prediction> refined_noisy;
  refined_noisy.reserve(fw.split.noisy.size());
  for (std::size_t pos : fw.split.noisy_positions) refined_noisy.push_back(fw.output[pos]);
  const Assignment matches =
      assign(strategy, fw.split.accepted, refined_noisy, scene.truth, config.weights, scene.image);

  // Negative filtering uses the incoming (previous-stage) scores.
  std::vector<double> incoming;
  incoming.reserve(fw.split.noisy.size());
  for (const auto& p : fw.split.noisy) incoming.push_back(p.score);
  const auto kept = filter_training_samples(fw.split.noisy, incoming, matches.noisy,
                                            scene.truth.ignore_regions, config);
  return set_loss(fw.logits, matches.noisy, kept, config);
}

TrainResult train_stage(StageParams& params, std::span<const SyntheticScene> scenes,
                        const StageConfig& config, int epochs, double learning_rate,
                        AssignmentStrategy strategy) {
  TrainResult result;
  const auto all = params.all();
  for (Param* p : all) p->zero_grad();
  for (int epoch = 0; epoch < epochs; ++epoch) {
    double epoch_sum = 0.0;
    for (const auto& scene : scenes) {
      double loss_value = 0.0;
      try {
        Tape tape;
        Var loss = scene_loss(tape, scene, config, params, strategy);
        loss_value = loss.value()(0, 0);
        backward_into(tape, loss, all);
      } catch (const NonFiniteError& e) {
        throw DivergenceError(std::string("training diverged: ") + e.what());
      }
      if (!std::isfinite(loss_value)) throw DivergenceError("training diverged: non-finite loss");
      sgd_step(all, learning_rate);
      result.step_losses.push_back(loss_value);
      epoch_sum += loss_value;
    }
    result.epoch_losses.push_back(scenes.empty() ? 0.0
                                                 : epoch_sum / static_cast<double>(scenes.size()));
  }
  return result;
}

TrainResult train_toy(StageParams& params, const TrainConfig& config) {
  std::vector<SyntheticScene> scenes;
  scenes.reserve(static_cast<std::size_t>(config.scenes_per_epoch));
  for (int k = 0; k < config.scenes_per_epoch; ++k)
    scenes.push_back(make_synthetic_scene(config.scene, config.corruption, config.stage.dim,
                                          config.seed, static_cast<std::uint64_t>(k), false));
  return train_stage(params, scenes, config.stage, config.epochs, config.learning_rate,
                     config.strategy);
}

ArmMetrics evaluate_arm(std::span<const EvalScene> scenes, double recall_target,
                        const EvalConfig& config) {
  ArmMetrics m;
  m.ap = average_precision(scenes, config).ap;
  m.mr2 = log_average_miss_rate(scenes, config);
  m.ji = jaccard_index(scenes, config);
  m.errors = error_decomposition(scenes, recall_target, config);
  return m;
}

ComparisonReport ab_compare(const TrainConfig& config, const StageParams& params,
                            std::size_t held_out_images, double nms_threshold) {
  std::vector<EvalScene> raw, suppressed, refined;
  for (std::size_t k = 0; k < held_out_images; ++k) {
    const SyntheticScene s =
        make_synthetic_scene(config.scene, config.corruption, config.stage.dim, config.seed, k, true);
    const std::string id = std::to_string(k);
    const auto& preds = s.corrupted.predictions;
    raw.push_back({id, preds, s.truth});
    suppressed.push_back({id, nms(preds, nms_threshold), s.truth});
    refined.push_back({id, run_stage(preds, s.corrupted.queries, config.stage, params), s.truth});
  }
  ComparisonReport report;
  report.images = held_out_images;
  report.raw = evaluate_arm(raw);
  report.nms = evaluate_arm(suppressed);
  report.refined = evaluate_arm(refined);
  return report;
}

}  // namespace progdet
