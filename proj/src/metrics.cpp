#include "progdet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "progdet/hungarian.hpp"

namespace progdet {

namespace {

bool ignored(const BoundingBox& box, const GroundTruth& truth, double threshold) {
  return std::any_of(truth.ignore_regions.begin(), truth.ignore_regions.end(),
                     [&](const BoundingBox& r) { return ioa(box, r) > threshold; });
}

/// Detection indices that survive ignore filtering, by descending score then index.
std::vector<std::size_t> ordered_detections(const EvalScene& scene, const EvalConfig& config) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < scene.detections.size(); ++i)
    if (!ignored(scene.detections[i].box, scene.truth, config.ignore_ioa)) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scene.detections[a].score > scene.detections[b].score;
  });
  return order;
}

}  // namespace

MatchedDetections match_detections(std::span<const EvalScene> scenes, const EvalConfig& config) {
  MatchedDetections out;
  out.images = scenes.size();
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const EvalScene& scene = scenes[s];
    const auto& gts = scene.truth.boxes;
    out.total_truth += gts.size();
    std::vector<char> taken(gts.size(), 0);
    for (std::size_t i : ordered_detections(scene, config)) {
      const BoundingBox& box = scene.detections[i].box;
      double best = -1.0, max_any = 0.0, max_taken = 0.0;
      std::size_t best_j = gts.size();
      for (std::size_t j = 0; j < gts.size(); ++j) {
        const double o = iou(box, gts[j]);
        max_any = std::max(max_any, o);
        if (taken[j]) {
          max_taken = std::max(max_taken, o);
        } else if (o >= config.iou_threshold && o > best) {
          best = o;
          best_j = j;
        }
      }
      Outcome outcome;
      if (best_j < gts.size()) {
        taken[best_j] = 1;
        outcome = Outcome::TruePositive;
      } else if (max_taken >= config.iou_threshold) {
        outcome = Outcome::Duplicate;
      } else if (max_any >= 0.1) {
        outcome = Outcome::Localization;
      } else {
        outcome = Outcome::Background;
      }
      out.ranked.push_back({s, i, scene.detections[i].score, outcome});
    }
  }
  std::stable_sort(out.ranked.begin(), out.ranked.end(),
                   [&](const RankedDetection& a, const RankedDetection& b) {
                     if (a.score != b.score) return a.score > b.score;
                     const auto& ia = scenes[a.scene].image_id;
                     const auto& ib = scenes[b.scene].image_id;
                     if (ia != ib) return ia < ib;
                     return a.index < b.index;
                   });
  return out;
}

ApResult average_precision(std::span<const EvalScene> scenes, const EvalConfig& config) {
  const MatchedDetections matched = match_detections(scenes, config);
  ApResult out;
  out.total_truth = matched.total_truth;
  std::size_t tp = 0, fp = 0;
  double area = 0.0;
  for (const auto& d : matched.ranked) {
    if (d.outcome == Outcome::TruePositive) {
      ++tp;
      area += static_cast<double>(tp) / static_cast<double>(tp + fp);
    } else {
      ++fp;
    }
    out.curve.push_back({d.score, fp, tp});
  }
  if (matched.total_truth > 0) out.ap = area / static_cast<double>(matched.total_truth);
  return out;
}

double log_average_miss_rate(std::span<const EvalScene> scenes, const EvalConfig& config) {
  const ApResult ap = average_precision(scenes, config);
  if (ap.total_truth == 0 || scenes.empty()) return 0.0;
  const double images = static_cast<double>(scenes.size());
  const double truth = static_cast<double>(ap.total_truth);

  // The empty operating point (no detection kept) has FPPI 0 and miss rate 1.
  std::vector<double> fppi{0.0}, miss{1.0};
  for (const auto& p : ap.curve) {
    fppi.push_back(static_cast<double>(p.false_positives) / images);
    miss.push_back(1.0 - static_cast<double>(p.true_positives) / truth);
  }
  double log_sum = 0.0;
  constexpr int kPoints = 9;
  for (int i = 0; i < kPoints; ++i) {
    const double ref = std::pow(10.0, -2.0 + 2.0 * i / (kPoints - 1));
    std::size_t last = 0;
    for (std::size_t k = 0; k < fppi.size(); ++k)
      if (fppi[k] <= ref) last = k;
    log_sum += std::log(miss[last]);
  }
  return std::exp(log_sum / kPoints);
}

std::size_t max_bipartite_matching(std::span<const BoundingBox> detections,
                                   std::span<const BoundingBox> truth, double iou_threshold) {
  CostMatrix cost(static_cast<Eigen::Index>(detections.size()),
                  static_cast<Eigen::Index>(truth.size()));
  for (std::size_t i = 0; i < detections.size(); ++i)
    for (std::size_t j = 0; j < truth.size(); ++j) {
      const double o = iou(detections[i], truth[j]);
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          o > iou_threshold ? -o : kForbidden;
    }
  return hungarian(cost).pairs.size();
}

double jaccard_index(std::span<const EvalScene> scenes, const EvalConfig& config) {
  if (scenes.empty()) return 0.0;
  double total = 0.0;
  for (const EvalScene& scene : scenes) {
    std::vector<BoundingBox> dets;
    for (const auto& d : scene.detections)
      if (d.score >= config.ji_score_cutoff && !ignored(d.box, scene.truth, config.ignore_ioa))
        dets.push_back(d.box);
    const auto& gts = scene.truth.boxes;
    if (dets.empty() && gts.empty()) {
      total += 1.0;
      continue;
    }
    const double m = static_cast<double>(max_bipartite_matching(dets, gts, config.ji_iou_threshold));
    total += m / (static_cast<double>(dets.size() + gts.size()) - m);
  }
  return total / static_cast<double>(scenes.size());
}

std::vector<double> uniform_bin_edges(int bins) {
  if (bins <= 0) throw std::invalid_argument("bin count must be positive");
  std::vector<double> edges(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i) edges[static_cast<std::size_t>(i)] = static_cast<double>(i) / bins;
  return edges;
}

std::vector<HistogramBin> score_histogram(std::span<const EvalScene> scenes,
                                          std::span<const double> edges,
                                          const EvalConfig& config) {
  if (edges.size() < 2 || edges.front() != 0.0 || edges.back() != 1.0)
    throw std::invalid_argument("histogram edges must span [0, 1]");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1])) throw std::invalid_argument("histogram edges must increase");

  const MatchedDetections matched = match_detections(scenes, config);
  std::vector<HistogramBin> bins(edges.size() - 1);
  for (std::size_t b = 0; b < bins.size(); ++b) {
    bins[b].low = edges[b];
    bins[b].high = edges[b + 1];
  }
  if (matched.ranked.empty()) return bins;
  const double total = static_cast<double>(matched.ranked.size());
  for (const auto& d : matched.ranked) {
    auto it = std::upper_bound(edges.begin(), edges.end(), d.score);
    std::size_t b = static_cast<std::size_t>(std::distance(edges.begin(), it));
    b = std::clamp<std::size_t>(b, 1, bins.size()) - 1;
    if (d.outcome == Outcome::TruePositive)
      bins[b].tp_ratio += 1.0;
    else
      bins[b].fp_ratio += 1.0;
  }
  for (auto& bin : bins) {
    bin.tp_ratio /= total;
    bin.fp_ratio /= total;
  }
  return bins;
}

ErrorReport error_decomposition(std::span<const EvalScene> scenes, double recall_target,
                                const EvalConfig& config) {
  const MatchedDetections matched = match_detections(scenes, config);
  ErrorReport report;
  const double truth = static_cast<double>(matched.total_truth);
  for (const auto& d : matched.ranked) {
    switch (d.outcome) {
      case Outcome::TruePositive: ++report.true_positives; break;
      case Outcome::Duplicate: ++report.duplicate; break;
      case Outcome::Localization: ++report.localization; break;
      case Outcome::Background: ++report.background; break;
    }
    report.score_cutoff = d.score;
    if (truth > 0.0 && static_cast<double>(report.true_positives) / truth >= recall_target) break;
  }
  report.recall = truth > 0.0 ? static_cast<double>(report.true_positives) / truth : 0.0;
  report.missing = matched.total_truth - report.true_positives;
  return report;
}

}  // namespace progdet
