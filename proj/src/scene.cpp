#include "progdet/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace progdet {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double beta_sample(std::mt19937_64& rng, double a, double b) {
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  return x / (x + y);
}

bool inside(const BoundingBox& b, double width, double height) {
  return b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= width && b.y2 <= height;
}

BoundingBox random_person_box(std::mt19937_64& rng, const SceneSpec& spec) {
  std::uniform_real_distribution<double> hdist(spec.min_height, spec.max_height);
  std::uniform_real_distribution<double> aspect(0.35, 0.5);
  const double h = hdist(rng);
  const double w = h * aspect(rng);
  std::uniform_real_distribution<double> xd(0.0, spec.width - w), yd(0.0, spec.height - h);
  return BoundingBox::from_xywh(xd(rng), yd(rng), w, h);
}

BoundingBox jitter_box(const BoundingBox& b, double scale, std::mt19937_64& rng) {
  if (scale <= 0.0) return b;
  std::normal_distribution<double> n(0.0, scale);
  const double w = b.width(), h = b.height();
  BoundingBox out{b.x1 + n(rng) * w, b.y1 + n(rng) * h, b.x2 + n(rng) * w, b.y2 + n(rng) * h};
  if (out.x2 < out.x1) std::swap(out.x1, out.x2);
  if (out.y2 < out.y1) std::swap(out.y1, out.y2);
  if (out.width() < 1.0) out.x2 = out.x1 + 1.0;
  if (out.height() < 1.0) out.y2 = out.y1 + 1.0;
  return out;
}

double clamped_logit(double p) {
  const double q = std::clamp(p, 1e-4, 1.0 - 1e-4);
  return std::log(q / (1.0 - q));
}

/// Fixed +-1 direction carrying the score evidence in query features.
Eigen::RowVectorXd score_direction(int dim) {
  std::mt19937_64 rng(0x5c0e5eedULL);
  std::bernoulli_distribution coin(0.5);
  Eigen::RowVectorXd u(dim);
  for (int i = 0; i < dim; ++i) u(i) = coin(rng) ? 1.0 : -1.0;
  return u;
}

}  // namespace

void CorruptionSpec::validate() const {
  auto rate = [](double r) { return r >= 0.0 && r <= 1.0; };
  if (!rate(duplicate_rate) || !rate(dropout_rate) || !rate(score_noise))
    throw std::invalid_argument("corruption rates must lie in [0, 1]");
  if (jitter < 0.0 || background_per_image < 0.0 || feature_noise < 0.0)
    throw std::invalid_argument("corruption scales must be non-negative");
}

std::uint64_t scene_seed(std::uint64_t base, std::uint64_t index, bool held_out) {
  return splitmix64(splitmix64(base) ^ (2 * index + (held_out ? 1 : 0)));
}

std::size_t count_overlaps(std::span<const BoundingBox> boxes, double threshold) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < boxes.size(); ++i)
    for (std::size_t j = i + 1; j < boxes.size(); ++j)
      if (iou(boxes[i], boxes[j]) > threshold) ++n;
  return n;
}

GroundTruth generate_scene(const SceneSpec& spec) {
  if (spec.objects_per_image < 0.0 || spec.overlaps_per_image < 0.0)
    throw std::invalid_argument("scene densities must be non-negative");
  GroundTruth gt;
  if (spec.objects_per_image == 0.0) return gt;

  std::mt19937_64 rng(splitmix64(spec.seed));
  std::poisson_distribution<int> count_dist(spec.objects_per_image);
  const int count = count_dist(rng);

  // Every object after the first becomes an occluding partner of an existing
  // box with probability p; each partner adds exactly one pair above 0.5 and
  // free placements add none, so E[overlaps] = p * E[max(N - 1, 0)].
  const double lambda = spec.objects_per_image;
  const double expected_followers = lambda - 1.0 + std::exp(-lambda);
  const double partner_p =
      expected_followers > 0.0 ? std::min(1.0, spec.overlaps_per_image / expected_followers) : 0.0;
  std::bernoulli_distribution partner_coin(partner_p);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  constexpr int kMaxAttempts = 10000;
  auto clashes = [&](const BoundingBox& cand, std::size_t skip) {
    for (std::size_t j = 0; j < gt.boxes.size(); ++j)
      if (j != skip && iou(cand, gt.boxes[j]) > 0.5) return true;
    return false;
  };

  for (int k = 0; k < count; ++k) {
    const bool partner = !gt.boxes.empty() && partner_coin(rng);
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      BoundingBox cand;
      std::size_t anchor = gt.boxes.size();
      if (partner) {
        anchor = static_cast<std::size_t>(unit(rng) * static_cast<double>(gt.boxes.size()));
        anchor = std::min(anchor, gt.boxes.size() - 1);
        const BoundingBox& b = gt.boxes[anchor];
        const double s = 0.85 + 0.3 * unit(rng);
        const double w = b.width() * s, h = b.height() * s;
        const double cx = b.center_x() + (unit(rng) - 0.5) * 0.5 * b.width();
        const double cy = b.center_y() + (unit(rng) - 0.5) * 0.2 * b.height();
        cand = {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
        if (!inside(cand, spec.width, spec.height) || iou(cand, b) <= 0.5) continue;
      } else {
        cand = random_person_box(rng, spec);
      }
      if (clashes(cand, anchor)) continue;
      gt.boxes.push_back(cand);
      placed = true;
    }
    if (!placed) throw InfeasibleSceneError("cannot place object within the attempt cap");
  }
  return gt;
}

Eigen::RowVectorXd box_embedding(const BoundingBox& box, double width, double height, int dim) {
  if (dim <= 0 || dim % 8 != 0) throw std::invalid_argument("embedding dim must be a multiple of 8");
  const int freqs = dim / 8;
  const double coords[4] = {box.x1 / width, box.y1 / height, box.x2 / width, box.y2 / height};
  Eigen::RowVectorXd out(dim);
  for (int c = 0; c < 4; ++c)
    for (int k = 0; k < freqs; ++k) {
      const double omega = 2.0 * std::numbers::pi * std::pow(100.0, static_cast<double>(k) / freqs);
      out(c * 2 * freqs + k) = std::sin(omega * coords[c]);
      out(c * 2 * freqs + freqs + k) = std::cos(omega * coords[c]);
    }
  return out;
}

CorruptedScene corrupt(const GroundTruth& truth, const CorruptionSpec& spec, double width,
                       double height, int dim, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(splitmix64(seed ^ 0xc0ffeeULL));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto mix = [&](double ideal, double a, double b) {
    const double draw = spec.score_noise > 0.0 ? beta_sample(rng, a, b) : ideal;
    return std::clamp((1.0 - spec.score_noise) * ideal + spec.score_noise * draw, 0.0, 1.0);
  };

  std::vector<Prediction> preds;
  for (const auto& gt : truth.boxes) {
    // A dropped object yields no detection at all, duplicates included.
    if (unit(rng) < spec.dropout_rate) continue;
    preds.push_back({jitter_box(gt, spec.jitter, rng),
                     mix(1.0, spec.primary_alpha, spec.primary_beta), 0});
    if (unit(rng) < spec.duplicate_rate)
      preds.push_back({jitter_box(gt, 1.5 * spec.jitter, rng),
                       mix(0.0, spec.duplicate_alpha, spec.duplicate_beta), 0});
  }
  if (spec.background_per_image > 0.0) {
    std::poisson_distribution<int> bg(spec.background_per_image);
    SceneSpec shape;
    shape.width = width;
    shape.height = height;
    const int n = bg(rng);
    for (int i = 0; i < n; ++i)
      preds.push_back({random_person_box(rng, shape),
                       mix(0.0, spec.background_alpha, spec.background_beta), 0});
  }
  std::shuffle(preds.begin(), preds.end(), rng);

  CorruptedScene out;
  out.queries.resize(static_cast<Eigen::Index>(preds.size()), dim);
  const Eigen::RowVectorXd direction = score_direction(dim);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    preds[i].query_index = i;
    Eigen::RowVectorXd q = box_embedding(preds[i].box, width, height, dim) +
                           spec.score_evidence * clamped_logit(preds[i].score) * direction;
    for (int c = 0; c < dim; ++c) q(c) += spec.feature_noise * noise(rng);
    out.queries.row(static_cast<Eigen::Index>(i)) = q;
  }
  out.predictions = std::move(preds);
  return out;
}

SyntheticScene make_synthetic_scene(const SceneSpec& spec, const CorruptionSpec& corruption,
                                    int dim, std::uint64_t base_seed, std::uint64_t index,
                                    bool held_out) {
  SceneSpec s = spec;
  s.seed = scene_seed(base_seed, index, held_out);
  SyntheticScene out;
  out.truth = generate_scene(s);
  out.corrupted = corrupt(out.truth, corruption, spec.width, spec.height, dim, s.seed);
  out.image = {spec.width, spec.height};
  return out;
}

}  // namespace progdet
