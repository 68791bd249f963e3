#include "progdet/stage.hpp"

#include <cmath>
#include <stdexcept>

namespace progdet {

namespace {

std::vector<Eigen::Index> as_rows(std::span<const std::size_t> positions) {
  return {positions.begin(), positions.end()};
}

std::vector<BoundingBox> boxes_of(std::span<const Prediction> preds) {
  std::vector<BoundingBox> out;
  out.reserve(preds.size());
  for (const auto& p : preds) out.push_back(p.box);
  return out;
}

double sigmoid_value(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

void StageConfig::validate() const {
  if (!(score_threshold > 0.0 && score_threshold <= 1.0))
    throw std::invalid_argument("score threshold must lie in (0, 1]");
  if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0))
    throw std::invalid_argument("IoU threshold must lie in [0, 1]");
  if (dim <= 0 || heads <= 0 || dim % heads != 0)
    throw std::invalid_argument("feature dim must be divisible by head count");
  if (encoding_dim <= 0 || encoding_dim % 10 != 0)
    throw std::invalid_argument("encoding dim must be a positive multiple of 10");
  if (query_capacity <= 0) throw std::invalid_argument("query capacity must be positive");
}

StageParams::StageParams(const StageConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  geometry = TwoLayerMlp("relation.geometry", config.encoding_dim, config.dim, config.dim, rng);
  query = TwoLayerMlp("relation.query", config.dim, config.dim, config.dim, rng);
  fuse = Linear("relation.fuse", config.dim, config.dim, rng);
  embeddings = Param("updater.embeddings", Tensor2::Zero(config.query_capacity, config.dim));
  attention = AttentionParams("updater.attention", config.dim, config.heads, rng);
  classifier = Linear("head.classifier", config.dim, 1, rng);
  // Prior probability 0.1 for the initial classification bias.
  classifier.bias.value.setConstant(std::log(0.1 / 0.9));
}

std::vector<Param*> StageParams::all() {
  std::vector<Param*> out;
  geometry.collect(out);
  query.collect(out);
  fuse.collect(out);
  out.push_back(&embeddings);
  attention.collect(out);
  classifier.collect(out);
  return out;
}

std::vector<const Param*> StageParams::all() const {
  auto mut = const_cast<StageParams*>(this)->all();
  return {mut.begin(), mut.end()};
}

PredictionSplit select_predictions(std::span<const Prediction> preds, double score_threshold) {
  PredictionSplit split;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].score >= score_threshold) {
      split.accepted.push_back(preds[i]);
      split.accepted_positions.push_back(i);
    } else {
      split.noisy.push_back(preds[i]);
      split.noisy_positions.push_back(i);
    }
  }
  return split;
}

NeighborPairs collect_neighbor_pairs(std::span<const Prediction> noisy,
                                     std::span<const Prediction> accepted, double iou_threshold,
                                     int encoding_dim) {
  const auto pool = boxes_of(accepted);
  std::vector<std::vector<std::size_t>> neighbors;
  neighbors.reserve(noisy.size());
  Eigen::Index total = 0;
  for (const auto& p : noisy) {
    neighbors.push_back(find_neighbors<double>(p.box, pool, iou_threshold, NeighborRule::AtLeast));
    total += static_cast<Eigen::Index>(neighbors.back().size());
  }
  NeighborPairs out;
  out.encodings.resize(total, encoding_dim);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    const Eigen::Index begin = row;
    for (std::size_t j : neighbors[i])
      out.encodings.row(row++) = encode_pair(noisy[i].box, pool[j], encoding_dim).transpose();
    out.segments.push_back({begin, row});
  }
  return out;
}

Var relation_features(Tape& tape, std::span<const Prediction> noisy, Var noisy_queries,
                      std::span<const Prediction> accepted, const StageConfig& config,
                      const StageParams& params) {
  if (noisy_queries.rows() != static_cast<Eigen::Index>(noisy.size()) ||
      noisy_queries.cols() != config.dim)
    throw ShapeError("relation_features: query rows must align with noisy predictions");
  NeighborPairs pairs =
      collect_neighbor_pairs(noisy, accepted, config.iou_threshold, config.encoding_dim);

  Var pooled;
  if (pairs.encodings.rows() == 0) {
    pooled = tape.constant(Tensor2::Zero(static_cast<Eigen::Index>(noisy.size()), config.dim));
  } else {
    Var h = params.geometry(tape, tape.constant(std::move(pairs.encodings)));
    pooled = segment_maxpool(h, pairs.segments);
  }
  Var transformed = params.query(tape, detach(noisy_queries));
  return params.fuse(tape, add(pooled, transformed));
}

BoolMatrix overlap_mask(std::span<const Prediction> rows, std::span<const Prediction> cols) {
  BoolMatrix mask(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      mask(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          iou(rows[i].box, cols[j].box) > 0.0;
  return mask;
}

QueryUpdate update_queries(Tape& tape, Var relation, std::span<const Prediction> noisy,
                           std::span<const Prediction> accepted, Var accepted_queries,
                           const StageParams& params) {
  const Eigen::Index capacity = params.embeddings.value.rows();
  std::vector<Eigen::Index> slots;
  slots.reserve(noisy.size());
  for (const auto& p : noisy) {
    if (static_cast<Eigen::Index>(p.query_index) >= capacity)
      throw std::out_of_range("query index exceeds embedding capacity");
    slots.push_back(static_cast<Eigen::Index>(p.query_index));
  }
  Var complemented = add(relation, gather_rows(tape.param(params.embeddings), slots));
  if (noisy.empty()) return {complemented, complemented};

  std::vector<Prediction> pool(noisy.begin(), noisy.end());
  pool.insert(pool.end(), accepted.begin(), accepted.end());
  Var context = accepted.empty() ? complemented : vcat(complemented, detach(accepted_queries));
  const BoolMatrix mask = overlap_mask(noisy, pool);
  Var attended = multi_head_attention(tape, params.attention, complemented, context, &mask);
  return {complemented, add(complemented, attended)};
}

Var classify(Tape& tape, Var updated, const StageParams& params) {
  return params.classifier(tape, updated);
}

std::vector<Prediction> refine_heads(std::span<const Prediction> noisy, const Tensor2& logits) {
  if (logits.rows() != static_cast<Eigen::Index>(noisy.size()))
    throw ShapeError("refine_heads: one logit per noisy prediction expected");
  std::vector<Prediction> out(noisy.begin(), noisy.end());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i].score = sigmoid_value(logits(static_cast<Eigen::Index>(i), 0));
  return out;
}

StageForward forward_stage(Tape& tape, std::span<const Prediction> preds, Var queries,
                           const StageConfig& config, const StageParams& params) {
  if (queries.rows() != static_cast<Eigen::Index>(preds.size()))
    throw ShapeError("forward_stage: one query row per prediction expected");
  StageForward fw;
  fw.split = select_predictions(preds, config.score_threshold);
  fw.output.assign(preds.begin(), preds.end());
  if (fw.split.noisy.empty()) return fw;

  const auto noisy_rows = as_rows(fw.split.noisy_positions);
  const auto accepted_rows = as_rows(fw.split.accepted_positions);
  Var noisy_q = gather_rows(queries, noisy_rows);
  Var accepted_q = gather_rows(queries, accepted_rows);

  fw.relation = relation_features(tape, fw.split.noisy, noisy_q, fw.split.accepted, config, params);
  QueryUpdate upd =
      update_queries(tape, fw.relation, fw.split.noisy, fw.split.accepted, accepted_q, params);
  fw.complemented = upd.complemented;
  fw.updated = upd.updated;
  fw.logits = classify(tape, fw.updated, params);

  const auto refined = refine_heads(fw.split.noisy, fw.logits.value());
  for (std::size_t i = 0; i < refined.size(); ++i)
    fw.output[fw.split.noisy_positions[i]] = refined[i];
  return fw;
}

std::vector<Prediction> run_stage(std::span<const Prediction> preds, const Tensor2& queries,
                                  const StageConfig& config, const StageParams& params) {
  Tape tape;
  return forward_stage(tape, preds, tape.constant(queries), config, params).output;
}

PriorStageParams::PriorStageParams(const std::string& name, int dim, int heads,
                                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  attention = AttentionParams(name + ".attention", dim, heads, rng);
  mixing = Linear(name + ".mixing", dim, dim, rng);
  box_head = Linear(name + ".box", dim, 4, rng);
  score_head = Linear(name + ".score", dim, 1, rng);
}

PriorStageParams PriorStageParams::identity(const std::string& name, int dim, int heads) {
  PriorStageParams p(name, dim, heads, 0);
  p.attention.output.weight.value.setZero();
  p.attention.output.bias.value.setZero();
  p.mixing.weight.value = Tensor2::Identity(dim, dim);
  p.mixing.bias.value.setZero();
  p.box_head.weight.value.setZero();
  p.box_head.bias.value.setZero();
  return p;
}

PriorOutput toy_prior_stages(const SceneFeatures& scene, std::span<const PriorStageParams> stages) {
  if (stages.empty()) throw std::invalid_argument("toy_prior_stages: at least one stage required");
  if (scene.features.rows() != static_cast<Eigen::Index>(scene.boxes.size()))
    throw ShapeError("toy_prior_stages: one feature row per box expected");

  std::vector<BoundingBox> boxes = scene.boxes;
  Tensor2 q = scene.features;
  Tensor2 logits = Tensor2::Zero(q.rows(), 1);
  for (const auto& stage : stages) {
    Tape tape;
    Var x = tape.constant(q);
    if (q.rows() > 0) x = add(x, multi_head_attention(tape, stage.attention, x, x, nullptr));
    x = stage.mixing(tape, x);
    const Tensor2 deltas = stage.box_head(tape, x).value();
    logits = stage.score_head(tape, x).value();
    q = x.value();
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      BoundingBox& b = boxes[i];
      const double w = b.width(), h = b.height();
      BoundingBox nb{b.x1 + deltas(r, 0) * w, b.y1 + deltas(r, 1) * h, b.x2 + deltas(r, 2) * w,
                     b.y2 + deltas(r, 3) * h};
      if (nb.x2 < nb.x1) std::swap(nb.x1, nb.x2);
      if (nb.y2 < nb.y1) std::swap(nb.y1, nb.y2);
      b = nb;
    }
  }
  PriorOutput out;
  out.queries = std::move(q);
  for (std::size_t i = 0; i < boxes.size(); ++i)
    out.predictions.push_back(
        {boxes[i], sigmoid_value(logits(static_cast<Eigen::Index>(i), 0)), i});
  return out;
}

}  // namespace progdet
