// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Usage: acceptance <path-to-progdet>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "oracles.hpp"
#include "progdet/assignment.hpp"
#include "progdet/grad_check.hpp"
#include "progdet/hungarian.hpp"
#include "progdet/io.hpp"
#include "progdet/metrics.hpp"
#include "progdet/scene.hpp"
#include "progdet/stage.hpp"
#include "progdet/training.hpp"

namespace fs = std::filesystem;
using namespace progdet;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Tensor2 random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor2 m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

Var weighted_sum(Tape& tape, Var y, std::mt19937_64& rng) {
  return sum(matmul(y, tape.constant(random_matrix(y.cols(), 1, rng))));
}

std::vector<Prediction> crowd(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const BoundingBox anchors[] = {{10, 10, 40, 90}, {30, 12, 62, 95}, {120, 40, 150, 110}, {70, 60, 95, 120}};
  std::vector<Prediction> out;
  for (std::size_t i = 0; i < n; ++i) {
    const BoundingBox& a = anchors[static_cast<std::size_t>(u(rng) * 4)];
    const double dx = (u(rng) - 0.5) * 10, dy = (u(rng) - 0.5) * 10;
    out.push_back({{a.x1 + dx, a.y1 + dy, a.x2 + dx + u(rng) * 5, a.y2 + dy + u(rng) * 5}, u(rng), i});
  }
  return out;
}

// 1 -------------------------------------------------------------------------

Verdict hungarian_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1001);
  std::uniform_int_distribution<int> dim(1, 7), cost(-5, 20);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  int mismatches = 0, with_inf = 0;
  for (int t = 0; t < 1000; ++t) {
    CostMatrix c(dim(rng), dim(rng));
    const double p = (t % 4) * 0.15;
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = coin(rng) < p ? kForbidden : cost(rng);
    with_inf += !c.allFinite();
    const auto m = hungarian(c);
    const auto brute = oracle::brute_force_assignment(c);
    if (m.pairs.size() != brute.cardinality || m.total_cost != brute.cost) ++mismatches;
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 10.0,
          fmt::format("1000 matrices ({} with inf entries), {} mismatches, {:.2f}s", with_inf, mismatches, secs)};
}

// 2 -------------------------------------------------------------------------

Verdict assignment_contract() {
  const auto t0 = Clock::now();
  const StageConfig stage;
  int reused = 0, count_mismatch = 0;
  std::size_t phase1 = 0, phase2 = 0;
  for (std::uint64_t i = 0; i < 500; ++i) {
    const SyntheticScene s = make_synthetic_scene(SceneSpec{}, CorruptionSpec{}, 8, 2002, i, false);
    const auto split = select_predictions(s.corrupted.predictions, stage.score_threshold);
    const auto prog = assign_progressive(split.accepted, split.noisy, s.truth, stage.weights, s.image);
    std::set<std::size_t> first;
    for (const auto& [r, c] : prog.accepted.pairs) first.insert(c);
    for (const auto& [r, c] : prog.noisy.pairs) reused += first.count(c) > 0;
    phase1 += prog.accepted.pairs.size();
    phase2 += prog.noisy.pairs.size();

    const auto merged = assign_merged(split.accepted, split.noisy, s.truth, stage.weights, s.image);
    std::vector<Prediction> all(split.accepted);
    all.insert(all.end(), split.noisy.begin(), split.noisy.end());
    const auto plain = hungarian(cost_matrix(all, s.truth.boxes, stage.weights, s.image));
    if (merged.accepted.pairs.size() + merged.noisy.pairs.size() != plain.pairs.size()) ++count_mismatch;
  }
  const double secs = seconds_since(t0);
  return {reused == 0 && count_mismatch == 0 && secs < 30.0,
          fmt::format("500 scenes, {} phase-1 / {} phase-2 pairs, {} reused targets, {} merged count "
                      "mismatches, {:.2f}s",
                      phase1, phase2, reused, count_mismatch, secs)};
}

// 3 -------------------------------------------------------------------------

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(3003);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_relation = 0, worst_lmsa = 0, worst_heads = 0, worst_loss = 0;
  int nonzero_detached = 0;
  for (int trial = 0; trial < 20; ++trial) {
    StageConfig config;
    config.heads = 1 << (trial % 3);
    config.dim = config.heads * (2 + trial % 3);
    config.encoding_dim = 10 * (1 + trial % 2);
    config.query_capacity = 64;
    config.score_threshold = 0.3 + 0.4 * u(rng);
    config.iou_threshold = 0.1 + 0.4 * u(rng);
    StageParams params(config, 100 + static_cast<std::uint64_t>(trial));
    params.embeddings.value = random_matrix(config.query_capacity, config.dim, rng);

    std::vector<Prediction> preds;
    PredictionSplit split;
    do {
      preds = crowd(rng, 6 + static_cast<std::size_t>(u(rng) * 7));
      split = select_predictions(preds, config.score_threshold);
    } while (split.noisy.empty() || split.accepted.empty());
    const auto n_noisy = static_cast<Eigen::Index>(split.noisy.size());
    const std::uint64_t probe = rng();

    Param q("q", random_matrix(n_noisy, config.dim, rng));
    std::vector<Param*> rel_params;
    params.geometry.collect(rel_params);
    params.query.collect(rel_params);
    params.fuse.collect(rel_params);
    worst_relation = std::max(worst_relation, grad_check(
        [&](Tape& t) {
          std::mt19937_64 r(probe);
          return weighted_sum(t, relation_features(t, split.noisy, t.param(q), split.accepted, config, params), r);
        },
        rel_params));

    Param rel("rel", random_matrix(n_noisy, config.dim, rng));
    const Tensor2 acc = random_matrix(static_cast<Eigen::Index>(split.accepted.size()), config.dim, rng);
    std::vector<Param*> lmsa_params{&rel, &params.embeddings};
    params.attention.collect(lmsa_params);
    worst_lmsa = std::max(worst_lmsa, grad_check(
        [&](Tape& t) {
          std::mt19937_64 r(probe);
          return weighted_sum(
              t, update_queries(t, t.param(rel), split.noisy, split.accepted, t.constant(acc), params).updated, r);
        },
        lmsa_params));

    Param x("x", random_matrix(n_noisy, config.dim, rng));
    std::vector<Param*> head_params{&x};
    params.classifier.collect(head_params);
    worst_heads = std::max(worst_heads, grad_check(
        [&](Tape& t) {
          std::mt19937_64 r(probe);
          return weighted_sum(t, sigmoid(classify(t, t.param(x), params)), r);
        },
        head_params));

    Param z("z", random_matrix(n_noisy, 1, rng) * 1.5);
    MatchResult matches;
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < split.noisy.size(); ++i) {
      if (u(rng) < 0.4) matches.pairs.push_back({i, i});
      if (u(rng) < 0.8) kept.push_back(i);
    }
    std::vector<Param*> loss_params{&z};
    worst_loss = std::max(worst_loss, grad_check([&](Tape& t) { return set_loss(t.param(z), matches, kept, config); },
                                                 loss_params));

    Param all_q("all_q", random_matrix(static_cast<Eigen::Index>(preds.size()), config.dim, rng));
    Tape tape;
    const StageForward fw = forward_stage(tape, preds, tape.param(all_q), config, params);
    std::mt19937_64 r(probe);
    tape.backward(weighted_sum(tape, fw.logits, r));
    nonzero_detached += !tape.grad(all_q).isZero(0.0);
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_relation <= 1e-4 && worst_lmsa <= 1e-5 && worst_heads <= 1e-5 && worst_loss <= 1e-5 &&
                    nonzero_detached == 0 && secs < 60.0;
  return {pass, fmt::format("20 configs, max rel. err relation {:.1e} (<=1e-4), LMSA {:.1e}, heads {:.1e}, "
                            "set_loss {:.1e} (<=1e-5), {} nonzero detached-query gradients, {:.2f}s",
                            worst_relation, worst_lmsa, worst_heads, worst_loss, nonzero_detached, secs)};
}

// 4 -------------------------------------------------------------------------

Verdict geometry_metrics_oracles() {
  std::mt19937_64 rng(4004);
  double worst_iou = 0.0, worst_giou = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const BoundingBox a = oracle::random_box(rng, 10.0), b = oracle::random_box(rng, 10.0);
    worst_iou = std::max(worst_iou, std::abs(iou(a, b) - oracle::grid_iou(a, b, 1e-4)));
    worst_giou = std::max(worst_giou, std::abs(giou(a, b) - oracle::grid_giou(a, b, 1e-4)));
  }

  std::uniform_int_distribution<int> size(0, 7);
  int matching_mismatch = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<BoundingBox> d, g;
    for (int j = size(rng); j > 0; --j) g.push_back(oracle::random_box(rng, 12.0, 3.0, 8.0));
    for (int i = size(rng); i > 0; --i) {
      BoundingBox b = oracle::random_box(rng, 12.0, 3.0, 8.0);
      if (!g.empty() && i % 3 != 0) {
        const auto& s = g[rng() % g.size()];
        const double dx = std::uniform_real_distribution<double>(-1.5, 1.5)(rng);
        b = {s.x1 + dx, s.y1, s.x2 + dx, s.y2};
      }
      d.push_back(b);
    }
    matching_mismatch += max_bipartite_matching(d, g, 0.5) != oracle::brute_force_max_matching(d, g, 0.5);
  }

  const BoundingBox g0{0, 0, 10, 20}, g1{20, 0, 30, 20}, g2{40, 0, 50, 20};
  EvalScene perfect;
  perfect.image_id = "p";
  perfect.truth.boxes = {g0, g1, g2};
  for (std::size_t i = 0; i < 3; ++i) perfect.detections.push_back({perfect.truth.boxes[i], 0.9, i});
  const std::vector<EvalScene> perfect_set{perfect};
  const double ap1 = average_precision(perfect_set).ap;
  const double mr0 = log_average_miss_rate(perfect_set);
  const double ji1 = jaccard_index(perfect_set);

  EvalScene quarter;
  quarter.truth.boxes = {g0, g1};
  quarter.detections = {{{0, 0, 10, 18}, 0.9, 0}, {{0, 0, 10, 16}, 0.8, 1}, {{300, 300, 310, 320}, 0.7, 2}};
  const double ji_quarter = jaccard_index(std::vector<EvalScene>{quarter});

  // Ranked outcomes TP, duplicate, TP, background, TP over three truths.
  EvalScene ranked;
  ranked.image_id = "r";
  ranked.truth.boxes = {g0, g1, g2};
  ranked.detections = {{g0, 0.9, 0}, {{0, 1, 10, 21}, 0.8, 1}, {g1, 0.7, 2}, {{100, 100, 110, 120}, 0.6, 3},
                       {{40, 0, 50, 12}, 0.5, 4}};
  const std::vector<EvalScene> ranked_set{ranked};
  const double ap_ranked = average_precision(ranked_set).ap;
  const double mr_ranked = log_average_miss_rate(ranked_set);

  const bool fixtures = ap1 == 1.0 && mr0 == 0.0 && ji1 == 1.0 && ji_quarter == 0.25 &&
                        std::abs(ap_ranked - 34.0 / 45.0) < 1e-12 &&
                        std::abs(mr_ranked - std::pow(2.0, 8.0 / 9.0) / 3.0) < 1e-12;
  return {worst_iou <= 1e-3 && worst_giou <= 1e-3 && matching_mismatch == 0 && fixtures,
          fmt::format("IoU/GIoU max grid deviation {:.1e}/{:.1e}, {} JI matching mismatches in 1000, "
                      "perfect AP={} MR={} JI={}, JI fixture={}, AP fixture={:.6f} (34/45), MR fixture={:.6f}",
                      worst_iou, worst_giou, matching_mismatch, ap1, mr0, ji1, ji_quarter, ap_ranked, mr_ranked)};
}

// 5 -------------------------------------------------------------------------

Verdict invariance_suite() {
  std::mt19937_64 rng(5005);
  StageConfig config;
  config.dim = 16;
  config.encoding_dim = 20;
  config.heads = 2;
  config.query_capacity = 64;
  StageParams params(config, 55);
  params.embeddings.value = random_matrix(config.query_capacity, config.dim, rng);
  int maxpool_fail = 0, relation_fail = 0, selector_fail = 0, accepted_fail = 0, lmsa_fail = 0;

  for (int t = 0; t < 100; ++t) {
    const Tensor2 x = random_matrix(1 + t % 9, 7, rng);
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(x.rows()));
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<Eigen::Index>(i);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor2 shuffled(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) shuffled.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
    Tape tape;
    maxpool_fail += maxpool_rows(tape.constant(x)).value() != maxpool_rows(tape.constant(shuffled)).value();

    const auto preds = crowd(rng, 14);
    const auto split = select_predictions(preds, 0.5);
    const Tensor2 q = random_matrix(static_cast<Eigen::Index>(split.noisy.size()), config.dim, rng);
    const Tensor2 base = relation_features(tape, split.noisy, tape.constant(q), split.accepted, config, params).value();
    auto accepted = split.accepted;
    std::shuffle(accepted.begin(), accepted.end(), rng);
    relation_fail += relation_features(tape, split.noisy, tape.constant(q), accepted, config, params).value() != base;

    std::vector<std::size_t> previous;
    for (int k = 0; k <= 20; ++k) {
      const auto current = select_predictions(preds, std::max(1e-9, k / 20.0)).accepted_positions;
      if (k > 0 && !std::includes(previous.begin(), previous.end(), current.begin(), current.end())) ++selector_fail;
      previous = current;
    }

    const auto out = run_stage(preds, random_matrix(14, config.dim, rng), config, params);
    for (std::size_t i = 0; i < preds.size(); ++i)
      accepted_fail += preds[i].score >= config.score_threshold && !(out[i] == preds[i]);

    const Tensor2 y = random_matrix(2 + t % 6, config.dim, rng);
    const BoolMatrix all = BoolMatrix::Constant(y.rows(), y.rows(), true);
    lmsa_fail += masked_attention(tape, params.attention, tape.constant(y), all).value() !=
                 multi_head_attention(tape, params.attention, tape.constant(y), tape.constant(y), nullptr).value();
  }
  const int failures = maxpool_fail + relation_fail + selector_fail + accepted_fail + lmsa_fail;
  return {failures == 0, fmt::format("100 trials each: maxpool {}, relation {}, selector {}, accepted {}, "
                                     "all-true LMSA {} failures (bit-exact)",
                                     maxpool_fail, relation_fail, selector_fail, accepted_fail, lmsa_fail)};
}

// 6 -------------------------------------------------------------------------

Verdict synthetic_end_to_end() {
  const auto t0 = Clock::now();
  const TrainConfig config;
  StageParams params(config.stage, 1);
  const TrainResult trained = train_toy(params, config);
  const ComparisonReport r = ab_compare(config, params, 200);
  const double secs = seconds_since(t0);
  const double raw_dup = static_cast<double>(r.raw.errors.duplicate);
  const double ref_dup = static_cast<double>(r.refined.errors.duplicate);
  const double reduction = raw_dup > 0 ? 1.0 - ref_dup / raw_dup : 0.0;
  const bool pass = reduction >= 0.30 && r.refined.ji > r.raw.ji && r.refined.ap >= r.raw.ap - 0.005 && secs <= 600.0;
  return {pass, fmt::format("{} steps, loss {:.4f} -> {:.4f}; duplicates raw {} / nms {} / refined {} "
                            "({:.1f}% fewer); JI raw {:.4f} refined {:.4f}; AP raw {:.4f} refined {:.4f} "
                            "nms {:.4f}; {:.1f}s",
                            trained.step_losses.size(), trained.epoch_losses.front(), trained.epoch_losses.back(),
                            r.raw.errors.duplicate, r.nms.errors.duplicate, r.refined.errors.duplicate,
                            100.0 * reduction, r.raw.ji, r.refined.ji, r.raw.ap, r.refined.ap, r.nms.ap, secs)};
}

// 7 -------------------------------------------------------------------------

Verdict calibration() {
  const auto t0 = Clock::now();
  SceneSpec spec;
  double objects = 0.0, overlaps = 0.0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    spec.seed = s;
    const auto gt = generate_scene(spec);
    objects += static_cast<double>(gt.boxes.size());
    overlaps += static_cast<double>(count_overlaps(gt.boxes));
  }
  objects /= 1000.0;
  overlaps /= 1000.0;
  const double secs = seconds_since(t0);
  return {std::abs(objects - 22.64) <= 0.1 * 22.64 && std::abs(overlaps - 2.40) <= 0.1 * 2.40 && secs < 60.0,
          fmt::format("objects/img {:.3f} (22.64 +-10%), overlaps/img {:.3f} (2.40 +-10%), {:.2f}s", objects,
                      overlaps, secs)};
}

// 8 -------------------------------------------------------------------------

struct Invocation {
  int code = -1;
  std::string out;
};

Invocation invoke(const std::string& cli, const std::string& args) {
  const std::string cmd = "\"" + cli + "\" " + args + " 2>/dev/null";
  Invocation r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  for (std::size_t n; (n = fread(buf, 1, sizeof buf, pipe)) > 0;) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

Verdict cli_determinism(const std::string& cli) {
  const fs::path root = fs::temp_directory_path() / fmt::format("progdet_acceptance_{}", getpid());
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string config = (root / "run.ini").string();
  io::write_file(config,
                 "[scene]\nseed = 11\nimages = 8\n[stage]\ndim = 16\nencoding_dim = 20\nheads = 2\n"
                 "[train]\nseed = 12\nepochs = 2\nscenes_per_epoch = 30\n");

  // Each command's stdout plus the files it writes, hashed per run.
  auto run_all = [&](const std::string& tag) {
    const fs::path d = root / tag;
    fs::create_directories(d);
    const std::string sim = (d / "sim").string(), ckpt = (d / "stage.ckpt").string();
    const std::string gt = sim + "/gt.odgt", det = sim + "/detections.jsonl", feats = sim + "/features.jsonl";
    const std::vector<std::pair<std::string, std::vector<std::string>>> commands = {
        {"simulate " + config + " --out " + sim, {"gt.odgt", "detections.jsonl", "features.jsonl", "manifest.json"}},
        {"train " + config + " --out " + ckpt, {}},
        {"train " + config + " --strategy merged --out " + (d / "merged.ckpt").string(), {}},
        {"eval --gt " + gt + " --det " + det + " --curves " + (d / "curves").string(), {}},
        {"analyze --gt " + gt + " --det " + det + " --out " + (d / "analysis").string(), {}},
        {"refine --gt " + gt + " --det " + det + " --features " + feats + " --checkpoint " + ckpt + " --out " +
             (d / "refined.jsonl").string(),
         {}},
        {"refine --gt " + gt + " --det " + det + " --features " + feats + " --checkpoint " + ckpt + " --sweep", {}},
    };
    std::vector<std::string> hashes;
    int failures = 0;
    for (const auto& [args, _] : commands) {
      const Invocation r = invoke(cli, args);
      failures += r.code != 0;
      // Paths differ between the two runs; hash stdout with them removed.
      std::string out = r.out;
      for (std::size_t p; (p = out.find(d.string())) != std::string::npos;) out.erase(p, d.string().size());
      hashes.push_back(io::content_hash(out));
    }
    for (const auto& entry : fs::recursive_directory_iterator(d)) {
      if (entry.is_regular_file())
        hashes.push_back(fs::relative(entry.path(), d).string() + "=" + io::content_hash(io::read_file(entry.path())));
    }
    std::sort(hashes.begin() + static_cast<long>(commands.size()), hashes.end());
    return std::pair{failures, hashes};
  };
  const auto [fail_a, a] = run_all("a");
  const auto [fail_b, b] = run_all("b");
  std::size_t differing = 0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) differing += a[i] != b[i];
  fs::remove_all(root);
  return {fail_a == 0 && fail_b == 0 && a.size() == b.size() && differing == 0,
          fmt::format("7 commands x 2 runs, {} artifacts hashed per run, {} failed invocations, {} differing hashes",
                      a.size(), fail_a + fail_b, differing)};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: acceptance <path-to-progdet>\n");
    return 2;
  }
  const std::string cli = argv[1];
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"hungarian matches brute force", hungarian_oracle},
      {"progressive assignment contract", assignment_contract},
      {"gradient suite", gradient_suite},
      {"geometry and metrics oracles", geometry_metrics_oracles},
      {"invariance suite", invariance_suite},
      {"synthetic end-to-end refinement", synthetic_end_to_end},
      {"scene generator calibration", calibration},
      {"cli determinism", [&] { return cli_determinism(cli); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
