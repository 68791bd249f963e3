// progdet: evaluate, analyze, simulate, train and refine from the command line.

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "progdet/checkpoint.hpp"
#include "progdet/io.hpp"
#include "progdet/metrics.hpp"
#include "progdet/scene.hpp"
#include "progdet/stage.hpp"
#include "progdet/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace progdet;

namespace {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kMissingFile = 2,
  kParse = 3,
  kUnknownId = 4,
  kConfig = 5,
  kDivergence = 6,
  kMisalignment = 7,
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MisalignmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs fn(0..n-1) on up to `jobs` threads. Each index owns its result slot;
/// the lowest failing index rethrows.
template <typename Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    for (unsigned j = 0; j < jobs; ++j)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

unsigned default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

std::string read_input(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw io::MissingFileError("missing file " + path.string());
  return io::read_file(path);
}

void emit(const std::optional<fs::path>& out, const std::string& text) {
  if (out)
    io::write_file(*out, text);
  else
    std::cout << text;
}

std::optional<std::string> as_filter(const std::string& cls) {
  if (cls.empty()) return std::nullopt;
  return cls;
}

struct Summary {
  double ap = 0.0;
  double mr2 = 0.0;
  double ji = 0.0;
  ApResult curve;
};

Summary summarize(const std::vector<EvalScene>& scenes, const EvalConfig& config, unsigned jobs) {
  Summary s;
  parallel_for(3, jobs, [&](std::size_t k) {
    if (k == 0) s.curve = average_precision(scenes, config);
    if (k == 1) s.mr2 = log_average_miss_rate(scenes, config);
    if (k == 2) s.ji = jaccard_index(scenes, config);
  });
  s.ap = s.curve.ap;
  return s;
}

// eval ----------------------------------------------------------------------

struct EvalOptions {
  std::string gt;
  std::string det;
  double iou = 0.5;
  double ji_cutoff = 0.5;
  std::string cls;
  std::string curves;
  unsigned jobs = default_jobs();
};

int cmd_eval(const EvalOptions& o) {
  const std::string gt_text = read_input(o.gt);
  const std::string det_text = read_input(o.det);
  const auto gt = io::parse_odgt(gt_text, o.gt);
  const auto det = io::parse_detections(det_text, o.det);
  const auto scenes = io::build_scenes(gt, det, as_filter(o.cls));

  EvalConfig config;
  config.iou_threshold = o.iou;
  config.ji_score_cutoff = o.ji_cutoff;
  const Summary s = summarize(scenes, config, o.jobs);

  if (!o.curves.empty()) {
    fs::create_directories(o.curves);
    io::write_file(fs::path(o.curves) / "fp_tp.csv", io::fp_tp_csv(s.curve));
    io::write_file(fs::path(o.curves) / "pr.csv", io::pr_csv(s.curve));
  }
  json out = {{"ap", s.ap},
              {"mr2", s.mr2},
              {"ji", s.ji},
              {"images", scenes.size()},
              {"manifest",
               {{"gt_hash", io::content_hash(gt_text)},
                {"det_hash", io::content_hash(det_text)},
                {"iou", o.iou},
                {"ji_cutoff", o.ji_cutoff},
                {"class", o.cls}}}};
  std::cout << out.dump(2) << '\n';
  return kOk;
}

// analyze -------------------------------------------------------------------

struct AnalyzeOptions {
  std::string gt;
  std::string det;
  double recall = 0.9;
  std::string bins = "8";
  std::string cls;
  std::string out;
};

/// A bin count ("8") or explicit comma-separated edges ("0,0.5,1").
std::vector<double> parse_bins(const std::string& spec) {
  auto number = [&](std::string_view s, double& v) {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    return ec == std::errc() && ptr == s.data() + s.size();
  };
  if (spec.find(',') == std::string::npos) {
    int count = 0;
    auto [ptr, ec] = std::from_chars(spec.data(), spec.data() + spec.size(), count);
    if (ec != std::errc() || ptr != spec.data() + spec.size() || count < 1)
      throw io::ConfigError("--bins must be a positive integer or a list of edges: " + spec);
    return uniform_bin_edges(count);
  }
  std::vector<double> edges;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const std::size_t end = std::min(spec.find(',', start), spec.size());
    double v = 0.0;
    if (!number(std::string_view(spec).substr(start, end - start), v))
      throw io::ConfigError("--bins edge is not a number: " + spec);
    edges.push_back(v);
    start = end + 1;
  }
  bool ok = edges.size() >= 2 && edges.front() == 0.0 && edges.back() == 1.0;
  for (std::size_t i = 1; ok && i < edges.size(); ++i) ok = edges[i] > edges[i - 1];
  if (!ok) throw io::ConfigError("--bins edges must increase strictly from 0 to 1: " + spec);
  return edges;
}

int cmd_analyze(const AnalyzeOptions& o) {
  const std::vector<double> edges = parse_bins(o.bins);
  if (!(o.recall > 0.0 && o.recall <= 1.0)) throw io::ConfigError("--recall must lie in (0, 1]");
  const std::string gt_text = read_input(o.gt);
  const std::string det_text = read_input(o.det);
  const auto scenes = io::build_scenes(io::parse_odgt(gt_text, o.gt),
                                       io::parse_detections(det_text, o.det), as_filter(o.cls));

  const ErrorReport report = error_decomposition(scenes, o.recall);
  const auto histogram = score_histogram(scenes, edges);
  json out = json::parse(io::error_report_json(report));
  out["manifest"] = {{"gt_hash", io::content_hash(gt_text)},
                     {"det_hash", io::content_hash(det_text)},
                     {"recall", o.recall},
                     {"bins", o.bins}};
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    io::write_file(fs::path(o.out) / "errors.json", out.dump(2) + "\n");
    io::write_file(fs::path(o.out) / "histogram.csv", io::histogram_csv(histogram));
  }
  std::cout << out.dump(2) << '\n';
  return kOk;
}

// simulate ------------------------------------------------------------------

struct SimulateOptions {
  std::string config;
  std::string out;
};

json scene_spec_json(const SceneSpec& s) {
  return {{"objects_per_image", s.objects_per_image},
          {"overlaps_per_image", s.overlaps_per_image},
          {"width", s.width},
          {"height", s.height},
          {"min_height", s.min_height},
          {"max_height", s.max_height},
          {"seed", s.seed}};
}

json corruption_json(const CorruptionSpec& c) {
  return {{"jitter", c.jitter},
          {"duplicate_rate", c.duplicate_rate},
          {"dropout_rate", c.dropout_rate},
          {"background_per_image", c.background_per_image},
          {"score_noise", c.score_noise},
          {"feature_noise", c.feature_noise},
          {"score_evidence", c.score_evidence}};
}

int cmd_simulate(const SimulateOptions& o) {
  const std::string text = read_input(o.config);
  const io::ParsedConfig cfg = io::parse_config(text);
  if (!cfg.has_scene_seed) throw io::ConfigError("scene.seed is required for simulate");
  const auto& sim = cfg.simulation;

  std::vector<io::OdgtRecord> gt;
  std::vector<io::DetectionRecord> det;
  std::vector<io::FeatureRecord> features;
  for (int i = 0; i < sim.images; ++i) {
    const std::string id = fmt::format("synth_{:05d}", i);
    SyntheticScene scene;
    try {
      scene = make_synthetic_scene(sim.scene, sim.corruption, sim.dim, sim.scene.seed,
                                   static_cast<std::uint64_t>(i), false);
    } catch (const InfeasibleSceneError& e) {
      throw io::ConfigError(e.what());
    }
    io::OdgtRecord g{id, {}};
    for (const auto& b : scene.truth.boxes) g.gtboxes.push_back({"person", io::xywh_box(b), false});
    io::DetectionRecord d{id, {}};
    for (const auto& p : scene.corrupted.predictions)
      d.dtboxes.push_back({io::xywh_box(p.box), p.score, "person"});
    gt.push_back(std::move(g));
    det.push_back(std::move(d));
    features.push_back({id, scene.corrupted.queries});
  }

  const fs::path dir(o.out);
  fs::create_directories(dir);
  const std::map<std::string, std::string> files = {{"gt.odgt", io::serialize_odgt(gt)},
                                                    {"detections.jsonl", io::serialize_detections(det)},
                                                    {"features.jsonl", io::serialize_features(features)}};
  json hashes = json::object();
  for (const auto& [name, body] : files) {
    io::write_file(dir / name, body);
    hashes[name] = io::content_hash(body);
  }
  json manifest = {{"config_hash", io::content_hash(text)},
                   {"seed", sim.scene.seed},
                   {"images", sim.images},
                   {"dim", sim.dim},
                   {"scene", scene_spec_json(sim.scene)},
                   {"corruption", corruption_json(sim.corruption)},
                   {"files", hashes}};
  io::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  std::cout << manifest.dump(2) << '\n';
  return kOk;
}

// train ---------------------------------------------------------------------

struct TrainOptions {
  std::string config;
  std::string strategy;
  std::string out;
  std::string loss;
};

int cmd_train(const TrainOptions& o) {
  const std::string text = read_input(o.config);
  io::ParsedConfig cfg = io::parse_config(text);
  if (!cfg.has_train_seed) throw io::ConfigError("train.seed is required for train");
  TrainConfig tc = cfg.train;
  if (o.strategy == "progressive") tc.strategy = AssignmentStrategy::Progressive;
  if (o.strategy == "merged") tc.strategy = AssignmentStrategy::Merged;

  StageParams params(tc.stage, cfg.init_seed);
  const TrainResult result = train_toy(params, tc);

  Param heads("meta.heads", Tensor2::Constant(1, 1, tc.stage.heads));
  std::vector<const Param*> stored = std::as_const(params).all();
  stored.push_back(&heads);
  save_checkpoint(o.out, stored);

  const fs::path loss_path = o.loss.empty() ? fs::path(o.out + ".loss.csv") : fs::path(o.loss);
  const std::string loss = io::loss_csv(result);
  io::write_file(loss_path, loss);

  json out = {{"steps", result.step_losses.size()},
              {"epoch_losses", result.epoch_losses},
              {"strategy", tc.strategy == AssignmentStrategy::Merged ? "merged" : "progressive"},
              {"manifest",
               {{"config_hash", io::content_hash(text)},
                {"checkpoint_hash", io::content_hash(io::read_file(o.out))},
                {"loss_hash", io::content_hash(loss)}}}};
  std::cout << out.dump(2) << '\n';
  return kOk;
}

// refine --------------------------------------------------------------------

struct RefineOptions {
  std::string gt;
  std::string det;
  std::string features;
  std::string checkpoint;
  double s = 0.7;
  double theta = 0.4;
  bool sweep = false;
  bool passthrough = false;
  std::string out;
  unsigned jobs = default_jobs();
};

struct LoadedStage {
  StageConfig config;
  std::optional<StageParams> params;
};

LoadedStage load_stage(const std::string& path) {
  if (!fs::is_regular_file(path)) throw io::MissingFileError("missing checkpoint " + path);
  ParamMap stored;
  try {
    stored = load_checkpoint(path);
  } catch (const CheckpointError& e) {
    throw io::ParseError(path, 0, e.what());
  }
  auto shape = [&](const std::string& name) -> const Tensor2& {
    auto it = stored.find(name);
    if (it == stored.end()) throw io::ParseError(path, 0, "checkpoint lacks " + name);
    return it->second;
  };
  LoadedStage out;
  const Tensor2& emb = shape("updater.embeddings");
  out.config.query_capacity = static_cast<int>(emb.rows());
  out.config.dim = static_cast<int>(emb.cols());
  out.config.encoding_dim = static_cast<int>(shape("relation.geometry.0.weight").rows());
  if (auto it = stored.find("meta.heads"); it != stored.end())
    out.config.heads = static_cast<int>(it->second(0, 0));
  out.params.emplace(out.config, 0);
  try {
    restore_params(stored, out.params->all());
  } catch (const CheckpointError& e) {
    throw io::ParseError(path, 0, e.what());
  }
  return out;
}

struct RefineInputs {
  std::vector<io::DetectionRecord> det;
  std::vector<Tensor2> queries;  // aligned with det
};

RefineInputs load_refine_inputs(const RefineOptions& o, std::optional<int> dim) {
  RefineInputs in;
  in.det = io::parse_detections(read_input(o.det), o.det);
  if (o.passthrough && o.features.empty()) return in;
  std::map<std::string, Tensor2> by_id;
  for (auto& f : io::parse_features(read_input(o.features), o.features))
    by_id[f.id] = std::move(f.features);
  for (const auto& rec : in.det) {
    auto it = by_id.find(rec.id);
    if (it == by_id.end()) throw MisalignmentError("no features for image " + rec.id);
    const Tensor2& q = it->second;
    if (q.rows() != static_cast<Eigen::Index>(rec.dtboxes.size()))
      throw MisalignmentError(fmt::format("image {}: {} feature rows for {} detections", rec.id,
                                          q.rows(), rec.dtboxes.size()));
    if (dim && q.rows() > 0 && q.cols() != *dim)
      throw MisalignmentError(
          fmt::format("image {}: feature width {} does not match checkpoint {}", rec.id, q.cols(), *dim));
    in.queries.push_back(q);
  }
  return in;
}

std::vector<io::DetectionRecord> refine_records(const RefineInputs& in, const LoadedStage* stage,
                                                const StageConfig& config, unsigned jobs) {
  std::vector<io::DetectionRecord> out = in.det;
  if (!stage) return out;
  for (std::size_t i = 0; i < in.det.size(); ++i)
    if (in.det[i].dtboxes.size() > static_cast<std::size_t>(config.query_capacity))
      throw MisalignmentError(fmt::format("image {}: {} detections exceed query capacity {}",
                                          in.det[i].id, in.det[i].dtboxes.size(),
                                          config.query_capacity));
  parallel_for(in.det.size(), jobs, [&](std::size_t i) {
    const auto preds = io::to_predictions(in.det[i]);
    const auto refined = run_stage(preds, in.queries[i], config, *stage->params);
    for (std::size_t k = 0; k < refined.size(); ++k) out[i].dtboxes[k].score = refined[k].score;
  });
  return out;
}

int cmd_refine(RefineOptions o) {
  if (o.s > 1.0) {
    std::cerr << fmt::format("warning: s={} clamped to 1\n", o.s);
    o.s = 1.0;
  }
  if (o.sweep && o.gt.empty()) throw UsageError("--sweep requires --gt");
  if (!o.passthrough && o.checkpoint.empty()) throw UsageError("--checkpoint is required");
  if (!o.passthrough && o.features.empty()) throw UsageError("--features is required");

  std::optional<LoadedStage> stage;
  if (!o.passthrough) stage = load_stage(o.checkpoint);
  const RefineInputs in =
      load_refine_inputs(o, stage ? std::optional<int>(stage->config.dim) : std::nullopt);

  std::vector<io::OdgtRecord> gt;
  if (!o.gt.empty()) {
    gt = io::parse_odgt(read_input(o.gt), o.gt);
    io::build_scenes(gt, in.det);  // rejects unknown IDs
  }

  StageConfig config = stage ? stage->config : StageConfig{};
  config.iou_threshold = o.theta;
  auto run = [&](double s) {
    config.score_threshold = s;
    try {
      config.validate();
    } catch (const std::invalid_argument& e) {
      throw io::ConfigError(e.what());
    }
    return refine_records(in, stage ? &*stage : nullptr, config, o.jobs);
  };

  const std::optional<fs::path> out =
      o.out.empty() ? std::nullopt : std::optional<fs::path>(o.out);
  auto finish = [&](const std::string& body) {
    emit(out, body);
    if (!out) return;
    auto hash_of = [](const std::string& path) {
      return path.empty() ? std::string() : io::content_hash(io::read_file(path));
    };
    const json manifest = {{"det_hash", hash_of(o.det)},
                           {"features_hash", hash_of(o.features)},
                           {"checkpoint_hash", o.passthrough ? std::string() : hash_of(o.checkpoint)},
                           {"gt_hash", hash_of(o.gt)},
                           {"s", o.s},
                           {"theta", o.theta},
                           {"sweep", o.sweep},
                           {"passthrough", o.passthrough},
                           {"output_hash", io::content_hash(body)}};
    io::write_file(fs::path(o.out + ".manifest.json"), manifest.dump(2) + "\n");
  };
  if (!o.sweep) {
    finish(io::serialize_detections(run(o.s)));
    return kOk;
  }
  std::string csv = "s,ap,mr2,ji,duplicate\n";
  for (double s : {0.5, 0.6, 0.7, 0.8, 0.9}) {
    const auto scenes = io::build_scenes(gt, run(s));
    const Summary sm = summarize(scenes, EvalConfig{}, o.jobs);
    const ErrorReport errors = error_decomposition(scenes);
    csv += fmt::format("{},{},{},{},{}\n", s, sm.ap, sm.mr2, sm.ji, errors.duplicate);
  }
  finish(csv);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Progressive refinement of crowded detections: evaluation, analysis, simulation"};
  app.require_subcommand(1);

  EvalOptions eval;
  auto* e = app.add_subcommand("eval", "AP, MR-2 and JI of detections against ODGT ground truth");
  e->add_option("--gt", eval.gt, "ground-truth ODGT file")->required();
  e->add_option("--det", eval.det, "detection JSON-lines file")->required();
  e->add_option("--iou", eval.iou, "IoU threshold for AP matching")->check(CLI::Range(0.0, 1.0));
  e->add_option("--ji-cutoff", eval.ji_cutoff, "score cutoff for JI")->check(CLI::Range(0.0, 1.0));
  e->add_option("--class", eval.cls, "evaluate only this tag");
  e->add_option("--curves", eval.curves, "directory for fp_tp.csv and pr.csv");
  e->add_option("--jobs", eval.jobs, "worker threads")->check(CLI::PositiveNumber);

  AnalyzeOptions analyze;
  auto* a = app.add_subcommand("analyze", "false-positive error types and score histogram");
  a->add_option("--gt", analyze.gt, "ground-truth ODGT file")->required();
  a->add_option("--det", analyze.det, "detection JSON-lines file")->required();
  a->add_option("--recall", analyze.recall, "operating recall");
  a->add_option("--bins", analyze.bins, "bin count or comma-separated edges over [0,1]");
  a->add_option("--class", analyze.cls, "analyze only this tag");
  a->add_option("--out", analyze.out, "directory for errors.json and histogram.csv");

  SimulateOptions simulate;
  auto* s = app.add_subcommand("simulate", "write synthetic scenes and corrupted detections");
  s->add_option("config", simulate.config, "config file")->required();
  s->add_option("--out", simulate.out, "output directory")->required();

  TrainOptions train;
  auto* t = app.add_subcommand("train", "train the refinement stage on synthetic scenes");
  t->add_option("config", train.config, "config file")->required();
  t->add_option("--strategy", train.strategy, "label assignment")
      ->check(CLI::IsMember({"progressive", "merged"}));
  t->add_option("--out", train.out, "checkpoint path")->required();
  t->add_option("--loss", train.loss, "loss-trace CSV (default: <out>.loss.csv)");

  RefineOptions refine;
  auto* r = app.add_subcommand("refine", "rescore noisy detections with a trained stage");
  r->add_option("--gt", refine.gt, "ground-truth ODGT file (ID check, required for --sweep)");
  r->add_option("--det", refine.det, "detection JSON-lines file")->required();
  r->add_option("--features", refine.features, "query features JSON-lines file");
  r->add_option("--checkpoint", refine.checkpoint, "trained stage checkpoint");
  r->add_option("-s,--score-threshold", refine.s, "acceptance threshold s");
  r->add_option("--theta", refine.theta, "neighbor IoU threshold")->check(CLI::Range(0.0, 1.0));
  r->add_flag("--sweep", refine.sweep, "emit one summary row per s in 0.5..0.9");
  r->add_flag("--passthrough", refine.passthrough, "copy detections without rescoring");
  r->add_option("--out", refine.out, "output file, with <out>.manifest.json beside it (default: stdout)");
  r->add_option("--jobs", refine.jobs, "worker threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kUsage;
  }

  try {
    if (*e) return cmd_eval(eval);
    if (*a) return cmd_analyze(analyze);
    if (*s) return cmd_simulate(simulate);
    if (*t) return cmd_train(train);
    if (*r) return cmd_refine(refine);
  } catch (const UsageError& ex) {
    std::cerr << "usage error: " << ex.what() << '\n';
    return kUsage;
  } catch (const io::MissingFileError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kMissingFile;
  } catch (const io::ParseError& ex) {
    std::cerr << "parse error: " << ex.what() << '\n';
    return kParse;
  } catch (const io::UnknownImageError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kUnknownId;
  } catch (const io::ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << '\n';
    return kConfig;
  } catch (const DivergenceError& ex) {
    std::cerr << "training diverged: " << ex.what() << '\n';
    return kDivergence;
  } catch (const MisalignmentError& ex) {
    std::cerr << "misaligned input: " << ex.what() << '\n';
    return kMisalignment;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
