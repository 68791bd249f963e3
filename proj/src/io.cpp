#include "progdet/io.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <json.hpp>

namespace progdet::io {

using nlohmann::json;

namespace {

template <typename Fn>
void for_each_line(const std::string& text, const std::string& name, Fn&& fn) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(name, number, e.what());
    }
    try {
      fn(j, number);
    } catch (const json::exception& e) {
      throw ParseError(name, number, e.what());
    }
  }
}

std::array<double, 4> read_xywh(const json& j, const std::string& name, std::size_t line) {
  if (!j.is_array() || j.size() != 4) throw ParseError(name, line, "box must be [x, y, w, h]");
  std::array<double, 4> out{};
  for (std::size_t k = 0; k < 4; ++k) {
    if (!j[k].is_number()) throw ParseError(name, line, "box entries must be numbers");
    out[k] = j[k].get<double>();
  }
  if (out[2] < 0.0 || out[3] < 0.0) throw ParseError(name, line, "box width/height negative");
  return out;
}

json xywh_json(const std::array<double, 4>& b) { return json::array({b[0], b[1], b[2], b[3]}); }

}  // namespace

BoundingBox corner_box(const std::array<double, 4>& b) {
  return BoundingBox::from_xywh(b[0], b[1], b[2], b[3]);
}

std::array<double, 4> xywh_box(const BoundingBox& box) {
  return {box.x1, box.y1, box.width(), box.height()};
}

std::vector<OdgtRecord> parse_odgt(const std::string& text, const std::string& name) {
  std::vector<OdgtRecord> out;
  for_each_line(text, name, [&](const json& j, std::size_t line) {
    OdgtRecord rec;
    rec.id = j.at("ID").get<std::string>();
    for (const json& g : j.value("gtboxes", json::array())) {
      OdgtBox box;
      box.tag = g.value("tag", std::string("person"));
      box.fbox = read_xywh(g.at("fbox"), name, line);
      if (g.contains("extra") && g["extra"].contains("ignore"))
        box.ignore = g["extra"]["ignore"].get<int>() != 0;
      rec.gtboxes.push_back(std::move(box));
    }
    out.push_back(std::move(rec));
  });
  return out;
}

std::vector<DetectionRecord> parse_detections(const std::string& text, const std::string& name) {
  std::vector<DetectionRecord> out;
  for_each_line(text, name, [&](const json& j, std::size_t line) {
    DetectionRecord rec;
    rec.id = j.at("ID").get<std::string>();
    for (const json& d : j.value("dtboxes", json::array())) {
      DetectionBox box;
      box.box = read_xywh(d.at("box"), name, line);
      box.score = d.at("score").get<double>();
      if (!(box.score >= 0.0 && box.score <= 1.0))
        throw ParseError(name, line, "score outside [0, 1]");
      box.tag = d.value("tag", std::string("person"));
      rec.dtboxes.push_back(std::move(box));
    }
    out.push_back(std::move(rec));
  });
  return out;
}

std::vector<FeatureRecord> parse_features(const std::string& text, const std::string& name) {
  std::vector<FeatureRecord> out;
  for_each_line(text, name, [&](const json& j, std::size_t line) {
    FeatureRecord rec;
    rec.id = j.at("ID").get<std::string>();
    const json& rows = j.at("features");
    if (!rows.is_array()) throw ParseError(name, line, "features must be an array of rows");
    const std::size_t cols = rows.empty() ? 0 : rows[0].size();
    rec.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (!rows[r].is_array() || rows[r].size() != cols)
        throw ParseError(name, line, "feature rows must share one length");
      for (std::size_t c = 0; c < cols; ++c)
        rec.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            rows[r][c].get<double>();
    }
    out.push_back(std::move(rec));
  });
  return out;
}

std::string serialize_odgt(const std::vector<OdgtRecord>& records) {
  std::string out;
  for (const auto& rec : records) {
    json boxes = json::array();
    for (const auto& b : rec.gtboxes)
      boxes.push_back({{"tag", b.tag},
                       {"fbox", xywh_json(b.fbox)},
                       {"extra", {{"ignore", b.ignore ? 1 : 0}}}});
    out += json{{"ID", rec.id}, {"gtboxes", boxes}}.dump();
    out += '\n';
  }
  return out;
}

std::string serialize_detections(const std::vector<DetectionRecord>& records) {
  std::string out;
  for (const auto& rec : records) {
    json boxes = json::array();
    for (const auto& b : rec.dtboxes)
      boxes.push_back({{"box", xywh_json(b.box)}, {"score", b.score}, {"tag", b.tag}});
    out += json{{"ID", rec.id}, {"dtboxes", boxes}}.dump();
    out += '\n';
  }
  return out;
}

std::string serialize_features(const std::vector<FeatureRecord>& records) {
  std::string out;
  for (const auto& rec : records) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < rec.features.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < rec.features.cols(); ++c) row.push_back(rec.features(r, c));
      rows.push_back(std::move(row));
    }
    out += json{{"ID", rec.id}, {"features", rows}}.dump();
    out += '\n';
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingFileError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

GroundTruth to_ground_truth(const OdgtRecord& record,
                            const std::optional<std::string>& class_filter) {
  GroundTruth gt;
  for (const auto& b : record.gtboxes) {
    if (b.ignore || b.tag == "mask") {
      gt.ignore_regions.push_back(corner_box(b.fbox));
    } else if (!class_filter || b.tag == *class_filter) {
      gt.boxes.push_back(corner_box(b.fbox));
    }
  }
  return gt;
}

std::vector<Prediction> to_predictions(const DetectionRecord& record,
                                       const std::optional<std::string>& class_filter) {
  std::vector<Prediction> out;
  for (std::size_t i = 0; i < record.dtboxes.size(); ++i) {
    const auto& d = record.dtboxes[i];
    if (class_filter && d.tag != *class_filter) continue;
    out.push_back({corner_box(d.box), d.score, i});
  }
  return out;
}

std::vector<EvalScene> build_scenes(const std::vector<OdgtRecord>& gt,
                                    const std::vector<DetectionRecord>& dets,
                                    const std::optional<std::string>& class_filter) {
  std::map<std::string, std::size_t> index;
  std::vector<EvalScene> scenes;
  for (const auto& rec : gt) {
    index.emplace(rec.id, scenes.size());
    scenes.push_back({rec.id, {}, to_ground_truth(rec, class_filter)});
  }
  for (const auto& rec : dets) {
    auto it = index.find(rec.id);
    if (it == index.end()) throw UnknownImageError("detections reference unknown image ID " + rec.id);
    auto preds = to_predictions(rec, class_filter);
    auto& target = scenes[it->second].detections;
    target.insert(target.end(), preds.begin(), preds.end());
  }
  return scenes;
}

namespace {

using Setter = std::function<void(const std::string&)>;

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("invalid number for " + key + ": " + v);
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("invalid integer for " + key + ": " + v);
  return out;
}

int to_int(const std::string& key, const std::string& v) {
  const auto u = to_u64(key, v);
  if (u > 1'000'000'000ULL) throw ConfigError("value out of range for " + key);
  return static_cast<int>(u);
}

}  // namespace

ParsedConfig parse_config(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  ParsedConfig cfg;
  auto& sim = cfg.simulation;
  auto& tr = cfg.train;
  auto num = [](double& slot) {
    return [&slot](const std::string& v) { slot = to_double("value", v); };
  };
  auto integer = [](int& slot) { return [&slot](const std::string& v) { slot = to_int("value", v); }; };

  std::map<std::string, std::map<std::string, Setter>> keys;
  keys["scene"] = {
      {"objects_per_image", num(sim.scene.objects_per_image)},
      {"overlaps_per_image", num(sim.scene.overlaps_per_image)},
      {"width", num(sim.scene.width)},
      {"height", num(sim.scene.height)},
      {"min_height", num(sim.scene.min_height)},
      {"max_height", num(sim.scene.max_height)},
      {"images", integer(sim.images)},
      {"seed",
       [&](const std::string& v) {
         sim.scene.seed = to_u64("scene.seed", v);
         cfg.has_scene_seed = true;
       }},
  };
  keys["corruption"] = {
      {"jitter", num(sim.corruption.jitter)},
      {"duplicate_rate", num(sim.corruption.duplicate_rate)},
      {"dropout_rate", num(sim.corruption.dropout_rate)},
      {"background_per_image", num(sim.corruption.background_per_image)},
      {"score_noise", num(sim.corruption.score_noise)},
      {"feature_noise", num(sim.corruption.feature_noise)},
      {"score_evidence", num(sim.corruption.score_evidence)},
  };
  auto& st = tr.stage;
  keys["stage"] = {
      {"score_threshold", num(st.score_threshold)},
      {"iou_threshold", num(st.iou_threshold)},
      {"dim", integer(st.dim)},
      {"encoding_dim", integer(st.encoding_dim)},
      {"heads", integer(st.heads)},
      {"query_capacity", integer(st.query_capacity)},
      {"lambda_cls", num(st.weights.cls)},
      {"lambda_l1", num(st.weights.l1)},
      {"lambda_giou", num(st.weights.giou)},
      {"negative_filter", num(st.negative_filter)},
      {"ignore_ioa", num(st.ignore_ioa)},
  };
  keys["train"] = {
      {"epochs", integer(tr.epochs)},
      {"scenes_per_epoch", integer(tr.scenes_per_epoch)},
      {"learning_rate", num(tr.learning_rate)},
      {"strategy",
       [&](const std::string& v) {
         if (v == "progressive")
           tr.strategy = AssignmentStrategy::Progressive;
         else if (v == "merged")
           tr.strategy = AssignmentStrategy::Merged;
         else
           throw ConfigError("train.strategy must be progressive or merged");
       }},
      {"seed",
       [&](const std::string& v) {
         tr.seed = to_u64("train.seed", v);
         cfg.has_train_seed = true;
       }},
      {"init_seed", [&](const std::string& v) { cfg.init_seed = to_u64("train.init_seed", v); }},
  };

  for (const auto& [section, body] : tree) {
    auto sec = keys.find(section);
    if (sec == keys.end()) throw ConfigError("unknown config section [" + section + "]");
    if (body.empty() && !body.data().empty())
      throw ConfigError("key outside of a section: " + section);
    for (const auto& [key, value] : body) {
      auto it = sec->second.find(key);
      if (it == sec->second.end()) throw ConfigError("unknown key " + section + "." + key);
      try {
        it->second(value.data());
      } catch (const ConfigError& e) {
        throw ConfigError(section + "." + key + ": " + e.what());
      }
    }
  }

  tr.scene = sim.scene;
  tr.corruption = sim.corruption;
  sim.dim = st.dim;
  try {
    st.validate();
    sim.corruption.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (st.dim % 8 != 0) throw ConfigError("stage.dim must be a multiple of 8");
  if (sim.scene.objects_per_image < 0.0 || sim.scene.overlaps_per_image < 0.0)
    throw ConfigError("scene densities must be non-negative");
  if (sim.scene.width <= 0.0 || sim.scene.height <= 0.0 ||
      sim.scene.min_height <= 0.0 || sim.scene.max_height < sim.scene.min_height ||
      sim.scene.max_height * 0.5 >= sim.scene.width || sim.scene.max_height >= sim.scene.height)
    throw ConfigError("scene geometry is inconsistent");
  return cfg;
}

std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

std::string format_number(double v) { return fmt::format("{}", v); }

std::string fp_tp_csv(const ApResult& ap) {
  std::string out = "rank,score,fp,tp\n";
  for (std::size_t k = 0; k < ap.curve.size(); ++k) {
    const auto& p = ap.curve[k];
    out += fmt::format("{},{},{},{}\n", k + 1, p.score, p.false_positives, p.true_positives);
  }
  return out;
}

std::string pr_csv(const ApResult& ap) {
  std::string out = "rank,score,precision,recall\n";
  for (std::size_t k = 0; k < ap.curve.size(); ++k) {
    const auto& p = ap.curve[k];
    const double precision =
        static_cast<double>(p.true_positives) / static_cast<double>(p.true_positives + p.false_positives);
    const double recall = ap.total_truth ? static_cast<double>(p.true_positives) /
                                               static_cast<double>(ap.total_truth)
                                         : 0.0;
    out += fmt::format("{},{},{},{}\n", k + 1, p.score, precision, recall);
  }
  return out;
}

std::string histogram_csv(const std::vector<HistogramBin>& bins) {
  std::string out = "bin_low,bin_high,tp_ratio,fp_ratio\n";
  for (const auto& b : bins) out += fmt::format("{},{},{},{}\n", b.low, b.high, b.tp_ratio, b.fp_ratio);
  return out;
}

std::string loss_csv(const TrainResult& result) {
  std::string out = "step,loss\n";
  for (std::size_t k = 0; k < result.step_losses.size(); ++k)
    out += fmt::format("{},{}\n", k + 1, result.step_losses[k]);
  return out;
}

namespace {

json errors_json(const ErrorReport& r) {
  return {{"true_positives", r.true_positives},
          {"duplicate", r.duplicate},
          {"localization", r.localization},
          {"background", r.background},
          {"missing", r.missing},
          {"false_positives", r.false_positives()},
          {"recall", r.recall},
          {"score_cutoff", r.score_cutoff}};
}

json arm_json(const ArmMetrics& m) {
  return {{"ap", m.ap}, {"mr2", m.mr2}, {"ji", m.ji}, {"errors", errors_json(m.errors)}};
}

}  // namespace

std::string error_report_json(const ErrorReport& report) { return errors_json(report).dump(2); }

std::string comparison_json(const ComparisonReport& report) {
  json j = {{"images", report.images},
            {"raw", arm_json(report.raw)},
            {"nms", arm_json(report.nms)},
            {"refined", arm_json(report.refined)}};
  return j.dump(2);
}

}  // namespace progdet::io
