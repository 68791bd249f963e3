#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "progdet/metrics.hpp"
#include "progdet/stage.hpp"
#include "progdet/training.hpp"

namespace progdet::io {

/// File is missing or unreadable.
class MissingFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed JSON-lines input; `line` is 1-based.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Records keep the on-disk [x, y, w, h] values so a parse/serialize round
// trip is exact; conversion to corner boxes happens on demand.

struct OdgtBox {
  std::string tag = "person";
  std::array<double, 4> fbox{};
  bool ignore = false;
};

struct OdgtRecord {
  std::string id;
  std::vector<OdgtBox> gtboxes;
};

struct DetectionBox {
  std::array<double, 4> box{};
  double score = 0.0;
  std::string tag = "person";
};

struct DetectionRecord {
  std::string id;
  std::vector<DetectionBox> dtboxes;
};

struct FeatureRecord {
  std::string id;
  Tensor2 features;  // one row per detection of the same image
};

BoundingBox corner_box(const std::array<double, 4>& xywh);
std::array<double, 4> xywh_box(const BoundingBox& box);

std::vector<OdgtRecord> parse_odgt(const std::string& text, const std::string& name = "<odgt>");
std::vector<DetectionRecord> parse_detections(const std::string& text,
                                              const std::string& name = "<detections>");
std::vector<FeatureRecord> parse_features(const std::string& text,
                                          const std::string& name = "<features>");

std::string serialize_odgt(const std::vector<OdgtRecord>& records);
std::string serialize_detections(const std::vector<DetectionRecord>& records);
std::string serialize_features(const std::vector<FeatureRecord>& records);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& contents);

/// Ground truth of one record. Boxes flagged ignore (or tagged "mask") become
/// ignore regions; with `class_filter` set, other tags are dropped.
GroundTruth to_ground_truth(const OdgtRecord& record,
                            const std::optional<std::string>& class_filter = std::nullopt);

std::vector<Prediction> to_predictions(const DetectionRecord& record,
                                       const std::optional<std::string>& class_filter = std::nullopt);

/// Unknown detection image IDs raise this with the offending ID.
class UnknownImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pairs detections with ground truth by ID, in ground-truth order. Images
/// without a detection record get an empty detection list.
std::vector<EvalScene> build_scenes(const std::vector<OdgtRecord>& gt,
                                    const std::vector<DetectionRecord>& dets,
                                    const std::optional<std::string>& class_filter = std::nullopt);

// Plain-text configuration: INI sections [scene], [corruption], [stage],
// [train] with `key = value` lines (grammar in docs/FORMATS.md).

struct SimulationConfig {
  SceneSpec scene;
  CorruptionSpec corruption;
  int images = 10;
  int dim = 256;
};

struct ParsedConfig {
  SimulationConfig simulation;
  TrainConfig train;
  std::uint64_t init_seed = 1;
  bool has_scene_seed = false;
  bool has_train_seed = false;
};

ParsedConfig parse_config(const std::string& text);

/// FNV-1a 64-bit digest, rendered as 16 hex digits.
std::string content_hash(const std::string& bytes);

// Reports.

std::string format_number(double v);
std::string fp_tp_csv(const ApResult& ap);
std::string pr_csv(const ApResult& ap);
std::string histogram_csv(const std::vector<HistogramBin>& bins);
std::string loss_csv(const TrainResult& result);

std::string error_report_json(const ErrorReport& report);
std::string comparison_json(const ComparisonReport& report);

}  // namespace progdet::io
