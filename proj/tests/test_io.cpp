#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "progdet/io.hpp"

using namespace progdet;
using namespace progdet::io;

namespace {

bool records_equal(const std::vector<OdgtRecord>& a, const std::vector<OdgtRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].id != b[i].id || a[i].gtboxes.size() != b[i].gtboxes.size()) return false;
    for (std::size_t j = 0; j < a[i].gtboxes.size(); ++j) {
      const auto &x = a[i].gtboxes[j], &y = b[i].gtboxes[j];
      if (x.tag != y.tag || x.fbox != y.fbox || x.ignore != y.ignore) return false;
    }
  }
  return true;
}

bool records_equal(const std::vector<DetectionRecord>& a, const std::vector<DetectionRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].id != b[i].id || a[i].dtboxes.size() != b[i].dtboxes.size()) return false;
    for (std::size_t j = 0; j < a[i].dtboxes.size(); ++j) {
      const auto &x = a[i].dtboxes[j], &y = b[i].dtboxes[j];
      if (x.tag != y.tag || x.box != y.box || x.score != y.score) return false;
    }
  }
  return true;
}

std::size_t parse_error_line(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

}  // namespace

TEST(Odgt, ParsesFieldsAndDefaults) {
  const std::string text =
      R"({"ID": "img1", "gtboxes": [{"tag": "person", "fbox": [1, 2, 3, 4]},)"
      R"( {"tag": "mask", "fbox": [0, 0, 5, 5], "extra": {"ignore": 1}}]})"
      "\n\n"
      R"({"ID": "img2", "gtboxes": []})"
      "\n";
  const auto recs = parse_odgt(text);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].id, "img1");
  EXPECT_FALSE(recs[0].gtboxes[0].ignore);
  EXPECT_TRUE(recs[0].gtboxes[1].ignore);
  EXPECT_EQ(corner_box(recs[0].gtboxes[0].fbox), (BoundingBox{1, 2, 4, 6}));
  const GroundTruth gt = to_ground_truth(recs[0]);
  EXPECT_EQ(gt.boxes.size(), 1u);
  EXPECT_EQ(gt.ignore_regions.size(), 1u);
}

TEST(Odgt, ClassFilter) {
  OdgtRecord r{"x", {{"person", {0, 0, 1, 1}, false}, {"car", {2, 2, 1, 1}, false}}};
  EXPECT_EQ(to_ground_truth(r, std::string("car")).boxes.size(), 1u);
  EXPECT_EQ(to_ground_truth(r).boxes.size(), 2u);
}

TEST(Odgt, ParseErrorsCarryLineNumbers) {
  const std::string good = R"({"ID": "a", "gtboxes": []})";
  EXPECT_EQ(parse_error_line([&] { parse_odgt(good + "\n" + good + "\n{broken\n"); }), 3u);
  EXPECT_EQ(parse_error_line([&] { parse_odgt(R"({"gtboxes": []})"); }), 1u);
  EXPECT_EQ(parse_error_line([&] {
              parse_odgt(good + "\n" + R"({"ID": "b", "gtboxes": [{"fbox": [0, 0, -1, 2]}]})");
            }),
            2u);
}

TEST(Odgt, RoundTripIsLossless) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1000.0);
  std::vector<OdgtRecord> recs;
  for (int i = 0; i < 20; ++i) {
    OdgtRecord r{"img_" + std::to_string(i), {}};
    for (int j = 0; j < i % 5; ++j)
      r.gtboxes.push_back({j % 2 ? "person" : "mask", {u(rng), u(rng), u(rng) / 3, 0.1 + u(rng) / 7}, j % 3 == 0});
    recs.push_back(std::move(r));
  }
  const std::string text = serialize_odgt(recs);
  const auto back = parse_odgt(text);
  EXPECT_TRUE(records_equal(recs, back));
  EXPECT_EQ(serialize_odgt(back), text);
}

TEST(Detections, RoundTripIsLossless) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<DetectionRecord> recs;
  for (int i = 0; i < 20; ++i) {
    DetectionRecord r{"img_" + std::to_string(i), {}};
    for (int j = 0; j < i % 6; ++j)
      r.dtboxes.push_back({{u(rng) * 1e3, u(rng) * 1e3, u(rng) * 100, u(rng) * 100}, u(rng), "person"});
    recs.push_back(std::move(r));
  }
  recs[3].dtboxes.push_back({{0.1, 0.2, 0.30000000000000004, 1e-7}, 1.0, "cyclist"});
  const std::string text = serialize_detections(recs);
  const auto back = parse_detections(text);
  EXPECT_TRUE(records_equal(recs, back));
  EXPECT_EQ(serialize_detections(back), text);
}

TEST(Detections, RejectsScoreOutOfRange) {
  const std::string text = R"({"ID": "a", "dtboxes": [{"box": [0, 0, 1, 1], "score": 1.5}]})";
  EXPECT_EQ(parse_error_line([&] { parse_detections(text); }), 1u);
}

TEST(Detections, PredictionsKeepRecordPositions) {
  DetectionRecord r{"a", {{{0, 0, 1, 1}, 0.5, "person"}, {{1, 1, 1, 1}, 0.6, "car"}, {{2, 2, 1, 1}, 0.7, "person"}}};
  const auto all = to_predictions(r);
  ASSERT_EQ(all.size(), 3u);
  EXPECT_EQ(all[2].query_index, 2u);
  const auto persons = to_predictions(r, std::string("person"));
  ASSERT_EQ(persons.size(), 2u);
  EXPECT_EQ(persons[1].query_index, 2u);
}

TEST(Features, RoundTripAndRaggedRows) {
  FeatureRecord f{"a", Tensor2(2, 3)};
  f.features << 0.1, -2.5, 3e-9, 4, 5, 6;
  const auto back = parse_features(serialize_features({f}));
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].features, f.features);
  EXPECT_EQ(parse_error_line([] { parse_features(R"({"ID": "a", "features": [[1, 2], [3]]})"); }), 1u);
  const auto empty = parse_features(R"({"ID": "z", "features": []})");
  EXPECT_EQ(empty[0].features.rows(), 0);
}

TEST(Scenes, UnknownImageIdIsRejected) {
  const std::vector<OdgtRecord> gt{{"a", {}}, {"b", {}}};
  const std::vector<DetectionRecord> det{{"c", {}}};
  EXPECT_THROW(build_scenes(gt, det), UnknownImageError);
}

TEST(Scenes, FollowGroundTruthOrder) {
  const std::vector<OdgtRecord> gt{{"b", {{"person", {0, 0, 2, 2}, false}}}, {"a", {}}};
  const std::vector<DetectionRecord> det{{"a", {{{0, 0, 1, 1}, 0.5, "person"}}}};
  const auto scenes = build_scenes(gt, det);
  ASSERT_EQ(scenes.size(), 2u);
  EXPECT_EQ(scenes[0].image_id, "b");
  EXPECT_TRUE(scenes[0].detections.empty());
  EXPECT_EQ(scenes[1].detections.size(), 1u);
}

TEST(Config, DefaultsWhenEmpty) {
  const ParsedConfig c = parse_config("");
  EXPECT_EQ(c.simulation.scene.objects_per_image, 22.64);
  EXPECT_EQ(c.simulation.scene.overlaps_per_image, 2.40);
  EXPECT_EQ(c.train.stage.score_threshold, 0.7);
  EXPECT_FALSE(c.has_scene_seed);
  EXPECT_FALSE(c.has_train_seed);
}

TEST(Config, ReadsSections) {
  const ParsedConfig c = parse_config(
      "# comment\n[scene]\nseed = 17\nimages = 3\nobjects_per_image = 5\n"
      "[stage]\ndim = 32\nheads = 4\nencoding_dim = 40\n"
      "[train]\nseed = 9\nstrategy = merged\nlearning_rate = 0\nepochs = 2\n");
  EXPECT_TRUE(c.has_scene_seed);
  EXPECT_EQ(c.simulation.scene.seed, 17u);
  EXPECT_EQ(c.simulation.images, 3);
  EXPECT_EQ(c.simulation.dim, 32);
  EXPECT_EQ(c.train.stage.heads, 4);
  EXPECT_EQ(c.train.strategy, AssignmentStrategy::Merged);
  EXPECT_EQ(c.train.learning_rate, 0.0);
  EXPECT_EQ(c.train.scene.objects_per_image, 5.0);
  EXPECT_EQ(c.train.seed, 9u);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("[scene]\nbogus = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[nowhere]\nx = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[scene]\nseed = abc\n"), ConfigError);
  EXPECT_THROW(parse_config("[stage]\ndim = 30\nheads = 4\n"), ConfigError);
  EXPECT_THROW(parse_config("[stage]\ndim = 12\nheads = 4\n"), ConfigError);
  EXPECT_THROW(parse_config("[train]\nstrategy = greedy\n"), ConfigError);
  EXPECT_THROW(parse_config("[corruption]\nduplicate_rate = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("[scene\n"), ConfigError);
}

TEST(Hash, Fnv1a) {
  EXPECT_EQ(content_hash(""), "cbf29ce484222325");
  EXPECT_EQ(content_hash("a"), "af63dc4c8601ec8c");
}

TEST(Csv, HeadersAndLineEndings) {
  ApResult ap;
  ap.total_truth = 2;
  ap.curve = {{0.9, 0, 1}, {0.4, 1, 1}};
  EXPECT_EQ(fp_tp_csv(ap), "rank,score,fp,tp\n1,0.9,0,1\n2,0.4,1,1\n");
  EXPECT_EQ(pr_csv(ap), "rank,score,precision,recall\n1,0.9,1,0.5\n2,0.4,0.5,0.5\n");
  std::vector<HistogramBin> bins{{0.0, 0.5, 0.25, 0.5}, {0.5, 1.0, 0.25, 0.0}};
  EXPECT_EQ(histogram_csv(bins), "bin_low,bin_high,tp_ratio,fp_ratio\n0,0.5,0.25,0.5\n0.5,1,0.25,0\n");
  TrainResult r;
  r.step_losses = {0.5, 0.25};
  EXPECT_EQ(loss_csv(r), "step,loss\n1,0.5\n2,0.25\n");
}

TEST(Reports, JsonKeys) {
  ErrorReport e;
  e.duplicate = 3;
  const auto j = nlohmann::json::parse(error_report_json(e));
  EXPECT_EQ(j.at("duplicate"), 3);
  EXPECT_TRUE(j.contains("false_positives"));
  ComparisonReport c;
  c.images = 4;
  const auto k = nlohmann::json::parse(comparison_json(c));
  EXPECT_EQ(k.at("images"), 4);
  for (const char* arm : {"raw", "nms", "refined"}) EXPECT_TRUE(k.contains(arm));
}
