#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "wsc/errors.hpp"
#include "wsc/io.hpp"
#include "wsc/sampler.hpp"

namespace {

namespace fs = std::filesystem;
using wsc::io::json;

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    std::random_device rd;
    dir_ = fs::temp_directory_path() / ("wsc_io_" + std::to_string(rd()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path path(const std::string& name) const { return dir_ / name; }

  fs::path dir_;
};

wsc::Dataset small_dataset(std::uint64_t seed = 42) {
  wsc::GenConfig g;
  g.num_videos = 6;
  g.tracks_min = 2;
  g.tracks_max = 5;
  g.space = {3, 3, 2, {3, 4}};
  g.seed = seed;
  return wsc::sample_dataset(g).dataset;
}

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const wsc::ValidationError& e) {
    return e.what();
  }
  return "";
}

using DatasetFile = TempDir;

TEST_F(DatasetFile, SaveLoadRoundTrip) {
  const auto d = small_dataset();
  wsc::io::save_dataset(d, path("d.json"));
  const auto back = wsc::io::load_dataset(path("d.json"));
  EXPECT_EQ(back, d);
  EXPECT_EQ(back.generator_seed, std::optional<std::uint64_t>(42));
}

TEST_F(DatasetFile, RoundTripIsBitExact) {
  auto d = small_dataset();
  d.videos[0].tracks[0].feat_subject[0] = 0.1 + 0.2;
  d.videos[0].tracks[0].feat_subject[1] = std::nextafter(1.0, 2.0);
  d.videos[0].tracks[0].feat_subject[2] = -4.9406564584124654e-324;
  wsc::io::save_dataset(d, path("d.json"));
  const auto back = wsc::io::load_dataset(path("d.json"));
  for (Eigen::Index k = 0; k < 3; ++k) {
    EXPECT_EQ(back.videos[0].tracks[0].feat_subject[k], d.videos[0].tracks[0].feat_subject[k]);
  }
}

TEST_F(DatasetFile, WrongFeatureLengthNamesVideoAndTrack) {
  auto j = wsc::io::to_json(small_dataset());
  j["videos"][0]["id"] = "v0";
  j["videos"][0]["tracks"][1]["feat_subject"] = {0.5, 1.5};
  std::ofstream(path("bad.json")) << j.dump();
  const auto msg = message_of([&] { wsc::io::load_dataset(path("bad.json")); });
  EXPECT_NE(msg.find("feat_subject length 2 ≠ 3 at video v0 track 1"), std::string::npos) << msg;
  EXPECT_NE(msg.find(path("bad.json").string()), std::string::npos) << msg;
}

TEST(DatasetJson, UnknownVersionRejected) {
  auto j = wsc::io::to_json(small_dataset());
  j["format_version"] = 2;
  const auto msg = message_of([&] { wsc::io::dataset_from_json(j); });
  EXPECT_NE(msg.find("unknown version 2"), std::string::npos) << msg;
}

TEST(DatasetJson, IntegerFeaturesAccepted) {
  auto j = wsc::io::to_json(small_dataset());
  j["videos"][0]["tracks"][0]["feat_subject"] = {1, -2, 3};
  const auto d = wsc::io::dataset_from_json(j);
  EXPECT_EQ(d.videos[0].tracks[0].feat_subject, Eigen::Vector3d(1, -2, 3));
}

TEST(DatasetJson, StringFeatureRejectedWithElementPath) {
  auto j = wsc::io::to_json(small_dataset());
  j["videos"][2]["tracks"][0]["feat_action"][1] = "0.5";
  const auto msg = message_of([&] { wsc::io::dataset_from_json(j); });
  EXPECT_NE(msg.find("videos[2].tracks[0].feat_action[1]"), std::string::npos) << msg;
}

TEST(DatasetJson, BooleanAndNegativeLabelsRejected) {
  auto j = wsc::io::to_json(small_dataset());
  j["videos"][0]["labels"][0][0] = true;
  EXPECT_THROW(wsc::io::dataset_from_json(j), wsc::ValidationError);
  j = wsc::io::to_json(small_dataset());
  j["videos"][0]["labels"][0][0] = -1;
  EXPECT_THROW(wsc::io::dataset_from_json(j), wsc::ValidationError);
  j = wsc::io::to_json(small_dataset());
  j["videos"][0]["labels"][0][0] = 1.5;
  EXPECT_THROW(wsc::io::dataset_from_json(j), wsc::ValidationError);
}

TEST(DatasetJson, MissingKeyAndOutOfRangeLabel) {
  auto j = wsc::io::to_json(small_dataset());
  j["videos"][1].erase("tracks");
  EXPECT_NE(message_of([&] { wsc::io::dataset_from_json(j); }).find("videos[1].tracks"),
            std::string::npos);
  j = wsc::io::to_json(small_dataset());
  j["videos"][3]["labels"] = {{7, nullptr}};
  EXPECT_THROW(wsc::io::dataset_from_json(j), wsc::ValidationError);
}

TEST_F(DatasetFile, MissingFileIsIoErrorAndGarbageIsValidation) {
  EXPECT_THROW(wsc::io::load_dataset(path("nope.json")), wsc::IoError);
  std::ofstream(path("junk.json")) << "{not json";
  EXPECT_THROW(wsc::io::load_dataset(path("junk.json")), wsc::ValidationError);
}

TEST(GenConfigJson, UnknownKeyRejected) {
  const auto msg = message_of([] { wsc::io::gen_config_from_json(json{{"space", 1}}); });
  EXPECT_NE(msg.find("space"), std::string::npos) << msg;
}

TEST(GenConfigJson, MissingKeysKeepDefaultsAndRoundTrip) {
  const auto cfg = wsc::io::gen_config_from_json(json{{"num_videos", 7}, {"tracks_per_video", 4}});
  EXPECT_EQ(cfg.num_videos, 7u);
  EXPECT_EQ(cfg.tracks_min, 4u);
  EXPECT_EQ(cfg.tracks_max, 4u);
  EXPECT_EQ(cfg.seed, 42u);
  const auto back = wsc::io::gen_config_from_json(wsc::io::to_json(cfg));
  EXPECT_EQ(wsc::io::to_json(back), wsc::io::to_json(cfg));
}

using ModelFile = TempDir;

TEST_F(ModelFile, ReloadedModelPredictsIdentically) {
  const auto all = small_dataset(9);
  wsc::Dataset train = all, test = all;
  train.videos.resize(4);
  test.videos.erase(test.videos.begin(), test.videos.begin() + 4);
  wsc::HyperParams hp;
  hp.k_max = 10;
  hp.alpha = 3.0;
  hp.penalty_c = 2.0;
  wsc::FitOptions o;
  o.seed = 11;
  const auto fitted = wsc::fit(train, hp, o);
  wsc::io::save_model(fitted.model, path("m.json"));
  const auto loaded = wsc::io::load_model(path("m.json"));
  EXPECT_EQ(wsc::io::to_json(loaded).dump(), wsc::io::to_json(fitted.model).dump());
  for (auto mode : {wsc::PredictMode::with_labels, wsc::PredictMode::free_annotation}) {
    const auto a = wsc::predict(fitted.model, test, mode, o);
    const auto b = wsc::predict(loaded, test, mode, o);
    ASSERT_EQ(a.bags.size(), b.bags.size());
    for (std::size_t i = 0; i < a.bags.size(); ++i) {
      EXPECT_EQ(a.bags[i].nu, b.bags[i].nu);
      EXPECT_EQ(a.bags[i].tau, b.bags[i].tau);
    }
  }
}

TEST_F(ModelFile, ShapeMismatchRejected) {
  const auto d = small_dataset();
  wsc::HyperParams hp;
  hp.k_max = 8;
  wsc::FitOptions o;
  o.outer_max_iters = 1;
  auto j = wsc::io::to_json(wsc::fit(d, hp, o).model);
  j["channels"][0]["phi"][2].erase(0);
  EXPECT_THROW(wsc::io::model_from_json(j), wsc::ValidationError);
  j = wsc::io::to_json(wsc::fit(d, hp, o).model);
  j["channels"][1]["sigma_k2"].erase(0);
  EXPECT_THROW(wsc::io::model_from_json(j), wsc::ValidationError);
  j = wsc::io::to_json(wsc::fit(d, hp, o).model);
  j["format_version"] = 0;
  EXPECT_THROW(wsc::io::model_from_json(j), wsc::ValidationError);
}

TEST(PredictionsJson, RoundTrip) {
  wsc::io::Predictions p;
  p.mode = wsc::PredictMode::free_annotation;
  p.variant = wsc::Variant::wsc_sibp;
  p.seed = 5;
  p.ids = {"a", "b"};
  p.bags.push_back({Eigen::MatrixXd::Constant(3, 2, 0.25), Eigen::MatrixXd::Constant(2, 3, 0.5)});
  p.bags.push_back({Eigen::MatrixXd::Constant(3, 2, 1.5), Eigen::MatrixXd::Constant(1, 3, 0.125)});
  const auto back = wsc::io::predictions_from_json(wsc::io::to_json(p));
  EXPECT_EQ(back.mode, p.mode);
  EXPECT_EQ(back.variant, p.variant);
  EXPECT_EQ(back.seed, 5u);
  EXPECT_EQ(back.ids, p.ids);
  ASSERT_EQ(back.bags.size(), 2u);
  EXPECT_EQ(back.bags[1].nu, p.bags[1].nu);
  EXPECT_EQ(back.bags[0].tau, p.bags[0].tau);
}

TEST(Tables, TraceTableHasHeaderAndRows) {
  wsc::FitReport r;
  r.trace = {{0, 12.5}, {1, 10.25}};
  EXPECT_EQ(wsc::io::trace_table(r), "iteration\tobjective\n0\t12.5\n1\t10.25\n");
}

}  // namespace
