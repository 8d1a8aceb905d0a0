#include "l96uq/array_file.hpp"
#include "l96uq/config.hpp"
#include "l96uq/manifest.hpp"

#include <gtest/gtest.h>

#include <bit>
#include <filesystem>
#include <fstream>

namespace {

using namespace l96uq;
namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::path{::testing::TempDir()} / ("l96uq_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(ArrayFile, RoundTripPreservesBits) {
  io::Array a;
  a.dims = {2, 3, 2};
  a.data = {0.0, -0.0, 1.5, 1e-300, -7.25, 3.0, 1e300, 2.0, 0.1, 0.2, 0.3, -1.0};
  const io::Array b = io::decode_array(io::encode_array(a));
  EXPECT_EQ(b.dims, a.dims);
  ASSERT_EQ(b.data.size(), a.data.size());
  for (std::size_t k = 0; k < a.data.size(); ++k) {
    EXPECT_EQ(std::bit_cast<std::uint64_t>(b.data[k]), std::bit_cast<std::uint64_t>(a.data[k]));
  }
  EXPECT_EQ(io::encode_array(a).size(), 16u + 3u * 8u + 12u * 8u);
}

TEST(ArrayFile, ColumnsAreStoredSampleMajor) {
  Eigen::MatrixXd m(3, 2);
  m << 1, 4, 2, 5, 3, 6;
  const io::Array a = io::from_columns(m);
  EXPECT_EQ(a.dims, (std::vector<std::uint64_t>{2, 3}));
  EXPECT_EQ(a.data, (std::vector<double>{1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(io::to_columns(a), m);
  const fs::path dir = fresh_dir("columns");
  io::write_columns(dir / "m.bin", m);
  EXPECT_EQ(io::read_columns(dir / "m.bin"), m);
  const std::vector<std::int64_t> idx{0, 4, -3, 1'000'000};
  EXPECT_EQ(io::to_indices(io::from_indices(idx)), idx);
  const Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(5, -1.0, 1.0);
  EXPECT_EQ(io::to_vector(io::from_vector(v)), v);
}

TEST(ArrayFile, CorruptionIsReported) {
  io::Array a;
  a.dims = {4};
  a.data = {1, 2, 3, 4};
  const std::string good = io::encode_array(a);
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(io::decode_array(bad_magic), io::ArrayFileError);
  std::string bad_version = good;
  bad_version[4] = 9;
  EXPECT_THROW(io::decode_array(bad_version), io::ArrayFileError);
  std::string bad_type = good;
  bad_type[8] = 2;
  EXPECT_THROW(io::decode_array(bad_type), io::ArrayFileError);
  EXPECT_THROW(io::decode_array(good.substr(0, 10)), io::ArrayFileError);
  EXPECT_THROW(io::decode_array(good.substr(0, good.size() - 1)), io::ArrayFileError);
  EXPECT_THROW(io::decode_array(good + "x"), io::ArrayFileError);
  a.data.pop_back();
  EXPECT_THROW(io::encode_array(a), io::ArrayFileError);
  EXPECT_THROW(io::read_array("/nonexistent/l96uq.bin"), io::ArrayFileError);
  try {
    io::decode_array(bad_magic, "state.bin");
    FAIL();
  } catch (const io::ArrayFileError& e) {
    EXPECT_NE(std::string(e.what()).find("state.bin"), std::string::npos);
  }
}

TEST(ArrayFile, RankMismatchIsRejected) {
  io::Array a;
  a.dims = {2, 2};
  a.data = {1, 2, 3, 4};
  EXPECT_THROW(io::to_vector(a), io::ArrayFileError);
  io::Array v;
  v.dims = {2};
  v.data = {1.0, 2.5};
  EXPECT_THROW(io::to_columns(v), io::ArrayFileError);
  EXPECT_THROW(io::to_indices(v), io::ArrayFileError);
}

TEST(Hashing, GitBlobIds) {
  EXPECT_EQ(io::git_blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  EXPECT_EQ(io::git_blob_sha1("hello world\n"), "3b18e512dba79e4c8300dd08aeb37f8e728b8dad");
}

TEST(Manifest, ListsEveryFileAndDetectsChanges) {
  const fs::path dir = fresh_dir("manifest");
  io::write_file(dir / "a.txt", "alpha\n");
  fs::create_directories(dir / "sub");
  io::write_file(dir / "sub" / "b.bin", std::string("\0\1\2", 3));
  io::write_manifest(dir, "test", {{"k", 1}}, {{"master", 7}}, {}, 0.5);

  const auto files = io::scan_files(dir);
  ASSERT_EQ(files.size(), 2u);
  EXPECT_EQ(files[0].path, "a.txt");
  EXPECT_EQ(files[1].path, "sub/b.bin");
  EXPECT_EQ(files[1].bytes, 3u);
  EXPECT_TRUE(io::check_manifest(dir).empty());

  const auto m = nlohmann::ordered_json::parse(io::read_file(dir / io::kManifestName));
  EXPECT_EQ(m["command"], "test");
  EXPECT_EQ(m["seeds"]["master"], 7);
  EXPECT_EQ(m["files"].size(), 2u);
  EXPECT_EQ(m["version"], io::tool_version());
  EXPECT_FALSE(io::stable_manifest(m).contains("timing"));

  io::write_file(dir / "a.txt", "changed\n");
  io::write_file(dir / "extra.txt", "x");
  const auto problems = io::check_manifest(dir);
  ASSERT_EQ(problems.size(), 2u);
  EXPECT_NE(problems[0].find("a.txt"), std::string::npos);
  EXPECT_NE(problems[1].find("extra.txt"), std::string::npos);
  fs::remove(dir / "sub" / "b.bin");
  EXPECT_EQ(io::check_manifest(dir).size(), 3u);
}

TEST(Manifest, MissingManifestIsAProblem) {
  const fs::path dir = fresh_dir("nomanifest");
  EXPECT_EQ(io::check_manifest(dir).size(), 1u);
}

TEST(Config, DefaultsRoundTripThroughJson) {
  const cfg::ExperimentConfig d = cfg::defaults();
  EXPECT_NO_THROW(d.validate());
  const cfg::Json j = cfg::to_json(d);
  EXPECT_EQ(cfg::to_json(cfg::from_json(j)), j);
  EXPECT_EQ(j["assim"]["localization_radius"], "inf");
  EXPECT_EQ(j["model"]["surrogate"]["alpha"], -0.81);
  const fs::path dir = fresh_dir("config");
  cfg::save(d, dir / "c.json");
  EXPECT_EQ(cfg::to_json(cfg::load(dir / "c.json")), j);
}

TEST(Config, PartialMergeKeepsOtherValues) {
  cfg::ExperimentConfig c = cfg::defaults();
  cfg::merge_json(c, cfg::Json::parse(R"({"seed": 5, "assim": {"members": 20}})"));
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.assim.members, 20);
  EXPECT_EQ(c.assim.cycles, cfg::defaults().assim.cycles);
  EXPECT_EQ(c.train.train.lr_grid, cfg::defaults().train.train.lr_grid);
}

TEST(Config, UnknownKeysAndBadValuesAreRejected) {
  cfg::ExperimentConfig c = cfg::defaults();
  EXPECT_THROW(cfg::merge_json(c, cfg::Json::parse(R"({"sed": 5})")), cfg::ConfigError);
  EXPECT_THROW(cfg::merge_json(c, cfg::Json::parse(R"({"assim": {"member": 5}})")),
               cfg::ConfigError);
  EXPECT_THROW(cfg::merge_json(c, cfg::Json::parse(R"({"assim": null})")), cfg::ConfigError);
  EXPECT_THROW(cfg::merge_json(c, cfg::Json::parse(R"({"train": {"decay_mode": "l1"}})")),
               cfg::ConfigError);
  cfg::ExperimentConfig bad = cfg::defaults();
  bad.assim.spinup_cycles = 10;
  EXPECT_THROW(bad.validate(), cfg::ConfigError);
  bad = cfg::defaults();
  bad.assim.inflation_pms = 0.9;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Config, QuickProfileStaysValid) {
  cfg::ExperimentConfig c = cfg::defaults();
  cfg::apply_quick_profile(c);
  EXPECT_NO_THROW(c.validate());
  EXPECT_LT(c.assim.cycles, cfg::defaults().assim.cycles);
  c.scenario = fcst::Scenario::Ims;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.filter().inflation, c.assim.inflation_ims);
}

TEST(Config, LeadtimeDefaultsCoverBothCategories) {
  const auto sets = cfg::default_leadtime_inputs();
  ASSERT_FALSE(sets.empty());
  bool prior = false;
  bool later = false;
  for (const auto& s : sets) {
    if (s.back() <= 80) prior = true;
    if (s.front() >= 80) later = true;
  }
  EXPECT_TRUE(prior);
  EXPECT_TRUE(later);
}

}  // namespace
