#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "builders.hpp"
#include "riskgraph/errors.hpp"
#include "riskgraph/scenario_io.hpp"

namespace rg = riskgraph;
using namespace testing_support;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("riskgraph_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<int> ids(const rg::Scenario& s) {
  std::vector<int> out;
  for (const auto& a : s.agents) out.push_back(a.agent_id);
  return out;
}

rg::Scenario three_agents() {
  rg::Scenario s = empty_scenario(4, 3);
  rg::Rng rng(2);
  const std::vector<std::optional<rg::Point3>> pos(4, rg::Point3{1, 0, 2});
  add_agent(s, 1, rg::AgentClass::Person, pos, rng);
  add_agent(s, 2, rg::AgentClass::Car, pos, rng);
  add_agent(s, 3, rg::AgentClass::Bicycle, pos, rng);
  return s;
}

}  // namespace

TEST(AgentClass, VulnerabilityFlag) {
  EXPECT_TRUE(rg::is_vulnerable(rg::AgentClass::Person));
  EXPECT_TRUE(rg::is_vulnerable(rg::AgentClass::Bicycle));
  for (auto c : {rg::AgentClass::Car, rg::AgentClass::Motorcycle, rg::AgentClass::Bus, rg::AgentClass::Truck}) {
    EXPECT_FALSE(rg::is_vulnerable(c));
  }
}

TEST(AgentClass, NamesRoundTrip) {
  for (auto c : {rg::AgentClass::Person, rg::AgentClass::Bicycle, rg::AgentClass::Car, rg::AgentClass::Motorcycle,
                 rg::AgentClass::Bus, rg::AgentClass::Truck}) {
    EXPECT_EQ(rg::parse_agent_class(rg::to_string(c)), c);
  }
  EXPECT_FALSE(rg::parse_agent_class("tram").has_value());
}

TEST(FuseContext, Examples) {
  EXPECT_EQ(rg::fuse_context(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3)), Eigen::VectorXd::Zero(3));
  EXPECT_EQ(rg::fuse_context(Eigen::Vector2d(1, 2), Eigen::Vector2d(0, 0)), Eigen::VectorXd(Eigen::Vector2d(1, 2)));
  EXPECT_EQ(rg::fuse_context(Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(4, 5, 6)),
            Eigen::VectorXd(Eigen::Vector3d(5, 7, 9)));
  EXPECT_THROW(rg::fuse_context(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(3)), rg::ShapeError);
}

TEST(Mask, RemovesOneAgent) {
  const auto s = three_agents();
  EXPECT_EQ(ids(rg::mask_agent(s, 2)), (std::vector<int>{1, 3}));
}

TEST(Mask, OnlyAgentLeavesEgoOnly) {
  rg::Scenario s = empty_scenario(4, 3);
  rg::Rng rng(1);
  add_agent(s, 5, rg::AgentClass::Car, std::vector<std::optional<rg::Point3>>(4, rg::Point3{0, 0, 3}), rng);
  EXPECT_TRUE(rg::mask_agent(s, 5).agents.empty());
}

TEST(Mask, UnknownIdThrows) {
  const auto s = three_agents();
  EXPECT_THROW(rg::mask_agent(s, 42), rg::NotFoundError);
  EXPECT_THROW(rg::mask_group(s, {1, 42}), rg::NotFoundError);
}

TEST(Mask, GroupSemantics) {
  const auto s = three_agents();
  EXPECT_EQ(rg::mask_group(s, {}), s);
  EXPECT_EQ(rg::mask_group(s, {1, 2}), rg::mask_agent(rg::mask_agent(s, 1), 2));
  EXPECT_EQ(rg::mask_group(s, {1, 2}), rg::mask_agent(rg::mask_agent(s, 2), 1));
  EXPECT_EQ(rg::mask_group(s, {2}), rg::mask_agent(s, 2));
  EXPECT_TRUE(rg::mask_group(s, {1, 2, 3}).agents.empty());
}

TEST(Mask, DropsGroundTruthOfRemovedAgents) {
  auto s = three_agents();
  s.ground_truth_risk = 2;
  s.ground_truth_group = std::vector<int>{1, 2};
  const auto m = rg::mask_agent(s, 2);
  EXPECT_FALSE(m.ground_truth_risk.has_value());
  EXPECT_EQ(*m.ground_truth_group, std::vector<int>{1});
  EXPECT_NO_THROW(m.validate());
}

TEST(StopRule, CrossingPedestrianAtMidClip) {
  rg::Scenario s = empty_scenario(20, 4);
  rg::Rng rng(4);
  std::vector<std::optional<rg::Point3>> pos;
  // Walks along x at 1.2 m/s (0.4 m per frame) through (0, 0, 1.5) at frame 10.
  for (int t = 0; t < 20; ++t) pos.push_back(rg::Point3{0.4 * (t - 10), 0.0, 1.5});
  add_agent(s, 9, rg::AgentClass::Person, pos, rng);
  std::vector<std::optional<rg::Point3>> far(20, rg::Point3{6.0, 0.0, 8.0});
  add_agent(s, 3, rg::AgentClass::Car, far, rng);
  const auto out = rg::apply_stop_rule(s, 2.0);
  EXPECT_TRUE(out.stop);
  EXPECT_EQ(out.risk_agent, 9);
  EXPECT_EQ(out.triggering_agents, std::vector<int>{9});
}

TEST(StopRule, NothingCloseMeansGo) {
  rg::Scenario s = empty_scenario(5, 4);
  rg::Rng rng(4);
  add_agent(s, 1, rg::AgentClass::Car, std::vector<std::optional<rg::Point3>>(5, rg::Point3{2.5, 0, 2.5}), rng);
  // Close, but behind the ego.
  add_agent(s, 2, rg::AgentClass::Person, std::vector<std::optional<rg::Point3>>(5, rg::Point3{0, 0, -1}), rng);
  const auto out = rg::apply_stop_rule(s, 2.0);
  EXPECT_FALSE(out.stop);
  EXPECT_FALSE(out.risk_agent.has_value());
}

TEST(StopRule, TieBreakEarliestFrameThenSmallestId) {
  rg::Scenario s = empty_scenario(6, 2);
  rg::Rng rng(4);
  auto approach_at = [](int frame) {
    std::vector<std::optional<rg::Point3>> pos;
    for (int t = 0; t < 6; ++t) pos.push_back(rg::Point3{0.5 * (t - frame), 0.0, 1.0});
    return pos;
  };
  add_agent(s, 8, rg::AgentClass::Person, approach_at(4), rng);
  add_agent(s, 7, rg::AgentClass::Person, approach_at(2), rng);
  add_agent(s, 5, rg::AgentClass::Person, approach_at(2), rng);
  const auto out = rg::apply_stop_rule(s, 2.0);
  EXPECT_EQ(out.risk_agent, 5);
  EXPECT_EQ(out.triggering_agents, (std::vector<int>{5, 7, 8}));
}

TEST(Generator, DeterministicForSeed) {
  rg::GeneratorConfig cfg;
  for (std::uint64_t seed : {1ULL, 2ULL, 99ULL}) {
    EXPECT_EQ(rg::scenario_to_json(rg::generate_scenario(cfg, seed)).dump(),
              rg::scenario_to_json(rg::generate_scenario(cfg, seed)).dump());
  }
  EXPECT_NE(rg::scenario_to_json(rg::generate_scenario(cfg, 1)).dump(),
            rg::scenario_to_json(rg::generate_scenario(cfg, 2)).dump());
}

TEST(Generator, LabelsFollowTheRule) {
  rg::GeneratorConfig cfg;
  cfg.group_fraction = 0.3;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const rg::Scenario s = rg::generate_scenario(cfg, seed);
    ASSERT_NO_THROW(s.validate());
    const auto rule = rg::apply_stop_rule(s, cfg.d_stop);
    EXPECT_EQ(s.label, rule.stop ? "Stop" : "Go") << "seed " << seed;
    EXPECT_EQ(s.ground_truth_risk, rule.risk_agent) << "seed " << seed;
    if (s.ground_truth_group) {
      EXPECT_GE(s.ground_truth_group->size(), 2u);
      EXPECT_EQ(*s.ground_truth_group, rule.triggering_agents);
      for (int id : *s.ground_truth_group) EXPECT_TRUE(s.find_agent(id)->vulnerable());
    }
  }
}

TEST(Generator, RequestedKinds) {
  rg::GeneratorConfig cfg;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    EXPECT_EQ(rg::generate_scenario(cfg, seed, rg::ScenarioKind::Go).label, "Go");
    const auto stop = rg::generate_scenario(cfg, seed, rg::ScenarioKind::Stop);
    EXPECT_EQ(stop.label, "Stop");
    EXPECT_TRUE(stop.ground_truth_risk.has_value());
    const auto group = rg::generate_scenario(cfg, seed, rg::ScenarioKind::GroupStop);
    EXPECT_TRUE(group.ground_truth_group.has_value());
  }
}

TEST(Generator, InfeasibleConfigRejected) {
  rg::GeneratorConfig cfg;
  cfg.min_agents = 0;
  cfg.max_agents = 0;
  EXPECT_THROW(rg::generate_scenario(cfg, 1, rg::ScenarioKind::Stop), rg::Error);
  rg::GeneratorConfig bad;
  bad.d_stop = -1.0;
  EXPECT_THROW(bad.validate(), rg::ConfigError);
}

TEST(Dataset, BalanceAndManifest) {
  const auto dir = temp_dir("dataset");
  rg::GeneratorConfig cfg;
  const auto m = rg::generate_dataset(cfg, 200, 17, dir);
  ASSERT_EQ(m.train.size(), 200u);
  int stops = 0;
  for (const auto& path : m.resolve(m.train)) stops += rg::load_scenario(path).label == "Stop" ? 1 : 0;
  EXPECT_GE(stops, 80);
  EXPECT_LE(stops, 120);
  EXPECT_EQ(m.config_digest, rg::config_digest(cfg));
  const auto loaded = rg::load_manifest(dir / "manifest.json");
  EXPECT_EQ(loaded.train, m.train);
  std::filesystem::remove_all(dir);
}

TEST(Dataset, SingleScenarioAndRerunDigest) {
  const auto a = temp_dir("dataset_a");
  const auto b = temp_dir("dataset_b");
  rg::GeneratorConfig cfg;
  cfg.train_fraction = 0.5;
  cfg.val_fraction = 0.25;
  const auto one = rg::generate_dataset(cfg, 1, 3, a);
  EXPECT_EQ(one.train.size() + one.val.size() + one.test.size(), 1u);
  rg::generate_dataset(cfg, 12, 3, a);
  rg::generate_dataset(cfg, 12, 3, b);
  EXPECT_EQ(rg::read_json_file(a / "manifest.json"), rg::read_json_file(b / "manifest.json"));
  EXPECT_EQ(rg::read_json_file(a / "scenario_00007.json"), rg::read_json_file(b / "scenario_00007.json"));
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST(Dataset, UnwritableDirectoryIsIoError) {
  rg::GeneratorConfig cfg;
  const auto file = temp_dir("blocker") / "file";
  std::ofstream(file) << "x";
  EXPECT_THROW(rg::generate_dataset(cfg, 2, 1, file / "sub"), rg::IoError);
}

TEST(ScenarioIo, RoundTripIsIdentity) {
  const auto dir = temp_dir("roundtrip");
  rg::GeneratorConfig cfg;
  cfg.group_fraction = 0.5;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = rg::generate_scenario(cfg, seed);
    rg::save_scenario(s, dir / "s.json");
    EXPECT_EQ(rg::load_scenario(dir / "s.json"), s);
  }
  std::filesystem::remove_all(dir);
}

TEST(ScenarioIo, MissingGammaNamed) {
  auto j = rg::scenario_to_json(three_agents());
  j.erase("gamma");
  try {
    rg::scenario_from_json(j);
    FAIL() << "expected ParseError";
  } catch (const rg::ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("gamma"), std::string::npos);
  }
}

TEST(ScenarioIo, PresenceLongerThanGamma) {
  auto j = rg::scenario_to_json(three_agents());
  j["agents"][1]["presence"].push_back(0);
  try {
    rg::scenario_from_json(j);
    FAIL() << "expected ParseError";
  } catch (const rg::ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("agents[1].presence"), std::string::npos);
  }
}

TEST(ScenarioIo, SchemaVersionChecked) {
  auto j = rg::scenario_to_json(three_agents());
  j["schema_version"] = 2;
  EXPECT_THROW(rg::scenario_from_json(j), rg::ParseError);
}

TEST(ScenarioIo, PositionFromObservation) {
  auto s = three_agents();
  auto j = rg::scenario_to_json(s);
  auto& st = j["agents"][0]["states"][0];
  st.erase("position");
  st["observation"] = {{"u", 378.0}, {"v", 100.0}, {"depth", 2.0}};
  const auto back = rg::scenario_from_json(j);
  const auto& p = back.agents[0].states[0].position;
  EXPECT_NEAR(p.x, 2.0, 1e-12);
  EXPECT_NEAR(p.y, 0.0, 1e-12);
  EXPECT_NEAR(p.z, 2.0, 1e-12);
  st["observation"]["depth"] = 0.0;
  EXPECT_THROW(rg::scenario_from_json(j), rg::ParseError);
}

TEST(ScenarioIo, MissingFileIsIoError) {
  EXPECT_THROW(rg::load_scenario("/nonexistent/scenario.json"), rg::IoError);
}

TEST(ScenarioIo, DuplicateManifestPath) {
  const auto dir = temp_dir("manifest_dup");
  rg::DatasetManifest m;
  m.train = {"a.json"};
  m.test = {"a.json"};
  rg::save_manifest(m, dir / "manifest.json");
  EXPECT_THROW(rg::load_manifest(dir / "manifest.json"), rg::ParseError);
  std::filesystem::remove_all(dir);
}

TEST(GeneratorConfigIo, UnknownKeyRejected) {
  EXPECT_THROW(rg::generator_config_from_json({{"gama", 20}}), rg::ConfigError);
  const auto c = rg::generator_config_from_json({{"gamma", 12}});
  EXPECT_EQ(c.gamma, 12);
  EXPECT_EQ(c.feature_dim, rg::GeneratorConfig{}.feature_dim);
}
