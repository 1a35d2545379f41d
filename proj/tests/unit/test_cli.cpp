#include <gtest/gtest.h>

#include <filesystem>
#include <functional>

#include "envedit/cli.hpp"

namespace envedit {
namespace {

namespace fs = std::filesystem;
using cli::ExperimentConfig;
using io::Json;

ExperimentConfig toy_config() {
  ExperimentConfig c;
  c.world.spec.num_envs = 4;
  c.world.spec.nodes_per_env = 7;
  c.world.spec.feature_dim = 12;
  c.world.spec.style_dim = 4;
  c.world.spec.grid_h = 3;
  c.world.spec.grid_w = 3;
  c.world.episodes = 60;
  c.world.hops = {1, 3};
  c.edits.variants = {"E_st", "E_is1"};
  c.edits.style_library_size = 48;
  c.speaker.iterations = 20;
  c.speaker.batch_size = 8;
  c.agent.hidden = 12;
  c.train.batch_size = 6;
  c.train.stage2_iterations = 8;
  c.train.val_every = 4;
  c.train.learning_rate = 3e-3;
  c.train.edited_sources = {"E_st"};
  return c;
}

std::string error_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

struct CliFixture : ::testing::Test {
  fs::path root = fs::temp_directory_path() / "envedit_cli_test";
  ExperimentConfig config = toy_config();

  void SetUp() override { fs::remove_all(root); }
  void TearDown() override { fs::remove_all(root); }

  fs::path ws(const std::string& name) const { return root / name; }

  void pipeline(const fs::path& out) const {
    cli::cmd_worldgen(config, out, 21);
    cli::cmd_edit(config, out);
    cli::cmd_train(config, out, "run");
  }
};

TEST(CliConfig, JsonRoundTrip) {
  ExperimentConfig c = toy_config();
  c.train.rl.baseline = RlBaseline::kTrajectoryMean;
  c.edits.style_scope = StyleScope::kPerView;
  const Json j = cli::to_json(c);
  EXPECT_EQ(cli::to_json(cli::config_from_json(j)).dump(), j.dump());
  EXPECT_EQ(cli::to_json(cli::config_from_json(Json::object())).dump(), cli::to_json(ExperimentConfig{}).dump());

  Json bad = j;
  bad["train"]["warmup"] = 3;
  EXPECT_EQ(error_code([&] { cli::config_from_json(bad); }), "malformed_config");
  bad = j;
  bad["train"]["rl"]["baseline"] = "median";
  EXPECT_EQ(error_code([&] { cli::config_from_json(bad); }), "malformed_config");
  bad = j;
  bad["world"]["hops"] = Json::array({1});
  EXPECT_EQ(error_code([&] { cli::config_from_json(bad); }), "malformed_config");
  bad = j;
  bad["world"]["episodes"] = "many";
  EXPECT_EQ(error_code([&] { cli::config_from_json(bad); }), "malformed_config");
}

TEST(CliConfig, EditSourceNames) {
  EXPECT_EQ(cli::edit_source_name(Variant::kStyleTransfer, StyleScope::kPerPanorama, 1), "E_st");
  EXPECT_EQ(cli::edit_source_name(Variant::kStyleTransfer, StyleScope::kPerView, 1), "E_st_view");
  EXPECT_EQ(cli::edit_source_name(Variant::kStyleTransfer, StyleScope::kPerEnvironment, 3), "E_st_environment");
  EXPECT_EQ(cli::edit_source_name(Variant::kSynthesis1, StyleScope::kPerView, 2), "E_is1");
  EXPECT_EQ(cli::edit_source_name(Variant::kSynthesis2Masked, StyleScope::kPerPanorama, 1), "E_is2_m");
  EXPECT_EQ(cli::edit_source_name(Variant::kSynthesis1Masked, StyleScope::kPerPanorama, 2), "E_is1_m_k2");
}

TEST(CliSvg, OneBarPerValue) {
  const auto svg = cli::svg_bar_chart("t", {"a", "b", "c"}, {{"SR", {10, 20, 30}}, {"SPL", {5, 150, -1}}}, 100);
  std::size_t bars = 0;
  for (auto p = svg.find("<rect x="); p != std::string::npos; p = svg.find("<rect x=", p + 1)) ++bars;
  EXPECT_EQ(bars, 6u + 2u);  // bars plus legend swatches
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST_F(CliFixture, OnlyMaskedEditsChangeLayouts) {
  const auto out = ws("a");
  config.edits.variants = {"E_st", "E_is1", "E_is1_m"};
  cli::cmd_worldgen(config, out, 21);
  cli::cmd_edit(config, out);
  cli::Workspace w(out);
  auto world = cli::load_world(w);
  EnvironmentBank bank;
  cli::fill_bank(bank, w, world, {"E_st", "E_is1", "E_is1_m"});
  const int mask_class = world.spec.num_classes + 1;
  for (const auto& env : world.environments) {
    const auto& st = bank.env("E_st", env.env_id);
    const auto& is = bank.env("E_is1", env.env_id);
    const auto& masked = bank.env("E_is1_m", env.env_id);
    EXPECT_EQ(st.provenance, Variant::kStyleTransfer);
    ASSERT_TRUE(masked.edit.has_value());
    ASSERT_EQ(masked.edit->masked_class_ids.size(), 1u);
    const int removed = masked.edit->masked_class_ids[0];
    for (std::size_t n = 0; n < env.panoramas.size(); ++n) {
      for (std::size_t k = 0; k < 36; ++k) {
        const auto& grid = env.panoramas[n].views[k].grid;
        EXPECT_EQ(st.panoramas[n].views[k].grid, grid);
        EXPECT_EQ(is.panoramas[n].views[k].grid, grid);
        EXPECT_NE(st.panoramas[n].views[k].feature, env.panoramas[n].views[k].feature);
        EXPECT_NE(is.panoramas[n].views[k].feature, env.panoramas[n].views[k].feature);
        const auto& mgrid = masked.panoramas[n].views[k].grid;
        for (std::size_t c = 0; c < grid.size(); ++c) {
          EXPECT_EQ(mgrid[c], grid[c] == removed ? mask_class : grid[c]);
        }
      }
    }
  }
}

TEST_F(CliFixture, TeacherEvaluationIsPerfect) {
  const auto out = ws("a");
  cli::cmd_worldgen(config, out, 21);
  cli::EvalRequest req;
  req.checkpoints = {"agents/teacher"};
  req.plot = true;
  for (const char* split : {"val_seen", "val_unseen"}) {
    req.split = split;
    auto summary = cli::cmd_eval(config, out, req);
    ASSERT_EQ(summary["reports"].size(), 1u);
    EXPECT_DOUBLE_EQ(summary["reports"][0]["SR"].get<double>(), 100.0);
    EXPECT_NEAR(summary["reports"][0]["SPL"].get<double>(), 100.0, 1e-9);
    EXPECT_DOUBLE_EQ(summary["reports"][0]["NE"].get<double>(), 0.0);
  }
  cli::Workspace w(out);
  EXPECT_TRUE(w.has("reports/teacher_val_unseen.csv"));
  EXPECT_TRUE(w.has("reports/teacher_val_unseen.svg"));
  w.verify_all();
}

TEST_F(CliFixture, PipelineIsDeterministic) {
  pipeline(ws("a"));
  pipeline(ws("b"));
  cli::Workspace a(ws("a")), b(ws("b"));
  EXPECT_EQ(a.manifest()["artifacts"].dump(), b.manifest()["artifacts"].dump());
  EXPECT_TRUE(a.has("agents/run/final.bin"));
  EXPECT_TRUE(a.has("agents/run/log.jsonl"));
  EXPECT_EQ(a.read("agents/run/final.bin"), b.read("agents/run/final.bin"));

  cli::cmd_worldgen(config, ws("c"), 22);
  cli::Workspace c(ws("c"));
  EXPECT_NE(c.manifest()["artifacts"]["world/features.bin"], a.manifest()["artifacts"]["world/features.bin"]);
}

TEST_F(CliFixture, TamperedArtifactsAreRejected) {
  pipeline(ws("a"));
  io::write_file(ws("a") / "agents/run/final.bin", io::read_file(ws("a") / "agents/run/final.bin") + "x");
  cli::EvalRequest req;
  req.checkpoints = {"agents/run/final"};
  EXPECT_EQ(error_code([&] { cli::cmd_eval(config, ws("a"), req); }), "hash_mismatch");
  EXPECT_EQ(error_code([&] { cli::Workspace(ws("a")).verify_all(); }), "hash_mismatch");

  req.checkpoints = {"agents/nope"};
  EXPECT_EQ(error_code([&] { cli::cmd_eval(config, ws("a"), req); }), "missing_artifact");

  io::write_file(ws("a") / "world/envs/env_000.json", "{}");
  EXPECT_EQ(error_code([&] { cli::load_world(cli::Workspace(ws("a"))); }), "hash_mismatch");
}

TEST_F(CliFixture, CommandPreconditions) {
  EXPECT_EQ(error_code([&] { cli::cmd_edit(config, ws("empty")); }), "missing_artifact");
  cli::cmd_worldgen(config, ws("a"), 21);
  EXPECT_EQ(error_code([&] { cli::cmd_train(config, ws("a"), "r"); }), "missing_edit");

  ExperimentConfig other = config;
  other.world.spec.nodes_per_env = 9;
  EXPECT_EQ(error_code([&] { cli::cmd_edit(other, ws("a")); }), "config_mismatch");

  ExperimentConfig bt = config;
  bt.train.edited_sources.clear();
  bt.train.stage3_iterations = 4;
  EXPECT_EQ(error_code([&] { cli::cmd_train(bt, ws("a"), "r"); }), "missing_artifact");
  cli::cmd_train_speaker(bt, ws("a"));
  auto summary = cli::cmd_train(bt, ws("a"), "r");
  EXPECT_EQ(summary["stages"], Json::array({"stage2", "stage3"}));
  EXPECT_TRUE(cli::Workspace(ws("a")).has("agents/r/stage3.bin"));
}

TEST_F(CliFixture, RunReportsExitCodes) {
  const std::string out = ws("a").string();
  auto call = [](std::vector<std::string> args) {
    args.insert(args.begin(), "envedit");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    return cli::run(static_cast<int>(argv.size()), argv.data());
  };
  EXPECT_EQ(call({}), 2);
  EXPECT_EQ(call({"frobnicate"}), 2);
  EXPECT_EQ(call({"eval", "--out", out}), 2);
  EXPECT_EQ(call({"edit", "--out", out}), 1);
  EXPECT_EQ(call({"edit", "--out", out, "--style-scope", "room"}), 2);

  io::write_file(ws("cfg.json"), cli::to_json(config).dump());
  EXPECT_EQ(call({"worldgen", "--config", ws("cfg.json").string(), "--out", out, "--seed", "21"}), 0);
  EXPECT_EQ(call({"edit", "--out", out, "--variant", "E_st,E_is2_m", "--mask-count", "2"}), 0);
  cli::Workspace w(ws("a"));
  EXPECT_TRUE(w.has("edits/E_is2_m_k2/edit.json"));
  EXPECT_EQ(call({"train", "--out", out, "--variant", "E_is2_m", "--mask-count", "2", "--name", "m"}), 0);
  EXPECT_EQ(call({"ensemble", "--out", out, "--checkpoint", "agents/m/final", "--checkpoint", "agents/m/best"}), 0);
  EXPECT_EQ(call({"eval", "--out", out, "--checkpoint", "agents/m/final", "--source", "E_is2_m_k2", "--split",
                  "val_seen"}),
            0);
  EXPECT_EQ(call({"edit", "--out", out, "--variant", "E_zz"}), 1);
}

}  // namespace
}  // namespace envedit
