// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "support.hpp"

using namespace zoomrl;
using namespace zoomrl::testing;

namespace {

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(ZOOMRL_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  const RunConfig cfg = config_from_json(json::object());
  EXPECT_EQ(cfg.budget.max_tool_calls, 6u);
  EXPECT_EQ(cfg.reward.r_tool, 0.5);
  EXPECT_EQ(cfg.reward.mode, ToolRewardMode::Conditional);
  EXPECT_EQ(dump_line(to_json(config_from_json(json::parse(dump_line(to_json(cfg)))))), dump_line(to_json(cfg)));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  auto code_of = [](const json& j) {
    try {
      config_from_json(j);
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::InvalidArgument;
  };
  EXPECT_EQ(code_of(json::parse(R"({"rewards": {}})")), Errc::ConfigError);
  EXPECT_EQ(code_of(json::parse(R"({"reward": {"bonus": 1}})")), Errc::ConfigError);
  EXPECT_EQ(code_of(json::parse(R"({"reward": {"mode": "sometimes"}})")), Errc::ConfigError);
  EXPECT_EQ(code_of(json::parse(R"({"rollout": {"rollouts_per_prompt": 0}})")), Errc::ConfigError);
  EXPECT_EQ(code_of(json::parse(R"({"curation": {"k": 2}})")), Errc::ConfigError);
  EXPECT_EQ(code_of(json::parse(R"({"budget": {"max_tool_calls": "six"}})")), Errc::ConfigError);
}

TEST(Config, OverridesBeatFile) {
  const auto dir = scratch_dir("cfg");
  std::ofstream(dir / "c.json") << R"({"reward": {"r_tool": 0.25, "mode": "none"}, "rollout": {"seed": 4}})";
  const RunConfig cfg = resolve_config((dir / "c.json").string(), {override_patch("reward.mode=unconditional")});
  EXPECT_EQ(cfg.reward.r_tool, 0.25);
  EXPECT_EQ(cfg.reward.mode, ToolRewardMode::Unconditional);
  EXPECT_EQ(cfg.plan.seed, 4u);
  EXPECT_EQ(override_patch("toyrl.eta=0.2"), json::parse(R"({"toyrl": {"eta": 0.2}})"));
  EXPECT_THROW(override_patch("noequals"), Error);
}

TEST(Commands, RolloutExportsGroupsAndMetrics) {
  const auto dir = scratch_dir("cmd_rollout");
  const std::string data = write_demo_dataset(dir / "data");
  const auto sum = run_rollout_command(demo_config(dir / "out", 3), data, 8, "");
  EXPECT_EQ(sum.groups, 4u);
  EXPECT_EQ(sum.trajectories, 32u);
  EXPECT_EQ(count_lines(read_text(dir / "out" / "trajectories.jsonl")), 32u);
  const json m = json::parse(read_text(dir / "out" / "metrics.json"));
  EXPECT_EQ(m["groups"], 4);
  // Every mock rollout zooms at [0,0,32,32] against gt [8,8,40,40].
  EXPECT_NEAR(m["iou"]["mean"].get<double>(), iou({0, 0, 32, 32}, {8, 8, 40, 40}), 1e-12);
  EXPECT_EQ(m["iou"]["count"], 32);
  EXPECT_DOUBLE_EQ(sum.mean_tool_calls, 1.0);
}

TEST(Commands, RolloutIsByteIdenticalAcrossRuns) {
  const auto dir = scratch_dir("cmd_det");
  const std::string data = write_demo_dataset(dir / "data");
  run_rollout_command(demo_config(dir / "a", 17), data, 8, "");
  run_rollout_command(demo_config(dir / "b", 17), data, 8, "");
  EXPECT_EQ(read_text(dir / "a" / "trajectories.jsonl"), read_text(dir / "b" / "trajectories.jsonl"));
  EXPECT_EQ(read_text(dir / "a" / "metrics.json"), read_text(dir / "b" / "metrics.json"));
  run_rollout_command(demo_config(dir / "c", 18), data, 8, "");
  EXPECT_NE(read_text(dir / "a" / "trajectories.jsonl"), read_text(dir / "c" / "trajectories.jsonl"));
}

TEST(Commands, MissingImageIsRecordedAndRunContinues) {
  const auto dir = scratch_dir("cmd_missing");
  const std::string data = write_demo_dataset(dir / "data", true);
  const auto sum = run_rollout_command(demo_config(dir / "out", 1), data, 4, "");
  EXPECT_EQ(sum.groups, 3u);
  ASSERT_EQ(sum.errors.size(), 1u);
  EXPECT_EQ(sum.errors[0].first, "demo2");
}

TEST(Commands, EvalUsesSingleRollouts) {
  const auto dir = scratch_dir("cmd_eval");
  const std::string data = write_demo_dataset(dir / "data");
  const auto sum = run_rollout_command(demo_config(dir / "out", 1), data, 1, "eval_");
  EXPECT_EQ(sum.trajectories, 4u);
  EXPECT_TRUE(fs::exists(dir / "out" / "eval_metrics.json"));
}

TEST(Commands, CurateEmptyDataset) {
  const auto dir = scratch_dir("cmd_curate_empty");
  std::ofstream(dir / "empty.jsonl").close();
  RunConfig cfg;
  cfg.output_dir = (dir / "out").string();
  const auto res = run_curate_command(cfg, (dir / "empty.jsonl").string());
  EXPECT_TRUE(res.kept.empty());
  EXPECT_TRUE(fs::exists(dir / "out" / "audit.jsonl"));
  EXPECT_EQ(read_text(dir / "out" / "curated.jsonl"), "");
}

TEST(Commands, CurateWithoutGtBoxesAudited) {
  const auto dir = scratch_dir("cmd_curate_nobox");
  const std::string data = write_demo_dataset(dir / "data");
  // Strip the boxes.
  std::vector<SampleRecord> samples = load_samples(data);
  for (auto& s : samples) s.gt_bboxes.reset();
  {
    std::ofstream os(data);
    write_samples(samples, os);
  }
  RunConfig cfg = demo_config(dir / "out", 1);
  cfg.policy.mock_default.zoom.reset();
  cfg.policy.mock_quota = 8;
  cfg.judge = "accept";
  run_curate_command(cfg, data);
  const std::string audit = read_text(dir / "out" / "audit.jsonl");
  EXPECT_EQ(count_lines(audit), 4u * 4u);  // difficulty, standardize, verify, perception_utility
  std::size_t missing = 0;
  for (std::size_t p = audit.find(R"("reason":"MissingGtBox")"); p != std::string::npos;
       p = audit.find(R"("reason":"MissingGtBox")", p + 1)) ++missing;
  EXPECT_EQ(missing, 4u);
}

TEST(Commands, AblateWritesComparableCsvs) {
  const auto dir = scratch_dir("cmd_ablate");
  RunConfig cfg;
  cfg.toy.steps = 4;
  cfg.toy.prompts = 8;
  cfg.output_dir = (dir / "a").string();
  run_ablate_command(cfg);
  cfg.output_dir = (dir / "b").string();
  run_ablate_command(cfg);
  std::vector<std::string> grids;
  for (const char* mode : {"conditional", "unconditional", "none"}) {
    const std::string name = std::string("ablation_") + mode + ".csv";
    const std::string a = read_text(dir / "a" / name);
    EXPECT_EQ(a, read_text(dir / "b" / name));
    std::string grid;
    std::istringstream is(a);
    for (std::string line; std::getline(is, line);) grid += line.substr(0, line.find(',')) + ";";
    grids.push_back(grid);
  }
  EXPECT_EQ(grids[0], grids[1]);
  EXPECT_EQ(grids[1], grids[2]);
  const json summary = json::parse(read_text(dir / "a" / "summary.json"));
  EXPECT_EQ(summary["runs"].size(), 1u);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch_dir("cli");
  EXPECT_EQ(run_cli("validate-config", dir / "log"), 0);
  EXPECT_NE(read_text(dir / "log").find("\"r_tool\": 0.5"), std::string::npos);
  EXPECT_EQ(run_cli("validate-config --set reward.bonus=1", dir / "log"), kExitConfig);
  EXPECT_EQ(run_cli("eval --dataset " + (dir / "nope.jsonl").string() + " --out " + (dir / "o").string(), dir / "log"),
            kExitData);
  const std::string data = write_demo_dataset(dir / "data");
  EXPECT_EQ(run_cli("eval --dataset " + data + " --out " + (dir / "o").string(), dir / "log"), 0);
  EXPECT_TRUE(fs::exists(dir / "o" / "eval_trajectories.jsonl"));
}
