// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"

using namespace zoomrl;
using namespace zoomrl::testing;

TEST(Reward, TruthTable) {
  for (const auto& c : kRewardTable) {
    RewardConfig cfg;
    cfg.mode = c.mode;
    const auto r = total_reward(reward_fixture(c.tool, c.correct ? "gold" : "nope"), "gold", Verifier::exact(), cfg);
    EXPECT_EQ(r.total, c.expected) << to_string(c.mode) << " correct=" << c.correct << " tool=" << c.tool;
    EXPECT_EQ(r.format, 0.0);
  }
}

TEST(Reward, FormatPenaltyApplies) {
  Trajectory t("q", "img");
  t.append_policy_text("<answer>gold</answer>", 3);  // no think
  RewardConfig cfg;
  const auto r = total_reward(t, "gold", Verifier::exact(), cfg);
  EXPECT_EQ(r.acc, 1.0);
  EXPECT_EQ(r.format, -0.5);
  EXPECT_EQ(r.total, 0.5);

  Trajectory m("q", "img");
  m.append_policy_text("<think>x</think>", 3);
  EXPECT_EQ(total_reward(m, "gold", Verifier::exact(), cfg).total, -0.5);
}

TEST(Reward, NotTerminalThrows) {
  Trajectory t("q", "img");
  t.append_policy_text("<think>a</think>" + zoom_call_text({0, 0, 20, 20}), 5);
  try {
    total_reward(t, "g", Verifier::exact(), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NotTerminal);
  }
}

TEST(Reward, Verifiers) {
  EXPECT_TRUE(verify_answer(" The Red Car. ", "the red car", Verifier::exact()));
  EXPECT_FALSE(verify_answer("red", "the red car", Verifier::exact()));
  EXPECT_TRUE(verify_answer("0.5", "1/2", Verifier::numeric(1e-9)));
  EXPECT_TRUE(verify_answer("3.0000001", "3", Verifier::numeric(1e-6)));
  EXPECT_FALSE(verify_answer("three", "3", Verifier::numeric(1e-6)));
  EXPECT_TRUE(verify_answer("(B) a dog", "B", Verifier::choice()));
  EXPECT_TRUE(verify_answer("b.", "B", Verifier::choice()));
  EXPECT_FALSE(verify_answer("C", "B", Verifier::choice()));
  auto judge = Verifier::external([](std::string_view a, std::string_view g) { return a.size() == g.size(); });
  EXPECT_TRUE(verify_answer("abc", "xyz", judge));
  auto down = Verifier::external([](std::string_view, std::string_view) -> bool {
    throw Error(Errc::TransportError, "down");
  });
  try {
    verify_answer("a", "b", down);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::JudgeUnavailable);
  }
}

TEST(Reward, ModeParsing) {
  EXPECT_EQ(parse_tool_reward_mode("Conditional"), ToolRewardMode::Conditional);
  EXPECT_EQ(parse_tool_reward_mode("none"), ToolRewardMode::None);
  EXPECT_THROW(parse_tool_reward_mode("always"), Error);
}

TEST(Grpo, MatchesHighPrecisionOracle) {
  std::mt19937_64 rng(1);
  const std::size_t sizes[] = {2, 4, 16};
  for (int i = 0; i < 1000; ++i) {
    const auto r = random_rewards(rng, sizes[i % 3]);
    const auto got = group_advantages(r);
    const auto want = oracle_advantages(r);
    double sum = 0;
    for (std::size_t k = 0; k < r.size(); ++k) {
      ASSERT_NEAR(got.scalars[k], want[k], 1e-9);
      sum += got.scalars[k];
    }
    EXPECT_NEAR(sum / static_cast<double>(r.size()), 0.0, 1e-9);
  }
}

TEST(Grpo, Examples) {
  const auto a = group_advantages({1, 0}).scalars;
  EXPECT_NEAR(a[0], 1.0, 1e-5);
  EXPECT_NEAR(a[1], -1.0, 1e-5);
  const auto d = group_advantages({0.5, 0.5, 0.5, 0.5});
  EXPECT_TRUE(d.degenerate);
  for (double v : d.scalars) EXPECT_EQ(v, 0.0);
  try {
    group_advantages({1.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::GroupTooSmall);
  }
}

TEST(Grpo, ObservationTokensGetZero) {
  const Trajectory t = reward_fixture(true, "gold");
  const auto adv = token_advantages(t, -0.75);
  const auto mask = loss_mask(t);
  ASSERT_EQ(adv.size(), mask.size());
  for (std::size_t i = 0; i < adv.size(); ++i) EXPECT_EQ(adv[i], mask[i] ? -0.75 : 0.0);
}

TEST(Grpo, ExportBatchRecords) {
  Group g;
  g.prompt_id = "p";
  g.trajectories = {reward_fixture(true, "gold"), reward_fixture(false, "x")};
  RewardConfig cfg;
  for (const auto& t : g.trajectories) g.rewards.push_back(total_reward(t, "gold", Verifier::exact(), cfg));
  score_advantages(g);
  std::ostringstream os;
  export_batch({g}, os);
  std::istringstream is(os.str());
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    const json j = json::parse(line);
    EXPECT_EQ(j["prompt_id"], "p");
    EXPECT_EQ(j["index"], n);
    EXPECT_EQ(j["mask"], j["trajectory"]["mask"]);
    ++n;
  }
  EXPECT_EQ(n, 2);
  EXPECT_GT(g.advantages->scalar[0], 0);
}
