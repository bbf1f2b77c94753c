// SPDX-License-Identifier: Apache-2.0
#pragma once

// Independent oracles and fixtures shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "zoomrl/commands.hpp"
#include "zoomrl/curation.hpp"
#include "zoomrl/grpo.hpp"
#include "zoomrl/image_io.hpp"
#include "zoomrl/mock_policy.hpp"
#include "zoomrl/protocol.hpp"
#include "zoomrl/reward.hpp"
#include "zoomrl/rollout.hpp"
#include "zoomrl/toolbox.hpp"
#include "zoomrl/toyrl.hpp"
#include "zoomrl/trajectory.hpp"

#ifndef ZOOMRL_TEST_DATA_DIR
#define ZOOMRL_TEST_DATA_DIR "tests/data"
#endif

namespace zoomrl::testing {

namespace fs = std::filesystem;

inline fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("zoomrl_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// protocol corpus
// ---------------------------------------------------------------------------

struct CorpusCase {
  std::string id;
  std::string text;
  std::set<std::string> expect;
};

inline std::vector<CorpusCase> load_corpus() {
  std::ifstream is(std::string(ZOOMRL_TEST_DATA_DIR) + "/protocol_corpus.jsonl");
  if (!is) throw Error(Errc::IoError, "protocol corpus not found");
  std::vector<CorpusCase> out;
  std::string line;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    json j = json::parse(line);
    CorpusCase c{j.at("id"), j.at("text"), {}};
    for (const auto& e : j.at("expect")) c.expect.insert(e.get<std::string>());
    out.push_back(std::move(c));
  }
  return out;
}

inline std::set<std::string> classify(const std::string& text) {
  std::set<std::string> codes;
  for (const auto& v : validate_format(parse_turn(text), ToolSet::zoom_only()).violations)
    codes.insert(std::string(to_string(v.code)));
  return codes;
}

inline std::string join_codes(const std::set<std::string>& s) {
  std::string out;
  for (const auto& c : s) out += (out.empty() ? "" : ",") + c;
  return out.empty() ? "(none)" : out;
}

inline const std::string kVerbatimCall =
    "<tool_call>  \n{\"name\": \"image_zoom_in_tool\", \"arguments\": {\"bbox_2d\": [10, 20, 100, 200], \"label\": "
    "\"the apple on the desk\"}}  \n</tool_call>";

// ---------------------------------------------------------------------------
// reward truth table
// ---------------------------------------------------------------------------

struct RewardCase {
  bool correct;
  bool tool;
  ToolRewardMode mode;
  double expected;  // hand-computed with r_acc = 1.0, r_tool = 0.5
};

inline const std::vector<RewardCase> kRewardTable = {
    {false, false, ToolRewardMode::Conditional, 0.0},   {false, true, ToolRewardMode::Conditional, 0.0},
    {true, false, ToolRewardMode::Conditional, 1.0},    {true, true, ToolRewardMode::Conditional, 1.5},
    {false, false, ToolRewardMode::Unconditional, 0.0}, {false, true, ToolRewardMode::Unconditional, 0.5},
    {true, false, ToolRewardMode::Unconditional, 1.0},  {true, true, ToolRewardMode::Unconditional, 1.5},
    {false, false, ToolRewardMode::None, 0.0},          {false, true, ToolRewardMode::None, 0.0},
    {true, false, ToolRewardMode::None, 1.0},           {true, true, ToolRewardMode::None, 1.0},
};

/// A well-formed trajectory answering `answer`, with one zoom before it when `tool`.
inline Trajectory reward_fixture(bool tool, const std::string& answer) {
  Trajectory t("q", "img");
  if (tool) {
    t.append_policy_text("<think>zoom</think>\n" + zoom_call_text({0, 0, 20, 20}), 12);
    t.append_observation(std::string(kZoomToolName), "img#crop[0,0,20,20]", 1);
  }
  t.append_policy_text("<think>done</think>\n<answer>" + answer + "</answer>", 6);
  return t;
}

// ---------------------------------------------------------------------------
// GRPO oracle in 50-digit binary floating point
// ---------------------------------------------------------------------------

using big = boost::multiprecision::cpp_bin_float_50;

inline std::vector<double> oracle_advantages(const std::vector<double>& r, double eps = kAdvantageEps) {
  const auto [lo, hi] = std::minmax_element(r.begin(), r.end());
  if (*lo == *hi) return std::vector<double>(r.size(), 0.0);
  big mean = 0;
  for (double v : r) mean += big(v);
  mean /= big(r.size());
  big var = 0;
  for (double v : r) var += (big(v) - mean) * (big(v) - mean);
  var /= big(r.size());
  const big denom = boost::multiprecision::sqrt(var) + big(eps);
  std::vector<double> out;
  for (double v : r) out.push_back(static_cast<double>((big(v) - mean) / denom));
  return out;
}

/// Reward groups of the kind the engine produces: discrete reward levels, some
/// continuous noise, and some all-equal groups.
inline std::vector<double> random_rewards(std::mt19937_64& rng, std::size_t n) {
  static const double levels[] = {-0.5, 0.0, 0.5, 1.0, 1.5};
  std::vector<double> r(n);
  const int kind = static_cast<int>(rng() % 4);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (auto& v : r) {
    if (kind == 0) v = levels[rng() % 5];
    else if (kind == 1) v = u(rng);
    else if (kind == 2) v = 1.0;
    else v = levels[rng() % 5] + (rng() % 2 ? u(rng) * 1e-3 : 0.0);
  }
  return r;
}

// ---------------------------------------------------------------------------
// IoU oracle by pixel counting
// ---------------------------------------------------------------------------

inline double raster_iou(const BBox& a, const BBox& b, int grid) {
  long long inter = 0, uni = 0;
  for (int y = 0; y < grid; ++y) {
    for (int x = 0; x < grid; ++x) {
      // unit cell [x, x+1) x [y, y+1)
      const bool ia = x >= a.x1 && x + 1 <= a.x2 && y >= a.y1 && y + 1 <= a.y2;
      const bool ib = x >= b.x1 && x + 1 <= b.x2 && y >= b.y1 && y + 1 <= b.y2;
      inter += ia && ib;
      uni += ia || ib;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline BBox random_int_box(std::mt19937_64& rng, int grid) {
  std::uniform_int_distribution<int> d(0, grid);
  int x1 = d(rng), x2 = d(rng), y1 = d(rng), y2 = d(rng);
  if (x1 == x2) x2 = x1 == grid ? x1 - 1 : x1 + 1;
  if (y1 == y2) y2 = y1 == grid ? y1 - 1 : y1 + 1;
  return {double(std::min(x1, x2)), double(std::min(y1, y2)), double(std::max(x1, x2)), double(std::max(y1, y2))};
}

// ---------------------------------------------------------------------------
// budget fuzzing
// ---------------------------------------------------------------------------

/// Emits random, often hostile, turns with random token counts.
class FuzzPolicy : public PolicyClient {
 public:
  explicit FuzzPolicy(std::uint64_t seed) : seed_(seed) {}

  Generation generate(const GenerationRequest& req) override {
    std::mt19937_64 rng(mix_seed(seed_, req.seed));
    std::string text = "<think>step</think>";
    const int shape = static_cast<int>(rng() % 10);
    auto coord = [&] { return static_cast<double>(static_cast<int>(rng() % 200)) - 50.0; };
    if (shape == 0) {
      text += "<answer>x</answer>";
    } else if (shape == 1) {
      text += "no tags at all";
    } else {
      const int calls = 1 + static_cast<int>(rng() % 4);
      for (int c = 0; c < calls; ++c) {
        switch (rng() % 6) {
          case 0: text += "<tool_call>{\"name\": \"nope\", \"arguments\": {}}</tool_call>"; break;
          case 1: text += "<tool_call>{\"name\": \"image_zoom_in_tool\", \"arguments\": {\"bbox_2d\": [1, 2]}}</tool_call>"; break;
          case 2: text += zoom_call_text({coord(), coord(), coord(), coord()}); break;
          default: text += zoom_call_text({0, 0, 30, 30}, "ok"); break;
        }
      }
    }
    if (rng() % 7 == 0) text += "<tool_call>{broken";
    std::size_t tokens = 1 + rng() % 64;
    if (rng() % 20 == 0) tokens = 1 + rng() % 40000;
    return {text, tokens, false};
  }

 private:
  std::uint64_t seed_;
};

struct BudgetFuzzReport {
  std::size_t cases = 0;
  std::size_t violations = 0;
  std::string first_violation;
};

inline BudgetFuzzReport fuzz_budget(std::size_t cases, std::uint64_t seed) {
  BudgetFuzzReport rep;
  auto img = std::make_shared<const RasterImage>(64, 64, 3, "fuzz");
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < cases; ++i) {
    RolloutOptions opts;
    opts.budget.max_tool_calls = 6;
    opts.budget.max_policy_tokens = 20 + rng() % 20480;
    opts.seed = rng();
    FuzzPolicy policy(rng());
    Trajectory t = run_rollout("fuzz" + std::to_string(i), "what is here?", img, policy, opts);
    ++rep.cases;
    std::string why;
    if (t.tool_call_count() > 6) why = "tool_call_count " + std::to_string(t.tool_call_count());
    else if (t.observation_count() > 6) why = "observations " + std::to_string(t.observation_count());
    else if (t.policy_tokens() > opts.budget.max_policy_tokens) why = "policy tokens " + std::to_string(t.policy_tokens());
    else if (!t.is_terminal()) why = "not terminal";
    else if (dump_line(to_json(replay(t))) != dump_line(to_json(t))) why = "replay differs";
    if (!why.empty()) {
      if (rep.violations == 0) rep.first_violation = "case " + std::to_string(i) + ": " + why;
      ++rep.violations;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// toy gradient check
// ---------------------------------------------------------------------------

struct GradCheck {
  double max_abs_err = 0;
  std::size_t points = 0;
};

/// Random parameters and random decision sequences; central differences at step h.
inline GradCheck toy_gradient_check(std::size_t points, std::uint64_t seed, double h = 1e-4) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.5);
  GradCheck out;
  const int k = 16;
  for (std::size_t pt = 0; pt < points; ++pt) {
    ToyParams p(k, 0, 0);
    for (auto& v : p.theta) v = nd(rng);
    std::vector<ToyDecision> ds;
    const int n = 1 + static_cast<int>(rng() % 8);
    std::vector<std::uint8_t> visited(k, 0);
    for (int i = 0; i < n; ++i) {
      const int ctx = static_cast<int>(rng() % kNumContexts);
      ds.push_back({ToyDecision::Kind::Act, ctx, static_cast<int>(rng() % 2), {}});
      std::vector<std::uint8_t> allowed(k);
      for (int r = 0; r < k; ++r) allowed[r] = visited[r] ? 0 : 1;
      int choice = static_cast<int>(rng() % k);
      while (!allowed[choice]) choice = (choice + 1) % k;
      visited[choice] = 1;
      ds.push_back({ToyDecision::Kind::Region, ctx, choice, allowed});
    }
    const auto g = grad_log_prob(p, ds);
    for (std::size_t i = 0; i < p.size(); ++i) {
      ToyParams plus = p, minus = p;
      plus.theta[i] += h;
      minus.theta[i] -= h;
      const double fd = (log_prob(plus, ds) - log_prob(minus, ds)) / (2 * h);
      out.max_abs_err = std::max(out.max_abs_err, std::fabs(fd - g[i]));
    }
    ++out.points;
  }
  return out;
}

// ---------------------------------------------------------------------------
// curation pool with forced accuracies
// ---------------------------------------------------------------------------

struct PoolItem {
  SampleRecord sample;
  MockItem mock;
  bool expect_difficulty_keep;
  bool expect_final_keep;
};

/// With K = 8 and quota 8 the mock hits every p in multiples of 1/8 exactly.
inline std::vector<PoolItem> synthetic_pool(double delta) {
  std::vector<PoolItem> out;
  const double plains[] = {0.0, 1.0, 0.125, 0.25, 0.5, 0.75, 0.875};
  const double uplifts[] = {0.0, 0.125, 0.25, 0.375, 0.5};
  int id = 0;
  for (double pp : plains) {
    for (double up : uplifts) {
      const double pc = std::min(1.0, pp + up);
      for (Source src : kAllSources) {
        SampleRecord s;
        s.id = "s" + std::to_string(id++);
        s.image_path = "synthetic";
        s.question = "What is written on the sign?";
        s.answer = "gold" + s.id;
        s.source = src;
        s.reference = s.answer;
        if (src == Source::VisualSearch) s.gt_bboxes = std::vector<BBox>{{4, 4, 20, 20}};
        MockItem m{s.answer, pp, pc, std::nullopt, "wrong"};
        const bool diff_keep = pp > 0.0 && pp < 1.0;
        const bool util_keep = src != Source::VisualSearch || (pc > 0 && pc - pp >= delta - 1e-12);
        out.push_back({s, m, diff_keep, diff_keep && util_keep});
      }
    }
  }
  return out;
}

inline ImageLoader synthetic_loader() {
  auto img = std::make_shared<const RasterImage>(48, 48, 3, "synthetic");
  return [img](const SampleRecord&) { return img; };
}

// ---------------------------------------------------------------------------
// end-to-end rollout fixture
// ---------------------------------------------------------------------------

/// Writes a 4-sample dataset with PNG images under `dir`; returns the dataset path.
inline std::string write_demo_dataset(const fs::path& dir, bool missing_image = false) {
  fs::create_directories(dir / "images");
  std::ofstream os(dir / "dataset.jsonl");
  for (int i = 0; i < 4; ++i) {
    RasterImage img(96 + 16 * i, 80, 3);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        auto* px = img.at(x, y);
        px[0] = static_cast<std::uint8_t>(x * 3 + i);
        px[1] = static_cast<std::uint8_t>(y * 5);
        px[2] = static_cast<std::uint8_t>((x ^ y) & 0xff);
      }
    const std::string name = "images/img" + std::to_string(i) + ".png";
    if (!(missing_image && i == 2)) save_png(img, (dir / name).string());
    SampleRecord s;
    s.id = "demo" + std::to_string(i);
    s.image_path = name;
    s.question = "What colour is the object in the corner?";
    s.answer = i % 2 ? "red" : "blue";
    s.source = Source::VisualSearch;
    s.gt_bboxes = std::vector<BBox>{{8, 8, 40, 40}};
    os << dump_line(to_json(s)) << '\n';
  }
  return (dir / "dataset.jsonl").string();
}

/// Mock policy config: zoom at [0,0,32,32], then answer correctly with p 0.5 / 0.9.
inline RunConfig demo_config(const fs::path& out_dir, std::uint64_t seed) {
  RunConfig cfg;
  cfg.policy.kind = "mock";
  cfg.policy.mock_default.p_plain = 0.5;
  cfg.policy.mock_default.p_crop = 0.9;
  cfg.policy.mock_default.zoom = BBox{0, 0, 32, 32};
  cfg.plan.seed = seed;
  cfg.plan.rollouts_per_prompt = 8;
  cfg.plan.prompts_per_batch = 3;
  cfg.workers = 4;
  cfg.output_dir = out_dir.string();
  return cfg;
}

}  // namespace zoomrl::testing
