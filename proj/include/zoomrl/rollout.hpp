// SPDX-License-Identifier: Apache-2.0
#pragma once

// Multi-turn rollout loop: generate, parse, execute tools, append observations.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "zoomrl/dataset.hpp"
#include "zoomrl/error.hpp"
#include "zoomrl/grpo.hpp"
#include "zoomrl/protocol.hpp"
#include "zoomrl/reward.hpp"
#include "zoomrl/toolbox.hpp"
#include "zoomrl/trajectory.hpp"
#include "zoomrl/util.hpp"

namespace zoomrl {

inline constexpr std::string_view kCallClose = "</tool_call>";
inline constexpr std::string_view kAnswerClose = "</answer>";

struct GenerationRequest {
  const StateView* view = nullptr;
  std::vector<std::string> stop;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::size_t rollout_index = 0;
  std::string question_id;
  std::size_t max_tokens = 0;  // remaining policy-token budget
};

struct Generation {
  std::string text;
  std::size_t token_len = 0;
  bool usage_estimated = false;
};

/// Anything that can produce the next policy turn. Implementations must be safe
/// to call from several rollouts at once. Transport problems are reported by
/// throwing Error with a transport-class code.
class PolicyClient {
 public:
  virtual ~PolicyClient() = default;
  virtual Generation generate(const GenerationRequest& req) = 0;
  virtual bool supports_images() const { return true; }
};

struct Budget {
  std::size_t max_tool_calls = 6;
  std::size_t max_policy_tokens = 20480;
  std::chrono::milliseconds call_timeout{60000};

  Limits limits() const { return {max_tool_calls, max_policy_tokens}; }
};

struct RolloutPlan {
  std::size_t prompts_per_batch = 256;
  std::size_t rollouts_per_prompt = 16;
  std::uint64_t seed = 0;
};

/// Tokens an observation contributes: one per 28x28 patch for images, words for notes.
using ObservationTokenFn = std::function<std::size_t(const RasterImage* image, const std::string& note)>;

inline std::size_t patch_observation_tokens(const RasterImage* image, const std::string& note) {
  if (image) {
    const auto cols = static_cast<std::size_t>((image->width + 27) / 28);
    const auto rows = static_cast<std::size_t>((image->height + 27) / 28);
    return std::max<std::size_t>(1, cols * rows);
  }
  return std::max<std::size_t>(1, whitespace_token_estimate(note));
}

struct RolloutOptions {
  Budget budget;
  std::shared_ptr<const PromptTemplate> prompt = std::make_shared<PromptTemplate>();
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::size_t rollout_index = 0;
  std::vector<PrefaceObservation> preface;
  ObservationTokenFn observation_tokens = patch_observation_tokens;
  double min_side = kDefaultMinSide;
};

/// Generation stops before a closing marker; put it back so the turn parses.
inline std::string restore_stop_marker(std::string text) {
  auto count = [&](std::string_view needle) {
    std::size_t n = 0;
    for (auto p = text.find(needle); p != std::string::npos; p = text.find(needle, p + needle.size())) ++n;
    return n;
  };
  if (count("<tool_call>") > count(kCallClose)) text += kCallClose;
  if (count("<answer>") > count(kAnswerClose)) text += kAnswerClose;
  return text;
}

/// Truncates at the earliest stop marker, dropping the marker (what an endpoint does).
inline std::string apply_stop(std::string_view text, const std::vector<std::string>& stop) {
  std::size_t cut = text.size();
  for (const auto& s : stop)
    if (!s.empty()) cut = std::min(cut, text.find(s));
  return std::string(text.substr(0, cut));
}

inline Trajectory run_rollout(const std::string& question_id, std::string_view question, const ImagePtr& image,
                              PolicyClient& policy, const RolloutOptions& opts) {
  if (!image) throw Error(Errc::ImageError, "rollout needs a source image");
  const PromptTemplate& tmpl = *opts.prompt;
  Trajectory traj(question_id, image->id, opts.budget.limits());

  while (!traj.is_terminal()) {
    const StateView view = state_view(tmpl, question, traj, opts.preface, image);
    GenerationRequest req;
    req.view = &view;
    req.stop = {std::string(kCallClose), std::string(kAnswerClose)};
    req.temperature = opts.temperature;
    req.seed = mix_seed(opts.seed, traj.segments().size());
    req.rollout_index = opts.rollout_index;
    req.question_id = question_id;
    req.max_tokens = opts.budget.max_policy_tokens - traj.policy_tokens();

    Generation gen;
    try {
      gen = policy.generate(req);
    } catch (const Error& e) {
      if (!is_transport_class(e.code())) throw;
      traj.mark_malformed(std::string("transport failure: ") + e.what());
      break;
    }
    std::string text = restore_stop_marker(std::move(gen.text));
    if (trim(text).empty()) {
      traj.mark_malformed("empty generation");
      break;
    }
    const std::size_t tokens = gen.token_len > 0 ? gen.token_len : whitespace_token_estimate(text);
    traj.append_policy_text(std::move(text), tokens);
    if (traj.is_terminal()) break;

    const std::vector<ToolCall> calls = traj.last_calls();
    for (const auto& call : calls) {
      DispatchOutcome out = dispatch(call, *image, tmpl.tools(), opts.min_side);
      if (out.result) {
        auto img = std::make_shared<const RasterImage>(std::move(out.result->image));
        traj.append_observation(out.tool_name, img->id, opts.observation_tokens(img.get(), out.note), out.note, img);
      } else {
        traj.append_observation(out.tool_name, "", opts.observation_tokens(nullptr, out.note), out.note);
      }
    }
  }
  return traj;
}

/// Rollout seed for member `index` of the group for `prompt_id`.
inline std::uint64_t rollout_seed(std::uint64_t base, std::string_view prompt_id, std::size_t index) {
  return mix_seed(mix_seed(base, stable_hash(prompt_id)), index);
}

/// n independent rollouts of one prompt, scored and ready for advantages. A
/// rollout that fails for any engine-level reason is kept as a Malformed member.
inline Group run_group(const SampleRecord& prompt, const ImagePtr& image, std::size_t n, PolicyClient& policy,
                       const RolloutOptions& base, const RewardConfig& reward, const Verifier& verifier,
                       std::size_t workers = 1) {
  if (n < 2) throw Error(Errc::GroupTooSmall, "group needs at least 2 rollouts");
  Group g;
  g.prompt_id = prompt.id;
  g.trajectories.resize(n);
  g.rewards.resize(n);
  const std::string image_ref = image ? image->id : prompt.image_path;
  parallel_for(n, workers, [&](std::size_t i) {
    RolloutOptions opts = base;
    opts.seed = rollout_seed(base.seed, prompt.id, i);
    opts.rollout_index = i;
    try {
      g.trajectories[i] = run_rollout(prompt.id, prompt.question, image, policy, opts);
    } catch (const Error& e) {
      Trajectory t(prompt.id, image_ref, base.budget.limits());
      t.mark_malformed(e.what());
      g.trajectories[i] = std::move(t);
    }
    g.rewards[i] = total_reward(g.trajectories[i], prompt.answer, verifier, reward, base.prompt->tools());
  });
  score_advantages(g);
  return g;
}

}  // namespace zoomrl
