// SPDX-License-Identifier: Apache-2.0
#pragma once

// Deterministic in-process policies for tests, demos and curation dry runs.

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "zoomrl/error.hpp"
#include "zoomrl/rollout.hpp"
#include "zoomrl/toolbox.hpp"
#include "zoomrl/util.hpp"

namespace zoomrl {

inline std::string zoom_call_text(const BBox& b, std::string_view label = {}) {
  ordered_json args;
  args["bbox_2d"] = ordered_json::array({b.x1, b.y1, b.x2, b.y2});
  if (!label.empty()) args["label"] = std::string(label);
  ordered_json call;
  call["name"] = std::string(kZoomToolName);
  call["arguments"] = std::move(args);
  return "<tool_call>\n" + call.dump() + "\n</tool_call>";
}

/// Replays a fixed script: turn i is emitted when the view holds i assistant
/// messages. Past the end of the script the last turn repeats.
class ScriptedPolicy : public PolicyClient {
 public:
  using TurnFn = std::function<std::string(const GenerationRequest&, std::size_t turn)>;

  explicit ScriptedPolicy(std::vector<std::string> turns, bool honor_stop = true)
      : honor_stop_(honor_stop) {
    if (turns.empty()) throw Error(Errc::InvalidArgument, "script needs at least one turn");
    fn_ = [t = std::move(turns)](const GenerationRequest&, std::size_t i) { return t[std::min(i, t.size() - 1)]; };
  }
  explicit ScriptedPolicy(TurnFn fn, bool honor_stop = true) : fn_(std::move(fn)), honor_stop_(honor_stop) {}

  Generation generate(const GenerationRequest& req) override {
    const std::size_t turn = req.view ? req.view->count(Role::Assistant) : 0;
    std::string text = fn_(req, turn);
    if (honor_stop_) text = apply_stop(text, req.stop);
    return {text, whitespace_token_estimate(text), true};
  }

 private:
  TurnFn fn_;
  bool honor_stop_ = true;
};

/// Per-question behaviour of MockPolicy.
struct MockItem {
  std::string gold;
  double p_plain = 1.0;           // accuracy without any crop in view
  double p_crop = 1.0;            // accuracy once a crop is in view
  std::optional<BBox> zoom;       // if set, zoom here once before answering
  std::string wrong = "unknown";  // emitted when the draw says incorrect
};

/// Answers with a configured accuracy. In quota mode (quota > 0) member i of
/// a group is correct iff (i mod quota + 0.5) / quota < p, so a group of
/// `quota` rollouts hits the rate exactly; otherwise the draw is seeded by the
/// request seed.
class MockPolicy : public PolicyClient {
 public:
  MockPolicy() = default;
  explicit MockPolicy(std::map<std::string, MockItem> items, std::size_t quota = 0)
      : items_(std::move(items)), quota_(quota) {}

  void set(const std::string& id, MockItem item) { items_[id] = std::move(item); }
  void set_quota(std::size_t q) { quota_ = q; }

  Generation generate(const GenerationRequest& req) override {
    auto it = items_.find(req.question_id);
    std::string text;
    if (it == items_.end()) {
      text = "<think>no idea</think>\n<answer>unknown</answer>";
    } else {
      const MockItem& item = it->second;
      const bool has_crop = view_has_crop(req.view);
      const std::size_t turns = req.view ? req.view->count(Role::Assistant) : 0;
      if (item.zoom && !has_crop && turns == 0) {
        text = "<think>the detail is small, zoom in</think>\n" + zoom_call_text(*item.zoom, "target");
      } else {
        const double p = has_crop ? item.p_crop : item.p_plain;
        const double u = quota_ > 0 ? (static_cast<double>(req.rollout_index % quota_) + 0.5) / static_cast<double>(quota_)
                                    : unit_from_seed(mix_seed(req.seed, stable_hash(req.question_id)));
        text = "<think>answering from what is visible</think>\n<answer>" + (u < p ? item.gold : item.wrong) +
               "</answer>";
      }
    }
    text = apply_stop(text, req.stop);
    return {text, whitespace_token_estimate(text), true};
  }

  static bool view_has_crop(const StateView* view) {
    if (!view) return false;
    for (const auto& m : view->messages) {
      if (m.role != Role::Observation) continue;
      for (const auto& p : m.content)
        if (p.kind == ContentPart::Kind::Image) return true;
    }
    return false;
  }

 private:
  std::map<std::string, MockItem> items_;
  std::size_t quota_ = 0;
};

/// Always fails with a transport error; stands in for an unreachable endpoint.
class FailingPolicy : public PolicyClient {
 public:
  explicit FailingPolicy(Errc code = Errc::TransportError) : code_(code) {}
  Generation generate(const GenerationRequest&) override { throw Error(code_, "endpoint unreachable"); }

 private:
  Errc code_;
};

}  // namespace zoomrl
