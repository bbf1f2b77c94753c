// SPDX-License-Identifier: Apache-2.0
#pragma once

// Interleaved policy-text / observation trajectories, their loss mask and the
// chat state the policy sees at each step.

#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "zoomrl/error.hpp"
#include "zoomrl/protocol.hpp"
#include "zoomrl/toolbox.hpp"

namespace zoomrl {

struct Limits {
  std::size_t max_tool_calls = 6;
  std::size_t max_policy_tokens = 20480;
};

enum class SegmentKind { PolicyText, Observation };

struct ObservationRecord {
  std::string tool_name;
  std::string image_ref;  // empty when the tool produced no image
  std::string rendered_note;
};

struct Segment {
  SegmentKind kind = SegmentKind::PolicyText;
  std::string text;         // PolicyText
  ObservationRecord obs;    // Observation
  std::size_t token_len = 0;
  ImagePtr image;           // Observation pixels; not serialized
  bool truncated = false;   // PolicyText cut at the token budget
};

enum class Terminal { Running, Answered, BudgetExhausted, Malformed };

constexpr std::string_view to_string(Terminal t) noexcept {
  switch (t) {
    case Terminal::Running: return "Running";
    case Terminal::Answered: return "Answered";
    case Terminal::BudgetExhausted: return "BudgetExhausted";
    case Terminal::Malformed: return "Malformed";
  }
  return "Unknown";
}

inline bool is_registered_tool(std::string_view name) {
  return name == kZoomToolName || name == kRotateToolName || name == kToolErrorName;
}

/// Run-length encoding of a 0/1 mask as (bit, length) pairs.
using MaskRuns = std::vector<std::pair<std::uint8_t, std::size_t>>;

class Trajectory {
 public:
  Trajectory() = default;
  Trajectory(std::string question_id, std::string image_ref, Limits limits = {})
      : question_id_(std::move(question_id)), image_ref_(std::move(image_ref)), limits_(limits) {}

  /// Appends one policy turn and updates counts and terminal status from its parse.
  ///
  /// A turn that would overrun the token budget is kept with token_len cut to
  /// the remaining budget and ends the trajectory as BudgetExhausted; its
  /// content is treated as truncated. A turn whose calls would push the count
  /// past max_tool_calls is kept but none of its calls are admitted.
  Trajectory& append_policy_text(std::string text, std::size_t token_len) {
    if (terminal_ != Terminal::Running) throw Error(Errc::AppendAfterTerminal, "trajectory is terminal");
    if (text.empty() || token_len == 0) throw Error(Errc::InvalidSegment, "policy text needs content and tokens");
    if (pending_observations_ > 0) throw Error(Errc::InvalidSegment, "observations still pending for the previous turn");

    ParsedTurn pt = parse_turn(text);
    Segment seg;
    seg.kind = SegmentKind::PolicyText;
    seg.text = std::move(text);

    const std::size_t remaining = limits_.max_policy_tokens - policy_tokens_;
    if (token_len > remaining) {
      seg.token_len = remaining;
      seg.truncated = true;
      policy_tokens_ += remaining;
      terminal_ = Terminal::BudgetExhausted;
      note_ = "policy token budget exhausted";
      last_calls_.clear();
      if (seg.token_len > 0) segments_.push_back(std::move(seg));
      return *this;
    }

    seg.token_len = token_len;
    policy_tokens_ += token_len;
    parsed_calls_ += pt.tool_calls.size();
    last_calls_.clear();

    if (pt.answer) {
      terminal_ = Terminal::Answered;
      answer_ = *pt.answer;
    } else if (pt.tool_calls.empty()) {
      terminal_ = Terminal::Malformed;
      note_ = "turn has neither an answer nor a valid tool call";
    } else if (tool_call_count_ + pt.tool_calls.size() > limits_.max_tool_calls) {
      refused_calls_ += pt.tool_calls.size();
      terminal_ = Terminal::BudgetExhausted;
      note_ = "tool call budget exhausted";
    } else {
      tool_call_count_ += pt.tool_calls.size();
      last_calls_ = pt.tool_calls;
      pending_observations_ = last_calls_.size();
      if (policy_tokens_ >= limits_.max_policy_tokens) {
        // Nothing more can be generated; the calls were admitted but cannot be answered on.
        terminal_ = Terminal::BudgetExhausted;
        note_ = "policy token budget exhausted";
        pending_observations_ = 0;
      }
    }
    segments_.push_back(std::move(seg));
    return *this;
  }

  Trajectory& append_observation(std::string tool_name, std::string image_ref, std::size_t token_len,
                                 std::string note = {}, ImagePtr image = nullptr) {
    if (terminal_ != Terminal::Running || pending_observations_ == 0)
      throw Error(Errc::ObservationWithoutCall, "no tool call awaiting an observation");
    if (token_len == 0) throw Error(Errc::InvalidSegment, "observation needs tokens");
    if (!is_registered_tool(tool_name)) throw Error(Errc::InvalidSegment, "unregistered tool " + tool_name);
    Segment seg;
    seg.kind = SegmentKind::Observation;
    seg.obs = {std::move(tool_name), std::move(image_ref), std::move(note)};
    seg.token_len = token_len;
    seg.image = std::move(image);
    segments_.push_back(std::move(seg));
    --pending_observations_;
    return *this;
  }

  /// Ends a running trajectory as Malformed (e.g. the policy endpoint failed).
  Trajectory& mark_malformed(std::string note) {
    if (terminal_ != Terminal::Running) throw Error(Errc::AppendAfterTerminal, "trajectory is terminal");
    terminal_ = Terminal::Malformed;
    note_ = std::move(note);
    pending_observations_ = 0;
    last_calls_.clear();
    return *this;
  }

  const std::string& question_id() const noexcept { return question_id_; }
  const std::string& image_ref() const noexcept { return image_ref_; }
  const Limits& limits() const noexcept { return limits_; }
  const std::vector<Segment>& segments() const noexcept { return segments_; }
  std::size_t tool_call_count() const noexcept { return tool_call_count_; }
  std::size_t refused_calls() const noexcept { return refused_calls_; }
  std::size_t parsed_calls() const noexcept { return parsed_calls_; }
  std::size_t policy_tokens() const noexcept { return policy_tokens_; }
  Terminal terminal() const noexcept { return terminal_; }
  bool is_terminal() const noexcept { return terminal_ != Terminal::Running; }
  const std::optional<std::string>& answer() const noexcept { return answer_; }
  const std::string& note() const noexcept { return note_; }

  /// Calls from the latest turn that were admitted and still need (or got) observations.
  const std::vector<ToolCall>& last_calls() const noexcept { return last_calls_; }
  std::size_t pending_observations() const noexcept { return pending_observations_; }

  std::size_t observation_count() const {
    return static_cast<std::size_t>(std::count_if(segments_.begin(), segments_.end(), [](const Segment& s) {
      return s.kind == SegmentKind::Observation;
    }));
  }
  std::size_t total_tokens() const {
    std::size_t n = 0;
    for (const auto& s : segments_) n += s.token_len;
    return n;
  }

 private:
  std::string question_id_;
  std::string image_ref_;
  Limits limits_;
  std::vector<Segment> segments_;
  std::size_t tool_call_count_ = 0;
  std::size_t refused_calls_ = 0;
  std::size_t parsed_calls_ = 0;
  std::size_t policy_tokens_ = 0;
  std::size_t pending_observations_ = 0;
  Terminal terminal_ = Terminal::Running;
  std::optional<std::string> answer_;
  std::string note_;
  std::vector<ToolCall> last_calls_;
};

/// Replays a trajectory's segments into a fresh one; the result must match the original.
inline Trajectory replay(const Trajectory& t) {
  Trajectory out(t.question_id(), t.image_ref(), t.limits());
  for (const auto& s : t.segments()) {
    if (out.is_terminal()) break;
    if (s.kind == SegmentKind::PolicyText) {
      out.append_policy_text(s.text, s.truncated ? s.token_len + 1 : s.token_len);
    } else {
      out.append_observation(s.obs.tool_name, s.obs.image_ref, s.token_len, s.obs.rendered_note, s.image);
    }
  }
  if (!out.is_terminal() && t.terminal() == Terminal::Malformed) out.mark_malformed(t.note());
  return out;
}

inline std::vector<std::uint8_t> loss_mask(const Trajectory& t) {
  std::vector<std::uint8_t> mask;
  mask.reserve(t.total_tokens());
  for (const auto& s : t.segments())
    mask.insert(mask.end(), s.token_len, s.kind == SegmentKind::PolicyText ? 1 : 0);
  return mask;
}

inline MaskRuns mask_runs(const Trajectory& t) {
  MaskRuns runs;
  for (const auto& s : t.segments()) {
    const std::uint8_t bit = s.kind == SegmentKind::PolicyText ? 1 : 0;
    if (!runs.empty() && runs.back().first == bit)
      runs.back().second += s.token_len;
    else
      runs.emplace_back(bit, s.token_len);
  }
  return runs;
}

inline std::vector<std::uint8_t> expand_runs(const MaskRuns& runs) {
  std::vector<std::uint8_t> mask;
  for (const auto& [bit, len] : runs) mask.insert(mask.end(), len, bit);
  return mask;
}

// ---------------------------------------------------------------------------
// State view
// ---------------------------------------------------------------------------

enum class Role { System, User, Assistant, Observation };

constexpr std::string_view to_string(Role r) noexcept {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
    case Role::Observation: return "tool-observation";
  }
  return "unknown";
}

struct ContentPart {
  enum class Kind { Text, Image } kind = Kind::Text;
  std::string text;
  std::string image_ref;
  ImagePtr image;  // pixels for clients that upload images; not part of the serialization
};

struct Message {
  Role role = Role::User;
  std::vector<ContentPart> content;
};

struct StateView {
  std::vector<Message> messages;

  std::size_t count(Role r) const {
    return static_cast<std::size_t>(
        std::count_if(messages.begin(), messages.end(), [r](const Message& m) { return m.role == r; }));
  }
};

/// Rendered prompts for a tool set. Rendering once keeps per-turn views cheap.
class PromptTemplate {
 public:
  explicit PromptTemplate(ToolSet tools = ToolSet::zoom_only())
      : tools_(std::move(tools)), system_(render_system_prompt(tools_)) {}

  const ToolSet& tools() const noexcept { return tools_; }
  const std::string& system_prompt() const noexcept { return system_; }
  std::string user_prompt(std::string_view question) const { return render_user_prompt(question); }

 private:
  ToolSet tools_;
  std::string system_;
};

/// An observation shown to the policy before its first turn (e.g. a provided crop).
struct PrefaceObservation {
  std::string image_ref;
  ImagePtr image;
  std::string note;
};

inline Message observation_message(const std::string& image_ref, const ImagePtr& image, const std::string& note) {
  Message m{Role::Observation, {}};
  if (!image_ref.empty()) m.content.push_back({ContentPart::Kind::Image, {}, image_ref, image});
  if (!note.empty()) m.content.push_back({ContentPart::Kind::Text, note, {}, nullptr});
  if (m.content.empty()) m.content.push_back({ContentPart::Kind::Text, "(no output)", {}, nullptr});
  return m;
}

inline StateView state_view(const PromptTemplate& tmpl, std::string_view question, const Trajectory& traj,
                            const std::vector<PrefaceObservation>& preface = {}, ImagePtr source_image = nullptr) {
  StateView v;
  v.messages.reserve(2 + preface.size() + traj.segments().size());
  v.messages.push_back({Role::System, {{ContentPart::Kind::Text, tmpl.system_prompt(), {}, nullptr}}});
  Message user{Role::User, {}};
  if (!traj.image_ref().empty())
    user.content.push_back({ContentPart::Kind::Image, {}, traj.image_ref(), std::move(source_image)});
  user.content.push_back({ContentPart::Kind::Text, tmpl.user_prompt(question), {}, nullptr});
  v.messages.push_back(std::move(user));
  for (const auto& p : preface) v.messages.push_back(observation_message(p.image_ref, p.image, p.note));
  for (const auto& s : traj.segments()) {
    if (s.kind == SegmentKind::PolicyText)
      v.messages.push_back({Role::Assistant, {{ContentPart::Kind::Text, s.text, {}, nullptr}}});
    else
      v.messages.push_back(observation_message(s.obs.image_ref, s.image, s.obs.rendered_note));
  }
  return v;
}

inline ordered_json to_json(const StateView& v) {
  ordered_json msgs = ordered_json::array();
  for (const auto& m : v.messages) {
    ordered_json parts = ordered_json::array();
    for (const auto& p : m.content) {
      ordered_json part;
      if (p.kind == ContentPart::Kind::Text) {
        part["type"] = "text";
        part["text"] = p.text;
      } else {
        part["type"] = "image";
        part["image_ref"] = p.image_ref;
      }
      parts.push_back(std::move(part));
    }
    ordered_json msg;
    msg["role"] = std::string(to_string(m.role));
    msg["content"] = std::move(parts);
    msgs.push_back(std::move(msg));
  }
  return msgs;
}

inline std::string serialize(const StateView& v) {
  return to_json(v).dump(-1, ' ', false, json::error_handler_t::replace);
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

inline ordered_json runs_to_json(const MaskRuns& runs) {
  ordered_json out = ordered_json::array();
  for (const auto& [bit, len] : runs) out.push_back(ordered_json::array({bit, len}));
  return out;
}

inline ordered_json to_json(const Trajectory& t) {
  ordered_json segs = ordered_json::array();
  for (const auto& s : t.segments()) {
    ordered_json seg;
    if (s.kind == SegmentKind::PolicyText) {
      seg["kind"] = "policy";
      seg["text"] = s.text;
      if (s.truncated) seg["truncated"] = true;
    } else {
      seg["kind"] = "observation";
      seg["tool_name"] = s.obs.tool_name;
      seg["image_ref"] = s.obs.image_ref;
      seg["note"] = s.obs.rendered_note;
    }
    seg["token_len"] = s.token_len;
    segs.push_back(std::move(seg));
  }
  ordered_json term;
  term["kind"] = std::string(to_string(t.terminal()));
  if (t.terminal() == Terminal::Answered) term["answer"] = *t.answer();
  if (!t.note().empty()) term["note"] = t.note();

  ordered_json j;
  j["question_id"] = t.question_id();
  j["image_ref"] = t.image_ref();
  j["segments"] = std::move(segs);
  j["tool_call_count"] = t.tool_call_count();
  j["refused_calls"] = t.refused_calls();
  j["terminal"] = std::move(term);
  j["mask"] = runs_to_json(mask_runs(t));
  return j;
}

inline std::string dump_line(const ordered_json& j) {
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

}  // namespace zoomrl
