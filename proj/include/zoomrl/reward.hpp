// SPDX-License-Identifier: Apache-2.0
#pragma once

// Trajectory reward: accuracy + format + a tool bonus gated by the configured mode.

#include <charconv>
#include <cmath>
#include <functional>
#include <optional>
#include <regex>
#include <string>
#include <string_view>

#include "zoomrl/error.hpp"
#include "zoomrl/protocol.hpp"
#include "zoomrl/trajectory.hpp"
#include "zoomrl/util.hpp"

namespace zoomrl {

enum class ToolRewardMode { Conditional, Unconditional, None };

constexpr std::string_view to_string(ToolRewardMode m) noexcept {
  switch (m) {
    case ToolRewardMode::Conditional: return "conditional";
    case ToolRewardMode::Unconditional: return "unconditional";
    case ToolRewardMode::None: return "none";
  }
  return "unknown";
}

inline ToolRewardMode parse_tool_reward_mode(std::string_view s) {
  const auto l = to_lower(s);
  if (l == "conditional") return ToolRewardMode::Conditional;
  if (l == "unconditional") return ToolRewardMode::Unconditional;
  if (l == "none") return ToolRewardMode::None;
  throw Error(Errc::ConfigError, "unknown tool reward mode \"" + std::string(s) + "\"");
}

struct RewardConfig {
  double r_acc = 1.0;
  double r_format_penalty = -0.5;
  double r_tool = 0.5;
  ToolRewardMode mode = ToolRewardMode::Conditional;
};

struct RewardBreakdown {
  double acc = 0;
  double format = 0;
  double tool = 0;
  double total = 0;
};

// ---------------------------------------------------------------------------
// Verifiers
// ---------------------------------------------------------------------------

enum class VerifierKind { ExactMatch, NumericTolerance, ChoiceLetter, ExternalJudge };

/// Judge callback for ExternalJudge: (answer, gold) -> verdict. Throws
/// Error(JudgeUnavailable) (or a transport-class error) when it cannot decide.
using JudgeFn = std::function<bool(std::string_view answer, std::string_view gold)>;

struct Verifier {
  VerifierKind kind = VerifierKind::ExactMatch;
  double eps = 1e-6;
  JudgeFn judge;

  static Verifier exact() { return {}; }
  static Verifier numeric(double eps) { return {VerifierKind::NumericTolerance, eps, {}}; }
  static Verifier choice() { return {VerifierKind::ChoiceLetter, 0, {}}; }
  static Verifier external(JudgeFn fn) { return {VerifierKind::ExternalJudge, 0, std::move(fn)}; }
};

/// Lowercase, collapse inner whitespace, drop surrounding quotes and a trailing period.
inline std::string normalize_answer(std::string_view s) {
  std::string out;
  bool space = false;
  for (char c : trim(s)) {
    if (is_space(c)) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out += ' ';
    space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  while (!out.empty() && (out.back() == '.' || out.back() == '!')) out.pop_back();
  if (out.size() >= 2 && (out.front() == '"' || out.front() == '\'') && out.back() == out.front())
    out = out.substr(1, out.size() - 2);
  return std::string(trim(out));
}

/// Parses a plain decimal, scientific literal, or a fraction "a/b".
inline std::optional<double> parse_number(std::string_view s) {
  s = trim(s);
  auto one = [](std::string_view t) -> std::optional<double> {
    t = trim(t);
    if (!t.empty() && t.front() == '+') t.remove_prefix(1);
    double v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || p != t.data() + t.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  };
  if (auto slash = s.find('/'); slash != std::string_view::npos) {
    auto num = one(s.substr(0, slash));
    auto den = one(s.substr(slash + 1));
    if (!num || !den || *den == 0) return std::nullopt;
    return *num / *den;
  }
  return one(s);
}

/// Extracts an option letter from "B", "(B)", "B.", "B) text" or "B: text".
inline std::optional<char> parse_choice_letter(std::string_view s) {
  static const std::regex re(R"(^\(?([A-Za-z])\)?(?:[.:)]|\s|$))");
  const std::string t(trim(s));
  std::smatch m;
  if (!std::regex_search(t, m, re)) return std::nullopt;
  return static_cast<char>(std::toupper(static_cast<unsigned char>(m[1].str()[0])));
}

inline bool verify_answer(std::string_view answer, std::string_view gold, const Verifier& v) {
  switch (v.kind) {
    case VerifierKind::ExactMatch:
      return normalize_answer(answer) == normalize_answer(gold);
    case VerifierKind::NumericTolerance: {
      auto a = parse_number(answer), g = parse_number(gold);
      return a && g && std::fabs(*a - *g) < v.eps;
    }
    case VerifierKind::ChoiceLetter: {
      auto a = parse_choice_letter(answer), g = parse_choice_letter(gold);
      return a && g && *a == *g;
    }
    case VerifierKind::ExternalJudge:
      if (!v.judge) throw Error(Errc::JudgeUnavailable, "no judge configured");
      try {
        return v.judge(answer, gold);
      } catch (const Error& e) {
        if (e.code() == Errc::JudgeUnavailable) throw;
        throw Error(Errc::JudgeUnavailable, e.what());
      }
  }
  return false;
}

inline double accuracy_reward(const std::optional<std::string>& answer, std::string_view gold, const Verifier& v,
                              double r_acc = 1.0) {
  if (!answer) return 0.0;
  return verify_answer(*answer, gold, v) ? r_acc : 0.0;
}

inline double format_reward(const FormatVerdict& verdict, double penalty = -0.5) {
  return verdict.well_formed ? 0.0 : penalty;
}

/// True when every policy turn is well formed and the trajectory did not end Malformed.
inline bool trajectory_well_formed(const Trajectory& traj, const ToolSet& tools) {
  if (traj.terminal() == Terminal::Malformed) return false;
  for (const auto& s : traj.segments()) {
    if (s.kind != SegmentKind::PolicyText) continue;
    if (s.truncated) return false;
    if (!validate_format(parse_turn(s.text), tools).well_formed) return false;
  }
  return true;
}

inline double tool_bonus(double acc, std::size_t tool_calls, const RewardConfig& cfg) {
  const bool used = tool_calls >= 1;
  switch (cfg.mode) {
    case ToolRewardMode::Conditional: return (acc > 0 && used) ? cfg.r_tool : 0.0;
    case ToolRewardMode::Unconditional: return used ? cfg.r_tool : 0.0;
    case ToolRewardMode::None: return 0.0;
  }
  return 0.0;
}

inline RewardBreakdown total_reward(const Trajectory& traj, std::string_view gold, const Verifier& v,
                                    const RewardConfig& cfg, const ToolSet& tools = ToolSet::zoom_only()) {
  if (!traj.is_terminal()) throw Error(Errc::NotTerminal, "reward needs a terminal trajectory");
  RewardBreakdown r;
  if (traj.terminal() == Terminal::Answered) r.acc = accuracy_reward(traj.answer(), gold, v, cfg.r_acc);
  r.format = trajectory_well_formed(traj, tools) ? 0.0 : cfg.r_format_penalty;
  r.tool = tool_bonus(r.acc, traj.tool_call_count(), cfg);
  r.total = r.acc + r.format + r.tool;
  return r;
}

inline ordered_json to_json(const RewardBreakdown& r) {
  ordered_json j;
  j["acc"] = r.acc;
  j["format"] = r.format;
  j["tool"] = r.tool;
  j["total"] = r.total;
  return j;
}

}  // namespace zoomrl
