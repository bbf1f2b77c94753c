// SPDX-License-Identifier: Apache-2.0
#pragma once

// Prompt rendering and parsing of the think / tool_call / answer turn grammar.
//
// A policy turn is a sequence of tagged spans separated by optional whitespace:
//
//   <think>...</think> <tool_call>{json}</tool_call> ... <answer>...</answer>
//
// parse_turn() is total: it never throws and records every lexical problem it
// meets in ParsedTurn::issues. validate_format() adds the structural and
// schema-level checks on top.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "zoomrl/error.hpp"
#include "zoomrl/util.hpp"

namespace zoomrl {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

inline constexpr std::string_view kZoomToolName = "image_zoom_in_tool";
inline constexpr std::string_view kRotateToolName = "image_rotate_tool";

/// Half-open byte range [begin, end) into the parsed text.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const Span&) const = default;
};

struct ToolCall {
  std::string name;
  json arguments = json::object();
  Span raw_span;

  /// Equality ignores raw_span: two calls are the same call wherever they appear.
  bool operator==(const ToolCall& o) const { return name == o.name && arguments == o.arguments; }
};

enum class ViolationCode {
  MissingThink,
  NoAction,
  BadOrder,
  AnswerWithCall,
  MultipleAnswers,
  MultipleThink,
  UnknownTool,
  BadArity,
  NonNumeric,
  MissingParam,
  BadParamType,
  BadParamValue,
  MalformedJson,
  BadCallShape,
  UnclosedTag,
  TrailingGarbage,
};

constexpr std::string_view to_string(ViolationCode c) noexcept {
  switch (c) {
    case ViolationCode::MissingThink: return "MISSING_THINK";
    case ViolationCode::NoAction: return "NO_ACTION";
    case ViolationCode::BadOrder: return "BAD_ORDER";
    case ViolationCode::AnswerWithCall: return "ANSWER_WITH_CALL";
    case ViolationCode::MultipleAnswers: return "MULTIPLE_ANSWERS";
    case ViolationCode::MultipleThink: return "MULTIPLE_THINK";
    case ViolationCode::UnknownTool: return "UNKNOWN_TOOL";
    case ViolationCode::BadArity: return "BAD_ARITY";
    case ViolationCode::NonNumeric: return "NON_NUMERIC";
    case ViolationCode::MissingParam: return "MISSING_PARAM";
    case ViolationCode::BadParamType: return "BAD_PARAM_TYPE";
    case ViolationCode::BadParamValue: return "BAD_PARAM_VALUE";
    case ViolationCode::MalformedJson: return "MALFORMED_JSON";
    case ViolationCode::BadCallShape: return "BAD_CALL_SHAPE";
    case ViolationCode::UnclosedTag: return "UNCLOSED_TAG";
    case ViolationCode::TrailingGarbage: return "TRAILING_GARBAGE";
  }
  return "UNKNOWN";
}

struct Violation {
  ViolationCode code;
  Span span;
  std::string detail;
};

enum class Element { Think, ToolCall, Answer };

struct ParsedTurn {
  std::optional<std::string> think;
  std::vector<ToolCall> tool_calls;  // only calls whose body parsed into {name, arguments}
  std::optional<std::string> answer;
  bool trailing_garbage = false;

  std::optional<Span> think_span;
  std::optional<Span> answer_span;
  std::vector<Element> order;     // every delimited element in source order, malformed calls included
  std::vector<Violation> issues;  // lexical problems found while scanning

  bool has_answer() const noexcept { return answer.has_value(); }
  std::size_t tool_call_elements() const noexcept {
    return static_cast<std::size_t>(std::count(order.begin(), order.end(), Element::ToolCall));
  }

  /// Structural equality on the recovered content (spans and diagnostics excluded).
  bool same_content(const ParsedTurn& o) const {
    return think == o.think && tool_calls == o.tool_calls && answer == o.answer &&
           trailing_garbage == o.trailing_garbage;
  }
};

struct FormatVerdict {
  bool well_formed = true;
  std::vector<Violation> violations;

  bool has(ViolationCode c) const {
    return std::any_of(violations.begin(), violations.end(),
                       [c](const Violation& v) { return v.code == c; });
  }
};

/// A function signature advertised in the system prompt. `spec` is the full
/// {"type": "function", "function": {...}} object, key order preserved so that
/// the rendered prompt is byte-stable.
struct ToolSchema {
  ordered_json spec;

  std::string name() const { return spec.at("function").at("name").get<std::string>(); }
  const ordered_json& parameters() const { return spec.at("function").at("parameters"); }
};

inline ToolSchema zoom_tool_schema() {
  ordered_json bbox;
  bbox["type"] = "array";
  bbox["items"] = ordered_json{{"type", "number"}};
  bbox["minItems"] = 4;
  bbox["maxItems"] = 4;
  bbox["description"] =
      "The bounding box of the region to zoom in, as [x1, y1, x2, y2], where (x1, y1) is the "
      "top-left corner and (x2, y2) is the bottom-right corner.";
  ordered_json label;
  label["type"] = "string";
  label["description"] = "The name or label of the object in the specified bounding box (optional).";

  ordered_json params;
  params["type"] = "object";
  params["properties"] = ordered_json::object();
  params["properties"]["bbox_2d"] = bbox;
  params["properties"]["label"] = label;
  params["required"] = ordered_json::array({"bbox_2d"});

  ordered_json fn;
  fn["name"] = std::string(kZoomToolName);
  fn["description"] =
      "Zoom in on a specific region of an image by cropping it based on a bounding box (bbox) "
      "and an optional object label.";
  fn["parameters"] = params;

  ordered_json spec;
  spec["type"] = "function";
  spec["function"] = fn;
  return ToolSchema{spec};
}

inline ToolSchema rotate_tool_schema() {
  ordered_json degrees;
  degrees["type"] = "integer";
  degrees["enum"] = ordered_json::array({0, 90, 180, 270});
  degrees["description"] = "Clockwise rotation angle in degrees.";

  ordered_json params;
  params["type"] = "object";
  params["properties"] = ordered_json::object();
  params["properties"]["degrees"] = degrees;
  params["required"] = ordered_json::array({"degrees"});

  ordered_json fn;
  fn["name"] = std::string(kRotateToolName);
  fn["description"] =
      "Rotate the whole image clockwise by a right angle, to make rotated text or objects upright.";
  fn["parameters"] = params;

  ordered_json spec;
  spec["type"] = "function";
  spec["function"] = fn;
  return ToolSchema{spec};
}

/// The set of tools enabled for a run, in prompt order.
struct ToolSet {
  std::vector<ToolSchema> schemas;

  static ToolSet zoom_only() { return ToolSet{{zoom_tool_schema()}}; }
  static ToolSet zoom_and_rotate() { return ToolSet{{zoom_tool_schema(), rotate_tool_schema()}}; }

  const ToolSchema* find(std::string_view name) const {
    for (const auto& s : schemas)
      if (s.name() == name) return &s;
    return nullptr;
  }
  bool contains(std::string_view name) const { return find(name) != nullptr; }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& s : schemas) out.push_back(s.name());
    return out;
  }
};

// ---------------------------------------------------------------------------
// Prompt rendering
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr std::string_view kSystemHead =
    "You are a helpful assistant.\n"
    "\n"
    "# Tools\n"
    "You may call one or more functions to assist with the user query.\n"
    "You are provided with function signatures within <tools></tools> XML tags:\n"
    "<tools>\n";

inline constexpr std::string_view kSystemTail =
    "\n</tools>\n"
    "\n"
    "# How to call a tool\n"
    "Return a json object with function name and arguments within <tool_call></tool_call> XML tags:\n"
    "<tool_call>\n"
    "{\"name\": <function-name>, \"arguments\": <args-json-object>}\n"
    "</tool_call>\n"
    "\n"
    "**Example**:  \n"
    "<tool_call>  \n"
    "{\"name\": \"image_zoom_in_tool\", \"arguments\": {\"bbox_2d\": [10, 20, 100, 200], \"label\": "
    "\"the apple on the desk\"}}  \n"
    "</tool_call>";

inline constexpr std::string_view kUserHead = "Question: ";
inline constexpr std::string_view kUserTail =
    "\n\nThink first, call **image_zoom_in_tool** if needed, then answer. Format strictly as:  "
    "<think>...</think>  <tool_call>...</tool_call> (if tools needed)  <answer>...</answer>";

}  // namespace detail

inline std::string render_system_prompt(const ToolSet& tools) {
  if (tools.schemas.empty()) throw Error(Errc::InvalidArgument, "system prompt needs at least one tool");
  std::string out(detail::kSystemHead);
  for (std::size_t i = 0; i < tools.schemas.size(); ++i) {
    if (i > 0) out += '\n';
    out += tools.schemas[i].spec.dump(2);
  }
  out += detail::kSystemTail;
  return out;
}

/// The question is spliced in verbatim; braces inside it are not template syntax.
inline std::string render_user_prompt(std::string_view question) {
  if (trim(question).empty()) throw Error(Errc::InvalidArgument, "empty question");
  std::string out(detail::kUserHead);
  out += question;
  out += detail::kUserTail;
  return out;
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

struct TagPair {
  std::string_view open;
  std::string_view close;
  Element element;
};

inline constexpr TagPair kTags[] = {
    {"<think>", "</think>", Element::Think},
    {"<tool_call>", "</tool_call>", Element::ToolCall},
    {"<answer>", "</answer>", Element::Answer},
};

inline const TagPair* tag_at(std::string_view text, std::size_t pos) {
  for (const auto& t : kTags)
    if (text.substr(pos, t.open.size()) == t.open) return &t;
  return nullptr;
}

inline std::size_t next_open_tag(std::string_view text, std::size_t from) {
  for (std::size_t p = text.find('<', from); p != std::string_view::npos; p = text.find('<', p + 1))
    if (tag_at(text, p)) return p;
  return text.size();
}

inline void parse_call_body(std::string_view body, Span span, ParsedTurn& out) {
  json parsed = json::parse(body.begin(), body.end(), nullptr, /*allow_exceptions=*/false);
  if (parsed.is_discarded()) {
    out.issues.push_back({ViolationCode::MalformedJson, span, "tool_call body is not valid JSON"});
    return;
  }
  if (!parsed.is_object()) {
    out.issues.push_back({ViolationCode::BadCallShape, span, "tool_call body must be a JSON object"});
    return;
  }
  auto name = parsed.find("name");
  if (name == parsed.end() || !name->is_string() || name->get<std::string>().empty()) {
    out.issues.push_back({ViolationCode::BadCallShape, span, "tool_call needs a non-empty string \"name\""});
    return;
  }
  ToolCall call;
  call.name = name->get<std::string>();
  call.raw_span = span;
  if (auto args = parsed.find("arguments"); args != parsed.end()) {
    if (!args->is_object()) {
      out.issues.push_back({ViolationCode::BadCallShape, span, "\"arguments\" must be a JSON object"});
      return;
    }
    call.arguments = *args;
  }
  out.tool_calls.push_back(std::move(call));
}

}  // namespace detail

inline ParsedTurn parse_turn(std::string_view text) {
  ParsedTurn out;
  std::size_t pos = 0;
  const std::size_t n = text.size();
  while (pos < n) {
    while (pos < n && is_space(text[pos])) ++pos;
    if (pos >= n) break;

    const detail::TagPair* tag = detail::tag_at(text, pos);
    if (!tag) {
      std::size_t next = detail::next_open_tag(text, pos + 1);
      out.trailing_garbage = true;
      out.issues.push_back({ViolationCode::TrailingGarbage, {pos, next}, "text outside tags"});
      pos = next;
      continue;
    }

    const std::size_t body_begin = pos + tag->open.size();
    const std::size_t close = text.find(tag->close, body_begin);
    if (close == std::string_view::npos) {
      out.issues.push_back({ViolationCode::UnclosedTag, {pos, n}, std::string(tag->open) + " is never closed"});
      break;
    }
    const Span span{pos, close + tag->close.size()};
    const std::string_view body = text.substr(body_begin, close - body_begin);
    out.order.push_back(tag->element);

    switch (tag->element) {
      case Element::Think:
        if (out.think) {
          out.issues.push_back({ViolationCode::MultipleThink, span, "more than one <think> span"});
        } else {
          out.think = std::string(body);
          out.think_span = span;
        }
        break;
      case Element::ToolCall:
        detail::parse_call_body(trim(body), span, out);
        break;
      case Element::Answer:
        if (out.answer) {
          out.issues.push_back({ViolationCode::MultipleAnswers, span, "more than one <answer> span"});
        } else {
          out.answer = std::string(trim(body));
          out.answer_span = span;
        }
        break;
    }
    pos = span.end;
  }
  return out;
}

/// Canonical text for a parsed turn; parse_turn(render_turn(t)) recovers t's content.
inline std::string render_turn(const ParsedTurn& t) {
  std::string out;
  if (t.think) out += "<think>" + *t.think + "</think>\n";
  for (const auto& c : t.tool_calls) {
    ordered_json body;
    body["name"] = c.name;
    body["arguments"] = c.arguments;
    out += "<tool_call>\n" + body.dump(-1, ' ', false, json::error_handler_t::replace) + "\n</tool_call>\n";
  }
  if (t.answer) out += "<answer>" + *t.answer + "</answer>";
  return out;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace detail {

inline void check_argument(const std::string& pname, const ordered_json& pspec, const json& value, Span span,
                           std::vector<Violation>& out) {
  const std::string type = pspec.value("type", "");
  auto bad_type = [&](std::string what) {
    out.push_back({ViolationCode::BadParamType, span, pname + ": expected " + what});
  };
  if (type == "array") {
    if (!value.is_array()) return bad_type("array");
    const auto count = static_cast<long long>(value.size());
    if ((pspec.contains("minItems") && count < pspec["minItems"].get<long long>()) ||
        (pspec.contains("maxItems") && count > pspec["maxItems"].get<long long>())) {
      out.push_back({ViolationCode::BadArity, span, pname + ": wrong number of items (" + std::to_string(count) + ")"});
    }
    if (pspec.contains("items") && pspec["items"].value("type", "") == "number") {
      for (const auto& item : value) {
        if (!item.is_number()) {
          out.push_back({ViolationCode::NonNumeric, span, pname + ": items must be numbers"});
          break;
        }
      }
    }
  } else if (type == "string") {
    if (!value.is_string()) return bad_type("string");
  } else if (type == "number") {
    if (!value.is_number()) return bad_type("number");
  } else if (type == "integer") {
    const bool integral =
        value.is_number_integer() || (value.is_number_float() && value.get<double>() == static_cast<long long>(value.get<double>()));
    if (!integral) return bad_type("integer");
  }
  if (pspec.contains("enum")) {
    bool found = false;
    for (const auto& allowed : pspec["enum"]) {
      if (allowed.is_number() && value.is_number() ? allowed.get<double>() == value.get<double>()
                                                   : json(allowed) == value) {
        found = true;
        break;
      }
    }
    if (!found) out.push_back({ViolationCode::BadParamValue, span, pname + ": value not allowed"});
  }
}

}  // namespace detail

/// Schema check of one call's arguments; empty when the call is acceptable.
inline std::vector<Violation> check_call(const ToolCall& call, const ToolSet& tools) {
  std::vector<Violation> out;
  const ToolSchema* schema = tools.find(call.name);
  if (!schema) {
    out.push_back({ViolationCode::UnknownTool, call.raw_span, "unknown tool \"" + call.name + "\""});
    return out;
  }
  const auto& params = schema->parameters();
  if (params.contains("required")) {
    for (const auto& req : params["required"]) {
      const auto key = req.get<std::string>();
      if (!call.arguments.contains(key))
        out.push_back({ViolationCode::MissingParam, call.raw_span, "missing required parameter " + key});
    }
  }
  if (params.contains("properties")) {
    for (const auto& [pname, pspec] : params["properties"].items()) {
      auto it = call.arguments.find(pname);
      if (it != call.arguments.end()) detail::check_argument(pname, pspec, *it, call.raw_span, out);
    }
  }
  return out;
}

inline FormatVerdict validate_format(const ParsedTurn& pt, const ToolSet& tools) {
  FormatVerdict v;
  v.violations = pt.issues;

  if (!pt.think) v.violations.push_back({ViolationCode::MissingThink, {}, "no <think> span"});

  const bool any_call = pt.tool_call_elements() > 0;
  const bool any_answer = std::find(pt.order.begin(), pt.order.end(), Element::Answer) != pt.order.end();
  if (!any_call && !any_answer) v.violations.push_back({ViolationCode::NoAction, {}, "neither tool_call nor answer"});
  if (any_call && any_answer)
    v.violations.push_back({ViolationCode::AnswerWithCall, pt.answer_span.value_or(Span{}),
                            "answer and tool_call in the same turn"});

  // think leads; an answer never precedes a call.
  bool seen_action = false, seen_answer = false, order_ok = true;
  for (Element e : pt.order) {
    if (e == Element::Think && seen_action) order_ok = false;
    if (e == Element::ToolCall && seen_answer) order_ok = false;
    if (e != Element::Think) seen_action = true;
    if (e == Element::Answer) seen_answer = true;
  }
  if (!order_ok) v.violations.push_back({ViolationCode::BadOrder, {}, "elements out of order"});

  for (const auto& call : pt.tool_calls) {
    auto issues = check_call(call, tools);
    v.violations.insert(v.violations.end(), issues.begin(), issues.end());
  }
  v.well_formed = v.violations.empty();
  return v;
}

}  // namespace zoomrl
