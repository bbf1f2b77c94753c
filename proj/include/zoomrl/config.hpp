// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration: one JSON document, defaults for every key, unknown keys rejected.
// Precedence when resolving: command-line overrides > config file > defaults.

#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zoomrl/curation.hpp"
#include "zoomrl/dataset.hpp"
#include "zoomrl/error.hpp"
#include "zoomrl/http_client.hpp"
#include "zoomrl/reward.hpp"
#include "zoomrl/rollout.hpp"
#include "zoomrl/toyrl.hpp"

namespace zoomrl {

struct MockItemConfig {
  double p_plain = 1.0;
  double p_crop = 1.0;
  std::optional<BBox> zoom;
  std::string wrong = "unknown";
};

struct PolicyConfig {
  std::string kind = "mock";  // mock | scripted | remote
  std::vector<std::string> script = {"<think>The answer is visible.</think>\n<answer>unknown</answer>"};
  std::size_t mock_quota = 0;
  MockItemConfig mock_default;
  std::map<std::string, MockItemConfig> mock_items;
};

struct RunConfig {
  EndpointConfig endpoint;
  PolicyConfig policy;
  Budget budget;
  RolloutPlan plan;
  std::size_t workers = 1;
  double temperature = 1.0;
  std::vector<std::string> tools = {std::string(kZoomToolName)};
  double min_side = kDefaultMinSide;
  RewardConfig reward;
  std::string verifier = "exact";  // exact | numeric | choice | judge
  double verifier_eps = 1e-6;
  CurationConfig curation;
  std::string judge = "reference";  // reference | accept | remote
  MixtureWeights mixture = default_mixture();
  std::size_t mixture_draws = 0;
  ToyTrainConfig toy;
  std::uint64_t toy_seed = 0;
  std::size_t toy_seeds = 1;
  std::string output_dir = "out";
};

namespace detail {

inline ordered_json mock_to_json(const MockItemConfig& m) {
  ordered_json j;
  j["p_plain"] = m.p_plain;
  j["p_crop"] = m.p_crop;
  j["zoom"] = m.zoom ? ordered_json::array({m.zoom->x1, m.zoom->y1, m.zoom->x2, m.zoom->y2}) : ordered_json(nullptr);
  j["wrong"] = m.wrong;
  return j;
}

}  // namespace detail

inline ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["endpoint"] = {{"url", c.endpoint.url},
                   {"model", c.endpoint.model},
                   {"api_key_env", c.endpoint.api_key_env},
                   {"max_retries", c.endpoint.max_retries},
                   {"backoff_ms", c.endpoint.backoff_ms},
                   {"backoff_cap_ms", c.endpoint.backoff_cap_ms}};
  ordered_json items = ordered_json::object();
  for (const auto& [id, m] : c.policy.mock_items) items[id] = detail::mock_to_json(m);
  j["policy"] = {{"kind", c.policy.kind},
                 {"script", c.policy.script},
                 {"mock_quota", c.policy.mock_quota},
                 {"mock_default", detail::mock_to_json(c.policy.mock_default)},
                 {"mock_items", items}};
  j["budget"] = {{"max_tool_calls", c.budget.max_tool_calls},
                 {"max_policy_tokens", c.budget.max_policy_tokens},
                 {"call_timeout_ms", c.budget.call_timeout.count()}};
  j["rollout"] = {{"prompts_per_batch", c.plan.prompts_per_batch},
                  {"rollouts_per_prompt", c.plan.rollouts_per_prompt},
                  {"seed", c.plan.seed},
                  {"workers", c.workers},
                  {"temperature", c.temperature},
                  {"tools", c.tools},
                  {"min_side", c.min_side}};
  j["reward"] = {{"r_acc", c.reward.r_acc},
                 {"r_format_penalty", c.reward.r_format_penalty},
                 {"r_tool", c.reward.r_tool},
                 {"mode", std::string(to_string(c.reward.mode))},
                 {"verifier", c.verifier},
                 {"eps", c.verifier_eps}};
  ordered_json mix = ordered_json::object();
  for (Source s : kAllSources) mix[std::string(to_string(s))] = c.mixture.count(s) ? c.mixture.at(s) : 0.0;
  j["curation"] = {{"k", c.curation.k},
                   {"delta", c.curation.delta},
                   {"verify", c.curation.verify},
                   {"utility_filter", c.curation.utility_filter},
                   {"judge", c.judge},
                   {"mixture", mix},
                   {"mixture_draws", c.mixture_draws}};
  const auto& t = c.toy;
  j["toyrl"] = {{"grid", t.env.grid},
                {"glyphs", t.env.glyphs},
                {"cell_px", t.env.cell_px},
                {"prior_ratio", t.env.prior_ratio},
                {"layout_seed", t.env.layout_seed},
                {"overview_fraction", t.env.overview_fraction},
                {"fragment_misread", t.env.fragment_misread},
                {"eta", t.eta},
                {"prompts", t.prompts},
                {"group", t.group},
                {"steps", t.steps},
                {"max_tool_calls", t.max_tool_calls},
                {"init_zoom_logit", t.init_zoom_logit},
                {"init_found_zoom_logit", t.init_found_zoom_logit},
                {"seed", c.toy_seed},
                {"seeds", c.toy_seeds}};
  j["output"] = {{"dir", c.output_dir}};
  return j;
}

namespace detail {

// Objects whose keys are user data rather than schema.
inline bool free_form(const std::string& path) { return path == "policy.mock_items"; }

inline void check_keys(const json& given, const ordered_json& defaults, const std::string& path) {
  if (!given.is_object()) throw Error(Errc::ConfigError, (path.empty() ? "config" : path) + " must be an object");
  for (const auto& [key, value] : given.items()) {
    const std::string p = path.empty() ? key : path + "." + key;
    auto d = defaults.find(key);
    if (d == defaults.end()) throw Error(Errc::ConfigError, "unknown key \"" + p + "\"");
    if (d->is_object() && !free_form(p)) check_keys(value, *d, p);
  }
}

template <class T>
T get_as(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(Errc::ConfigError, "\"" + path + "\" has the wrong type");
  }
}

inline std::size_t get_count(const json& j, const std::string& path, std::size_t min = 0) {
  if (!j.is_number_integer() || j.get<long long>() < static_cast<long long>(min))
    throw Error(Errc::ConfigError, "\"" + path + "\" must be an integer >= " + std::to_string(min));
  return static_cast<std::size_t>(j.get<long long>());
}

inline double get_prob(const json& j, const std::string& path) {
  double v = get_as<double>(j, path);
  if (!(v >= 0 && v <= 1)) throw Error(Errc::ConfigError, "\"" + path + "\" must lie in [0, 1]");
  return v;
}

inline MockItemConfig mock_from_json(const json& j, const std::string& path, MockItemConfig base) {
  if (!j.is_object()) throw Error(Errc::ConfigError, path + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (k == "p_plain") base.p_plain = get_prob(v, path + ".p_plain");
    else if (k == "p_crop") base.p_crop = get_prob(v, path + ".p_crop");
    else if (k == "wrong") base.wrong = get_as<std::string>(v, path + ".wrong");
    else if (k == "zoom") {
      if (v.is_null()) base.zoom.reset();
      else {
        try {
          base.zoom = v.get<BBox>();
        } catch (const std::exception&) {
          throw Error(Errc::ConfigError, path + ".zoom must be [x1, y1, x2, y2] or null");
        }
      }
    } else {
      throw Error(Errc::ConfigError, "unknown key \"" + path + "." + k + "\"");
    }
  }
  return base;
}

}  // namespace detail

/// Builds a config from defaults merged with `doc`. Unknown keys and bad values throw ConfigError.
inline RunConfig config_from_json(const json& doc) {
  const RunConfig defaults;
  const ordered_json schema = to_json(defaults);
  detail::check_keys(doc, schema, "");
  json j = json(schema);
  j.merge_patch(doc);
  // merge_patch drops keys set to null; restore them so every field reads.
  for (const auto& [section, body] : schema.items())
    for (const auto& [key, value] : body.items())
      if (!j[section].contains(key)) j[section][key] = value;

  using detail::get_as;
  using detail::get_count;
  RunConfig c;
  const json& e = j["endpoint"];
  c.endpoint.url = get_as<std::string>(e["url"], "endpoint.url");
  c.endpoint.model = get_as<std::string>(e["model"], "endpoint.model");
  c.endpoint.api_key_env = get_as<std::string>(e["api_key_env"], "endpoint.api_key_env");
  c.endpoint.max_retries = static_cast<int>(get_count(e["max_retries"], "endpoint.max_retries"));
  c.endpoint.backoff_ms = static_cast<int>(get_count(e["backoff_ms"], "endpoint.backoff_ms"));
  c.endpoint.backoff_cap_ms = static_cast<int>(get_count(e["backoff_cap_ms"], "endpoint.backoff_cap_ms"));

  const json& p = j["policy"];
  c.policy.kind = get_as<std::string>(p["kind"], "policy.kind");
  if (c.policy.kind != "mock" && c.policy.kind != "scripted" && c.policy.kind != "remote")
    throw Error(Errc::ConfigError, "policy.kind must be mock, scripted or remote");
  c.policy.script = get_as<std::vector<std::string>>(p["script"], "policy.script");
  if (c.policy.script.empty()) throw Error(Errc::ConfigError, "policy.script needs at least one turn");
  c.policy.mock_quota = get_count(p["mock_quota"], "policy.mock_quota");
  c.policy.mock_default = detail::mock_from_json(p["mock_default"], "policy.mock_default", {});
  if (!p["mock_items"].is_object()) throw Error(Errc::ConfigError, "policy.mock_items must be an object");
  for (const auto& [id, item] : p["mock_items"].items())
    c.policy.mock_items[id] = detail::mock_from_json(item, "policy.mock_items." + id, c.policy.mock_default);

  const json& b = j["budget"];
  c.budget.max_tool_calls = get_count(b["max_tool_calls"], "budget.max_tool_calls", 1);
  c.budget.max_policy_tokens = get_count(b["max_policy_tokens"], "budget.max_policy_tokens", 1);
  c.budget.call_timeout = std::chrono::milliseconds(get_count(b["call_timeout_ms"], "budget.call_timeout_ms", 1));
  c.endpoint.timeout_ms = static_cast<int>(c.budget.call_timeout.count());

  const json& r = j["rollout"];
  c.plan.prompts_per_batch = get_count(r["prompts_per_batch"], "rollout.prompts_per_batch", 1);
  c.plan.rollouts_per_prompt = get_count(r["rollouts_per_prompt"], "rollout.rollouts_per_prompt", 1);
  c.plan.seed = get_as<std::uint64_t>(r["seed"], "rollout.seed");
  c.workers = get_count(r["workers"], "rollout.workers", 1);
  c.temperature = get_as<double>(r["temperature"], "rollout.temperature");
  if (!(c.temperature >= 0)) throw Error(Errc::ConfigError, "rollout.temperature must be >= 0");
  c.tools = get_as<std::vector<std::string>>(r["tools"], "rollout.tools");
  if (c.tools.empty()) throw Error(Errc::ConfigError, "rollout.tools needs at least one tool");
  for (const auto& t : c.tools)
    if (t != kZoomToolName && t != kRotateToolName) throw Error(Errc::ConfigError, "unknown tool \"" + t + "\"");
  c.min_side = get_as<double>(r["min_side"], "rollout.min_side");
  if (!(c.min_side >= 1)) throw Error(Errc::ConfigError, "rollout.min_side must be >= 1");

  const json& w = j["reward"];
  c.reward.r_acc = get_as<double>(w["r_acc"], "reward.r_acc");
  c.reward.r_format_penalty = get_as<double>(w["r_format_penalty"], "reward.r_format_penalty");
  c.reward.r_tool = get_as<double>(w["r_tool"], "reward.r_tool");
  c.reward.mode = parse_tool_reward_mode(get_as<std::string>(w["mode"], "reward.mode"));
  c.verifier = get_as<std::string>(w["verifier"], "reward.verifier");
  if (c.verifier != "exact" && c.verifier != "numeric" && c.verifier != "choice" && c.verifier != "judge")
    throw Error(Errc::ConfigError, "reward.verifier must be exact, numeric, choice or judge");
  c.verifier_eps = get_as<double>(w["eps"], "reward.eps");

  const json& cu = j["curation"];
  c.curation.k = get_count(cu["k"], "curation.k", 4);
  c.curation.delta = get_as<double>(cu["delta"], "curation.delta");
  c.curation.verify = get_as<bool>(cu["verify"], "curation.verify");
  c.curation.utility_filter = get_as<bool>(cu["utility_filter"], "curation.utility_filter");
  c.judge = get_as<std::string>(cu["judge"], "curation.judge");
  if (c.judge != "reference" && c.judge != "accept" && c.judge != "remote")
    throw Error(Errc::ConfigError, "curation.judge must be reference, accept or remote");
  c.mixture.clear();
  double wsum = 0;
  for (const auto& [k, v] : cu["mixture"].items()) {
    const double wv = get_as<double>(v, "curation.mixture." + k);
    if (!(wv >= 0)) throw Error(Errc::ConfigError, "mixture weights must be >= 0");
    c.mixture[parse_source(k)] = wv;
    wsum += wv;
  }
  if (std::fabs(wsum - 1.0) > 1e-6) throw Error(Errc::ConfigError, "curation.mixture weights must sum to 1");
  c.mixture_draws = get_count(cu["mixture_draws"], "curation.mixture_draws");

  const json& t = j["toyrl"];
  c.toy.env.grid = static_cast<int>(get_count(t["grid"], "toyrl.grid", 1));
  c.toy.env.glyphs = static_cast<int>(get_count(t["glyphs"], "toyrl.glyphs", 2));
  c.toy.env.cell_px = static_cast<int>(get_count(t["cell_px"], "toyrl.cell_px", 2));
  c.toy.env.prior_ratio = get_as<double>(t["prior_ratio"], "toyrl.prior_ratio");
  c.toy.env.layout_seed = get_as<std::uint64_t>(t["layout_seed"], "toyrl.layout_seed");
  c.toy.env.overview_fraction = detail::get_prob(t["overview_fraction"], "toyrl.overview_fraction");
  c.toy.env.fragment_misread = detail::get_prob(t["fragment_misread"], "toyrl.fragment_misread");
  c.toy.eta = get_as<double>(t["eta"], "toyrl.eta");
  c.toy.prompts = get_count(t["prompts"], "toyrl.prompts", 1);
  c.toy.group = get_count(t["group"], "toyrl.group", 2);
  c.toy.steps = get_count(t["steps"], "toyrl.steps", 1);
  c.toy.max_tool_calls = get_count(t["max_tool_calls"], "toyrl.max_tool_calls", 1);
  c.toy.init_zoom_logit = get_as<double>(t["init_zoom_logit"], "toyrl.init_zoom_logit");
  c.toy.init_found_zoom_logit = get_as<double>(t["init_found_zoom_logit"], "toyrl.init_found_zoom_logit");
  c.toy_seed = get_as<std::uint64_t>(t["seed"], "toyrl.seed");
  c.toy_seeds = get_count(t["seeds"], "toyrl.seeds", 1);
  c.toy.reward = c.reward;
  c.toy.workers = c.workers;

  c.output_dir = get_as<std::string>(j["output"]["dir"], "output.dir");
  return c;
}

/// Parses "a.b.c=value" into a JSON patch; the value is read as JSON, falling back to a string.
inline json override_patch(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw Error(Errc::ConfigError, "override must look like key.path=value");
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json patch = value;
  std::size_t end = path.size();
  while (true) {
    const auto dot = path.rfind('.', end - 1);
    const std::string key = path.substr(dot == std::string::npos ? 0 : dot + 1, end - (dot == std::string::npos ? 0 : dot + 1));
    if (key.empty()) throw Error(Errc::ConfigError, "bad override key \"" + path + "\"");
    patch = json{{key, patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  return patch;
}

inline json read_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::ConfigError, "cannot open config " + path);
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded()) throw Error(Errc::ConfigError, path + " is not valid JSON");
  return j;
}

/// defaults <- file <- overrides (applied in order).
inline RunConfig resolve_config(const std::optional<std::string>& file, const std::vector<json>& overrides) {
  json doc = file ? read_config_file(*file) : json::object();
  if (!doc.is_object()) throw Error(Errc::ConfigError, "config must be a JSON object");
  for (const auto& o : overrides) doc.merge_patch(o);
  return config_from_json(doc);
}

}  // namespace zoomrl
