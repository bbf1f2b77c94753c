// SPDX-License-Identifier: Apache-2.0
#pragma once

// Subcommand bodies shared by the CLI and the tests.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "zoomrl/config.hpp"
#include "zoomrl/curation.hpp"
#include "zoomrl/dataset.hpp"
#include "zoomrl/grpo.hpp"
#include "zoomrl/http_client.hpp"
#include "zoomrl/image_io.hpp"
#include "zoomrl/mock_policy.hpp"
#include "zoomrl/reward.hpp"
#include "zoomrl/rollout.hpp"
#include "zoomrl/toyrl.hpp"

namespace zoomrl {

enum ExitCode : int { kExitOk = 0, kExitOther = 1, kExitConfig = 2, kExitData = 3, kExitTransport = 4 };

inline int exit_code_for(Errc c) {
  switch (c) {
    case Errc::ConfigError: return kExitConfig;
    case Errc::DataError:
    case Errc::ImageError:
    case Errc::IoError: return kExitData;
    case Errc::TransportError:
    case Errc::ProtocolError:
    case Errc::Timeout:
    case Errc::JudgeUnavailable: return kExitTransport;
    default: return kExitOther;
  }
}

namespace fs = std::filesystem;

inline ToolSet tool_set_from(const RunConfig& cfg) {
  ToolSet t;
  for (const auto& name : cfg.tools) t.schemas.push_back(name == kRotateToolName ? rotate_tool_schema() : zoom_tool_schema());
  return t;
}

inline RolloutOptions rollout_options_from(const RunConfig& cfg) {
  RolloutOptions o;
  o.budget = cfg.budget;
  o.prompt = std::make_shared<PromptTemplate>(tool_set_from(cfg));
  o.temperature = cfg.temperature;
  o.seed = cfg.plan.seed;
  o.min_side = cfg.min_side;
  return o;
}

inline std::shared_ptr<RemoteClient> remote_client_from(const RunConfig& cfg) {
  auto client = std::make_shared<RemoteClient>(cfg.endpoint);
  client->set_log([](const std::string& msg) { std::cerr << "endpoint: " << msg << '\n'; });
  return client;
}

inline std::shared_ptr<PolicyClient> policy_from(const RunConfig& cfg, const std::vector<SampleRecord>& samples) {
  if (cfg.policy.kind == "scripted") return std::make_shared<ScriptedPolicy>(cfg.policy.script);
  if (cfg.policy.kind == "remote") return remote_client_from(cfg);
  std::map<std::string, MockItem> items;
  for (const auto& s : samples) {
    auto it = cfg.policy.mock_items.find(s.id);
    const MockItemConfig& m = it != cfg.policy.mock_items.end() ? it->second : cfg.policy.mock_default;
    items[s.id] = MockItem{s.answer, m.p_plain, m.p_crop, m.zoom, m.wrong};
  }
  return std::make_shared<MockPolicy>(std::move(items), cfg.policy.mock_quota);
}

inline Verifier verifier_from(const RunConfig& cfg) {
  if (cfg.verifier == "numeric") return Verifier::numeric(cfg.verifier_eps);
  if (cfg.verifier == "choice") return Verifier::choice();
  if (cfg.verifier == "judge") return Verifier::external(make_remote_judge(remote_client_from(cfg)));
  return Verifier::exact();
}

inline LabelJudge label_judge_from(const RunConfig& cfg) {
  if (cfg.judge == "accept") return accept_all_judge();
  if (cfg.judge == "remote") {
    auto client = remote_client_from(cfg);
    return [client](const SampleRecord& s, const ImagePtr& image) {
      return ask_yes_no(*client, "Question: " + s.question + "\nProposed answer: " + s.answer +
                                     "\nIs the proposed answer correct for this image?", image);
    };
  }
  return reference_judge();
}

/// Resolves image paths relative to the dataset file.
inline ImageLoader image_loader_for(const std::string& dataset_path) {
  const fs::path base = fs::path(dataset_path).parent_path();
  return [base](const SampleRecord& s) -> ImagePtr {
    if (s.image_path.empty()) throw Error(Errc::DataError, "sample " + s.id + " has no image_path");
    fs::path p(s.image_path);
    if (p.is_relative()) p = base / p;
    return std::make_shared<const RasterImage>(load_image(p.string(), s.image_path));
  };
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoError, "cannot create " + dir + ": " + ec.message());
}

inline std::ofstream open_out(const std::string& dir, const std::string& name) {
  std::ofstream os(fs::path(dir) / name, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(Errc::IoError, "cannot write " + (fs::path(dir) / name).string());
  return os;
}

inline std::string pretty(const ordered_json& j) { return j.dump(2, ' ', false, json::error_handler_t::replace) + "\n"; }

// ---------------------------------------------------------------------------
// rollout / eval
// ---------------------------------------------------------------------------

struct RolloutSummary {
  std::size_t samples = 0;
  std::size_t groups = 0;
  std::size_t trajectories = 0;
  std::size_t degenerate_groups = 0;
  double accuracy = 0;
  double tool_rate = 0;
  double mean_tool_calls = 0;
  double mean_response_len = 0;
  double mean_reward = 0;
  std::size_t iou_count = 0;
  double mean_iou = 0;
  std::vector<std::pair<std::string, std::string>> errors;

  ordered_json to_json() const {
    ordered_json j;
    j["samples"] = samples;
    j["groups"] = groups;
    j["trajectories"] = trajectories;
    j["degenerate_groups"] = degenerate_groups;
    j["accuracy"] = accuracy;
    j["tool_rate"] = tool_rate;
    j["mean_tool_calls"] = mean_tool_calls;
    j["mean_response_len"] = mean_response_len;
    j["mean_reward"] = mean_reward;
    j["iou"] = iou_count > 0 ? ordered_json{{"mean", mean_iou}, {"count", iou_count}} : ordered_json(nullptr);
    ordered_json errs = ordered_json::array();
    for (const auto& [id, what] : errors) errs.push_back({{"id", id}, {"error", what}});
    j["errors"] = std::move(errs);
    return j;
  }
};

/// Best IoU of each requested zoom box against the sample's ground-truth boxes.
inline std::vector<double> zoom_ious(const Trajectory& t, const std::vector<BBox>& gt) {
  std::vector<double> out;
  for (const auto& b : requested_boxes(t)) {
    BBox n = b;
    if (n.x1 > n.x2) std::swap(n.x1, n.x2);
    if (n.y1 > n.y2) std::swap(n.y1, n.y2);
    double best = 0;
    for (const auto& g : gt) best = std::max(best, iou(n, g));
    out.push_back(best);
  }
  return out;
}

/// Rolls out groups of `group_size` per sample, scores them and writes
/// `<prefix>trajectories.jsonl` and `<prefix>metrics.json` to cfg.output_dir.
inline RolloutSummary run_rollout_command(const RunConfig& cfg, const std::string& dataset_path, std::size_t group_size,
                                          const std::string& prefix, std::shared_ptr<PolicyClient> policy = nullptr) {
  const auto samples = load_samples(dataset_path);
  if (!policy) policy = policy_from(cfg, samples);
  const RolloutOptions opts = rollout_options_from(cfg);
  const Verifier verifier = verifier_from(cfg);
  const ImageLoader load = image_loader_for(dataset_path);
  ensure_dir(cfg.output_dir);
  auto traj_out = open_out(cfg.output_dir, prefix + "trajectories.jsonl");

  RolloutSummary sum;
  sum.samples = samples.size();
  double iou_total = 0;
  for (std::size_t start = 0; start < samples.size(); start += cfg.plan.prompts_per_batch) {
    const std::size_t end = std::min(samples.size(), start + cfg.plan.prompts_per_batch);
    std::vector<Group> batch;
    for (std::size_t i = start; i < end; ++i) {
      const SampleRecord& s = samples[i];
      ImagePtr image;
      try {
        image = load(s);
      } catch (const Error& e) {
        sum.errors.emplace_back(s.id, e.what());
        continue;
      }
      Group g;
      if (group_size >= 2) {
        g = run_group(s, image, group_size, *policy, opts, cfg.reward, verifier, cfg.workers);
      } else {
        RolloutOptions one = opts;
        one.seed = rollout_seed(opts.seed, s.id, 0);
        g.prompt_id = s.id;
        try {
          g.trajectories.push_back(run_rollout(s.id, s.question, image, *policy, one));
        } catch (const Error& e) {
          Trajectory t(s.id, image->id, opts.budget.limits());
          t.mark_malformed(e.what());
          g.trajectories.push_back(std::move(t));
        }
        g.rewards.push_back(total_reward(g.trajectories[0], s.answer, verifier, cfg.reward, opts.prompt->tools()));
        g.advantages = AdvantageSet{{0.0}, {token_advantages(g.trajectories[0], 0.0)}, true};
      }
      for (std::size_t k = 0; k < g.trajectories.size(); ++k) {
        const Trajectory& t = g.trajectories[k];
        ++sum.trajectories;
        sum.accuracy += g.rewards[k].acc > 0 ? 1 : 0;
        sum.tool_rate += t.tool_call_count() > 0 ? 1 : 0;
        sum.mean_tool_calls += static_cast<double>(t.tool_call_count());
        sum.mean_response_len += static_cast<double>(t.policy_tokens());
        sum.mean_reward += g.rewards[k].total;
        if (s.gt_bboxes && !s.gt_bboxes->empty()) {
          for (double v : zoom_ious(t, *s.gt_bboxes)) {
            iou_total += v;
            ++sum.iou_count;
          }
        }
      }
      if (g.advantages->degenerate) ++sum.degenerate_groups;
      ++sum.groups;
      batch.push_back(std::move(g));
    }
    export_batch(batch, traj_out);
  }
  if (sum.trajectories > 0) {
    const double n = static_cast<double>(sum.trajectories);
    sum.accuracy /= n;
    sum.tool_rate /= n;
    sum.mean_tool_calls /= n;
    sum.mean_response_len /= n;
    sum.mean_reward /= n;
  }
  if (sum.iou_count > 0) sum.mean_iou = iou_total / static_cast<double>(sum.iou_count);
  auto metrics_out = open_out(cfg.output_dir, prefix + "metrics.json");
  metrics_out << pretty(sum.to_json());
  return sum;
}

// ---------------------------------------------------------------------------
// curate
// ---------------------------------------------------------------------------

inline CurationResult run_curate_command(const RunConfig& cfg, const std::string& dataset_path,
                                         std::shared_ptr<PolicyClient> policy = nullptr) {
  const auto pool = load_samples(dataset_path);
  if (!policy) policy = policy_from(cfg, pool);
  CurationContext ctx{rollout_options_from(cfg), verifier_from(cfg), cfg.workers};
  CurationResult res = run_curation(pool, image_loader_for(dataset_path), *policy, label_judge_from(cfg), cfg.curation, ctx);

  ensure_dir(cfg.output_dir);
  auto kept = open_out(cfg.output_dir, "curated.jsonl");
  write_samples(res.kept, kept);
  auto deferred = open_out(cfg.output_dir, "deferred.jsonl");
  write_samples(res.deferred, deferred);
  auto audit = open_out(cfg.output_dir, "audit.jsonl");
  for (const auto& a : res.audit) audit << dump_line(a) << '\n';
  auto records = open_out(cfg.output_dir, "curation_records.jsonl");
  for (const auto& r : res.records) records << dump_line(to_json(r)) << '\n';
  if (cfg.mixture_draws > 0 && !res.kept.empty()) {
    MixtureSampler sampler(res.kept, cfg.mixture, cfg.plan.seed);
    auto mix = open_out(cfg.output_dir, "mixture.jsonl");
    write_samples(sampler.take(cfg.mixture_draws), mix);
  }
  return res;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblationRun {
  ToolRewardMode mode;
  std::uint64_t seed;
  DynamicsLog log;
};

inline ordered_json final_metrics(const DynamicsLog& log, std::size_t window = 50) {
  ordered_json j;
  j["tool_rate"] = log.final_mean(window, [](const StepMetrics& m) { return m.tool_rate; });
  j["mean_tool_calls"] = log.final_mean(window, [](const StepMetrics& m) { return m.mean_tool_calls; });
  j["accuracy"] = log.final_mean(window, [](const StepMetrics& m) { return m.accuracy; });
  j["mean_reward"] = log.final_mean(window, [](const StepMetrics& m) { return m.mean_reward; });
  j["response_len"] = log.final_mean(window, [](const StepMetrics& m) { return m.response_len; });
  j["region_hit_rate"] = log.final_mean(window, [](const StepMetrics& m) { return m.region_hit_rate; });
  j["early_peak_ratio"] = early_peak_ratio(log);
  return j;
}

/// Trains all three tool-reward modes on shared seeds; writes one CSV per
/// (mode, seed) and summary.json.
inline std::vector<AblationRun> run_ablate_command(const RunConfig& cfg) {
  ensure_dir(cfg.output_dir);
  std::vector<AblationRun> runs;
  ordered_json per_seed = ordered_json::array();
  const ToolRewardMode modes[] = {ToolRewardMode::Conditional, ToolRewardMode::Unconditional, ToolRewardMode::None};
  std::size_t ordered = 0;
  for (std::size_t k = 0; k < cfg.toy_seeds; ++k) {
    const std::uint64_t seed = cfg.toy_seed + k;
    ordered_json entry;
    entry["seed"] = seed;
    double acc[3] = {0, 0, 0};
    for (int m = 0; m < 3; ++m) {
      AblationRun run{modes[m], seed, run_ablation(modes[m], cfg.toy.steps, seed, cfg.toy)};
      const std::string name = "ablation_" + std::string(to_string(modes[m])) +
                               (cfg.toy_seeds > 1 ? "_seed" + std::to_string(seed) : "") + ".csv";
      auto os = open_out(cfg.output_dir, name);
      write_csv(run.log, os);
      auto fm = final_metrics(run.log);
      acc[m] = fm["accuracy"].get<double>();
      entry[std::string(to_string(modes[m]))] = std::move(fm);
      runs.push_back(std::move(run));
    }
    const bool ok = acc[0] >= acc[1] && acc[1] >= acc[2];
    ordered += ok ? 1 : 0;
    entry["accuracy_order_conditional_ge_unconditional_ge_none"] = ok;
    per_seed.push_back(std::move(entry));
  }
  ordered_json summary;
  summary["steps"] = cfg.toy.steps;
  summary["final_window"] = 50;
  summary["runs"] = std::move(per_seed);
  summary["seeds_with_expected_order"] = ordered;
  auto os = open_out(cfg.output_dir, "summary.json");
  os << pretty(summary);
  return runs;
}

}  // namespace zoomrl
