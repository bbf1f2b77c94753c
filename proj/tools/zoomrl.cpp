// SPDX-License-Identifier: Apache-2.0
// zoomrl: rollout, curate, ablate, eval and validate-config subcommands.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "zoomrl/commands.hpp"

namespace {

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string endpoint;
  std::string policy;
  std::optional<std::size_t> workers;
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("-c,--config", o.config_path, "JSON run config (defaults for every key apply otherwise)");
  app->add_option("--set", o.sets, "Override a config key, e.g. --set reward.mode=none (repeatable)");
  app->add_option("-o,--out", o.out_dir, "Output directory [output.dir, default out]");
  app->add_option("--seed", o.seed, "Seed [rollout.seed / toyrl.seed, default 0]");
  app->add_option("--endpoint", o.endpoint, "Policy endpoint URL [endpoint.url]; key from $ZOOMRL_API_KEY");
  app->add_option("--policy", o.policy, "Policy kind: mock, scripted or remote [policy.kind, default mock]");
  app->add_option("-j,--workers", o.workers, "Concurrent rollouts [rollout.workers, default 1]");
}

zoomrl::RunConfig resolve(const CommonOptions& o, std::vector<zoomrl::json> extra = {}) {
  std::vector<zoomrl::json> patches;
  for (const auto& s : o.sets) patches.push_back(zoomrl::override_patch(s));
  if (!o.out_dir.empty()) patches.push_back({{"output", {{"dir", o.out_dir}}}});
  if (o.seed) patches.push_back({{"rollout", {{"seed", *o.seed}}}, {"toyrl", {{"seed", *o.seed}}}});
  if (!o.endpoint.empty()) patches.push_back({{"endpoint", {{"url", o.endpoint}}}});
  if (!o.policy.empty()) patches.push_back({{"policy", {{"kind", o.policy}}}});
  if (o.workers) patches.push_back({{"rollout", {{"workers", *o.workers}}}});
  for (auto& e : extra) patches.push_back(std::move(e));
  return zoomrl::resolve_config(o.config_path.empty() ? std::nullopt : std::optional<std::string>(o.config_path), patches);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Agentic RL engine for tool-using vision-language policies"};
  app.require_subcommand(1);

  CommonOptions rollout_o, eval_o, curate_o, ablate_o, validate_o;
  std::string rollout_data, eval_data, curate_data;
  std::optional<std::size_t> group, steps, seeds;

  auto* rollout = app.add_subcommand("rollout", "Roll out, score and export groups for every dataset sample");
  add_common(rollout, rollout_o);
  rollout->add_option("-d,--dataset", rollout_data, "Dataset JSONL")->required();
  rollout->add_option("-n,--group", group, "Rollouts per prompt [rollout.rollouts_per_prompt, default 16]");

  auto* eval = app.add_subcommand("eval", "One rollout per sample; accuracy and IoU against gt_bboxes");
  add_common(eval, eval_o);
  eval->add_option("-d,--dataset", eval_data, "Dataset JSONL")->required();

  auto* curate = app.add_subcommand("curate", "Difficulty, standardize, verify and perception-utility filtering");
  add_common(curate, curate_o);
  curate->add_option("-d,--dataset", curate_data, "Dataset JSONL")->required();

  auto* ablate = app.add_subcommand("ablate", "Toy training under conditional, unconditional and no tool reward");
  add_common(ablate, ablate_o);
  ablate->add_option("--steps", steps, "Training steps [toyrl.steps, default 500]");
  ablate->add_option("--seeds", seeds, "Number of consecutive seeds [toyrl.seeds, default 1]");

  auto* validate = app.add_subcommand("validate-config", "Resolve and print the effective config");
  add_common(validate, validate_o);

  CLI11_PARSE(app, argc, argv);

  try {
    if (rollout->parsed()) {
      std::vector<zoomrl::json> extra;
      if (group) extra.push_back({{"rollout", {{"rollouts_per_prompt", *group}}}});
      const auto cfg = resolve(rollout_o, extra);
      auto sum = zoomrl::run_rollout_command(cfg, rollout_data, cfg.plan.rollouts_per_prompt, "");
      std::cout << zoomrl::pretty(sum.to_json());
    } else if (eval->parsed()) {
      const auto cfg = resolve(eval_o);
      auto sum = zoomrl::run_rollout_command(cfg, eval_data, 1, "eval_");
      std::cout << zoomrl::pretty(sum.to_json());
    } else if (curate->parsed()) {
      const auto cfg = resolve(curate_o);
      auto res = zoomrl::run_curate_command(cfg, curate_data);
      std::cout << "kept " << res.kept.size() << " of " << res.records.size() << " samples ("
                << res.deferred.size() << " deferred)\n";
    } else if (ablate->parsed()) {
      std::vector<zoomrl::json> extra;
      if (steps) extra.push_back({{"toyrl", {{"steps", *steps}}}});
      if (seeds) extra.push_back({{"toyrl", {{"seeds", *seeds}}}});
      const auto cfg = resolve(ablate_o, extra);
      zoomrl::run_ablate_command(cfg);
      std::cout << "wrote " << cfg.output_dir << "/summary.json\n";
    } else if (validate->parsed()) {
      const auto cfg = resolve(validate_o);
      std::cout << zoomrl::pretty(zoomrl::to_json(cfg));
    }
  } catch (const zoomrl::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return zoomrl::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return zoomrl::kExitOther;
  }
  return zoomrl::kExitOk;
}
