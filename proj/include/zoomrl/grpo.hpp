// SPDX-License-Identifier: Apache-2.0
#pragma once

// Group-relative advantages and their broadcast onto policy tokens.

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "zoomrl/error.hpp"
#include "zoomrl/reward.hpp"
#include "zoomrl/trajectory.hpp"

namespace zoomrl {

inline constexpr double kAdvantageEps = 1e-6;

struct GroupAdvantages {
  std::vector<double> scalars;
  bool degenerate = false;
};

/// (r - mean) / (population std + eps). All-equal groups are degenerate and get zeros.
inline GroupAdvantages group_advantages(const std::vector<double>& rewards, double eps = kAdvantageEps) {
  if (rewards.size() < 2) throw Error(Errc::GroupTooSmall, "group needs at least 2 rewards");
  for (double r : rewards)
    if (!std::isfinite(r)) throw Error(Errc::InvalidArgument, "non-finite reward");
  GroupAdvantages out;
  const auto [lo, hi] = std::minmax_element(rewards.begin(), rewards.end());
  if (*lo == *hi) {
    out.scalars.assign(rewards.size(), 0.0);
    out.degenerate = true;
    return out;
  }
  const double n = static_cast<double>(rewards.size());
  double mean = 0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double denom = std::sqrt(var / n) + eps;
  out.scalars.reserve(rewards.size());
  for (double r : rewards) out.scalars.push_back((r - mean) / denom);
  return out;
}

inline std::vector<double> token_advantages(const Trajectory& traj, double scalar) {
  if (!traj.is_terminal()) throw Error(Errc::NotTerminal, "advantages need a terminal trajectory");
  std::vector<double> out;
  out.reserve(traj.total_tokens());
  for (const auto& s : traj.segments())
    out.insert(out.end(), s.token_len, s.kind == SegmentKind::PolicyText ? scalar : 0.0);
  return out;
}

struct AdvantageSet {
  std::vector<double> scalar;
  std::vector<std::vector<double>> token_adv;
  bool degenerate = false;
};

struct Group {
  std::string prompt_id;
  std::vector<Trajectory> trajectories;
  std::vector<RewardBreakdown> rewards;
  std::optional<AdvantageSet> advantages;

  std::vector<double> totals() const {
    std::vector<double> out;
    out.reserve(rewards.size());
    for (const auto& r : rewards) out.push_back(r.total);
    return out;
  }
};

inline AdvantageSet compute_advantages(const Group& g) {
  if (g.trajectories.size() != g.rewards.size())
    throw Error(Errc::InvalidArgument, "group has " + std::to_string(g.trajectories.size()) + " trajectories but " +
                                           std::to_string(g.rewards.size()) + " rewards");
  auto ga = group_advantages(g.totals());
  AdvantageSet out;
  out.degenerate = ga.degenerate;
  out.token_adv.reserve(g.trajectories.size());
  for (std::size_t i = 0; i < g.trajectories.size(); ++i)
    out.token_adv.push_back(token_advantages(g.trajectories[i], ga.scalars[i]));
  out.scalar = std::move(ga.scalars);
  return out;
}

inline Group& score_advantages(Group& g) {
  g.advantages = compute_advantages(g);
  return g;
}

/// One line-delimited record per trajectory, groups and members in input order.
inline void export_batch(const std::vector<Group>& groups, std::ostream& os) {
  for (const auto& g : groups) {
    if (!g.advantages) throw Error(Errc::InvalidArgument, "group " + g.prompt_id + " has no advantages");
    for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
      ordered_json rec;
      rec["prompt_id"] = g.prompt_id;
      rec["index"] = i;
      rec["trajectory"] = to_json(g.trajectories[i]);
      rec["reward"] = to_json(g.rewards[i]);
      rec["scalar_adv"] = g.advantages->scalar[i];
      rec["degenerate"] = g.advantages->degenerate;
      rec["mask"] = runs_to_json(mask_runs(g.trajectories[i]));
      os << dump_line(rec) << '\n';
    }
  }
  if (!os) throw Error(Errc::IoError, "failed to write batch");
}

}  // namespace zoomrl
