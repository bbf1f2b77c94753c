// SPDX-License-Identifier: Apache-2.0
#pragma once

// Desk-scale RL: a needle-in-a-grid image task and a tabular softmax policy
// trained with the engine's own rollout, reward and advantage code.
//
// The image is a grid of square regions. On a search item the queried glyph is
// legible only in a crop of its region; a crop of any other region shows a
// distractor glyph. On an overview item the glyph is legible in the full image
// and zooming risks misreading a fragment of it.
//
// Pixel code: R = glyph id, G = 255 on the target region and 128 on
// distractors (0 in blind mode), B = 255 everywhere on overview items.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "zoomrl/error.hpp"
#include "zoomrl/grpo.hpp"
#include "zoomrl/mock_policy.hpp"
#include "zoomrl/reward.hpp"
#include "zoomrl/rollout.hpp"
#include "zoomrl/toolbox.hpp"
#include "zoomrl/trajectory.hpp"
#include "zoomrl/util.hpp"

namespace zoomrl {

struct NeedleGridConfig {
  int grid = 4;  // regions per side; K = grid * grid
  int glyphs = 10;
  int cell_px = 16;
  double prior_ratio = 0.6;  // geometric target prior over regions
  std::uint64_t layout_seed = 1234;
  double overview_fraction = 0.15;
  double fragment_misread = 0.4;
  bool blind = false;  // nothing is ever legible (control experiments)

  int regions() const noexcept { return grid * grid; }
};

struct NeedleInstance {
  std::string id;
  int target = 0;
  int glyph = 0;
  bool overview = false;
  ImagePtr image;
  std::string question;
  std::string answer;
  BBox target_box;
};

inline std::string glyph_name(int g) { return "g" + std::to_string(g); }

class NeedleGridEnv {
 public:
  explicit NeedleGridEnv(NeedleGridConfig cfg = {}) : cfg_(cfg) {
    if (cfg_.grid < 1 || cfg_.glyphs < 2 || cfg_.cell_px < 2 || cfg_.glyphs > 255)
      throw Error(Errc::InvalidArgument, "bad needle grid configuration");
    if (!(cfg_.prior_ratio > 0) || cfg_.overview_fraction < 0 || cfg_.overview_fraction > 1 ||
        cfg_.fragment_misread < 0 || cfg_.fragment_misread > 1)
      throw Error(Errc::InvalidArgument, "bad needle grid probabilities");
    const int k = cfg_.regions();
    std::vector<double> geo(k);
    for (int i = 0; i < k; ++i) geo[i] = std::pow(cfg_.prior_ratio, i);
    const double sum = std::accumulate(geo.begin(), geo.end(), 0.0);
    // Fixed shuffle of which region gets which prior mass.
    std::vector<int> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = k - 1; i > 0; --i) {
      const auto j = static_cast<int>(unit_from_seed(mix_seed(cfg_.layout_seed, i)) * (i + 1));
      std::swap(perm[i], perm[std::min(j, i)]);
    }
    prior_.assign(k, 0.0);
    for (int i = 0; i < k; ++i) prior_[perm[i]] = geo[i] / sum;
  }

  const NeedleGridConfig& config() const noexcept { return cfg_; }
  int regions() const noexcept { return cfg_.regions(); }
  const std::vector<double>& prior() const noexcept { return prior_; }
  int size_px() const noexcept { return cfg_.grid * cfg_.cell_px; }

  BBox region_box(int k) const {
    const int cx = k % cfg_.grid, cy = k / cfg_.grid;
    return {double(cx * cfg_.cell_px), double(cy * cfg_.cell_px), double((cx + 1) * cfg_.cell_px),
            double((cy + 1) * cfg_.cell_px)};
  }

  NeedleInstance sample(std::uint64_t seed) const {
    NeedleInstance inst;
    inst.id = "needle-" + std::to_string(seed);
    double u = unit_from_seed(mix_seed(seed, 1)), acc = 0;
    inst.target = regions() - 1;
    for (int i = 0; i < regions(); ++i) {
      acc += prior_[i];
      if (u < acc) {
        inst.target = i;
        break;
      }
    }
    inst.glyph = static_cast<int>(unit_from_seed(mix_seed(seed, 2)) * cfg_.glyphs) % cfg_.glyphs;
    inst.overview = !cfg_.blind && unit_from_seed(mix_seed(seed, 3)) < cfg_.overview_fraction;
    inst.question = "Which glyph is written in the marked cell?";
    inst.answer = glyph_name(inst.glyph);
    inst.target_box = region_box(inst.target);

    RasterImage img(size_px(), size_px(), 3, inst.id);
    for (int k = 0; k < regions(); ++k) {
      int g = inst.glyph;
      std::uint8_t mark = 255;
      if (k != inst.target) {
        // Distractors never show the queried glyph.
        g = (inst.glyph + 1 + static_cast<int>(unit_from_seed(mix_seed(seed, 100 + k)) * (cfg_.glyphs - 1))) % cfg_.glyphs;
        if (g == inst.glyph) g = (g + 1) % cfg_.glyphs;
        mark = 128;
      }
      if (inst.overview) g = inst.glyph;
      if (cfg_.blind) {
        g = 0;
        mark = 0;
      }
      const BBox b = region_box(k);
      for (int y = int(b.y1); y < int(b.y2); ++y) {
        for (int x = int(b.x1); x < int(b.x2); ++x) {
          std::uint8_t* px = img.at(x, y);
          px[0] = static_cast<std::uint8_t>(g);
          px[1] = mark;
          px[2] = inst.overview ? 255 : 0;
        }
      }
    }
    inst.image = std::make_shared<const RasterImage>(std::move(img));
    return inst;
  }

 private:
  NeedleGridConfig cfg_;
  std::vector<double> prior_;
};

// ---------------------------------------------------------------------------
// Policy
// ---------------------------------------------------------------------------

/// Decision contexts of the act head.
enum ToyContext : int { kSearching = 0, kFound = 1, kOverview = 2, kNumContexts = 3 };
enum ToyAction : int { kZoom = 0, kAnswer = 1 };

/// Flat parameter vector:
///   [0, 2)            shared act logits (zoom, answer)
///   [2, 8)            per-context act offsets, context-major
///   [8, 8 + K)        region logits
struct ToyParams {
  std::vector<double> theta;
  int regions = 0;

  static constexpr int kActBase = 0;
  static constexpr int kActCtx = 2;
  static constexpr int kRegion = 2 + 2 * kNumContexts;

  ToyParams() = default;
  ToyParams(int k, double init_zoom, double init_found_zoom)
      : theta(static_cast<std::size_t>(kRegion + k), 0.0), regions(k) {
    theta[kActBase + kZoom] = init_zoom;
    theta[kActCtx + 2 * kFound + kZoom] = init_found_zoom - init_zoom;
  }

  double act_logit(int ctx, int a) const { return theta[kActBase + a] + theta[kActCtx + 2 * ctx + a]; }
  double zoom_logit(int ctx) const { return act_logit(ctx, kZoom) - act_logit(ctx, kAnswer); }
  double region_logit(int k) const { return theta[kRegion + k]; }
  std::size_t size() const noexcept { return theta.size(); }
};

/// One sampled choice, enough to recompute its log-probability under any parameters.
struct ToyDecision {
  enum class Kind { Act, Region } kind = Kind::Act;
  int ctx = 0;
  int choice = 0;
  std::vector<std::uint8_t> allowed;  // Region only: unvisited regions
};

inline double zoom_probability(const ToyParams& p, int ctx) { return 1.0 / (1.0 + std::exp(-p.zoom_logit(ctx))); }

namespace detail {

inline std::vector<double> masked_softmax(const ToyParams& p, const std::vector<std::uint8_t>& allowed) {
  std::vector<double> out(static_cast<std::size_t>(p.regions), 0.0);
  double mx = -INFINITY;
  for (int i = 0; i < p.regions; ++i)
    if (allowed[i]) mx = std::max(mx, p.region_logit(i));
  double sum = 0;
  for (int i = 0; i < p.regions; ++i) {
    if (!allowed[i]) continue;
    out[i] = std::exp(p.region_logit(i) - mx);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

}  // namespace detail

inline double log_prob(const ToyParams& p, const std::vector<ToyDecision>& ds) {
  double lp = 0;
  for (const auto& d : ds) {
    if (d.kind == ToyDecision::Kind::Act) {
      const double z = d.choice == kZoom ? p.zoom_logit(d.ctx) : -p.zoom_logit(d.ctx);
      lp += -std::log1p(std::exp(-z));
    } else {
      double mx = -INFINITY;
      for (int i = 0; i < p.regions; ++i)
        if (d.allowed[i]) mx = std::max(mx, p.region_logit(i));
      double sum = 0;
      for (int i = 0; i < p.regions; ++i)
        if (d.allowed[i]) sum += std::exp(p.region_logit(i) - mx);
      lp += p.region_logit(d.choice) - mx - std::log(sum);
    }
  }
  return lp;
}

/// Analytic gradient of log_prob with respect to theta.
inline std::vector<double> grad_log_prob(const ToyParams& p, const std::vector<ToyDecision>& ds) {
  std::vector<double> g(p.size(), 0.0);
  for (const auto& d : ds) {
    if (d.kind == ToyDecision::Kind::Act) {
      const double pz = zoom_probability(p, d.ctx);
      const double dz = (d.choice == kZoom ? 1.0 : 0.0) - pz;
      const double da = (d.choice == kAnswer ? 1.0 : 0.0) - (1.0 - pz);
      g[ToyParams::kActBase + kZoom] += dz;
      g[ToyParams::kActBase + kAnswer] += da;
      g[ToyParams::kActCtx + 2 * d.ctx + kZoom] += dz;
      g[ToyParams::kActCtx + 2 * d.ctx + kAnswer] += da;
    } else {
      const auto probs = detail::masked_softmax(p, d.allowed);
      for (int i = 0; i < p.regions; ++i)
        if (d.allowed[i]) g[ToyParams::kRegion + i] += (i == d.choice ? 1.0 : 0.0) - probs[i];
    }
  }
  return g;
}

/// Per-rollout agent: reads the view, samples from the shared parameters and
/// records its decisions. Answers are forced once `budget` zooms were made.
class ToyAgent : public PolicyClient {
 public:
  ToyAgent(const ToyParams& params, const NeedleGridEnv& env, std::size_t budget)
      : params_(params), env_(env), budget_(budget), visited_(static_cast<std::size_t>(env.regions()), 0) {}

  Generation generate(const GenerationRequest& req) override {
    const StateView& view = *req.view;
    const RasterImage* full = nullptr;
    const RasterImage* last_crop = nullptr;
    std::size_t zooms = 0;
    for (const auto& m : view.messages) {
      for (const auto& part : m.content) {
        if (part.kind != ContentPart::Kind::Image || !part.image) continue;
        if (m.role == Role::User) full = part.image.get();
        if (m.role == Role::Observation) {
          last_crop = part.image.get();
          ++zooms;
        }
      }
    }
    if (!full) throw Error(Errc::InvalidArgument, "toy agent needs the source image");

    const std::uint8_t* centre = full->at(full->width / 2, full->height / 2);
    const bool overview = centre[2] == 255;
    const bool found = last_crop && last_crop->at(last_crop->width / 2, last_crop->height / 2)[1] == 255;
    const int ctx = overview ? kOverview : found ? kFound : kSearching;

    int action = kAnswer;
    if (zooms < budget_) {
      const double pz = zoom_probability(params_, ctx);
      action = unit_from_seed(mix_seed(req.seed, 11)) < pz ? kZoom : kAnswer;
      decisions_.push_back({ToyDecision::Kind::Act, ctx, action, {}});
    }

    std::string text;
    if (action == kZoom) {
      std::vector<std::uint8_t> allowed(visited_.size());
      for (std::size_t i = 0; i < visited_.size(); ++i) allowed[i] = visited_[i] ? 0 : 1;
      const auto probs = detail::masked_softmax(params_, allowed);
      const double u = unit_from_seed(mix_seed(req.seed, 12));
      int k = -1;
      double acc = 0;
      for (int i = 0; i < env_.regions(); ++i) {
        if (!allowed[i]) continue;
        k = i;
        acc += probs[i];
        if (u < acc) break;
      }
      visited_[static_cast<std::size_t>(k)] = 1;
      decisions_.push_back({ToyDecision::Kind::Region, ctx, k, std::move(allowed)});
      text = "<think>look</think>" + zoom_call_text(env_.region_box(k));
    } else {
      text = "<think>read</think><answer>" + glyph_name(read_answer(full, last_crop, zooms, req.seed)) + "</answer>";
    }
    text = apply_stop(text, req.stop);
    return {text, 2, false};
  }

  const std::vector<ToyDecision>& decisions() const noexcept { return decisions_; }

 private:
  int read_answer(const RasterImage* full, const RasterImage* last_crop, std::size_t zooms, std::uint64_t seed) const {
    const int glyphs = env_.config().glyphs;
    const std::uint8_t* centre = full->at(full->width / 2, full->height / 2);
    if (centre[2] == 255) {
      const int g = centre[0];
      if (zooms > 0 && unit_from_seed(mix_seed(seed, 13)) < env_.config().fragment_misread)
        return (g + 1 + static_cast<int>(unit_from_seed(mix_seed(seed, 14)) * (glyphs - 1))) % glyphs;
      return g;
    }
    if (last_crop) {
      const std::uint8_t* c = last_crop->at(last_crop->width / 2, last_crop->height / 2);
      if (c[1] != 0) return c[0];
    }
    return static_cast<int>(unit_from_seed(mix_seed(seed, 15)) * glyphs) % glyphs;
  }

  const ToyParams& params_;
  const NeedleGridEnv& env_;
  std::size_t budget_;
  std::vector<std::uint8_t> visited_;
  std::vector<ToyDecision> decisions_;
};

struct ToyRollout {
  Trajectory trajectory;
  std::vector<ToyDecision> decisions;
};

inline std::size_t toy_observation_tokens(const RasterImage* image, const std::string& note) {
  if (image) return std::max<std::size_t>(1, static_cast<std::size_t>((image->width / 8) * (image->height / 8)));
  return std::max<std::size_t>(1, whitespace_token_estimate(note));
}

inline RolloutOptions toy_rollout_options(std::size_t max_tool_calls) {
  RolloutOptions opts;
  opts.budget.max_tool_calls = max_tool_calls;
  opts.observation_tokens = toy_observation_tokens;
  return opts;
}

inline ToyRollout toy_rollout(const NeedleGridEnv& env, const NeedleInstance& inst, const ToyParams& params,
                              RolloutOptions opts) {
  if (opts.budget.max_tool_calls < 1) throw Error(Errc::InvalidArgument, "toy rollout needs a tool budget");
  ToyAgent agent(params, env, opts.budget.max_tool_calls);
  ToyRollout out;
  out.trajectory = run_rollout(inst.id, inst.question, inst.image, agent, opts);
  out.decisions = agent.decisions();
  return out;
}

/// Zoom boxes requested across a trajectory's policy turns.
inline std::vector<BBox> requested_boxes(const Trajectory& t) {
  std::vector<BBox> out;
  for (const auto& s : t.segments()) {
    if (s.kind != SegmentKind::PolicyText) continue;
    for (const auto& c : parse_turn(s.text).tool_calls) {
      if (c.name != kZoomToolName) continue;
      auto it = c.arguments.find("bbox_2d");
      if (it == c.arguments.end()) continue;
      try {
        out.push_back(it->get<BBox>());
      } catch (const Error&) {
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct ToyTrajectorySample {
  std::vector<ToyDecision> decisions;
  double advantage = 0;
};

/// theta += eta / prompts * sum(adv * grad log pi).
inline void reinforce_update(ToyParams& p, const std::vector<ToyTrajectorySample>& batch, double eta,
                             std::size_t prompts) {
  if (prompts == 0) throw Error(Errc::InvalidArgument, "update needs at least one prompt");
  std::vector<double> step(p.size(), 0.0);
  for (const auto& s : batch) {
    if (s.advantage == 0.0) continue;
    const auto g = grad_log_prob(p, s.decisions);
    for (std::size_t i = 0; i < g.size(); ++i) step[i] += s.advantage * g[i];
  }
  const double scale = eta / static_cast<double>(prompts);
  for (std::size_t i = 0; i < step.size(); ++i) {
    const double next = p.theta[i] + scale * step[i];
    if (!std::isfinite(next)) throw Error(Errc::NonFiniteGradient, "parameter " + std::to_string(i));
    step[i] = next;
  }
  p.theta = std::move(step);
}

struct ToyTrainConfig {
  NeedleGridConfig env;
  RewardConfig reward;
  double eta = 0.1;
  std::size_t prompts = 64;
  std::size_t group = 16;
  std::size_t steps = 500;
  std::size_t max_tool_calls = 6;
  double init_zoom_logit = -0.8;
  double init_found_zoom_logit = -0.5;
  std::size_t workers = 1;
};

struct StepMetrics {
  std::size_t step = 0;
  double tool_rate = 0;
  double mean_tool_calls = 0;
  double accuracy = 0;
  double mean_reward = 0;
  double response_len = 0;
  double region_hit_rate = 0;
};

struct DynamicsLog {
  ToolRewardMode mode = ToolRewardMode::Conditional;
  std::uint64_t seed = 0;
  std::vector<StepMetrics> steps;
  ToyParams final_params;

  /// Mean of a field over steps [from, to).
  template <class F>
  double window_mean(std::size_t from, std::size_t to, F field) const {
    to = std::min(to, steps.size());
    if (from >= to) return 0.0;
    double s = 0;
    for (std::size_t i = from; i < to; ++i) s += field(steps[i]);
    return s / static_cast<double>(to - from);
  }
  template <class F>
  double final_mean(std::size_t window, F field) const {
    return window_mean(steps.size() > window ? steps.size() - window : 0, steps.size(), field);
  }
};

inline void write_csv(const DynamicsLog& log, std::ostream& os) {
  os << "step,tool_rate,mean_tool_calls,accuracy,mean_reward,response_len,region_hit_rate\n";
  char buf[256];
  for (const auto& m : log.steps) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", m.step, m.tool_rate, m.mean_tool_calls,
                  m.accuracy, m.mean_reward, m.response_len, m.region_hit_rate);
    os << buf;
  }
}

/// Max of mean_tool_calls over the first `early` steps divided by its mean over the last `late` steps.
inline double early_peak_ratio(const DynamicsLog& log, std::size_t early = 150, std::size_t late = 100) {
  double peak = 0;
  for (std::size_t i = 0; i < std::min(early, log.steps.size()); ++i) peak = std::max(peak, log.steps[i].mean_tool_calls);
  const double tail = log.final_mean(late, [](const StepMetrics& m) { return m.mean_tool_calls; });
  return tail > 0 ? peak / tail : INFINITY;
}

/// One training step over `cfg.prompts` fresh instances; updates params in place.
inline StepMetrics train_step(const NeedleGridEnv& env, ToyParams& params, const ToyTrainConfig& cfg,
                              std::uint64_t seed, std::size_t step) {
  const std::size_t P = cfg.prompts, N = cfg.group;
  if (N < 2) throw Error(Errc::GroupTooSmall, "toy groups need at least 2 rollouts");
  const RolloutOptions base = toy_rollout_options(cfg.max_tool_calls);
  const Verifier exact = Verifier::exact();
  const std::uint64_t step_seed = mix_seed(seed, step);

  std::vector<ToyTrajectorySample> samples(P * N);
  std::vector<double> hit_sum(P, 0.0), hit_count(P, 0.0);
  std::vector<Group> groups(P);
  parallel_for(P, cfg.workers, [&](std::size_t p) {
    const NeedleInstance inst = env.sample(mix_seed(step_seed, p));
    Group& g = groups[p];
    g.prompt_id = inst.id;
    for (std::size_t n = 0; n < N; ++n) {
      RolloutOptions opts = base;
      opts.seed = mix_seed(mix_seed(step_seed, p), 1000 + n);
      opts.rollout_index = n;
      ToyRollout r = toy_rollout(env, inst, params, opts);
      g.rewards.push_back(total_reward(r.trajectory, inst.answer, exact, cfg.reward, base.prompt->tools()));
      if (!inst.overview) {
        for (const auto& b : requested_boxes(r.trajectory)) {
          hit_sum[p] += iou(b, inst.target_box);
          hit_count[p] += 1;
        }
      }
      samples[p * N + n].decisions = std::move(r.decisions);
      g.trajectories.push_back(std::move(r.trajectory));
    }
    score_advantages(g);
    for (std::size_t n = 0; n < N; ++n) samples[p * N + n].advantage = g.advantages->scalar[n];
  });

  StepMetrics m;
  m.step = step;
  double hits = 0, hit_n = 0;
  for (std::size_t p = 0; p < P; ++p) {
    hits += hit_sum[p];
    hit_n += hit_count[p];
    for (std::size_t n = 0; n < N; ++n) {
      const Trajectory& t = groups[p].trajectories[n];
      m.tool_rate += t.tool_call_count() > 0 ? 1 : 0;
      m.mean_tool_calls += static_cast<double>(t.tool_call_count());
      m.accuracy += groups[p].rewards[n].acc > 0 ? 1 : 0;
      m.mean_reward += groups[p].rewards[n].total;
      m.response_len += static_cast<double>(t.policy_tokens());
    }
  }
  const double total = static_cast<double>(P * N);
  m.tool_rate /= total;
  m.mean_tool_calls /= total;
  m.accuracy /= total;
  m.mean_reward /= total;
  m.response_len /= total;
  m.region_hit_rate = hit_n > 0 ? hits / hit_n : 0.0;

  reinforce_update(params, samples, cfg.eta, P);
  return m;
}

inline DynamicsLog run_ablation(ToolRewardMode mode, std::size_t steps, std::uint64_t seed, ToyTrainConfig cfg = {}) {
  if (steps < 1) throw Error(Errc::InvalidArgument, "ablation needs at least one step");
  cfg.reward.mode = mode;
  cfg.steps = steps;
  const NeedleGridEnv env(cfg.env);
  ToyParams params(env.regions(), cfg.init_zoom_logit, cfg.init_found_zoom_logit);
  DynamicsLog log;
  log.mode = mode;
  log.seed = seed;
  log.steps.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) log.steps.push_back(train_step(env, params, cfg, seed, s));
  log.final_params = params;
  return log;
}

}  // namespace zoomrl
