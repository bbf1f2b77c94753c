// SPDX-License-Identifier: Apache-2.0
#pragma once

// Training-data selection: difficulty, open-ended standardization, label
// verification and perception utility, then mixture sampling by source.

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "zoomrl/dataset.hpp"
#include "zoomrl/error.hpp"
#include "zoomrl/reward.hpp"
#include "zoomrl/rollout.hpp"
#include "zoomrl/toolbox.hpp"
#include "zoomrl/util.hpp"

namespace zoomrl {

enum class Decision { Keep, Drop, Deferred };
enum class DropReason { None, TooEasy, TooHard, Unmappable, BadLabel, MissingGtBox, NoUtility, BadInput };

constexpr std::string_view to_string(Decision d) noexcept {
  switch (d) {
    case Decision::Keep: return "keep";
    case Decision::Drop: return "drop";
    case Decision::Deferred: return "deferred";
  }
  return "unknown";
}

constexpr std::string_view to_string(DropReason r) noexcept {
  switch (r) {
    case DropReason::None: return "";
    case DropReason::TooEasy: return "TooEasy";
    case DropReason::TooHard: return "TooHard";
    case DropReason::Unmappable: return "Unmappable";
    case DropReason::BadLabel: return "BadLabel";
    case DropReason::MissingGtBox: return "MissingGtBox";
    case DropReason::NoUtility: return "NoUtility";
    case DropReason::BadInput: return "BadInput";
  }
  return "unknown";
}

struct CurationRecord {
  std::string sample_id;
  double acc_plain = 0;
  std::optional<double> acc_with_crop;
  std::optional<bool> verified;
  Decision decision = Decision::Keep;
  DropReason reason = DropReason::None;
  std::size_t transport_errors = 0;
  std::string detail;

  void drop(DropReason r, std::string why = {}) {
    decision = Decision::Drop;
    reason = r;
    detail = std::move(why);
  }
};

struct CurationContext {
  RolloutOptions rollout;
  Verifier verifier;
  std::size_t workers = 1;
};

namespace detail {

struct AccuracyEstimate {
  double acc = 0;
  std::size_t transport_errors = 0;
};

// K rollouts of the sample, each scored correct or not. Transport failures count as incorrect.
inline AccuracyEstimate estimate_accuracy(const SampleRecord& s, const ImagePtr& image, PolicyClient& policy,
                                          std::size_t k, const CurationContext& ctx,
                                          const std::vector<PrefaceObservation>& preface, std::string_view salt) {
  std::vector<int> correct(k, 0), failed(k, 0);
  parallel_for(k, ctx.workers, [&](std::size_t i) {
    RolloutOptions opts = ctx.rollout;
    opts.seed = rollout_seed(mix_seed(ctx.rollout.seed, stable_hash(salt)), s.id, i);
    opts.rollout_index = i;
    opts.preface = preface;
    Trajectory t = run_rollout(s.id, s.question, image, policy, opts);
    if (t.terminal() == Terminal::Malformed && t.note().rfind("transport failure", 0) == 0) failed[i] = 1;
    if (t.terminal() == Terminal::Answered && verify_answer(*t.answer(), s.answer, ctx.verifier)) correct[i] = 1;
  });
  AccuracyEstimate e;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i) {
    hits += static_cast<std::size_t>(correct[i]);
    e.transport_errors += static_cast<std::size_t>(failed[i]);
  }
  e.acc = static_cast<double>(hits) / static_cast<double>(k);
  return e;
}

}  // namespace detail

inline CurationRecord difficulty_filter(const SampleRecord& s, const ImagePtr& image, PolicyClient& policy,
                                        std::size_t k, const CurationContext& ctx) {
  if (k < 4) throw Error(Errc::InvalidArgument, "difficulty filter needs K >= 4");
  CurationRecord rec;
  rec.sample_id = s.id;
  auto est = detail::estimate_accuracy(s, image, policy, k, ctx, {}, "difficulty");
  rec.acc_plain = est.acc;
  rec.transport_errors = est.transport_errors;
  if (est.acc >= 1.0) rec.drop(DropReason::TooEasy);
  else if (est.acc <= 0.0) rec.drop(DropReason::TooHard);
  return rec;
}

/// Multiple-choice stems lose their option list and the gold letter becomes the option text.
inline SampleRecord standardize_open_ended(SampleRecord s) {
  static const std::regex paren_opt(R"(\(([A-Z])\)\s*)");
  static const std::regex line_opt(R"((?:^|\n)[ \t]*([A-Z])[.)][ \t]+)");

  std::vector<std::pair<std::size_t, std::size_t>> marks;  // (position, length) of each option marker
  std::vector<char> letters;
  auto collect = [&](const std::regex& re) {
    marks.clear();
    letters.clear();
    for (auto it = std::sregex_iterator(s.question.begin(), s.question.end(), re); it != std::sregex_iterator(); ++it) {
      marks.emplace_back(static_cast<std::size_t>(it->position(0)), static_cast<std::size_t>(it->length(0)));
      letters.push_back((*it)[1].str()[0]);
    }
    if (letters.size() < 2) return false;
    for (std::size_t i = 0; i < letters.size(); ++i)
      if (letters[i] != static_cast<char>('A' + i)) return false;
    return true;
  };
  if (!collect(paren_opt) && !collect(line_opt)) return s;

  std::map<char, std::string> options;
  for (std::size_t i = 0; i < marks.size(); ++i) {
    const std::size_t b = marks[i].first + marks[i].second;
    const std::size_t e = i + 1 < marks.size() ? marks[i + 1].first : s.question.size();
    std::string text(trim(std::string_view(s.question).substr(b, e - b)));
    while (!text.empty() && (text.back() == ',' || text.back() == ';')) text.pop_back();
    options[letters[i]] = std::string(trim(text));
  }

  std::string answer;
  if (auto letter = parse_choice_letter(s.answer); letter && trim(s.answer).size() <= 4) {
    auto it = options.find(*letter);
    if (it == options.end() || it->second.empty())
      throw Error(Errc::UnmappableChoice, "sample " + s.id + ": no option " + std::string(1, *letter));
    answer = it->second;
  } else {
    for (const auto& [l, text] : options)
      if (normalize_answer(text) == normalize_answer(s.answer)) answer = text;
    if (answer.empty()) throw Error(Errc::UnmappableChoice, "sample " + s.id + ": answer matches no option");
  }
  std::string stem(trim(std::string_view(s.question).substr(0, marks.front().first)));
  s.question = stem;
  s.answer = answer;
  return s;
}

enum class LabelVerdict { Consistent, Inconsistent, Deferred };

/// (sample, image) -> label is consistent. Throws JudgeUnavailable (or a
/// transport-class error) when it cannot decide.
using LabelJudge = std::function<bool(const SampleRecord&, const ImagePtr&)>;

/// Rule-based judge: the answer must match the sample's independent reference label.
inline LabelJudge reference_judge() {
  return [](const SampleRecord& s, const ImagePtr&) {
    if (!s.reference) throw Error(Errc::JudgeUnavailable, "sample " + s.id + " has no reference label");
    return normalize_answer(*s.reference) == normalize_answer(s.answer);
  };
}

inline LabelJudge accept_all_judge() {
  return [](const SampleRecord&, const ImagePtr&) { return true; };
}

inline LabelVerdict verify_labels(const SampleRecord& s, const ImagePtr& image, const LabelJudge& judge) {
  if (!judge) throw Error(Errc::JudgeUnavailable, "no judge configured");
  try {
    return judge(s, image) ? LabelVerdict::Consistent : LabelVerdict::Inconsistent;
  } catch (const Error& e) {
    if (e.code() == Errc::JudgeUnavailable || is_transport_class(e.code())) return LabelVerdict::Deferred;
    throw;
  }
}

/// Crop of the ground-truth region, shown to the policy before its first turn.
inline PrefaceObservation forced_crop(const SampleRecord& s, const RasterImage& image, double min_side = kDefaultMinSide) {
  if (!s.gt_bboxes || s.gt_bboxes->empty()) throw Error(Errc::MissingGtBox, "sample " + s.id + " has no gt_bboxes");
  BBox b = normalize_and_clamp(union_box(*s.gt_bboxes), image.width, image.height, min_side);
  ToolResult r = crop(image, b);
  auto img = std::make_shared<const RasterImage>(std::move(r.image));
  return {img->id, img, "provided region"};
}

/// Applies only to VisualSearch samples; others pass through untouched.
inline CurationRecord perception_utility_filter(const SampleRecord& s, const ImagePtr& image, PolicyClient& policy,
                                                std::size_t k, double delta, CurationRecord rec,
                                                const CurationContext& ctx) {
  if (s.source != Source::VisualSearch) return rec;
  PrefaceObservation pre = forced_crop(s, *image, ctx.rollout.min_side);
  auto est = detail::estimate_accuracy(s, image, policy, k, ctx, {pre}, "utility");
  rec.acc_with_crop = est.acc;
  rec.transport_errors += est.transport_errors;
  // Small slack so thresholds like 0.25 are not lost to binary fractions.
  const bool useful = est.acc > 0 && est.acc - rec.acc_plain >= delta - 1e-12;
  if (!useful) rec.drop(DropReason::NoUtility);
  return rec;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct CurationConfig {
  std::size_t k = 8;
  double delta = 0.25;
  bool verify = true;
  bool utility_filter = true;
};

struct CurationResult {
  std::vector<SampleRecord> kept;
  std::vector<SampleRecord> deferred;
  std::vector<CurationRecord> records;
  std::vector<ordered_json> audit;  // one entry per (sample, stage)
};

using ImageLoader = std::function<ImagePtr(const SampleRecord&)>;

inline ordered_json audit_entry(const std::string& id, std::string_view stage, const CurationRecord& rec,
                                ordered_json metrics = ordered_json::object()) {
  ordered_json j;
  j["id"] = id;
  j["stage"] = std::string(stage);
  j["decision"] = std::string(to_string(rec.decision));
  if (rec.reason != DropReason::None) j["reason"] = std::string(to_string(rec.reason));
  j["metrics"] = std::move(metrics);
  if (!rec.detail.empty()) j["detail"] = rec.detail;
  return j;
}

/// Runs every stage in order on each sample; a sample stops at its first drop.
inline CurationResult run_curation(const std::vector<SampleRecord>& pool, const ImageLoader& load, PolicyClient& policy,
                                   const LabelJudge& judge, const CurationConfig& cfg, const CurationContext& ctx) {
  CurationResult out;
  for (const auto& original : pool) {
    CurationRecord rec;
    rec.sample_id = original.id;
    auto finish = [&] { out.records.push_back(rec); };

    ImagePtr image;
    try {
      image = load(original);
    } catch (const Error& e) {
      rec.drop(DropReason::BadInput, e.what());
      out.audit.push_back(audit_entry(original.id, "load", rec));
      finish();
      continue;
    }

    rec = difficulty_filter(original, image, policy, cfg.k, ctx);
    out.audit.push_back(audit_entry(original.id, "difficulty", rec,
                                    {{"acc_plain", rec.acc_plain}, {"k", cfg.k}, {"transport_errors", rec.transport_errors}}));
    if (rec.decision == Decision::Drop) {
      finish();
      continue;
    }

    SampleRecord s;
    try {
      s = standardize_open_ended(original);
    } catch (const Error& e) {
      rec.drop(DropReason::Unmappable, e.what());
    }
    out.audit.push_back(audit_entry(original.id, "standardize", rec, {{"changed", rec.decision == Decision::Keep && s.question != original.question}}));
    if (rec.decision == Decision::Drop) {
      finish();
      continue;
    }

    if (cfg.verify) {
      const auto v = verify_labels(s, image, judge);
      if (v == LabelVerdict::Deferred) {
        rec.decision = Decision::Deferred;
        rec.detail = "judge unavailable";
      } else {
        rec.verified = v == LabelVerdict::Consistent;
        if (!*rec.verified) rec.drop(DropReason::BadLabel);
      }
      out.audit.push_back(audit_entry(original.id, "verify", rec));
      if (rec.decision != Decision::Keep) {
        if (rec.decision == Decision::Deferred) out.deferred.push_back(s);
        finish();
        continue;
      }
    }

    if (cfg.utility_filter && s.source == Source::VisualSearch) {
      try {
        rec = perception_utility_filter(s, image, policy, cfg.k, cfg.delta, rec, ctx);
      } catch (const Error& e) {
        if (e.code() != Errc::MissingGtBox && e.code() != Errc::DegenerateBox) throw;
        rec.drop(DropReason::MissingGtBox, e.what());
      }
      ordered_json m = {{"acc_plain", rec.acc_plain}, {"delta", cfg.delta}};
      if (rec.acc_with_crop) {
        m["acc_with_crop"] = *rec.acc_with_crop;
        m["uplift"] = *rec.acc_with_crop - rec.acc_plain;
      }
      out.audit.push_back(audit_entry(original.id, "perception_utility", rec, std::move(m)));
      if (rec.decision == Decision::Drop) {
        finish();
        continue;
      }
    }

    out.kept.push_back(s);
    finish();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mixture sampling
// ---------------------------------------------------------------------------

using MixtureWeights = std::map<Source, double>;

inline MixtureWeights default_mixture() {
  return {{Source::VisualSearch, 0.47}, {Source::Chart, 0.30}, {Source::Reasoning, 0.23}};
}

/// Seeded draws: a source by weight, then a uniform member of that source.
class MixtureSampler {
 public:
  MixtureSampler(std::vector<SampleRecord> pool, MixtureWeights weights, std::uint64_t seed)
      : seed_(seed) {
    double sum = 0;
    for (const auto& [src, w] : weights) {
      if (!(w >= 0) || !std::isfinite(w)) throw Error(Errc::InvalidArgument, "mixture weights must be finite and >= 0");
      sum += w;
    }
    if (std::fabs(sum - 1.0) > 1e-6) throw Error(Errc::InvalidArgument, "mixture weights must sum to 1");
    for (auto& s : pool) strata_[s.source].push_back(std::move(s));
    double acc = 0;
    for (Source src : kAllSources) {
      const double w = weights.count(src) ? weights.at(src) : 0.0;
      if (w <= 0) continue;
      if (strata_[src].empty())
        throw Error(Errc::EmptyStratum, "source " + std::string(to_string(src)) + " has weight but no samples");
      acc += w;
      cdf_.emplace_back(acc, src);
    }
    cdf_.back().first = 1.0;
  }

  const SampleRecord& next() {
    const std::uint64_t n = draws_++;
    const double u = unit_from_seed(mix_seed(seed_, 2 * n));
    Source src = cdf_.back().second;
    for (const auto& [edge, s] : cdf_) {
      if (u < edge) {
        src = s;
        break;
      }
    }
    const auto& stratum = strata_.at(src);
    const double v = unit_from_seed(mix_seed(seed_, 2 * n + 1));
    return stratum[std::min(stratum.size() - 1, static_cast<std::size_t>(v * static_cast<double>(stratum.size())))];
  }

  std::vector<SampleRecord> take(std::size_t n) {
    std::vector<SampleRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(next());
    return out;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t draws_ = 0;
  std::map<Source, std::vector<SampleRecord>> strata_;
  std::vector<std::pair<double, Source>> cdf_;
};

inline ordered_json to_json(const CurationRecord& r) {
  ordered_json j;
  j["id"] = r.sample_id;
  j["acc_plain"] = r.acc_plain;
  j["acc_with_crop"] = r.acc_with_crop ? ordered_json(*r.acc_with_crop) : ordered_json(nullptr);
  j["verified"] = r.verified ? ordered_json(*r.verified) : ordered_json(nullptr);
  j["decision"] = std::string(to_string(r.decision));
  if (r.reason != DropReason::None) j["reason"] = std::string(to_string(r.reason));
  if (r.transport_errors > 0) j["transport_errors"] = r.transport_errors;
  return j;
}

}  // namespace zoomrl
