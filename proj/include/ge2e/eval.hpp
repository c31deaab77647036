#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "ge2e/common.hpp"
#include "ge2e/io.hpp"
#include "ge2e/net.hpp"

namespace ge2e {

struct WindowSpec {
  int window_frames = 160;  // (140 + 180) / 2
  int step_frames = 80;     // 50% overlap
};

struct DVector {
  Vec vector;
  std::string speaker_id;
  std::string utterance_id;
  double duration_seconds = 0.0;
};

struct SpeakerModel {
  Vec centroid;
  std::vector<std::string> enrolled_utterance_ids;
};

inline Eigen::Index window_count(Eigen::Index frames, const WindowSpec& spec) {
  if (frames < spec.window_frames) return 0;
  return (frames - spec.window_frames) / spec.step_frames + 1;
}

/// Sliding-window utterance d-vector: unit-normalized per-window embeddings,
/// element-wise averaged. The incomplete final window is dropped; the result
/// is not re-normalized.
inline DVector utterance_dvector(const NetworkParams& params,
                                 const FeatureMatrix& features,
                                 const WindowSpec& spec = {}) {
  const Eigen::Index n_win = window_count(features.frames(), spec);
  if (n_win < 1)
    throw Error(ErrorKind::TooShort,
                "utterance shorter than one window (" +
                    std::to_string(spec.window_frames) + " frames)");

  std::vector<Mat> windows;
  windows.reserve(static_cast<std::size_t>(n_win));
  std::vector<const Mat*> ptrs;
  for (Eigen::Index k = 0; k < n_win; ++k) {
    windows.push_back(
        features.data.middleRows(k * spec.step_frames, spec.window_frames));
    ptrs.push_back(&windows.back());
  }
  BatchTape tape;
  const Mat raw = forward_batch(params, ptrs, tape);

  Vec avg = Vec::Zero(raw.rows());
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    const double n = raw.col(c).norm();
    if (n == 0.0)
      throw Error(ErrorKind::DegenerateEmbedding, "zero-norm window embedding");
    avg += raw.col(c) / n;
  }
  DVector d;
  d.vector = avg / static_cast<double>(n_win);
  d.speaker_id = features.source_id.speaker_id;
  d.utterance_id = features.source_id.utterance_id;
  return d;
}

inline double cosine_score(const Vec& d, const SpeakerModel& m) {
  const double nd = d.norm();
  const double nc = m.centroid.norm();
  if (nd == 0.0 || nc == 0.0)
    throw Error(ErrorKind::DegenerateInput, "zero-norm vector in scoring");
  return d.dot(m.centroid) / (nd * nc);
}

// ---------------------------------------------------------------------------
// FAR / FRR / EER

struct TrialSet {
  std::vector<double> genuine;
  std::vector<double> impostor;
};

struct ErrorRateCurve {
  std::vector<double> thresholds;
  std::vector<double> far;
  std::vector<double> frr;
  double eer = 0.0;
  double eer_threshold = 0.0;
};

namespace detail {

/// FAR(t) = fraction of impostor scores >= t (accept rule: score >= t).
inline double far_at(const std::vector<double>& sorted_impostor, double t) {
  const auto it = std::lower_bound(sorted_impostor.begin(), sorted_impostor.end(), t);
  return static_cast<double>(sorted_impostor.end() - it) /
         static_cast<double>(sorted_impostor.size());
}

/// FRR(t) = fraction of genuine scores < t.
inline double frr_at(const std::vector<double>& sorted_genuine, double t) {
  const auto it = std::lower_bound(sorted_genuine.begin(), sorted_genuine.end(), t);
  return static_cast<double>(it - sorted_genuine.begin()) /
         static_cast<double>(sorted_genuine.size());
}

}  // namespace detail

/// Error curves over an even threshold grid plus the EER. The EER comes from
/// the exact per-score-cut curves: FAR - FRR is non-increasing, the sign
/// change is located over the candidate cuts and the crossing value obtained
/// by linear interpolation of (FAR, FRR) between the bracketing cuts. The
/// interpolation runs on rate values, so the EER is invariant under strictly
/// increasing transforms of the scores.
inline ErrorRateCurve compute_error_curve(const TrialSet& trials,
                                          int n_thresholds = 2001) {
  if (trials.genuine.empty() || trials.impostor.empty())
    throw Error(ErrorKind::NoTrials, "need genuine and impostor scores");

  std::vector<double> gen = trials.genuine;
  std::vector<double> imp = trials.impostor;
  std::sort(gen.begin(), gen.end());
  std::sort(imp.begin(), imp.end());

  // Candidate cuts: every distinct score plus sentinels outside the range.
  std::vector<double> cuts;
  cuts.reserve(gen.size() + imp.size() + 2);
  const double lo = std::min(gen.front(), imp.front());
  const double hi = std::max(gen.back(), imp.back());
  const double eps = 1e-9 + 1e-9 * (hi - lo);
  cuts.push_back(lo - eps);
  std::merge(gen.begin(), gen.end(), imp.begin(), imp.end(),
             std::back_inserter(cuts));
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  cuts.push_back(hi + eps);

  ErrorRateCurve curve;
  double prev_far = 1.0, prev_frr = 0.0, prev_cut = cuts.front();
  bool found = false;
  for (const double c : cuts) {
    const double far = detail::far_at(imp, c);
    const double frr = detail::frr_at(gen, c);
    if (far <= frr) {
      const double d1 = prev_far - prev_frr;  // >= 0
      const double d2 = far - frr;            // <= 0
      const double s = (d1 - d2 > 0.0) ? d1 / (d1 - d2) : 0.0;
      curve.eer = prev_far + s * (far - prev_far);
      curve.eer_threshold = prev_cut + s * (c - prev_cut);
      found = true;
      break;
    }
    prev_far = far;
    prev_frr = frr;
    prev_cut = c;
  }
  if (!found) {  // unreachable: the last sentinel has FAR 0, FRR 1
    curve.eer = 0.5;
    curve.eer_threshold = hi;
  }

  curve.thresholds.resize(static_cast<std::size_t>(n_thresholds));
  curve.far.resize(static_cast<std::size_t>(n_thresholds));
  curve.frr.resize(static_cast<std::size_t>(n_thresholds));
  for (int i = 0; i < n_thresholds; ++i) {
    const double t =
        (lo - eps) + (hi + eps - (lo - eps)) * i / (n_thresholds - 1);
    curve.thresholds[static_cast<std::size_t>(i)] = t;
    curve.far[static_cast<std::size_t>(i)] = detail::far_at(imp, t);
    curve.frr[static_cast<std::size_t>(i)] = detail::frr_at(gen, t);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Experiment protocols

namespace detail {

struct IterationSplit {
  std::vector<SpeakerModel> models;           // one per speaker
  std::vector<std::string> model_speakers;    // speaker ids, same order
  std::vector<const DVectorRecord*> verification;
};

/// Per speaker: sample 2M d-vectors, first M enroll, last M verify.
inline IterationSplit sample_split(
    const std::map<std::string, std::vector<const DVectorRecord*>>& by_speaker,
    int m, Rng& rng) {
  IterationSplit split;
  for (const auto& [speaker, recs] : by_speaker) {
    if (static_cast<int>(recs.size()) < 2 * m)
      throw Error(ErrorKind::InsufficientUtterances,
                  "speaker " + speaker + " has fewer than " +
                      std::to_string(2 * m) + " d-vectors");
    std::vector<const DVectorRecord*> pool = recs;
    rng.shuffle(pool);
    SpeakerModel model;
    model.centroid = Vec::Zero(pool.front()->vector.size());
    for (int i = 0; i < m; ++i) {
      model.centroid += pool[static_cast<std::size_t>(i)]->vector;
      model.enrolled_utterance_ids.push_back(
          pool[static_cast<std::size_t>(i)]->utterance_id);
    }
    model.centroid /= m;
    split.models.push_back(std::move(model));
    split.model_speakers.push_back(speaker);
    for (int i = m; i < 2 * m; ++i)
      split.verification.push_back(pool[static_cast<std::size_t>(i)]);
  }
  return split;
}

/// Exhaustive trials: every verification d-vector against every model.
inline TrialSet score_trials(const IterationSplit& split) {
  TrialSet trials;
  for (const DVectorRecord* rec : split.verification)
    for (std::size_t k = 0; k < split.models.size(); ++k) {
      const double s = cosine_score(rec->vector, split.models[k]);
      (rec->speaker_id == split.model_speakers[k] ? trials.genuine
                                                  : trials.impostor)
          .push_back(s);
    }
  return trials;
}

}  // namespace detail

/// Mean EER over seeded iterations for each M: sample 2M d-vectors per
/// speaker (all speakers participate), split into enrollment/verification
/// halves, score exhaustively.
inline std::map<int, double> run_m_sweep(const DVectorStore& store,
                                         const std::vector<int>& m_values,
                                         int iterations, std::uint64_t seed) {
  const auto by_speaker = store.by_speaker();
  if (by_speaker.size() < 2)
    throw Error(ErrorKind::CorpusTooSmall, "need at least two speakers");
  std::map<int, double> result;
  for (int m : m_values) {
    if (m < 2)
      throw Error(ErrorKind::InsufficientUtterances, "minimum possible M is 2");
    double sum = 0.0;
    for (int it = 0; it < iterations; ++it) {
      Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(m) * 1000003u +
                                      static_cast<std::uint64_t>(it));
      const auto split = detail::sample_split(by_speaker, m, rng);
      sum += compute_error_curve(detail::score_trials(split)).eer;
    }
    result[m] = sum / iterations;
  }
  return result;
}

struct FixedThresholdReport {
  double threshold = 0.0;   // average dev EER threshold
  double dev_eer = 0.0;
  double far = 0.0;         // on the test store at the fixed threshold
  double frr = 0.0;
  double eer = 0.0;         // test-store EER (per-iteration optimum, averaged)
};

/// Averages the dev-store EER threshold over iterations at the given M, then
/// applies it unchanged to test-store trials.
inline FixedThresholdReport run_fixed_threshold(const DVectorStore& dev_store,
                                                const DVectorStore& test_store,
                                                int m, int iterations,
                                                std::uint64_t seed) {
  if (m < 2)
    throw Error(ErrorKind::InsufficientUtterances, "minimum possible M is 2");
  FixedThresholdReport report;
  const auto dev_by_speaker = dev_store.by_speaker();
  for (int it = 0; it < iterations; ++it) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(it));
    const auto split = detail::sample_split(dev_by_speaker, m, rng);
    const auto curve = compute_error_curve(detail::score_trials(split));
    report.threshold += curve.eer_threshold;
    report.dev_eer += curve.eer;
  }
  report.threshold /= iterations;
  report.dev_eer /= iterations;

  const auto test_by_speaker = test_store.by_speaker();
  for (int it = 0; it < iterations; ++it) {
    Rng rng = Rng::derive(seed ^ 0xfeedULL, static_cast<std::uint64_t>(it));
    const auto split = detail::sample_split(test_by_speaker, m, rng);
    TrialSet trials = detail::score_trials(split);
    std::sort(trials.genuine.begin(), trials.genuine.end());
    std::sort(trials.impostor.begin(), trials.impostor.end());
    report.far += detail::far_at(trials.impostor, report.threshold);
    report.frr += detail::frr_at(trials.genuine, report.threshold);
    report.eer += compute_error_curve(trials).eer;
  }
  report.far /= iterations;
  report.frr /= iterations;
  report.eer /= iterations;
  return report;
}

struct DurationSplitReport {
  double eer_short = 0.0;
  double eer_long = 0.0;
  double eer_all = 0.0;
};

/// EER separately for short (< boundary), long, and all verification
/// utterances. Enrollment d-vectors are drawn without a duration constraint;
/// remaining records act as the verification pool.
inline DurationSplitReport run_duration_split(const DVectorStore& store,
                                              double boundary_seconds, int m,
                                              int iterations,
                                              std::uint64_t seed) {
  if (m < 2)
    throw Error(ErrorKind::InsufficientUtterances, "minimum possible M is 2");
  const auto by_speaker = store.by_speaker();
  bool any_short = false, any_long = false;
  for (const auto& rec : store.records)
    (rec.duration_seconds < boundary_seconds ? any_short : any_long) = true;
  if (!any_short || !any_long)
    throw Error(ErrorKind::PartitionEmpty,
                "duration split has an empty partition at " +
                    std::to_string(boundary_seconds) + " s");

  DurationSplitReport report;
  int used = 0;
  for (int it = 0; it < iterations; ++it) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(it));
    // Enroll m per speaker from the full pool, verify on the rest.
    detail::IterationSplit split;
    for (const auto& [speaker, recs] : by_speaker) {
      if (static_cast<int>(recs.size()) < m + 1)
        throw Error(ErrorKind::InsufficientUtterances,
                    "speaker " + speaker + " has too few d-vectors");
      std::vector<const DVectorRecord*> pool = recs;
      rng.shuffle(pool);
      SpeakerModel model;
      model.centroid = Vec::Zero(pool.front()->vector.size());
      for (int i = 0; i < m; ++i) model.centroid += pool[static_cast<std::size_t>(i)]->vector;
      model.centroid /= m;
      split.models.push_back(std::move(model));
      split.model_speakers.push_back(speaker);
      for (std::size_t i = static_cast<std::size_t>(m); i < pool.size(); ++i)
        split.verification.push_back(pool[i]);
    }

    auto eer_for = [&](auto&& keep) -> double {
      detail::IterationSplit filtered;
      filtered.models = split.models;
      filtered.model_speakers = split.model_speakers;
      for (const DVectorRecord* rec : split.verification)
        if (keep(*rec)) filtered.verification.push_back(rec);
      const TrialSet trials = detail::score_trials(filtered);
      if (trials.genuine.empty() || trials.impostor.empty()) return -1.0;
      return compute_error_curve(trials).eer;
    };
    const double e_short = eer_for([&](const DVectorRecord& r) {
      return r.duration_seconds < boundary_seconds;
    });
    const double e_long = eer_for([&](const DVectorRecord& r) {
      return r.duration_seconds >= boundary_seconds;
    });
    const double e_all = eer_for([](const DVectorRecord&) { return true; });
    if (e_short < 0.0 || e_long < 0.0 || e_all < 0.0) continue;
    report.eer_short += e_short;
    report.eer_long += e_long;
    report.eer_all += e_all;
    ++used;
  }
  if (used == 0)
    throw Error(ErrorKind::PartitionEmpty,
                "no iteration produced trials in both partitions");
  report.eer_short /= used;
  report.eer_long /= used;
  report.eer_all /= used;
  return report;
}

}  // namespace ge2e
