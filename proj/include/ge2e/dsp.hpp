#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>
#include <utility>
#include <vector>

#include "ge2e/common.hpp"
#include "ge2e/wav.hpp"

namespace ge2e {

struct VadConfig {
  double max_silence_length = 0.006;  // seconds
  double window_length = 0.030;       // seconds
  double prune_threshold_db = 30.0;
};

struct FrameSpec {
  double frame_width = 0.025;  // seconds
  double frame_step = 0.010;   // seconds
  int n_mels = 40;
  int fft_size = 512;

  int frame_samples(int sample_rate) const {
    return static_cast<int>(std::lround(frame_width * sample_rate));
  }
  int step_samples(int sample_rate) const {
    return static_cast<int>(std::lround(frame_step * sample_rate));
  }
};

struct SourceId {
  std::string speaker_id;
  std::string utterance_id;
  int segment_index = 0;
};

/// T x n_mels log-mel energies for one segment.
struct FeatureMatrix {
  Mat data;  // rows = frames
  SourceId source_id;

  Eigen::Index frames() const { return data.rows(); }
};

struct PartialUtterance {
  FeatureMatrix features;
  bool min_frames_satisfied = true;
};

/// Minimum frame count for a usable interval: strictly more than 180
/// frames, i.e. at least 1.8 s of speech at 25 ms / 10 ms framing.
constexpr int kMinIntervalFrames = 180;

constexpr double kTargetRms = 0.1;
constexpr double kLogFloorEps = 1e-6;

using SampleInterval = std::pair<std::size_t, std::size_t>;  // [start, end)

// ---------------------------------------------------------------------------
// Volume normalization

inline Waveform normalize_volume(const Waveform& w, double target_rms = kTargetRms) {
  if (w.samples.empty())
    throw Error(ErrorKind::SilentInput, "empty waveform");
  double sumsq = 0.0;
  for (double s : w.samples) {
    if (!std::isfinite(s))
      throw Error(ErrorKind::NumericalError, "non-finite sample");
    sumsq += s * s;
  }
  const double rms = std::sqrt(sumsq / static_cast<double>(w.samples.size()));
  if (rms == 0.0)
    throw Error(ErrorKind::SilentInput, "all-zero waveform");
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.resize(w.samples.size());
  const double gain = target_rms / rms;
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    out.samples[i] = w.samples[i] * gain;
  return out;
}

// ---------------------------------------------------------------------------
// Voice activity detection
//
// Frame-energy VAD: 30 ms analysis windows on a fine hop, a window is speech
// if its dB level is within prune_threshold_db of the utterance's 95th
// percentile window level. Speech runs separated by less than
// max_silence_length are merged; merged intervals are re-checked against the
// prune threshold on their mean level.

inline std::vector<SampleInterval> detect_voice_intervals(const Waveform& w,
                                                          const VadConfig& cfg) {
  if (w.samples.empty()) return {};
  const auto win = static_cast<std::size_t>(
      std::lround(cfg.window_length * w.sample_rate));
  if (win == 0 || w.samples.size() < win) return {};
  const std::size_t hop = std::max<std::size_t>(1, win / 10);

  const std::size_t n_win = (w.samples.size() - win) / hop + 1;
  std::vector<double> level_db(n_win);
  for (std::size_t k = 0; k < n_win; ++k) {
    double e = 0.0;
    for (std::size_t i = k * hop; i < k * hop + win; ++i)
      e += w.samples[i] * w.samples[i];
    level_db[k] = 10.0 * std::log10(e / static_cast<double>(win) + 1e-30);
  }

  std::vector<double> sorted = level_db;
  std::sort(sorted.begin(), sorted.end());
  const double ref =
      sorted[static_cast<std::size_t>(0.95 * static_cast<double>(sorted.size() - 1))];
  // Absolute floor keeps digital silence from counting as speech when the
  // whole utterance is quiet.
  const double threshold = std::max(ref - cfg.prune_threshold_db, -80.0);

  // Speech runs over window indices; a run [k1, k2] covers samples
  // [k1*hop, k2*hop + win).
  std::vector<SampleInterval> runs;
  std::size_t run_start = 0;
  bool in_run = false;
  for (std::size_t k = 0; k < n_win; ++k) {
    const bool speech = level_db[k] > threshold;
    if (speech && !in_run) {
      in_run = true;
      run_start = k;
    } else if (!speech && in_run) {
      in_run = false;
      runs.emplace_back(run_start * hop, (k - 1) * hop + win);
    }
  }
  if (in_run) runs.emplace_back(run_start * hop, (n_win - 1) * hop + win);

  // Bridge short silences.
  const auto max_gap = static_cast<std::size_t>(
      std::lround(cfg.max_silence_length * w.sample_rate));
  std::vector<SampleInterval> merged;
  for (const auto& r : runs) {
    if (!merged.empty() && r.first <= merged.back().second + max_gap)
      merged.back().second = std::max(merged.back().second, r.second);
    else
      merged.push_back(r);
  }

  // Prune intervals whose mean level stays below the threshold.
  std::vector<SampleInterval> out;
  for (const auto& iv : merged) {
    double e = 0.0;
    for (std::size_t i = iv.first; i < iv.second; ++i)
      e += w.samples[i] * w.samples[i];
    const double mean_db =
        10.0 * std::log10(e / static_cast<double>(iv.second - iv.first) + 1e-30);
    if (mean_db > threshold) out.push_back(iv);
  }
  return out;
}

// ---------------------------------------------------------------------------
// STFT + mel filterbank

namespace detail {

/// In-place iterative radix-2 FFT. n must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

/// Triangular mel filterbank, n_mels x (fft_size/2 + 1), 0 Hz to Nyquist,
/// area-unnormalized.
inline Mat mel_filterbank(int n_mels, int fft_size, int sample_rate) {
  const int n_bins = fft_size / 2 + 1;
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> centers(static_cast<std::size_t>(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i)
    centers[static_cast<std::size_t>(i)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));

  Mat bank = Mat::Zero(n_mels, n_bins);
  for (int m = 0; m < n_mels; ++m) {
    const double f0 = centers[static_cast<std::size_t>(m)];
    const double f1 = centers[static_cast<std::size_t>(m) + 1];
    const double f2 = centers[static_cast<std::size_t>(m) + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double fk = static_cast<double>(k) * sample_rate / fft_size;
      if (fk > f0 && fk < f1)
        bank(m, k) = (fk - f0) / (f1 - f0);
      else if (fk >= f1 && fk < f2)
        bank(m, k) = (f2 - fk) / (f2 - f1);
    }
  }
  return bank;
}

inline std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    w[static_cast<std::size_t>(i)] =
        0.5 - 0.5 * std::cos(2.0 * kPi * i / (n - 1));
  return w;
}

}  // namespace detail

inline Eigen::Index frame_count(std::size_t interval_samples, int frame_samples,
                                int step_samples) {
  if (interval_samples < static_cast<std::size_t>(frame_samples)) return 0;
  return static_cast<Eigen::Index>(
      (interval_samples - static_cast<std::size_t>(frame_samples)) /
          static_cast<std::size_t>(step_samples) +
      1);
}

/// Log-mel features for a sample interval: Hann-windowed STFT, magnitude
/// squared, mel projection, log with a small floor.
inline FeatureMatrix extract_log_mel(const Waveform& w, SampleInterval interval,
                                     const FrameSpec& spec) {
  if (interval.second > w.samples.size() || interval.first >= interval.second)
    throw Error(ErrorKind::ShapeError, "interval outside waveform");
  const int fw = spec.frame_samples(w.sample_rate);
  const int fs = spec.step_samples(w.sample_rate);
  if (spec.fft_size < fw)
    throw Error(ErrorKind::ShapeError, "fft_size smaller than frame");
  const std::size_t len = interval.second - interval.first;
  const Eigen::Index n_frames = frame_count(len, fw, fs);
  if (n_frames < 1)
    throw Error(ErrorKind::TooShort, "interval shorter than one frame");

  const auto window = detail::hann_window(fw);
  const Mat bank = detail::mel_filterbank(spec.n_mels, spec.fft_size, w.sample_rate);
  const int n_bins = spec.fft_size / 2 + 1;

  FeatureMatrix fm;
  fm.data.resize(n_frames, spec.n_mels);
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(spec.fft_size));
  Vec power(n_bins);
  for (Eigen::Index t = 0; t < n_frames; ++t) {
    const std::size_t off = interval.first + static_cast<std::size_t>(t) *
                                                 static_cast<std::size_t>(fs);
    for (int i = 0; i < fw; ++i)
      buf[static_cast<std::size_t>(i)] = {
          w.samples[off + static_cast<std::size_t>(i)] *
              window[static_cast<std::size_t>(i)],
          0.0};
    for (int i = fw; i < spec.fft_size; ++i)
      buf[static_cast<std::size_t>(i)] = {0.0, 0.0};
    detail::fft_radix2(buf);
    for (int k = 0; k < n_bins; ++k)
      power(k) = std::norm(buf[static_cast<std::size_t>(k)]);
    fm.data.row(t) =
        ((bank * power).array() + kLogFloorEps).log().matrix().transpose();
  }
  return fm;
}

// ---------------------------------------------------------------------------
// Full per-utterance pipelines

/// Training path: one FeatureMatrix per voice interval longer than 180 frames.
inline std::vector<PartialUtterance> preprocess_training_utterance(
    const Waveform& w, const VadConfig& vad, const FrameSpec& spec) {
  const Waveform norm = normalize_volume(w);
  const auto intervals = detect_voice_intervals(norm, vad);
  const int fw = spec.frame_samples(norm.sample_rate);
  const int fs = spec.step_samples(norm.sample_rate);

  std::vector<PartialUtterance> out;
  int seg = 0;
  for (const auto& iv : intervals) {
    if (frame_count(iv.second - iv.first, fw, fs) <= kMinIntervalFrames) continue;
    PartialUtterance pu;
    pu.features = extract_log_mel(norm, iv, spec);
    pu.features.source_id.segment_index = seg++;
    pu.min_frames_satisfied = true;
    out.push_back(std::move(pu));
  }
  return out;
}

/// Enrollment/evaluation path: surviving intervals are concatenated in the
/// waveform domain, then featurized as one segment.
inline FeatureMatrix preprocess_eval_utterance(const Waveform& w,
                                               const VadConfig& vad,
                                               const FrameSpec& spec) {
  const Waveform norm = normalize_volume(w);
  const auto intervals = detect_voice_intervals(norm, vad);
  const int fw = spec.frame_samples(norm.sample_rate);
  const int fs = spec.step_samples(norm.sample_rate);

  Waveform cat;
  cat.sample_rate = norm.sample_rate;
  for (const auto& iv : intervals) {
    if (frame_count(iv.second - iv.first, fw, fs) <= kMinIntervalFrames) continue;
    cat.samples.insert(cat.samples.end(), norm.samples.begin() + static_cast<std::ptrdiff_t>(iv.first),
                       norm.samples.begin() + static_cast<std::ptrdiff_t>(iv.second));
  }
  if (cat.samples.empty())
    throw Error(ErrorKind::NoSpeech, "no voice interval longer than 180 frames");
  return extract_log_mel(cat, {0, cat.samples.size()}, spec);
}

}  // namespace ge2e
