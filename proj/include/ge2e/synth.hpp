#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "ge2e/common.hpp"
#include "ge2e/io.hpp"
#include "ge2e/wav.hpp"

namespace ge2e {

/// Deterministic synthetic-speaker corpus. Each speaker is a harmonic stack
/// of 3-5 slowly amplitude-modulated sinusoids; utterances jitter the phase
/// and amplitudes, add white noise, and include genuine silence gaps so the
/// VAD has intervals to find and prune.
struct SynthSpec {
  int n_speakers = 8;
  int utterances_per_speaker = 20;
  double duration_min = 3.0;  // seconds
  double duration_max = 6.0;
  double noise_level = 0.01;
  std::uint64_t seed = 1;
  int sample_rate = 16000;
  std::string speaker_prefix = "spk";
  std::string split = "train";
};

struct SpeakerSignature {
  std::vector<double> frequencies;
  std::vector<double> amplitudes;
  std::vector<double> modulation_rates;
};

inline SpeakerSignature synth_signature(const SynthSpec& spec, int speaker) {
  Rng rng = Rng::derive(spec.seed, 0x51000000ULL + static_cast<std::uint64_t>(speaker));
  SpeakerSignature sig;
  const int n_tones = static_cast<int>(rng.uniform_int(3, 5));
  for (int k = 0; k < n_tones; ++k) {
    sig.frequencies.push_back(rng.uniform(250.0, 3400.0));
    sig.amplitudes.push_back(rng.uniform(0.4, 1.0));
    sig.modulation_rates.push_back(rng.uniform(0.5, 4.0));
  }
  return sig;
}

/// One utterance: [silence | voiced | (gap | voiced) | silence].
inline Waveform synth_utterance(const SynthSpec& spec, const SpeakerSignature& sig,
                                int speaker, int utterance) {
  Rng rng = Rng::derive(spec.seed, 0x07000000ULL +
                                       static_cast<std::uint64_t>(speaker) * 100000ULL +
                                       static_cast<std::uint64_t>(utterance));
  const double duration = rng.uniform(spec.duration_min, spec.duration_max);
  const int sr = spec.sample_rate;
  const auto n = static_cast<std::size_t>(std::lround(duration * sr));

  const double lead = rng.uniform(0.15, 0.3);
  const double tail = rng.uniform(0.15, 0.3);
  // A mid-utterance gap when there is room for two >= 1.9 s voiced segments.
  const bool split_voiced = duration - lead - tail > 4.2;
  const double gap_start = split_voiced ? lead + (duration - lead - tail) / 2 : 0.0;
  const double gap_len = split_voiced ? rng.uniform(0.2, 0.35) : 0.0;

  std::vector<double> phase(sig.frequencies.size());
  std::vector<double> mod_phase(sig.frequencies.size());
  std::vector<double> amp(sig.frequencies.size());
  for (std::size_t k = 0; k < sig.frequencies.size(); ++k) {
    phase[k] = rng.uniform(0.0, 2.0 * kPi);
    mod_phase[k] = rng.uniform(0.0, 2.0 * kPi);
    amp[k] = sig.amplitudes[k] * rng.uniform(0.8, 1.2);
  }

  Waveform w;
  w.sample_rate = sr;
  w.samples.resize(n);
  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    const bool voiced = t >= lead && t < duration - tail &&
                        !(split_voiced && t >= gap_start && t < gap_start + gap_len);
    double s = 0.0;
    if (voiced)
      for (std::size_t k = 0; k < sig.frequencies.size(); ++k)
        s += amp[k] * (1.0 + 0.3 * std::sin(2.0 * kPi * sig.modulation_rates[k] * t +
                                            mod_phase[k])) *
             std::sin(2.0 * kPi * sig.frequencies[k] * t + phase[k]);
    w.samples[i] = s;
    peak = std::max(peak, std::abs(s));
  }
  if (peak > 0.0)
    for (auto& s : w.samples) s *= 0.6 / peak;
  if (spec.noise_level > 0.0)
    for (auto& s : w.samples) s += spec.noise_level * rng.normal();
  return w;
}

/// Writes the WAV set plus a manifest into out_dir. Fully determined by
/// (spec, seed); the manifest lands at out_dir/manifest.tsv.
inline Manifest generate_synthetic_corpus(const SynthSpec& spec,
                                          const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  Manifest manifest;
  for (int s = 0; s < spec.n_speakers; ++s) {
    const SpeakerSignature sig = synth_signature(spec, s);
    const std::string speaker_id = spec.speaker_prefix + std::to_string(s);
    for (int u = 0; u < spec.utterances_per_speaker; ++u) {
      const Waveform w = synth_utterance(spec, sig, s, u);
      ManifestEntry e;
      e.speaker_id = speaker_id;
      e.utterance_id = "utt" + std::to_string(u);
      e.path = out_dir + "/" + speaker_id + "_utt" + std::to_string(u) + ".wav";
      e.duration_seconds = w.duration_seconds();
      e.split = spec.split;
      write_wav(e.path, w);
      manifest.entries.push_back(std::move(e));
    }
  }
  write_manifest(out_dir + "/manifest.tsv", manifest);
  return manifest;
}

}  // namespace ge2e
