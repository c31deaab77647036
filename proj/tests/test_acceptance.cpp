// Acceptance suite: one test per acceptance criterion, each printing a single
// PASS/FAIL summary line in addition to the usual assertions.

#include <gtest/gtest.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>

#include "ge2e/ge2e.hpp"
#include "oracles.hpp"

using namespace ge2e;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

void report(int criterion, bool ok, const std::string& detail) {
  std::printf("[criterion %d] %s — %s\n", criterion, ok ? "PASS" : "FAIL",
              detail.c_str());
  std::fflush(stdout);
  EXPECT_TRUE(ok) << "criterion " << criterion << ": " << detail;
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), pattern, a, b, c);
  return buf;
}

// ---------------------------------------------------------------------------
// Shared desk-scale artifacts (criteria 5 and 6): synthetic corpus, a small
// trained model, and the evaluation d-vector store. Built once on first use.

struct DeskScale {
  double initial_loss = 0.0;
  double final_loss = 0.0;   // mean of the last 5 steps
  double eer_m3 = 0.0;       // mean EER at M=3 over 100 iterations
  double train_seconds = 0.0;
  double total_seconds = 0.0;
  DVectorStore eval_store;   // 8 speakers x 32 utterances
};

const DeskScale& desk_scale() {
  static const DeskScale ds = [] {
    DeskScale out;
    const auto t0 = Clock::now();
    const fs::path dir = fs::temp_directory_path() / "ge2e_acceptance_corpus";
    fs::remove_all(dir);

    SynthSpec train_spec;
    train_spec.n_speakers = 16;
    train_spec.utterances_per_speaker = 20;
    train_spec.seed = 1001;
    train_spec.speaker_prefix = "train_spk";
    const Manifest train_manifest =
        generate_synthetic_corpus(train_spec, (dir / "train").string());

    SynthSpec eval_spec = train_spec;
    eval_spec.n_speakers = 8;
    eval_spec.utterances_per_speaker = 32;  // supports the M=15 sweep (2M=30)
    eval_spec.seed = 2002;
    eval_spec.speaker_prefix = "eval_spk";
    eval_spec.split = "test";
    const Manifest eval_manifest =
        generate_synthetic_corpus(eval_spec, (dir / "eval").string());

    TrainCorpus corpus;
    std::map<std::string, std::size_t> index;
    for (const auto& e : train_manifest.entries) {
      const Waveform w = read_wav(e.path);
      auto parts = preprocess_training_utterance(w, VadConfig{}, FrameSpec{});
      auto [it, fresh] = index.emplace(e.speaker_id, corpus.size());
      if (fresh) corpus.push_back({e.speaker_id, {}});
      for (auto& p : parts)
        corpus[it->second].partials.push_back(std::move(p.features));
    }

    NetConfig cfg;
    cfg.input_dim = 40;
    cfg.hidden_dim = 64;
    cfg.num_layers = 3;
    cfg.embedding_dim = 32;
    TrainConfig tc;
    tc.seed = 7;
    tc.epochs = 1;
    tc.batches_per_epoch = 60;  // well under the 2000-step ceiling
    tc.learning_rate = 1e-3;
    tc.batch.n_speakers = 8;
    tc.batch.m_utterances = 4;
    const auto t1 = Clock::now();
    const TrainResult res = train(corpus, cfg, tc);
    const auto t2 = Clock::now();
    out.train_seconds = std::chrono::duration<double>(t2 - t1).count();
    out.initial_loss = res.metrics.front().loss;
    for (std::size_t i = res.metrics.size() - 5; i < res.metrics.size(); ++i)
      out.final_loss += res.metrics[i].loss / 5.0;

    out.eval_store.dim = cfg.embedding_dim;
    for (const auto& e : eval_manifest.entries) {
      const Waveform w = read_wav(e.path);
      const FeatureMatrix fm = preprocess_eval_utterance(w, VadConfig{}, FrameSpec{});
      const DVector d = utterance_dvector(res.params, fm);
      DVectorRecord rec;
      rec.speaker_id = e.speaker_id;
      rec.utterance_id = e.utterance_id;
      rec.duration_seconds = e.duration_seconds;
      rec.vector = d.vector;
      out.eval_store.records.push_back(std::move(rec));
    }
    out.eer_m3 = run_m_sweep(out.eval_store, {3}, 100, 99).at(3);
    out.total_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    fs::remove_all(dir);
    return out;
  }();
  return ds;
}

}  // namespace

TEST(Acceptance, Criterion1ParameterCount) {
  const NetworkParams p = init_params(NetConfig{}, 1);
  const bool ok = p.param_count() == 12134656;
  report(1, ok, "paper configuration has " + std::to_string(p.param_count()) +
                    " trainable parameters (expected 12134656)");
}

TEST(Acceptance, Criterion2GradientCorrectness) {
  const auto t0 = Clock::now();
  std::size_t total = 0, tight = 0;
  double worst = 0.0;
  for (int config = 0; config < 20; ++config) {
    Rng rng(static_cast<std::uint64_t>(config) + 500);
    NetConfig cfg;
    cfg.input_dim = static_cast<int>(rng.uniform_int(2, 8));
    cfg.hidden_dim = static_cast<int>(rng.uniform_int(2, 8));
    cfg.num_layers = static_cast<int>(rng.uniform_int(1, 3));
    cfg.embedding_dim = static_cast<int>(rng.uniform_int(2, 8));
    NetworkParams params = init_params(cfg, rng.uniform_int(1, 1u << 20));

    TrainBatch batch;
    batch.n_speakers = 3;
    batch.m_utterances = 3;
    batch.frame_count = static_cast<int>(rng.uniform_int(2, 6));
    for (int i = 0; i < 9; ++i) {
      Mat seg(batch.frame_count, cfg.input_dim);
      for (Eigen::Index t = 0; t < seg.rows(); ++t)
        for (Eigen::Index d = 0; d < seg.cols(); ++d) seg(t, d) = rng.normal();
      batch.segments.push_back(std::move(seg));
    }
    LossScale scale{10.0, -5.0};
    const Reduction red = config % 2 ? Reduction::Sum : Reduction::Mean;
    const BatchGradients bg = batch_loss_and_grads(params, scale, batch, red);
    auto loss = [&]() {
      return batch_loss_and_grads(params, scale, batch, red).loss;
    };
    auto coords = oracle::flatten(params, bg.net_grads);
    coords.emplace_back(&scale.w, bg.grad_w);
    coords.emplace_back(&scale.b, bg.grad_b);
    const auto stats = oracle::check_gradients(loss, coords, 1e-5, 1e-4, 1e-3);
    total += stats.total;
    tight += stats.within_tight;
    worst = std::max(worst, stats.worst);
  }
  const double frac = static_cast<double>(tight) / static_cast<double>(total);
  const double elapsed = std::chrono::duration<double>(Clock::now() - t0).count();
  const bool ok = frac >= 0.99 && elapsed < 120.0;
  report(2, ok,
         fmt("%.4f%% of %.0f coordinates within 1e-4 of central differences "
             "across 20 random configurations",
             100.0 * frac, static_cast<double>(total)) +
             fmt(" (worst rel err %.2e, %.1f s)", worst, elapsed));
}

TEST(Acceptance, Criterion3LossOracleEquivalence) {
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(static_cast<std::uint64_t>(trial) + 900);
    EmbeddingBatch batch;
    batch.n_speakers = static_cast<int>(rng.uniform_int(2, 6));
    batch.m_utterances = static_cast<int>(rng.uniform_int(2, 6));
    const int dim = static_cast<int>(rng.uniform_int(2, 12));
    batch.embeddings.resize(dim, batch.n_speakers * batch.m_utterances);
    for (Eigen::Index c = 0; c < batch.embeddings.cols(); ++c) {
      for (int d = 0; d < dim; ++d) batch.embeddings(d, c) = rng.normal();
      batch.embeddings.col(c).normalize();
    }
    const LossScale scale{rng.uniform(0.5, 12.0), rng.uniform(-6.0, 2.0)};
    for (const Reduction red : {Reduction::Sum, Reduction::Mean}) {
      const double got = total_loss(batch, scale, red).loss;
      const double want =
          oracle::ge2e_loss(batch, scale.w, scale.b, red == Reduction::Mean);
      worst = std::max(worst, std::abs(got - want));
    }
  }

  // Orthogonal batch closed form: N=2, M=2, w=1, b=0.
  EmbeddingBatch ortho;
  ortho.n_speakers = 2;
  ortho.m_utterances = 2;
  // Each speaker's two embeddings coincide; the speaker axes are orthogonal,
  // so diagonal similarities are 1 and cross-speaker similarities 0.
  ortho.embeddings = Mat::Zero(2, 4);
  ortho.embeddings(0, 0) = ortho.embeddings(0, 1) = 1.0;  // speaker 0
  ortho.embeddings(1, 2) = ortho.embeddings(1, 3) = 1.0;  // speaker 1
  const double sum_loss = total_loss(ortho, LossScale{1.0, 0.0}, Reduction::Sum).loss;
  const double closed_form = 4.0 * (-1.0 + std::log(std::exp(1.0) + 1.0));
  const bool closed_ok = std::abs(sum_loss - closed_form) < 1e-12 &&
                         std::abs(sum_loss - 1.253049) < 1e-5;
  const bool ok = worst < 1e-10 && closed_ok;
  report(3, ok,
         fmt("100 random batches within %.2e of the double-loop oracle "
             "(both reductions); orthogonal closed form %.6f",
             worst, sum_loss));
}

TEST(Acceptance, Criterion4EerOracleEquivalence) {
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    Rng rng(static_cast<std::uint64_t>(trial) + 4000);
    TrialSet t;
    const int ng = static_cast<int>(rng.uniform_int(1, 30));
    const int ni = static_cast<int>(rng.uniform_int(1, 30));
    const double sep = rng.uniform(0.0, 2.5);
    for (int i = 0; i < ng; ++i) t.genuine.push_back(rng.normal() + sep);
    for (int i = 0; i < ni; ++i) t.impostor.push_back(rng.normal());
    worst = std::max(worst, std::abs(compute_error_curve(t).eer -
                                     oracle::eer(t.genuine, t.impostor)));
  }

  Rng rng(4);
  TrialSet null_case;
  for (int i = 0; i < 10000; ++i) {
    null_case.genuine.push_back(rng.normal());
    null_case.impostor.push_back(rng.normal());
  }
  const double null_eer = compute_error_curve(null_case).eer;
  const bool ok = worst < 1e-6 && std::abs(null_eer - 0.5) < 0.02;
  report(4, ok,
         fmt("1000 random trial sets within %.2e of the all-cuts oracle; "
             "null case EER %.4f",
             worst, null_eer));
}

TEST(Acceptance, Criterion5DeskScaleEndToEnd) {
  const DeskScale& ds = desk_scale();
  const double ratio = ds.final_loss / ds.initial_loss;
  const bool ok = ratio < 0.2 && ds.eer_m3 < 0.05 && ds.total_seconds < 600.0;
  report(5, ok,
         fmt("60 steps: loss %.4f -> %.4f (ratio %.3f, target < 0.2)",
             ds.initial_loss, ds.final_loss, ratio) +
             fmt("; eval EER at M=3 over 100 iterations %.4f (target < 0.05); "
                 "%.0f s total",
                 ds.eer_m3, ds.total_seconds));
}

TEST(Acceptance, Criterion6TrendReproduction) {
  const DeskScale& ds = desk_scale();

  std::vector<int> ms;
  for (int m = 2; m <= 15; ++m) ms.push_back(m);
  const auto sweep = run_m_sweep(ds.eval_store, ms, 20, 555);
  bool monotone = true;
  double worst_rise = 0.0;
  for (int m = 3; m <= 15; ++m) {
    const double rise = sweep.at(m) - sweep.at(m - 1);
    worst_rise = std::max(worst_rise, rise);
    if (rise > 0.005) monotone = false;  // within +/- 0.5 points
  }

  // Duration-split trend: degrade the short-utterance d-vectors with
  // embedding-space noise, mirroring reduced evidence per utterance.
  DVectorStore degraded = ds.eval_store;
  Rng noise_rng(777);
  for (auto& rec : degraded.records)
    if (rec.duration_seconds < 4.0)
      for (Eigen::Index d = 0; d < rec.vector.size(); ++d)
        rec.vector(d) += 0.45 * noise_rng.normal();
  const DurationSplitReport split = run_duration_split(degraded, 4.0, 3, 30, 666);

  const bool ok = monotone && split.eer_short > split.eer_long;
  report(6, ok,
         fmt("M-sweep 2..15 non-increasing within 0.5 points (worst rise "
             "%.4f); duration split short %.4f vs long %.4f",
             worst_rise, split.eer_short, split.eer_long));
}

TEST(Acceptance, Criterion7PipelineInvariants) {
  bool ok = true;
  std::string failures;
  auto require = [&](bool cond, const std::string& what) {
    if (!cond && failures.size() < 500) failures += " [" + what + "]";
    ok = ok && cond;
  };

  // Batch shape: N*M segments of a common length t in [140, 180].
  {
    Rng rng(7001);
    TrainCorpus corpus;
    for (int s = 0; s < 20; ++s) {
      SpeakerUtterances su;
      su.speaker_id = "s" + std::to_string(s);
      for (int u = 0; u < 4; ++u) {
        FeatureMatrix fm;
        fm.data = Mat::NullaryExpr(static_cast<Eigen::Index>(rng.uniform_int(181, 320)), 40,
                                   [&](Eigen::Index, Eigen::Index) { return rng.normal(); });
        su.partials.push_back(std::move(fm));
      }
      corpus.push_back(std::move(su));
    }
    std::set<int> seen_t;
    for (int i = 0; i < 100; ++i) {
      BatchSpec spec;
      spec.n_speakers = static_cast<int>(rng.uniform_int(2, 16));
      spec.m_utterances = static_cast<int>(rng.uniform_int(2, 4));
      const TrainBatch b = build_batch(corpus, spec, rng);
      require(static_cast<int>(b.segments.size()) ==
                  spec.n_speakers * spec.m_utterances,
              "batch segment count");
      require(b.frame_count >= 140 && b.frame_count <= 180, "batch length range");
      for (const auto& seg : b.segments)
        require(seg.rows() == b.frame_count && seg.cols() == 40, "segment shape");
      seen_t.insert(b.frame_count);
    }
    require(seen_t.size() > 10, "batch length spread");
  }

  // Gain invariance of the DSP frontend (volume normalization + log-mel).
  {
    Rng rng(7002);
    for (int i = 0; i < 100; ++i) {
      Waveform w;
      w.sample_rate = 16000;
      w.samples.resize(8000);
      for (auto& s : w.samples) s = 0.1 * rng.normal() *
                                     (0.5 + 0.5 * std::sin(static_cast<double>(i)));
      Waveform scaled = w;
      const double gain = std::exp(rng.uniform(-3.0, 3.0));
      for (auto& s : scaled.samples) s *= gain;
      const FeatureMatrix a =
          extract_log_mel(normalize_volume(w), {0, w.samples.size()}, FrameSpec{});
      const FeatureMatrix b = extract_log_mel(normalize_volume(scaled),
                                              {0, scaled.samples.size()}, FrameSpec{});
      require((a.data - b.data).cwiseAbs().maxCoeff() < 1e-6, "gain invariance");
    }
  }

  // w stays clamped at >= 1e-6 across adversarial optimizer steps.
  {
    NetConfig cfg;
    cfg.input_dim = 1;
    cfg.hidden_dim = 1;
    cfg.num_layers = 1;
    cfg.embedding_dim = 1;
    Rng rng(7003);
    NetworkParams params = NetworkParams::zeros_like(cfg);
    const NetworkParams zero = NetworkParams::zeros_like(cfg);
    LossScale scale{rng.uniform(1e-5, 0.1), 0.0};
    OptimizerState state = OptimizerState::init(cfg, 1e-2);
    for (int i = 0; i < 100; ++i) {
      adam_step(params, scale, zero, rng.uniform(-2.0, 5.0), rng.normal(), state);
      require(scale.w >= 1e-6, "w clamp");
    }
  }

  // Post-clip gradient norm never exceeds 3.
  {
    NetConfig cfg;
    cfg.input_dim = 3;
    cfg.hidden_dim = 4;
    cfg.num_layers = 1;
    cfg.embedding_dim = 2;
    Rng rng(7004);
    for (int i = 0; i < 100; ++i) {
      NetworkParams g = NetworkParams::zeros_like(cfg);
      const double s = std::exp(rng.uniform(-3.0, 4.0));
      g.for_each_tensor([&](auto& t) {
        for (Eigen::Index k = 0; k < t.size(); ++k) *(t.data() + k) = s * rng.normal();
      });
      clip_gradients(g, 3.0);
      double sq = 0.0;
      g.for_each_tensor([&](const auto& t) { sq += t.squaredNorm(); });
      require(std::sqrt(sq) <= 3.0 + 1e-9, "clip norm");
    }
  }

  // Window-count formula against direct enumeration.
  {
    Rng rng(7005);
    for (int i = 0; i < 100; ++i) {
      WindowSpec spec;
      spec.window_frames = static_cast<int>(rng.uniform_int(1, 200));
      spec.step_frames = static_cast<int>(rng.uniform_int(1, 120));
      const auto frames = static_cast<Eigen::Index>(rng.uniform_int(0, 600));
      Eigen::Index naive = 0;
      for (Eigen::Index start = 0; start + spec.window_frames <= frames;
           start += spec.step_frames)
        ++naive;
      require(window_count(frames, spec) == naive, "window count");
    }
  }

  // Persistence round-trips: feature matrices, d-vector stores, checkpoints.
  {
    const fs::path dir = fs::temp_directory_path() / "ge2e_acceptance_io";
    fs::remove_all(dir);
    fs::create_directories(dir);
    Rng rng(7006);
    for (int i = 0; i < 100; ++i) {
      FeatureMatrix fm;
      fm.data = Mat::NullaryExpr(
          static_cast<Eigen::Index>(rng.uniform_int(1, 12)),
          static_cast<Eigen::Index>(rng.uniform_int(1, 12)),
          [&](Eigen::Index, Eigen::Index) { return static_cast<float>(rng.normal()); });
      const std::string p = (dir / "m.fmx").string();
      write_feature_matrix(p, fm);
      const FeatureMatrix back = read_feature_matrix(p);
      require(back.data.rows() == fm.data.rows() &&
                  back.data.cols() == fm.data.cols() &&
                  (back.data - fm.data).cwiseAbs().maxCoeff() == 0.0,
              "feature matrix round-trip");
    }
    for (int i = 0; i < 100; ++i) {
      DVectorStore store;
      store.dim = static_cast<int>(rng.uniform_int(1, 8));
      const int n = static_cast<int>(rng.uniform_int(1, 6));
      for (int r = 0; r < n; ++r) {
        DVectorRecord rec;
        rec.speaker_id = "s" + std::to_string(r % 3);
        rec.utterance_id = "u" + std::to_string(r);
        rec.duration_seconds = rng.uniform(1.0, 9.0);
        rec.vector.resize(store.dim);
        for (int d = 0; d < store.dim; ++d)
          rec.vector(d) = static_cast<float>(rng.normal());
        store.records.push_back(std::move(rec));
      }
      const std::string p = (dir / "s.dvs").string();
      write_dvector_store(p, store);
      const DVectorStore back = read_dvector_store(p);
      bool same = back.records.size() == store.records.size();
      for (std::size_t r = 0; same && r < store.records.size(); ++r)
        same = back.records[r].speaker_id == store.records[r].speaker_id &&
               back.records[r].utterance_id == store.records[r].utterance_id &&
               back.records[r].duration_seconds == store.records[r].duration_seconds &&
               (back.records[r].vector - store.records[r].vector)
                       .cwiseAbs().maxCoeff() == 0.0;
      require(same, "d-vector store round-trip");
    }
    for (int i = 0; i < 100; ++i) {
      NetConfig cfg;
      cfg.input_dim = static_cast<int>(rng.uniform_int(1, 5));
      cfg.hidden_dim = static_cast<int>(rng.uniform_int(1, 5));
      cfg.num_layers = static_cast<int>(rng.uniform_int(1, 3));
      cfg.embedding_dim = static_cast<int>(rng.uniform_int(1, 5));
      Checkpoint ckpt;
      ckpt.params = init_params(cfg, rng.uniform_int(1, 1u << 20));
      ckpt.scale_w = rng.uniform(1e-6, 20.0);
      ckpt.scale_b = rng.uniform(-10.0, 5.0);
      const std::string p = (dir / "c.ge2e").string();
      write_checkpoint(p, ckpt);
      const Checkpoint back = read_checkpoint(p);
      bool same = back.scale_w == ckpt.scale_w && back.scale_b == ckpt.scale_b &&
                  back.params.cfg.num_layers == cfg.num_layers;
      for (std::size_t l = 0; same && l < ckpt.params.layers.size(); ++l)
        same = (back.params.layers[l].w_input - ckpt.params.layers[l].w_input)
                       .cwiseAbs().maxCoeff() == 0.0 &&
               (back.params.layers[l].w_recur - ckpt.params.layers[l].w_recur)
                       .cwiseAbs().maxCoeff() == 0.0 &&
               (back.params.layers[l].bias_input - ckpt.params.layers[l].bias_input)
                       .cwiseAbs().maxCoeff() == 0.0 &&
               (back.params.layers[l].bias_recur - ckpt.params.layers[l].bias_recur)
                       .cwiseAbs().maxCoeff() == 0.0;
      same = same &&
             (back.params.proj_weight - ckpt.params.proj_weight)
                     .cwiseAbs().maxCoeff() == 0.0 &&
             (back.params.proj_bias - ckpt.params.proj_bias)
                     .cwiseAbs().maxCoeff() == 0.0;
      require(same, "checkpoint round-trip");
    }
    fs::remove_all(dir);
  }

  report(7, ok,
         ok ? "batch shape, gain invariance, scale clamp, clip norm, window "
              "count, persistence round-trips: 100 randomized cases each"
            : "invariant failures:" + failures);
}
