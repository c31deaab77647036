#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ge2e/common.hpp"
#include "ge2e/io.hpp"
#include "ge2e/loss.hpp"
#include "ge2e/net.hpp"

namespace ge2e {

struct BatchSpec {
  int n_speakers = 16;
  int m_utterances = 5;
  int frame_min = 140;
  int frame_max = 180;
};

struct TrainBatch {
  std::vector<Mat> segments;  // N*M entries, each t x input_dim
  int n_speakers = 0;
  int m_utterances = 0;
  int frame_count = 0;
  // speaker_layout[s] is the corpus speaker index behind rows
  // [s*M, (s+1)*M) of the batch.
  std::vector<int> speaker_layout;
};

struct SpeakerUtterances {
  std::string speaker_id;
  std::vector<FeatureMatrix> partials;
};

using TrainCorpus = std::vector<SpeakerUtterances>;

/// N random speakers, M random partial utterances each, one random
/// contiguous t-frame slice per utterance; t uniform on [frame_min, frame_max].
inline TrainBatch build_batch(const TrainCorpus& corpus, const BatchSpec& spec,
                              Rng& rng) {
  const int N = spec.n_speakers;
  const int M = spec.m_utterances;
  if (static_cast<int>(corpus.size()) < N)
    throw Error(ErrorKind::CorpusTooSmall,
                "need " + std::to_string(N) + " speakers, corpus has " +
                    std::to_string(corpus.size()));

  TrainBatch batch;
  batch.n_speakers = N;
  batch.m_utterances = M;
  batch.frame_count = static_cast<int>(rng.uniform_int(spec.frame_min, spec.frame_max));
  const int t = batch.frame_count;

  // Speakers without replacement.
  std::vector<int> speaker_ids(corpus.size());
  for (std::size_t s = 0; s < corpus.size(); ++s) speaker_ids[s] = static_cast<int>(s);
  rng.shuffle(speaker_ids);
  speaker_ids.resize(static_cast<std::size_t>(N));

  for (int s : speaker_ids) {
    const auto& partials = corpus[static_cast<std::size_t>(s)].partials;
    std::vector<int> usable;
    for (std::size_t u = 0; u < partials.size(); ++u)
      if (partials[u].data.rows() >= t) usable.push_back(static_cast<int>(u));
    if (usable.empty())
      throw Error(ErrorKind::CorpusTooSmall,
                  "speaker " + corpus[static_cast<std::size_t>(s)].speaker_id +
                      " has no partial utterance of " + std::to_string(t) + " frames");
    // Utterances without replacement when possible, with replacement below M.
    std::vector<int> chosen;
    if (static_cast<int>(usable.size()) >= M) {
      rng.shuffle(usable);
      chosen.assign(usable.begin(), usable.begin() + M);
    } else {
      for (int i = 0; i < M; ++i)
        chosen.push_back(usable[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(usable.size()) - 1))]);
    }
    for (int u : chosen) {
      const Mat& full = partials[static_cast<std::size_t>(u)].data;
      const auto max_off = full.rows() - t;
      const auto off = static_cast<Eigen::Index>(rng.uniform_int(0, max_off));
      batch.segments.push_back(full.middleRows(off, t));
    }
    batch.speaker_layout.push_back(s);
  }
  return batch;
}

/// Global L2-norm gradient clipping across all network tensors.
/// Returns the pre-clip norm.
inline double clip_gradients(NetworkParams& grads, double clip_norm = 3.0) {
  double sumsq = 0.0;
  grads.for_each_tensor([&](const auto& t) {
    if (!t.allFinite())
      throw Error(ErrorKind::NumericalError, "non-finite gradient");
    sumsq += t.squaredNorm();
  });
  const double norm = std::sqrt(sumsq);
  if (norm > clip_norm) {
    const double scale = clip_norm / norm;
    grads.for_each_tensor([&](auto& t) { t *= scale; });
  }
  return norm;
}

struct OptimizerState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 3.0;
  std::int64_t step = 0;
  NetworkParams m;  // first moments
  NetworkParams v;  // second moments
  double m_w = 0.0, v_w = 0.0;
  double m_b = 0.0, v_b = 0.0;

  static OptimizerState init(const NetConfig& cfg, double lr = 1e-4) {
    OptimizerState s;
    s.learning_rate = lr;
    s.m = NetworkParams::zeros_like(cfg);
    s.v = NetworkParams::zeros_like(cfg);
    return s;
  }
};

/// One bias-corrected Adam update on the network parameters and (w, b),
/// followed by the w clamp.
inline void adam_step(NetworkParams& params, LossScale& scale,
                      const NetworkParams& grads, double grad_w, double grad_b,
                      OptimizerState& state) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const double lr = state.learning_rate;

  auto update = [&](auto& theta, auto& m, auto& v, const auto& g) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = (state.beta2 * v.array() + (1.0 - state.beta2) * g.array().square()).matrix();
    theta.array() -=
        lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + state.epsilon);
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    if (grads.layers[l].w_input.rows() != params.layers[l].w_input.rows() ||
        grads.layers[l].w_input.cols() != params.layers[l].w_input.cols())
      throw Error(ErrorKind::ShapeError, "gradient/parameter shape mismatch");
    update(params.layers[l].w_input, state.m.layers[l].w_input,
           state.v.layers[l].w_input, grads.layers[l].w_input);
    update(params.layers[l].w_recur, state.m.layers[l].w_recur,
           state.v.layers[l].w_recur, grads.layers[l].w_recur);
    update(params.layers[l].bias_input, state.m.layers[l].bias_input,
           state.v.layers[l].bias_input, grads.layers[l].bias_input);
    update(params.layers[l].bias_recur, state.m.layers[l].bias_recur,
           state.v.layers[l].bias_recur, grads.layers[l].bias_recur);
  }
  update(params.proj_weight, state.m.proj_weight, state.v.proj_weight,
         grads.proj_weight);
  update(params.proj_bias, state.m.proj_bias, state.v.proj_bias, grads.proj_bias);

  auto update_scalar = [&](double& theta, double& m, double& v, double g) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    theta -= lr * (m / bc1) / (std::sqrt(v / bc2) + state.epsilon);
  };
  update_scalar(scale.w, state.m_w, state.v_w, grad_w);
  update_scalar(scale.b, state.m_b, state.v_b, grad_b);
  scale = clamp_scale(scale);
}

struct BatchGradients {
  double loss = 0.0;
  NetworkParams net_grads;
  double grad_w = 0.0;
  double grad_b = 0.0;
};

/// End-to-end loss and gradients for one batch: batched LSTM forward,
/// L2 normalization, GE2E loss, then BPTT with the normalization Jacobian
/// applied between the two.
inline BatchGradients batch_loss_and_grads(const NetworkParams& params,
                                           const LossScale& scale,
                                           const TrainBatch& batch,
                                           Reduction reduction) {
  std::vector<const Mat*> features;
  features.reserve(batch.segments.size());
  for (const auto& s : batch.segments) features.push_back(&s);

  BatchTape tape;
  const Mat raw = forward_batch(params, features, tape);

  EmbeddingBatch eb;
  eb.n_speakers = batch.n_speakers;
  eb.m_utterances = batch.m_utterances;
  eb.embeddings.resize(raw.rows(), raw.cols());
  Vec norms(raw.cols());
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    norms(c) = raw.col(c).norm();
    if (norms(c) == 0.0)
      throw Error(ErrorKind::DegenerateEmbedding, "zero-norm network output");
    eb.embeddings.col(c) = raw.col(c) / norms(c);
  }

  const LossResult lr = total_loss(eb, scale, reduction);

  // d(loss)/d(raw) through e = raw/|raw|.
  Mat grad_raw(raw.rows(), raw.cols());
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    const Vec e = eb.embeddings.col(c);
    const Vec g = lr.grad_embeddings.col(c);
    grad_raw.col(c) = (g - e * e.dot(g)) / norms(c);
  }

  BatchGradients out;
  out.loss = lr.loss;
  out.net_grads = backward_batch(params, tape, grad_raw);
  out.grad_w = lr.grad_w;
  out.grad_b = lr.grad_b;
  return out;
}

struct TrainConfig {
  std::uint64_t seed = 1;
  int epochs = 1;
  int batches_per_epoch = 0;  // 0: derived as ceil(#partials / (N*M))
  int checkpoint_interval = 1;  // epochs between checkpoints
  Reduction reduction = Reduction::Mean;
  double learning_rate = 1e-4;
  BatchSpec batch;
};

struct StepMetrics {
  std::int64_t step;
  double loss;
  double grad_norm;
  double w;
  double b;
  int t;
};

struct TrainResult {
  NetworkParams params;
  LossScale scale;
  std::vector<StepMetrics> metrics;
};

/// Full training loop: per-step batch build, loss/gradient, clip, Adam,
/// clamp. Writes epoch checkpoints and a metrics CSV when out_dir is
/// non-empty.
inline TrainResult train(const TrainCorpus& corpus, const NetConfig& net_cfg,
                         const TrainConfig& cfg, const std::string& out_dir = "") {
  TrainResult res;
  res.params = init_params(net_cfg, cfg.seed);
  res.scale = LossScale{10.0, -5.0};
  OptimizerState state = OptimizerState::init(net_cfg, cfg.learning_rate);
  Rng rng(cfg.seed ^ 0x5eedb00cULL);

  std::size_t total_partials = 0;
  for (const auto& s : corpus) total_partials += s.partials.size();
  const int per_epoch =
      cfg.batches_per_epoch > 0
          ? cfg.batches_per_epoch
          : static_cast<int>((total_partials + static_cast<std::size_t>(cfg.batch.n_speakers) *
                                                   static_cast<std::size_t>(cfg.batch.m_utterances) -
                              1) /
                             (static_cast<std::size_t>(cfg.batch.n_speakers) *
                              static_cast<std::size_t>(cfg.batch.m_utterances)));

  std::ofstream metrics_csv;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    metrics_csv.open(out_dir + "/metrics.csv");
    metrics_csv << "step,loss,grad_norm,w,b,t\n";
  }
  auto save_checkpoint = [&](const std::string& name) {
    if (out_dir.empty()) return;
    Checkpoint ckpt;
    ckpt.params = res.params;
    ckpt.scale_w = res.scale.w;
    ckpt.scale_b = res.scale.b;
    write_checkpoint(out_dir + "/" + name, ckpt);
  };

  if (cfg.epochs == 0) save_checkpoint("checkpoint_final.ge2e");
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int b = 0; b < per_epoch; ++b) {
      const TrainBatch batch = build_batch(corpus, cfg.batch, rng);
      BatchGradients bg =
          batch_loss_and_grads(res.params, res.scale, batch, cfg.reduction);
      const double grad_norm = clip_gradients(bg.net_grads, state.clip_norm);
      adam_step(res.params, res.scale, bg.net_grads, bg.grad_w, bg.grad_b, state);

      const StepMetrics sm{state.step, bg.loss, grad_norm, res.scale.w,
                           res.scale.b, batch.frame_count};
      res.metrics.push_back(sm);
      if (metrics_csv.is_open())
        metrics_csv << sm.step << ',' << sm.loss << ',' << sm.grad_norm << ','
                    << sm.w << ',' << sm.b << ',' << sm.t << '\n';
    }
    if (cfg.checkpoint_interval > 0 && (epoch + 1) % cfg.checkpoint_interval == 0)
      save_checkpoint("checkpoint_epoch" + std::to_string(epoch + 1) + ".ge2e");
    if (epoch + 1 == cfg.epochs) save_checkpoint("checkpoint_final.ge2e");
  }
  return res;
}

}  // namespace ge2e
