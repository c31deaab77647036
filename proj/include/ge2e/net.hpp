#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ge2e/common.hpp"
#include "ge2e/dsp.hpp"

namespace ge2e {

struct NetConfig {
  int input_dim = 40;
  int hidden_dim = 768;
  int num_layers = 3;
  int embedding_dim = 256;
  bool dual_bias = true;
  // Multiplier on the projection-layer gradients; kept at 1.0 (a no-op)
  // but exposed as an explicit knob.
  double proj_grad_scale = 1.0;
};

/// One stacked LSTM layer: gate order (input, forget, cell, output), rows of
/// the 4h x * matrices grouped in that order. Two bias vectors per layer.
struct LstmLayerParams {
  Mat w_input;     // 4h x in
  Mat w_recur;     // 4h x h
  Vec bias_input;  // 4h
  Vec bias_recur;  // 4h
};

struct NetworkParams {
  NetConfig cfg;
  std::vector<LstmLayerParams> layers;
  Mat proj_weight;  // e x h
  Vec proj_bias;    // e

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& l : layers)
      n += l.w_input.size() + l.w_recur.size() + l.bias_input.size() +
           l.bias_recur.size();
    return n + proj_weight.size() + proj_bias.size();
  }

  static NetworkParams zeros_like(const NetConfig& cfg) {
    NetworkParams p;
    p.cfg = cfg;
    for (int l = 0; l < cfg.num_layers; ++l) {
      const int in = (l == 0) ? cfg.input_dim : cfg.hidden_dim;
      LstmLayerParams lp;
      lp.w_input = Mat::Zero(4 * cfg.hidden_dim, in);
      lp.w_recur = Mat::Zero(4 * cfg.hidden_dim, cfg.hidden_dim);
      lp.bias_input = Vec::Zero(4 * cfg.hidden_dim);
      lp.bias_recur = Vec::Zero(4 * cfg.hidden_dim);
      p.layers.push_back(std::move(lp));
    }
    p.proj_weight = Mat::Zero(cfg.embedding_dim, cfg.hidden_dim);
    p.proj_bias = Vec::Zero(cfg.embedding_dim);
    return p;
  }

  /// Applies fn(tensor&) to every parameter tensor, in a fixed order.
  template <typename F>
  void for_each_tensor(F&& fn) {
    for (auto& l : layers) {
      fn(l.w_input);
      fn(l.w_recur);
      fn(l.bias_input);
      fn(l.bias_recur);
    }
    fn(proj_weight);
    fn(proj_bias);
  }

  template <typename F>
  void for_each_tensor(F&& fn) const {
    for (const auto& l : layers) {
      fn(l.w_input);
      fn(l.w_recur);
      fn(l.bias_input);
      fn(l.bias_recur);
    }
    fn(proj_weight);
    fn(proj_bias);
  }
};

/// Xavier-normal weights (std = sqrt(2 / (fan_in + fan_out)) per tensor),
/// zero biases. Deterministic for a fixed seed.
inline NetworkParams init_params(const NetConfig& cfg, std::uint64_t seed) {
  NetworkParams p = NetworkParams::zeros_like(cfg);
  Rng rng(seed);
  auto fill_xavier = [&](Mat& m) {
    const double std = std::sqrt(2.0 / static_cast<double>(m.rows() + m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.normal(0.0, std);
  };
  for (auto& l : p.layers) {
    fill_xavier(l.w_input);
    fill_xavier(l.w_recur);
  }
  fill_xavier(p.proj_weight);
  return p;
}

/// Cached activations for one batched forward pass. Columns index the batch.
struct BatchTape {
  Eigen::Index seq_len = 0;
  Eigen::Index batch = 0;
  // inputs[l][t]: input to layer l at step t (layer 0 = features).
  std::vector<std::vector<Mat>> inputs;
  // gates[l][t]: 4h x B post-nonlinearity gate values (i, f, g, o blocks).
  std::vector<std::vector<Mat>> gates;
  // cells[l][t], hiddens[l][t]: h x B states after step t.
  std::vector<std::vector<Mat>> cells;
  std::vector<std::vector<Mat>> hiddens;
  Mat final_hidden;  // h x B, top layer at the last step
};

using TapeState = BatchTape;

namespace detail {

inline void sigmoid_inplace(Eigen::Ref<Mat> m) {
  m = (1.0 / (1.0 + (-m.array()).exp())).matrix();
}

}  // namespace detail

/// Batched forward pass over sequences of equal length. features[b] is
/// T x input_dim; returns the e x B raw projection outputs of the last step.
inline Mat forward_batch(const NetworkParams& params,
                         const std::vector<const Mat*>& features,
                         BatchTape& tape) {
  const auto& cfg = params.cfg;
  const int h = cfg.hidden_dim;
  const auto B = static_cast<Eigen::Index>(features.size());
  if (B == 0) throw Error(ErrorKind::ShapeError, "empty batch");
  const Eigen::Index T = features[0]->rows();
  for (const Mat* f : features) {
    if (f->rows() != T || f->cols() != cfg.input_dim)
      throw Error(ErrorKind::ShapeError, "inconsistent feature shapes");
    if (!f->allFinite())
      throw Error(ErrorKind::NumericalError, "non-finite features");
  }
  if (T < 1) throw Error(ErrorKind::TooShort, "empty feature sequence");

  tape = BatchTape{};
  tape.seq_len = T;
  tape.batch = B;
  tape.inputs.resize(static_cast<std::size_t>(cfg.num_layers));
  tape.gates.resize(static_cast<std::size_t>(cfg.num_layers));
  tape.cells.resize(static_cast<std::size_t>(cfg.num_layers));
  tape.hiddens.resize(static_cast<std::size_t>(cfg.num_layers));

  // Layer 0 inputs: transpose frames into columns per step.
  auto& in0 = tape.inputs[0];
  in0.resize(static_cast<std::size_t>(T));
  for (Eigen::Index t = 0; t < T; ++t) {
    Mat x(cfg.input_dim, B);
    for (Eigen::Index b = 0; b < B; ++b) x.col(b) = features[static_cast<std::size_t>(b)]->row(t).transpose();
    in0[static_cast<std::size_t>(t)] = std::move(x);
  }

  for (int l = 0; l < cfg.num_layers; ++l) {
    const auto& lp = params.layers[static_cast<std::size_t>(l)];
    const Vec bias = lp.bias_input + lp.bias_recur;
    auto& gates = tape.gates[static_cast<std::size_t>(l)];
    auto& cells = tape.cells[static_cast<std::size_t>(l)];
    auto& hiddens = tape.hiddens[static_cast<std::size_t>(l)];
    gates.resize(static_cast<std::size_t>(T));
    cells.resize(static_cast<std::size_t>(T));
    hiddens.resize(static_cast<std::size_t>(T));

    Mat h_prev = Mat::Zero(h, B);
    Mat c_prev = Mat::Zero(h, B);
    for (Eigen::Index t = 0; t < T; ++t) {
      const Mat& x = tape.inputs[static_cast<std::size_t>(l)][static_cast<std::size_t>(t)];
      Mat a = lp.w_input * x + lp.w_recur * h_prev;
      a.colwise() += bias;
      detail::sigmoid_inplace(a.middleRows(0, h));       // input gate
      detail::sigmoid_inplace(a.middleRows(h, h));       // forget gate
      a.middleRows(2 * h, h) = a.middleRows(2 * h, h).array().tanh().matrix();
      detail::sigmoid_inplace(a.middleRows(3 * h, h));   // output gate

      Mat c = a.middleRows(h, h).cwiseProduct(c_prev) +
              a.middleRows(0, h).cwiseProduct(a.middleRows(2 * h, h));
      Mat hh = a.middleRows(3 * h, h).cwiseProduct(c.array().tanh().matrix());

      gates[static_cast<std::size_t>(t)] = std::move(a);
      cells[static_cast<std::size_t>(t)] = c;
      hiddens[static_cast<std::size_t>(t)] = hh;
      c_prev = std::move(c);
      h_prev = std::move(hh);
    }
    if (l + 1 < cfg.num_layers)
      tape.inputs[static_cast<std::size_t>(l) + 1] = hiddens;
  }

  tape.final_hidden =
      tape.hiddens[static_cast<std::size_t>(cfg.num_layers) - 1][static_cast<std::size_t>(T) - 1];
  Mat raw = params.proj_weight * tape.final_hidden;
  raw.colwise() += params.proj_bias;
  return raw;
}

/// Single-sequence forward: raw e-dim output of the last frame plus the tape.
inline Vec forward(const NetworkParams& params, const FeatureMatrix& features,
                   TapeState& tape) {
  const std::vector<const Mat*> batch{&features.data};
  return forward_batch(params, batch, tape).col(0);
}

/// BPTT through the projection and all LSTM layers. grad_raw is e x B,
/// d(loss)/d(raw projection outputs). Returns gradients shaped like params.
inline NetworkParams backward_batch(const NetworkParams& params,
                                    const BatchTape& tape, const Mat& grad_raw) {
  const auto& cfg = params.cfg;
  const int h = cfg.hidden_dim;
  const Eigen::Index T = tape.seq_len;
  const Eigen::Index B = tape.batch;
  if (grad_raw.rows() != cfg.embedding_dim || grad_raw.cols() != B)
    throw Error(ErrorKind::ShapeError, "upstream gradient shape mismatch");
  if (static_cast<int>(tape.gates.size()) != cfg.num_layers)
    throw Error(ErrorKind::ShapeError, "tape does not match params");

  NetworkParams grads = NetworkParams::zeros_like(cfg);
  grads.proj_weight =
      cfg.proj_grad_scale * (grad_raw * tape.final_hidden.transpose());
  grads.proj_bias = cfg.proj_grad_scale * grad_raw.rowwise().sum();

  // External per-step gradient on the current layer's hidden outputs.
  // Top layer: only the last step receives the projection gradient.
  std::vector<Mat> dh_ext(static_cast<std::size_t>(T), Mat::Zero(h, B));
  dh_ext[static_cast<std::size_t>(T) - 1] = params.proj_weight.transpose() * grad_raw;

  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const auto& lp = params.layers[static_cast<std::size_t>(l)];
    auto& lg = grads.layers[static_cast<std::size_t>(l)];
    const auto& gates = tape.gates[static_cast<std::size_t>(l)];
    const auto& cells = tape.cells[static_cast<std::size_t>(l)];
    const auto& inputs = tape.inputs[static_cast<std::size_t>(l)];
    const auto& hiddens = tape.hiddens[static_cast<std::size_t>(l)];

    std::vector<Mat> dx(static_cast<std::size_t>(T));
    Mat dh_rec = Mat::Zero(h, B);
    Mat dc = Mat::Zero(h, B);
    for (Eigen::Index t = T - 1; t >= 0; --t) {
      const auto& a = gates[static_cast<std::size_t>(t)];
      const auto gi = a.middleRows(0, h).array();
      const auto gf = a.middleRows(h, h).array();
      const auto gg = a.middleRows(2 * h, h).array();
      const auto go = a.middleRows(3 * h, h).array();
      const auto tanh_c = cells[static_cast<std::size_t>(t)].array().tanh();

      const Mat dh = dh_ext[static_cast<std::size_t>(t)] + dh_rec;
      dc.array() += dh.array() * go * (1.0 - tanh_c * tanh_c);

      Mat da(4 * h, B);
      da.middleRows(0, h).array() = dc.array() * gg * gi * (1.0 - gi);
      const auto c_prev =
          (t == 0) ? Mat::Zero(h, B).eval() : cells[static_cast<std::size_t>(t) - 1];
      da.middleRows(h, h).array() = dc.array() * c_prev.array() * gf * (1.0 - gf);
      da.middleRows(2 * h, h).array() = dc.array() * gi * (1.0 - gg * gg);
      da.middleRows(3 * h, h).array() = dh.array() * tanh_c * go * (1.0 - go);

      lg.w_input.noalias() += da * inputs[static_cast<std::size_t>(t)].transpose();
      const auto h_prev =
          (t == 0) ? Mat::Zero(h, B).eval() : hiddens[static_cast<std::size_t>(t) - 1];
      lg.w_recur.noalias() += da * h_prev.transpose();
      const Vec db = da.rowwise().sum();
      lg.bias_input += db;
      lg.bias_recur += db;

      dx[static_cast<std::size_t>(t)] = lp.w_input.transpose() * da;
      dh_rec = lp.w_recur.transpose() * da;
      dc = dc.cwiseProduct(a.middleRows(h, h));
    }
    if (l > 0) dh_ext = std::move(dx);  // becomes the layer below's upstream
  }
  return grads;
}

inline NetworkParams backward(const NetworkParams& params, const TapeState& tape,
                              const Vec& grad_wrt_raw_output) {
  return backward_batch(params, tape, Mat(grad_wrt_raw_output));
}

struct Embedding {
  Vec vector;  // unit L2 norm
};

/// L2-normalized network output of the last frame.
inline Embedding embed(const NetworkParams& params, const FeatureMatrix& features) {
  TapeState tape;
  const Vec raw = forward(params, features, tape);
  const double n = raw.norm();
  if (n == 0.0)
    throw Error(ErrorKind::DegenerateEmbedding, "zero-norm network output");
  return Embedding{raw / n};
}

}  // namespace ge2e
