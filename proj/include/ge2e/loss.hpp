#pragma once

#include <cmath>
#include <vector>

#include "ge2e/common.hpp"

namespace ge2e {

/// N*M embeddings as columns of a dim x N*M matrix; column j*M + i holds
/// speaker j's utterance i.
struct EmbeddingBatch {
  Mat embeddings;
  int n_speakers = 0;
  int m_utterances = 0;

  Eigen::Index col(int j, int i) const {
    return static_cast<Eigen::Index>(j) * m_utterances + i;
  }

  void validate() const {
    if (n_speakers < 2 || m_utterances < 2)
      throw Error(ErrorKind::InsufficientUtterances, "need N >= 2 and M >= 2");
    if (embeddings.cols() != static_cast<Eigen::Index>(n_speakers) * m_utterances)
      throw Error(ErrorKind::ShapeError, "embedding count mismatch");
  }
};

struct LossScale {
  double w = 10.0;
  double b = -5.0;
};

constexpr double kMinScaleW = 1e-6;

inline LossScale clamp_scale(LossScale scale) {
  scale.w = std::max(scale.w, kMinScaleW);
  return scale;
}

enum class Reduction { Sum, Mean };

inline Vec centroid(const EmbeddingBatch& batch, int j) {
  if (j < 0 || j >= batch.n_speakers)
    throw Error(ErrorKind::ShapeError, "speaker index out of range");
  Vec c = Vec::Zero(batch.embeddings.rows());
  for (int i = 0; i < batch.m_utterances; ++i) c += batch.embeddings.col(batch.col(j, i));
  return c / batch.m_utterances;
}

/// Leave-one-out centroid: mean over the speaker's other M-1 embeddings.
inline Vec centroid_excluding(const EmbeddingBatch& batch, int j, int i) {
  if (j < 0 || j >= batch.n_speakers || i < 0 || i >= batch.m_utterances)
    throw Error(ErrorKind::ShapeError, "index out of range");
  if (batch.m_utterances < 2)
    throw Error(ErrorKind::InsufficientUtterances,
                "leave-one-out centroid needs M >= 2");
  Vec c = Vec::Zero(batch.embeddings.rows());
  for (int m = 0; m < batch.m_utterances; ++m)
    if (m != i) c += batch.embeddings.col(batch.col(j, m));
  return c / (batch.m_utterances - 1);
}

namespace detail {

inline double cosine(const Vec& a, const Vec& c) {
  const double na = a.norm();
  const double nc = c.norm();
  if (nc == 0.0)
    throw Error(ErrorKind::DegenerateCentroid, "zero-norm centroid");
  if (na == 0.0)
    throw Error(ErrorKind::DegenerateInput, "zero-norm embedding");
  return a.dot(c) / (na * nc);
}

}  // namespace detail

/// (N*M) x N scaled-cosine similarity matrix; the k = j entries use the
/// leave-one-out centroid.
inline Mat similarity_matrix(const EmbeddingBatch& batch, const LossScale& scale) {
  batch.validate();
  if (scale.w < kMinScaleW)
    throw Error(ErrorKind::ShapeError, "loss scale w below clamp floor");
  const int N = batch.n_speakers;
  const int M = batch.m_utterances;
  std::vector<Vec> centroids;
  centroids.reserve(static_cast<std::size_t>(N));
  for (int k = 0; k < N; ++k) centroids.push_back(centroid(batch, k));

  Mat S(static_cast<Eigen::Index>(N) * M, N);
  for (int j = 0; j < N; ++j)
    for (int i = 0; i < M; ++i) {
      const Vec e = batch.embeddings.col(batch.col(j, i));
      for (int k = 0; k < N; ++k) {
        const Vec& c = (k == j) ? centroid_excluding(batch, j, i) : centroids[static_cast<std::size_t>(k)];
        S(batch.col(j, i), k) = scale.w * detail::cosine(e, c) + scale.b;
      }
    }
  return S;
}

/// Softmax loss for one embedding: -S_{ji,j} + logsumexp_k S_{ji,k},
/// stabilized by max subtraction.
inline double loss_per_embedding(const Mat& S, int j, int i, int m_utterances) {
  const Eigen::Index row = static_cast<Eigen::Index>(j) * m_utterances + i;
  const double mx = S.row(row).maxCoeff();
  const double lse = mx + std::log((S.row(row).array() - mx).exp().sum());
  return -S(row, j) + lse;
}

struct LossResult {
  double loss = 0.0;
  Mat grad_embeddings;  // dim x N*M
  double grad_w = 0.0;
  double grad_b = 0.0;
};

/// Total GE2E loss plus analytic gradients with respect to every embedding
/// and the (w, b) scale. Gradients cover both centroid and leave-one-out
/// dependency paths of each embedding.
inline LossResult total_loss(const EmbeddingBatch& batch, const LossScale& scale,
                             Reduction reduction) {
  batch.validate();
  const int N = batch.n_speakers;
  const int M = batch.m_utterances;
  const Eigen::Index dim = batch.embeddings.rows();

  std::vector<Vec> centroids;
  centroids.reserve(static_cast<std::size_t>(N));
  for (int k = 0; k < N; ++k) centroids.push_back(centroid(batch, k));

  LossResult res;
  res.grad_embeddings = Mat::Zero(dim, static_cast<Eigen::Index>(N) * M);
  // Gradients w.r.t. plain centroids, distributed to members at the end.
  Mat grad_centroids = Mat::Zero(dim, N);

  for (int j = 0; j < N; ++j)
    for (int i = 0; i < M; ++i) {
      const Eigen::Index ji = batch.col(j, i);
      const Vec e = batch.embeddings.col(ji);
      const double ne = e.norm();
      if (ne == 0.0)
        throw Error(ErrorKind::DegenerateInput, "zero-norm embedding");
      const Vec loo = centroid_excluding(batch, j, i);

      Vec cos_row(N);
      for (int k = 0; k < N; ++k)
        cos_row(k) = detail::cosine(e, (k == j) ? loo : centroids[static_cast<std::size_t>(k)]);
      const Vec s_row = scale.w * cos_row.array() + scale.b;

      const double mx = s_row.maxCoeff();
      const Vec ex = (s_row.array() - mx).exp();
      const double Z = ex.sum();
      res.loss += -s_row(j) + mx + std::log(Z);
      Vec dS = ex / Z;  // softmax probabilities
      dS(j) -= 1.0;

      res.grad_w += dS.dot(cos_row);
      res.grad_b += dS.sum();

      for (int k = 0; k < N; ++k) {
        const double dcos = scale.w * dS(k);
        if (dcos == 0.0) continue;
        const Vec& c = (k == j) ? loo : centroids[static_cast<std::size_t>(k)];
        const double nc = c.norm();
        // d cos(e, c)/de and /dc for arbitrary (not necessarily unit) vectors.
        const Vec de = c / (ne * nc) - cos_row(k) * e / (ne * ne);
        const Vec dc = e / (ne * nc) - cos_row(k) * c / (nc * nc);
        res.grad_embeddings.col(ji) += dcos * de;
        if (k == j) {
          // Leave-one-out centroid: distribute to the other M-1 members.
          for (int m = 0; m < M; ++m)
            if (m != i)
              res.grad_embeddings.col(batch.col(j, m)) += dcos / (M - 1) * dc;
        } else {
          grad_centroids.col(k) += dcos * dc;
        }
      }
    }

  for (int k = 0; k < N; ++k)
    for (int m = 0; m < M; ++m)
      res.grad_embeddings.col(batch.col(k, m)) += grad_centroids.col(k) / M;

  if (reduction == Reduction::Mean) {
    const double inv = 1.0 / (static_cast<double>(N) * M);
    res.loss *= inv;
    res.grad_embeddings *= inv;
    res.grad_w *= inv;
    res.grad_b *= inv;
  }
  return res;
}

}  // namespace ge2e
