#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "longclip/embedding.hpp"
#include "longclip/numerics/graph.hpp"

namespace longclip::trainer {

namespace detail {

// -log softmax(x)[target], written as (max - x[target]) + log1p(sum over j != argmax of exp(x_j - max)).
inline double cross_entropy(const double* x, std::size_t n, std::size_t target) {
  std::size_t arg = 0;
  for (std::size_t j = 1; j < n; ++j) arg = x[j] > x[arg] ? j : arg;
  const double max = x[arg];
  double rest = 0;
  for (std::size_t j = 0; j < n; ++j)
    if (j != arg) rest += std::exp(x[j] - max);
  return (max - x[target]) + std::log1p(rest);
}

}  // namespace detail

struct ContrastiveResult {
  double loss = 0.0;
  numerics::DenseArray<double> sim;  // sim(i, j) = exp(log_scale) * <z_img_i, z_txt_j>
};

// Symmetric cross-entropy over the scaled similarity matrix, matched pairs on the diagonal.
inline ContrastiveResult contrastive_loss(std::span<const EmbeddingVector> z_img, std::span<const EmbeddingVector> z_txt,
                                          double log_scale) {
  const std::size_t n = z_img.size();
  if (n != z_txt.size()) throw UsageError("contrastive_loss: image and text counts differ");
  if (n < 2) throw UsageError("contrastive_loss needs at least 2 pairs, got " + std::to_string(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto* e : {&z_img[i], &z_txt[i]}) {
      if (std::abs(e->norm() - 1.0) > EmbeddingVector::kNormTolerance) {
        throw UsageError("contrastive_loss: input " + std::to_string(i) + " is not unit-norm");
      }
    }
  }
  const double scale = std::exp(log_scale);
  ContrastiveResult r{0.0, numerics::DenseArray<double>({n, n})};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) r.sim(i, j) = scale * dot(z_img[i], z_txt[j]);

  std::vector<double> buf(n);
  double rows = 0, cols = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) buf[j] = r.sim(i, j);
    rows += detail::cross_entropy(buf.data(), n, i);
    for (std::size_t j = 0; j < n; ++j) buf[j] = r.sim(j, i);
    cols += detail::cross_entropy(buf.data(), n, i);
  }
  const double dn = static_cast<double>(n);
  r.loss = 0.5 * (rows / dn + cols / dn);
  return r;
}

// Same loss as a graph node over unit-norm rows z_img, z_txt [N, D] and a scalar log_scale.
inline numerics::NodeId build_contrastive_loss(numerics::Graph& g, numerics::NodeId z_img, numerics::NodeId z_txt,
                                               numerics::NodeId log_scale) {
  auto scope = g.scope("loss");
  const auto& si = g.shape(z_img);
  if (si.size() != 2 || si[0] < 2) throw UsageError("contrastive loss needs at least 2 pairs");
  auto logits = g.scale_by(g.matmul(z_img, g.transpose(z_txt)), g.exp(log_scale));
  auto rows = g.mean(g.row_logsumexp(logits));
  auto cols = g.mean(g.row_logsumexp(g.transpose(logits)));
  auto diag = g.mean(g.diagonal(logits));
  return g.label(g.sub(g.scale(g.add(rows, cols), 0.5), diag), "loss/contrastive");
}

}  // namespace longclip::trainer
