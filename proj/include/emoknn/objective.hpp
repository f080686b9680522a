#pragma once

#include <vector>

#include "emoknn/common.hpp"

namespace emoknn {

struct LossConfig {
  double tau = 0.07;
  double lambda = 0.1;
  bool normalize_embeddings = true;
  // Cross-entropy over all 2N rows; when off only the originals (odd rows) count.
  bool ce_on_views = true;
  // Divide the contrastive sum over anchors by the number of anchors.
  bool mean_over_anchors = false;

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

/// 2N embeddings laid out as (view_0, original_0, view_1, original_1, ...),
/// i.e. row 2j is the augmented partner of row 2j + 1.
struct ContrastiveBatch {
  Matrix embeddings;
  std::vector<Label> labels;
};

/// Throws unless the batch has an even, non-zero row count and every
/// (2j, 2j+1) pair shares its label.
void check_pairing(const ContrastiveBatch& batch);

struct LossAndGrad {
  double loss = 0.0;
  Matrix grad;
};

/// Mean cross-entropy over the rows; grad = (softmax - onehot) / rows.
LossAndGrad ce_loss(const Matrix& logits, std::span<const Label> labels);

/// Supervised contrastive loss:
///   sum_i  -1/|P(i)| sum_{p in P(i)} log( exp(s_ip) / sum_{a != i} exp(s_ia) ),
///   s_ij = x_i . x_j / tau,
/// with P(i) the other rows sharing i's label. Anchors without positives
/// contribute nothing. With `normalize` the rows are L2-normalized first and
/// the gradient is taken w.r.t. the raw rows.
LossAndGrad scl_loss(const ContrastiveBatch& batch, double tau, bool normalize,
                     bool mean_over_anchors = false);

struct CombinedLoss {
  double loss = 0.0;
  double ce = 0.0;
  double scl = 0.0;
  Matrix grad_logits;
  Matrix grad_embeddings;
};

/// (1 - lambda) * CE + lambda * SCL. A term whose weight is zero is skipped,
/// leaving its gradient at zero.
CombinedLoss combined_loss(const Matrix& logits, const ContrastiveBatch& batch,
                           const LossConfig& config);

}  // namespace emoknn
