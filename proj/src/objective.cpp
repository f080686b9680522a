#include "emoknn/objective.hpp"

#include <cmath>
#include <string>

namespace emoknn {

void LossConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("loss.tau must be > 0");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("loss.lambda must be in [0, 1]");
}

void check_pairing(const ContrastiveBatch& batch) {
  const std::size_t rows = batch.embeddings.rows();
  if (rows == 0 || rows % 2 != 0 || batch.labels.size() != rows) {
    throw std::invalid_argument("contrastive batch must hold 2N >= 2 labelled rows");
  }
  for (std::size_t j = 0; j < rows; j += 2) {
    if (batch.labels[j] != batch.labels[j + 1]) {
      throw std::invalid_argument("contrastive batch pair " + std::to_string(j / 2) +
                                  " has mismatched labels");
    }
  }
}

LossAndGrad ce_loss(const Matrix& logits, std::span<const Label> labels) {
  if (labels.size() != logits.rows()) throw std::invalid_argument("ce_loss: label count mismatch");
  if (!all_finite(logits.data())) throw NumericError("ce_loss: non-finite logits");
  LossAndGrad out{0.0, Matrix(logits.rows(), logits.cols())};
  if (logits.rows() == 0) return out;
  const double inv = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (labels[i] >= logits.cols()) {
      throw std::invalid_argument("ce_loss: label " + std::to_string(labels[i]) +
                                  " out of range for " + std::to_string(logits.cols()) +
                                  " classes");
    }
    const auto row = logits.row(i);
    out.loss += (log_sum_exp(row) - row[labels[i]]) * inv;
    const Vec p = softmax(row);
    auto g = out.grad.row(i);
    for (std::size_t c = 0; c < p.size(); ++c) g[c] = p[c] * inv;
    g[labels[i]] -= inv;
  }
  return out;
}

LossAndGrad scl_loss(const ContrastiveBatch& batch, double tau, bool normalize,
                     bool mean_over_anchors) {
  const Matrix& x = batch.embeddings;
  const std::size_t n = x.rows();
  const std::size_t dim = x.cols();
  if (batch.labels.size() != n) throw std::invalid_argument("scl_loss: label count mismatch");
  if (n < 2) throw std::invalid_argument("scl_loss: need at least 2 instances");
  if (!(tau > 0.0)) throw std::invalid_argument("scl_loss: tau must be > 0");
  if (!all_finite(x.data())) throw NumericError("scl_loss: non-finite embedding");

  Matrix u = x;
  Vec norms(n, 1.0);
  if (normalize) {
    for (std::size_t i = 0; i < n; ++i) {
      norms[i] = std::sqrt(dot(x.row(i), x.row(i)));
      if (!(norms[i] > 0.0)) {
        throw std::invalid_argument("scl_loss: zero-norm embedding at row " + std::to_string(i));
      }
      for (double& v : u.row(i)) v /= norms[i];
    }
  }

  Matrix sim(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      sim(i, j) = sim(j, i) = dot(u.row(i), u.row(j)) / tau;
    }
  }

  // dL/ds_ia accumulated into a symmetric-use coefficient matrix.
  Matrix coeff(n, n);
  double loss = 0.0;
  Vec others;
  others.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t positives = 0;
    double positive_sum = 0.0;
    others.clear();
    for (std::size_t a = 0; a < n; ++a) {
      if (a == i) continue;
      others.push_back(sim(i, a));
      if (batch.labels[a] == batch.labels[i]) {
        ++positives;
        positive_sum += sim(i, a);
      }
    }
    if (positives == 0) continue;
    const double lse = log_sum_exp(others);
    const double inv_p = 1.0 / static_cast<double>(positives);
    loss += lse - positive_sum * inv_p;
    for (std::size_t a = 0; a < n; ++a) {
      if (a == i) continue;
      double g = std::exp(sim(i, a) - lse);
      if (batch.labels[a] == batch.labels[i]) g -= inv_p;
      coeff(i, a) = g;
    }
  }
  const double scale = mean_over_anchors ? 1.0 / static_cast<double>(n) : 1.0;
  loss *= scale;

  // s_ia = u_i . u_a / tau, so dL/du_i = sum_a (c_ia + c_ai) u_a / tau.
  Matrix grad_u(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    auto gi = grad_u.row(i);
    for (std::size_t a = 0; a < n; ++a) {
      const double c = (coeff(i, a) + coeff(a, i)) * scale / tau;
      if (c == 0.0) continue;
      const auto ua = u.row(a);
      for (std::size_t d = 0; d < dim; ++d) gi[d] += c * ua[d];
    }
  }

  if (!normalize) return {loss, std::move(grad_u)};

  // u = x / |x|  =>  dL/dx = (g - u (u . g)) / |x|.
  Matrix grad_x(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ui = u.row(i);
    const auto gi = grad_u.row(i);
    const double proj = dot(ui, gi);
    auto out = grad_x.row(i);
    for (std::size_t d = 0; d < dim; ++d) out[d] = (gi[d] - ui[d] * proj) / norms[i];
  }
  return {loss, std::move(grad_x)};
}

CombinedLoss combined_loss(const Matrix& logits, const ContrastiveBatch& batch,
                           const LossConfig& cfg) {
  cfg.validate();
  const std::size_t n = batch.embeddings.rows();
  if (logits.rows() != n) throw std::invalid_argument("combined_loss: logits/embeddings row mismatch");

  CombinedLoss out;
  out.grad_logits = Matrix(n, logits.cols());
  out.grad_embeddings = Matrix(n, batch.embeddings.cols());

  if (cfg.lambda < 1.0) {
    LossAndGrad ce;
    if (cfg.ce_on_views) {
      ce = ce_loss(logits, batch.labels);
      out.grad_logits = std::move(ce.grad);
    } else {
      // Originals only: odd rows.
      Matrix sub(n / 2, logits.cols());
      std::vector<Label> sub_labels;
      for (std::size_t j = 1; j < n; j += 2) {
        std::copy(logits.row(j).begin(), logits.row(j).end(), sub.row(j / 2).begin());
        sub_labels.push_back(batch.labels[j]);
      }
      ce = ce_loss(sub, sub_labels);
      for (std::size_t j = 1; j < n; j += 2) {
        std::copy(ce.grad.row(j / 2).begin(), ce.grad.row(j / 2).end(),
                  out.grad_logits.row(j).begin());
      }
    }
    out.ce = ce.loss;
    for (double& g : out.grad_logits.data()) g *= 1.0 - cfg.lambda;
  }
  if (cfg.lambda > 0.0) {
    auto scl = scl_loss(batch, cfg.tau, cfg.normalize_embeddings, cfg.mean_over_anchors);
    out.scl = scl.loss;
    out.grad_embeddings = std::move(scl.grad);
    for (double& g : out.grad_embeddings.data()) g *= cfg.lambda;
  }
  out.loss = (1.0 - cfg.lambda) * out.ce + cfg.lambda * out.scl;
  return out;
}

}  // namespace emoknn
