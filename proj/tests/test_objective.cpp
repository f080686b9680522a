#include <doctest.h>

#include <cmath>
#include <numeric>

#include "emoknn/objective.hpp"
#include "gradcheck.hpp"
#include "scl_oracle.hpp"
#include "test_support.hpp"

using namespace emoknn;
using emoknn::testing::scl_oracle;

namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> values) {
  Matrix m(values.size(), values.begin()->size());
  std::size_t r = 0;
  for (const auto& row : values) {
    std::size_t c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

struct Instance {
  Matrix logits;
  ContrastiveBatch batch;
};

Instance random_instance(Rng& rng, std::size_t pairs, std::size_t h, std::size_t c) {
  Instance inst;
  inst.logits = emoknn::testing::random_matrix(rng, 2 * pairs, c, -2.0, 2.0);
  inst.batch.embeddings = emoknn::testing::random_matrix(rng, 2 * pairs, h);
  for (std::size_t t = 0; t < pairs; ++t) {
    const auto y = static_cast<Label>(rng.below(c));
    inst.batch.labels.push_back(y);
    inst.batch.labels.push_back(y);
  }
  return inst;
}

}  // namespace

TEST_CASE("cross-entropy of zero logits is log C") {
  const Matrix logits(6, 4, 0.0);
  const std::vector<Label> y{0, 1, 2, 3, 0, 1};
  const auto r = ce_loss(logits, y);
  CHECK(std::abs(r.loss - std::log(4.0)) < 1e-15);
}

TEST_CASE("saturated correct logits give near-zero cross-entropy") {
  Matrix logits(4, 3, 0.0);
  const std::vector<Label> y{2, 0, 1, 2};
  for (std::size_t i = 0; i < 4; ++i) logits(i, y[i]) = 1000.0;
  CHECK(ce_loss(logits, y).loss <= 1e-6);
}

TEST_CASE("cross-entropy matches per-row evaluation and finite differences") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix logits = emoknn::testing::random_matrix(rng, 6, 3, -3.0, 3.0);
    std::vector<Label> y;
    for (int i = 0; i < 6; ++i) y.push_back(static_cast<Label>(rng.below(3)));
    const auto r = ce_loss(logits, y);
    long double oracle = 0.0L;
    for (std::size_t i = 0; i < 6; ++i) {
      long double z = 0.0L;
      for (std::size_t c = 0; c < 3; ++c) z += std::exp(static_cast<long double>(logits(i, c)));
      oracle += -std::log(std::exp(static_cast<long double>(logits(i, y[i]))) / z);
    }
    CHECK(std::abs(r.loss - static_cast<double>(oracle / 6.0L)) <= 1e-12);
    for (std::size_t k = 0; k < logits.size(); ++k) {
      const auto f = [&] { return ce_loss(logits, y).loss; };
      const double num = emoknn::testing::central_difference(f, logits.data()[k], 1e-5);
      CHECK(std::abs(num - r.grad.data()[k]) <= 1e-6);
    }
  }
  CHECK_THROWS_AS(ce_loss(Matrix(2, 3), std::vector<Label>{0, 3}), std::invalid_argument);
}

TEST_CASE("identical positive pair has zero contrastive loss") {
  for (double tau : {0.07, 0.5, 1.0, 3.0}) {
    ContrastiveBatch b{rows({{0.6, 0.8}, {0.6, 0.8}}), {1, 1}};
    CHECK(std::abs(scl_loss(b, tau, false).loss) <= 1e-12);
    CHECK(std::abs(scl_loss(b, tau, true).loss) <= 1e-12);
  }
}

TEST_CASE("four-instance fixture agrees with the triple-loop oracle") {
  ContrastiveBatch b{rows({{1, 0}, {1, 0}, {0, 1}, {0, 1}}), {0, 0, 1, 1}};
  const double oracle = scl_oracle(b.embeddings, b.labels, 1.0, false);
  // By hand: each anchor has one positive at similarity 1 and two negatives
  // at 0, so every term is -log(e / (e + 2)).
  const double by_hand = 4.0 * std::log((std::exp(1.0) + 2.0) / std::exp(1.0));
  CHECK(std::abs(oracle - by_hand) <= 1e-12);
  CHECK(std::abs(scl_loss(b, 1.0, false).loss - oracle) <= 1e-12);
}

TEST_CASE("unique labels give zero loss and zero gradient") {
  Rng rng(2);
  ContrastiveBatch b{emoknn::testing::random_matrix(rng, 4, 3), {0, 1, 2, 3}};
  for (bool normalize : {false, true}) {
    const auto r = scl_loss(b, 0.07, normalize);
    CHECK(r.loss == 0.0);
    for (double g : r.grad.data()) CHECK(g == 0.0);
  }
}

TEST_CASE("contrastive loss matches the oracle on random batches") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + 2 * rng.below(6);
    ContrastiveBatch b{emoknn::testing::random_matrix(rng, n, 1 + rng.below(8)), {}};
    for (std::size_t i = 0; i < n; ++i) b.labels.push_back(static_cast<Label>(rng.below(3)));
    const bool normalize = trial % 2 == 0;
    const double tau = normalize ? 0.07 : 0.5;
    const double got = scl_loss(b, tau, normalize).loss;
    const double want = scl_oracle(b.embeddings, b.labels, tau, normalize);
    CHECK(std::abs(got - want) <= 1e-9 * std::max(1.0, std::abs(want)));
    CHECK(got >= -1e-12);
    const double mean = scl_loss(b, tau, normalize, true).loss;
    CHECK(std::abs(mean - got / static_cast<double>(n)) <= 1e-12 * std::max(1.0, got));
  }
}

TEST_CASE("contrastive loss is permutation invariant") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = random_instance(rng, 5, 6, 3);
    std::vector<std::size_t> perm(10);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    ContrastiveBatch shuffled{Matrix(10, 6), std::vector<Label>(10)};
    for (std::size_t i = 0; i < 10; ++i) {
      const auto src = inst.batch.embeddings.row(perm[i]);
      std::copy(src.begin(), src.end(), shuffled.embeddings.row(i).begin());
      shuffled.labels[i] = inst.batch.labels[perm[i]];
    }
    const double a = scl_loss(inst.batch, 0.07, true).loss;
    const double b = scl_loss(shuffled, 0.07, true).loss;
    CHECK(std::abs(a - b) <= 1e-9 * std::max(1.0, a));
  }
}

TEST_CASE("normalized contrastive loss ignores per-row positive scaling") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = random_instance(rng, 4, 5, 2);
    ContrastiveBatch scaled = inst.batch;
    for (std::size_t i = 0; i < scaled.embeddings.rows(); ++i) {
      const double c = rng.uniform(0.01, 100.0);
      for (double& v : scaled.embeddings.row(i)) v *= c;
    }
    const double a = scl_loss(inst.batch, 0.07, true).loss;
    const double b = scl_loss(scaled, 0.07, true).loss;
    CHECK(std::abs(a - b) <= 1e-9);
  }
}

TEST_CASE("moving a positive pair together lowers the loss") {
  // Two classes on the unit circle; row 1 slides from far to near row 0.
  const double start = 2.5, end = 0.1;
  double previous = 1e300;
  for (int step = 0; step < 5; ++step) {
    const double angle = start + (end - start) * step / 4.0;
    ContrastiveBatch b{rows({{1.0, 0.0},
                             {std::cos(angle), std::sin(angle)},
                             {-0.2, 1.0},
                             {-0.3, 1.0}}),
                       {0, 0, 1, 1}};
    const double loss = scl_loss(b, 0.5, true).loss;
    CHECK(loss < previous);
    previous = loss;
  }
}

TEST_CASE("zero-norm embeddings are rejected under normalization") {
  ContrastiveBatch b{rows({{0.0, 0.0}, {1.0, 0.0}}), {0, 0}};
  CHECK_THROWS_AS(scl_loss(b, 0.07, true), std::invalid_argument);
  CHECK_NOTHROW(scl_loss(b, 0.07, false));
  ContrastiveBatch bad{rows({{NAN, 0.0}, {1.0, 0.0}}), {0, 0}};
  CHECK_THROWS_AS(scl_loss(bad, 0.07, false), NumericError);
}

TEST_CASE("combined loss boundaries and weighting") {
  Rng rng(6);
  auto inst = random_instance(rng, 3, 4, 3);
  const auto ce = ce_loss(inst.logits, inst.batch.labels);
  const auto scl = scl_loss(inst.batch, 0.07, true);

  LossConfig cfg;
  cfg.lambda = 0.0;
  auto r = combined_loss(inst.logits, inst.batch, cfg);
  CHECK(r.loss == ce.loss);
  CHECK(r.grad_logits == ce.grad);
  for (double g : r.grad_embeddings.data()) CHECK(g == 0.0);

  cfg.lambda = 1.0;
  r = combined_loss(inst.logits, inst.batch, cfg);
  CHECK(r.loss == scl.loss);
  CHECK(r.grad_embeddings == scl.grad);
  for (double g : r.grad_logits.data()) CHECK(g == 0.0);

  cfg.lambda = 0.1;
  r = combined_loss(inst.logits, inst.batch, cfg);
  CHECK(std::abs(r.loss - (0.9 * ce.loss + 0.1 * scl.loss)) <= 1e-12);
  CHECK(std::abs(0.9 * 2.0 + 0.1 * 3.0 - 2.1) <= 1e-15);

  cfg.ce_on_views = false;
  r = combined_loss(inst.logits, inst.batch, cfg);
  Matrix originals(3, 3);
  std::vector<Label> y;
  for (std::size_t j = 0; j < 3; ++j) {
    for (std::size_t c = 0; c < 3; ++c) originals(j, c) = inst.logits(2 * j + 1, c);
    y.push_back(inst.batch.labels[2 * j + 1]);
  }
  CHECK(std::abs(r.ce - ce_loss(originals, y).loss) <= 1e-15);
  for (std::size_t c = 0; c < 3; ++c) CHECK(r.grad_logits(0, c) == 0.0);

  cfg.lambda = 1.5;
  CHECK_THROWS_AS(combined_loss(inst.logits, inst.batch, cfg), ConfigError);
}

TEST_CASE("combined loss gradient matches finite differences") {
  Rng rng(7);
  double worst = 0.0;
  int draws = 0;
  for (double lambda : {0.0, 0.1, 1.0}) {
    for (bool normalize : {true, false}) {
      for (int k = 0; k < 4; ++k) {
        const std::size_t pairs = 1 + rng.below(6);
        auto inst = random_instance(rng, pairs, 1 + rng.below(8), 2 + rng.below(3));
        LossConfig cfg;
        cfg.lambda = lambda;
        cfg.normalize_embeddings = normalize;
        cfg.tau = normalize ? 0.07 : 0.5;
        cfg.mean_over_anchors = k == 3;
        const auto r = emoknn::testing::check_combined_loss(inst.logits, inst.batch, cfg);
        worst = std::max(worst, r.max_relative);
        ++draws;
      }
    }
  }
  MESSAGE(draws << " draws, worst relative error " << worst);
  CHECK(worst <= 1e-5);
}

TEST_CASE("pairing check enforces the view/original layout") {
  ContrastiveBatch ok{Matrix(4, 2, 1.0), {0, 0, 1, 1}};
  CHECK_NOTHROW(check_pairing(ok));
  ContrastiveBatch bad{Matrix(4, 2, 1.0), {0, 1, 1, 1}};
  CHECK_THROWS_AS(check_pairing(bad), std::invalid_argument);
  ContrastiveBatch odd{Matrix(3, 2, 1.0), {0, 0, 1}};
  CHECK_THROWS_AS(check_pairing(odd), std::invalid_argument);
}
