#include <doctest.h>

#include <fstream>

#include "emoknn/config.hpp"
#include "test_support.hpp"

using namespace emoknn;
using emoknn::testing::TempDir;

namespace {

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("defaults follow the training protocol") {
  const RunConfig c;
  CHECK(c.train.loss.tau == 0.07);
  CHECK(c.train.loss.lambda == 0.1);
  CHECK(c.train.lr0 == 1e-4);
  CHECK(c.train.plateau_patience == 20);
  CHECK(c.train.max_epochs == 150);
  CHECK(2 * c.train.batch_n == 12);
  CHECK(c.train.max_len_seconds == 7.5);
  CHECK(c.search.k_min == 1);
  CHECK(c.search.k_max == 32);
  CHECK(c.search.alpha_grid.size() == 19);
  CHECK(c.n_folds == 10);
  CHECK(c.problems().empty());
}

TEST_CASE("parse, serialize, parse is the identity") {
  SUBCASE("defaults") {
    const RunConfig c;
    CHECK(parse_run_config(c.to_text()) == c);
  }
  SUBCASE("every section changed") {
    const std::string text =
        "seed=123\n"
        "out=runs/a b\n"
        "corpus.manifest=/data/m.tsv\n"
        "corpus.embeddings=/data/e.emb1\n"
        "corpus.n_folds=5\n"
        "train.batch_n=4\n"
        "train.max_epochs=30\n"
        "train.lr0=0.003\n"
        "train.plateau_patience=7\n"
        "train.lr_factor=0.25\n"
        "train.min_lr=1e-7\n"
        "train.max_len_seconds=3.25\n"
        "train.hidden_dim=40\n"
        "loss.tau=0.2\n"
        "loss.lambda=0.35\n"
        "loss.normalize=false\n"
        "loss.ce_on_views=false\n"
        "loss.mean_over_anchors=true\n"
        "augment.kind=pitch\n"
        "augment.pitch_semitones=-2,3\n"
        "augment.gain=0.5,1.5\n"
        "augment.mixed=noise,volume\n"
        "augment.jitter_sigma=0.15\n"
        "retrieval.weighting=softmax_negdist\n"
        "retrieval.beta=2.5\n"
        "inference.k_min=2\n"
        "inference.k_max=9\n"
        "inference.alpha_grid=0.1,0.3,0.7\n"
        "inference.metric=ua\n"
        "inference.aggregation=mean_of_folds\n"
        "inference.k=4\n"
        "inference.alpha=0.35\n"
        "synth.dim=8\n"
        "synth.separation=4.5\n";
    const auto c = parse_run_config(text);
    CHECK(c.seed == 123);
    CHECK(c.out == "runs/a b");
    CHECK(c.train.min_lr == 1e-7);
    CHECK(c.fixed_k == std::optional<std::size_t>{4});
    CHECK(c.search.weighting.kind == KnnWeighting::Kind::softmax_negdist);
    CHECK(c.synth.dim == 8);
    CHECK(c.problems().empty());
    const auto again = parse_run_config(c.to_text());
    CHECK(again == c);
    CHECK(again.to_text() == c.to_text());
  }
  SUBCASE("awkward doubles survive") {
    RunConfig c;
    c.train.lr0 = 0.1 + 0.2;
    c.train.min_lr = 1.0 / 3.0 * 1e-5;
    c.search.alpha_grid = {1.0 / 7.0, 0.95};
    CHECK(parse_run_config(c.to_text()) == c);
  }
}

TEST_CASE("validation lists every offending field") {
  RunConfig c;
  c.n_folds = 0;
  c.train.lr0 = -1.0;
  c.train.lr_factor = 1.5;
  c.train.plateau_patience = 0;
  c.train.loss.tau = 0.0;
  c.search.k_min = 5;
  c.search.k_max = 2;
  c.fixed_alpha = 2.0;
  const auto p = c.problems();
  CHECK(p.size() >= 7);
  try {
    c.validate();
    FAIL("invalid config accepted");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (const char* field : {"corpus.n_folds", "train.lr0", "train.lr_factor", "train.plateau_patience",
                              "tau", "inference.k_min", "inference.alpha"}) {
      CHECK_MESSAGE(msg.find(field) != std::string::npos, field);
    }
  }
}

TEST_CASE("parse errors are collected with line numbers") {
  const std::string text = "seed=1\ntrain.lr0=abc\nbogus.key=3\ninference.metric=f1\n";
  try {
    parse_run_config(text);
    FAIL("bad config accepted");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 2") != std::string::npos);
    CHECK(msg.find("line 3") != std::string::npos);
    CHECK(msg.find("bogus.key") != std::string::npos);
    CHECK(msg.find("line 4") != std::string::npos);
    CHECK(count_of(msg, "\n  - ") == 3);
  }
  CHECK_THROWS_AS(parse_run_config("synth.seed=4\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("retrieval.weighting=cosine\n"), ConfigError);
}

TEST_CASE("one root seed feeds training and synthesis") {
  RunConfig c;
  c.seed = 99;
  CHECK(c.effective_train().seed == 99);
  CHECK(c.effective_synth().seed == 99);
  CHECK(c.pipeline().train.seed == 99);
  CHECK(c.pipeline().search == c.search);
}

TEST_CASE("config files load from disk") {
  TempDir dir("cfg");
  RunConfig c;
  c.seed = 5;
  c.train.max_epochs = 3;
  {
    std::ofstream f(dir / "run.cfg");
    f << "# comment line\n" << c.to_text();
  }
  CHECK(load_run_config((dir / "run.cfg").string()) == c);
  CHECK_THROWS_AS(load_run_config((dir / "missing.cfg").string()), ConfigError);
}
