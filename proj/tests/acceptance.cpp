// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Every check compares the library against an oracle that
// lives in test code.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "emoknn/augment.hpp"
#include "emoknn/cli.hpp"
#include "emoknn/config.hpp"
#include "emoknn/corpus.hpp"
#include "emoknn/inference.hpp"
#include "emoknn/io_util.hpp"
#include "emoknn/objective.hpp"
#include "emoknn/retrieval.hpp"
#include "gradcheck.hpp"
#include "knn_oracle.hpp"
#include "scl_oracle.hpp"
#include "signal_oracles.hpp"
#include "test_support.hpp"

using namespace emoknn;
namespace et = emoknn::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double time_limit_s;  // 0 = no limit
  std::function<Outcome()> run;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

// --------------------------------------------------------------------------

Outcome gradient_correctness() {
  Rng rng(2024);
  double worst = 0.0;
  int instances = 0, redraws = 0;
  for (double lambda : {0.0, 0.1, 1.0}) {
    for (bool normalize : {true, false}) {
      for (int draw = 0; draw < 4; ++draw) {
        const std::size_t d = 3 + rng.below(6);      // D <= 8
        const std::size_t h = 2 + rng.below(7);      // H <= 8
        const std::size_t c = 2 + rng.below(3);      // C <= 4
        const std::size_t pairs = 2 + rng.below(5);  // 2N <= 12
        LossConfig cfg;
        cfg.lambda = lambda;
        cfg.normalize_embeddings = normalize;
        cfg.tau = normalize ? 0.07 : 0.5;

        std::vector<Label> labels;
        for (std::size_t t = 0; t < pairs; ++t) {
          const auto y = static_cast<Label>(rng.below(c));
          labels.push_back(y);
          labels.push_back(y);
        }
        // Loss layer alone, with respect to logits and embeddings.
        ContrastiveBatch batch{et::random_matrix(rng, 2 * pairs, h), labels};
        const auto loss_check =
            et::check_combined_loss(et::random_matrix(rng, 2 * pairs, c, -2.0, 2.0), batch, cfg);
        // Through the head, with respect to every parameter. The normalized
        // loss is undefined where a relu embedding is all zero, so such
        // draws are replaced rather than checked.
        HeadParams p;
        Matrix inputs;
        bool degenerate = true;
        while (degenerate) {
          p = init_params(d, h, c, rng.next_u64());
          for (double& b : p.b1) b = rng.uniform(0.1, 0.5);
          for (double& b : p.b2) b = rng.uniform(-0.5, 0.5);
          inputs = et::random_matrix(rng, 2 * pairs, d);
          degenerate = false;
          for (std::size_t r = 0; r < inputs.rows(); ++r) {
            const auto z = embed(p, inputs.row(r));
            if (std::sqrt(std::inner_product(z.begin(), z.end(), z.begin(), 0.0)) < 0.05) degenerate = true;
          }
          redraws += degenerate;
        }
        const auto head_check = et::check_head_gradient(p, inputs, labels, cfg);
        worst = std::max({worst, loss_check.max_relative, head_check.max_relative});
        ++instances;
      }
    }
  }
  return {worst <= 1e-5 && instances >= 20,
          std::to_string(instances) + " instances (" + std::to_string(redraws) +
              " degenerate draws replaced), worst relative error " + fmt(worst, 3)};
}

Outcome scl_anchors() {
  const auto rows = [](std::vector<std::vector<double>> v) {
    Matrix m(v.size(), v[0].size());
    for (std::size_t r = 0; r < v.size(); ++r) {
      for (std::size_t c = 0; c < v[r].size(); ++c) m(r, c) = v[r][c];
    }
    return m;
  };
  double worst = 0.0;
  // Identical pair.
  for (bool normalize : {false, true}) {
    const ContrastiveBatch b{rows({{0.6, 0.8}, {0.6, 0.8}}), {1, 1}};
    worst = std::max(worst, std::abs(scl_loss(b, 0.07, normalize).loss));
  }
  // Four instances against the brute-force triple loop.
  const ContrastiveBatch four{rows({{1, 0}, {1, 0}, {0, 1}, {0, 1}}), {0, 0, 1, 1}};
  for (bool normalize : {false, true}) {
    for (double tau : {0.07, 1.0}) {
      const double oracle = et::scl_oracle(four.embeddings, four.labels, tau, normalize);
      worst = std::max(worst, std::abs(scl_loss(four, tau, normalize).loss - oracle));
    }
  }
  // All labels unique.
  Rng rng(3);
  const ContrastiveBatch unique{et::random_matrix(rng, 4, 3), {0, 1, 2, 3}};
  worst = std::max(worst, std::abs(scl_loss(unique, 0.07, true).loss));
  return {worst <= 1e-12, "max deviation " + fmt(worst, 3)};
}

Outcome knn_exactness() {
  Rng rng(11);
  std::vector<DatastoreEntry> entries;
  for (std::size_t i = 0; i < 1000; ++i) {
    Vec x(16);
    for (double& v : x) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    entries.push_back({x, static_cast<Label>(rng.below(4)), Split::train, "e" + std::to_string(i)});
  }
  // Duplicated points force exact distance ties.
  for (std::size_t i = 0; i < 100; ++i) entries[900 + i].x = entries[3 * i].x;
  const auto ds = build_datastore(entries, 4);
  std::size_t mismatches = 0, compared = 0;
  for (int q = 0; q < 50; ++q) {
    const Vec query = q % 5 == 0 ? entries[static_cast<std::size_t>(q) * 3].x : et::random_vec(rng, 16);
    const auto oracle = et::full_sort_knn(ds, query);
    for (std::size_t k = 1; k <= 32; ++k) {
      const auto ns = knn_search(ds, query, k);
      if (ns.indices.size() != k) {
        ++mismatches;
        continue;
      }
      for (std::size_t j = 0; j < k; ++j) {
        ++compared;
        if (ns.indices[j] != oracle[j].second || ns.distances[j] != oracle[j].first) ++mismatches;
      }
    }
  }
  return {mismatches == 0, std::to_string(compared) + " neighbours compared, " + std::to_string(mismatches) +
                               " mismatches"};
}

Outcome interpolation() {
  const Vec model{0.6, 0.4}, knn{0.2, 0.8};
  bool ok = interpolate(model, knn, 0.0) == model && interpolate(model, knn, 1.0) == knn;
  const auto mid = interpolate(model, knn, 0.5);
  const double interior = std::max(std::abs(mid[0] - 0.4), std::abs(mid[1] - 0.6));
  ok = ok && interior <= 1e-15;
  Rng rng(5);
  double worst_sum = 0.0;
  for (int draw = 0; draw < 10000; ++draw) {
    const std::size_t c = 2 + rng.below(6);
    Vec a(c), b(c);
    double ta = 0.0, tb = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
      a[i] = rng.uniform(0.0, 1.0);
      b[i] = rng.uniform(0.0, 1.0);
      ta += a[i];
      tb += b[i];
    }
    for (std::size_t i = 0; i < c; ++i) {
      a[i] /= ta;
      b[i] /= tb;
    }
    const auto p = interpolate(a, b, rng.uniform(0.0, 1.0));
    double s = 0.0;
    for (double v : p) {
      if (v < 0.0) ok = false;
      s += v;
    }
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    if (interpolate(a, b, 0.0) != a || interpolate(a, b, 1.0) != b) ok = false;
  }
  ok = ok && worst_sum <= 1e-9;
  return {ok, "interior error " + fmt(interior, 3) + ", worst |sum - 1| " + fmt(worst_sum, 3)};
}

Outcome metric_oracle() {
  Rng rng(6);
  double worst = 0.0;
  for (int set = 0; set < 1000; ++set) {
    const std::size_t c = 2 + rng.below(5);
    const std::size_t n = 1 + rng.below(300);
    std::vector<LabelPair> preds;
    for (std::size_t i = 0; i < n; ++i) {
      preds.push_back({static_cast<Label>(rng.below(c)), static_cast<Label>(rng.below(c))});
    }
    const auto r = evaluate(preds, c);
    // Recomputed from the reported confusion matrix.
    std::size_t diag = 0, total = 0;
    double recall = 0.0;
    std::size_t present = 0;
    for (std::size_t i = 0; i < c; ++i) {
      std::size_t row = 0;
      for (std::size_t j = 0; j < c; ++j) row += r.confusion[i][j];
      diag += r.confusion[i][i];
      total += row;
      if (row > 0) {
        recall += static_cast<double>(r.confusion[i][i]) / static_cast<double>(row);
        ++present;
      }
    }
    worst = std::max(worst, std::abs(r.wa - static_cast<double>(diag) / static_cast<double>(total)));
    worst = std::max(worst, std::abs(r.ua - recall / static_cast<double>(present)));
    if (total != n) worst = 1.0;
  }
  return {worst <= 1e-12, "1000 sets, max deviation " + fmt(worst, 3)};
}

PipelineResult staged_run(std::uint64_t seed, int n_folds) {
  RunConfig cfg;
  cfg.seed = seed;
  cfg.n_folds = n_folds;
  const auto corpus = generate_synthetic_corpus(cfg.effective_synth());
  const EmbeddingViews src(corpus.embeddings, cfg.train.augment.jitter_sigma);
  return run_pipeline(src, make_folds(corpus.manifest.records, cfg.n_folds), corpus.manifest.label_names.size(),
                      cfg.pipeline());
}

Outcome table1_trend() {
  const RunConfig defaults;
  const auto r = staged_run(defaults.seed, 5);
  const double s1 = r.aggregate.at(kStageS1).wa;
  const double s2 = r.aggregate.at(kStageS2).wa;
  const double s3 = r.aggregate.at(kStageS3).wa;
  const double d1 = r.mean_distance_ratio.at(kStageS1);
  const double d2 = r.mean_distance_ratio.at(kStageS2);
  const bool ok = s1 <= s2 && s2 <= s3 && s3 - s1 >= 0.01 && d2 > d1;
  return {ok, "WA S1 " + fmt(s1) + " S2 " + fmt(s2) + " S3 " + fmt(s3) + ", distance ratio S1 " + fmt(d1) +
                  " S2 " + fmt(d2)};
}

Outcome table3_structure() {
  bool ok = true;
  std::string detail;
  double worst_gap = 1.0;
  for (std::uint64_t seed : {7u, 8u, 9u}) {
    const auto r = staged_run(seed, 5);
    for (const auto& s : kStages) ok = ok && r.aggregate.count(s) == 1;
    const double plain_noscl = r.aggregate.at(kStageS1).wa;
    const double knn_noscl = r.aggregate.at(kStageKnnNoScl).wa;
    const double plain_scl = r.aggregate.at(kStageS2).wa;
    const double knn_scl = r.aggregate.at(kStageS3).wa;
    const double gap = std::min(knn_noscl - plain_noscl, knn_scl - plain_scl);
    worst_gap = std::min(worst_gap, gap);
    ok = ok && gap >= -0.005;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + ": noscl " +
              fmt(plain_noscl) + "->" + fmt(knn_noscl) + ", scl " + fmt(plain_scl) + "->" + fmt(knn_scl);
  }
  return {ok, "worst +kNN gain " + fmt(worst_gap) + " (" + detail + ")"};
}

Outcome augmentation_invariants() {
  bool ok = true;
  std::string detail;

  const auto tone = et::sine(1000.0, 1.0, 0.5);
  const auto noisy = add_noise(tone, 20.0, 99);
  std::vector<double> residual(tone.samples.size());
  for (std::size_t i = 0; i < residual.size(); ++i) residual[i] = noisy.samples[i] - tone.samples[i];
  const double snr = 20.0 * std::log10(et::rms_oracle(tone.samples) / et::rms_oracle(residual));
  ok = ok && std::abs(snr - 20.0) <= 0.1;
  detail += "SNR " + fmt(snr, 5) + " dB";

  Rng rng(8);
  Waveform w;
  for (int i = 0; i < 8000; ++i) w.samples.push_back(rng.uniform(-0.4, 0.4));
  const auto louder = change_volume(w, 2.0);
  double exact = 0.0;
  for (std::size_t i = 0; i < w.samples.size(); ++i) exact = std::max(exact, std::abs(louder.samples[i] - 2.0 * w.samples[i]));
  const double rms_ratio = et::rms_oracle(louder.samples) / et::rms_oracle(w.samples);
  ok = ok && exact == 0.0 && std::abs(rms_ratio - 2.0) <= 1e-12;
  detail += ", gain RMS ratio " + fmt(rms_ratio, 15);

  Waveform dry;
  for (int i = 0; i < 16000; ++i) dry.samples.push_back(rng.uniform(-0.3, 0.3));
  const auto ir = make_impulse_response(0.3, 16000, 11);
  auto wet = et::naive_convolution(dry.samples, ir);
  wet.resize(dry.samples.size());
  const double gain = et::peak_oracle(dry.samples) / et::peak_oracle(wet);
  const auto reverb = add_reverb(dry, 0.3, 11);
  double dev = 0.0;
  for (std::size_t i = 0; i < wet.size(); ++i) dev = std::max(dev, std::abs(reverb.samples[i] - wet[i] * gain));
  ok = ok && dev <= 1e-6;
  detail += ", reverb deviation " + fmt(dev, 3);

  const auto a440 = et::sine(440.0, 1.0);
  const auto up = shift_pitch(a440, 12.0);
  const double ratio = et::zero_crossing_hz(up) / et::zero_crossing_hz(a440);
  const bool halved = up.samples.size() * 2 == a440.samples.size();
  ok = ok && halved && std::abs(ratio - 2.0) <= 2.0 * 0.005;
  detail += ", pitch length " + std::to_string(a440.samples.size()) + "->" + std::to_string(up.samples.size()) +
            " frequency ratio " + fmt(ratio, 5);
  return {ok, detail};
}

Outcome determinism() {
  et::TempDir dir("acceptance_det");
  std::ostringstream sink;
  const auto cli = [&](std::vector<std::string> args) { return run_cli(args, sink, sink); };
  if (cli({"synth", "--out", (dir / "corpus").string()}) != 0) return {false, "synth failed"};
  const auto cfg = (dir / "corpus" / "run.cfg").string();
  if (cli({"run-all", "--config", cfg, "--out", (dir / "a").string()}) != 0) return {false, "first run-all failed"};
  if (cli({"run-all", "--config", cfg, "--out", (dir / "b").string()}) != 0) return {false, "second run-all failed"};
  bool ok = true;
  std::string detail;
  for (const char* f : {"report.json", "folds.csv"}) {
    const auto a = read_file_text(dir / "a" / f);
    const auto b = read_file_text(dir / "b" / f);
    const bool same = a == b && !a.empty();
    ok = ok && same;
    detail += (detail.empty() ? "" : ", ") + std::string(f) + (same ? " identical" : " differs") + " (" +
              std::to_string(a.size()) + " bytes)";
  }
  return {ok, detail};
}

std::string hygiene_violation(const std::vector<UtteranceMeta>& metas, int n_folds) {
  const auto folds = make_folds(metas, n_folds);
  std::set<std::string> speakers;
  for (const auto& m : metas) speakers.insert(m.speaker);
  std::map<std::string, int> tested;
  for (const auto& f : folds) {
    std::map<std::string, int> role_count;
    for (const auto* group : {&f.train_speakers, &f.val_speakers, &f.test_speakers}) {
      for (const auto& s : *group) role_count[s] += 1;
    }
    for (const auto& [s, n] : role_count) {
      if (n != 1) return "speaker " + s + " has " + std::to_string(n) + " roles in fold " + std::to_string(f.fold_index);
    }
    if (role_count.size() != speakers.size()) return "fold " + std::to_string(f.fold_index) + " drops speakers";
    for (const auto& s : f.test_speakers) tested[s] += 1;
    // Row-level check: every utterance lands in the split of its speaker.
    const auto idx = split_by_fold(metas, f);
    const std::set<std::string> test_set(f.test_speakers.begin(), f.test_speakers.end());
    for (std::size_t i : idx.test) {
      if (!test_set.count(metas[i].speaker)) return "row " + metas[i].id + " misplaced";
    }
    if (idx.train.size() + idx.val.size() + idx.test.size() != metas.size()) return "rows lost";
  }
  for (const auto& s : speakers) {
    if (tested[s] != 1) return "speaker " + s + " tested " + std::to_string(tested[s]) + " times";
  }
  return "";
}

Outcome fold_hygiene() {
  std::vector<UtteranceMeta> iemocap_layout;
  for (int session = 1; session <= 5; ++session) {
    for (const char* g : {"F", "M"}) {
      const std::string spk = "Ses0" + std::to_string(session) + g;
      for (int u = 0; u < 40; ++u) {
        iemocap_layout.push_back({spk + "_" + std::to_string(u), spk, static_cast<Label>(u % 4), 3.0, ""});
      }
    }
  }
  const auto synth = generate_synthetic_corpus(SyntheticConfig{}).manifest.records;
  int layouts = 0;
  for (const auto& [metas, folds] : std::vector<std::pair<std::vector<UtteranceMeta>, int>>{
           {iemocap_layout, 10}, {iemocap_layout, 5}, {synth, 10}, {synth, 5}}) {
    const auto v = hygiene_violation(metas, folds);
    if (!v.empty()) return {false, v};
    ++layouts;
  }
  return {true, std::to_string(layouts) + " fold sets checked"};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"gradient correctness", 5.0, gradient_correctness},
      {"SCL analytic anchors", 0.0, scl_anchors},
      {"kNN exactness", 10.0, knn_exactness},
      {"interpolation correctness", 0.0, interpolation},
      {"metric oracle", 0.0, metric_oracle},
      {"staged trend (S1 <= S2 <= S3)", 120.0, table1_trend},
      {"four-row structure, +kNN over 3 seeds", 0.0, table3_structure},
      {"augmentation invariants", 0.0, augmentation_invariants},
      {"run-all determinism", 0.0, determinism},
      {"fold hygiene", 0.0, fold_hygiene},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.time_limit_s > 0.0 && secs > c.time_limit_s) {
      o.pass = false;
      o.detail += "; over the " + fmt(c.time_limit_s, 3) + " s budget";
    }
    if (!o.pass) ++failed;
    std::printf("%s  %-40s %s [%.2f s]\n", o.pass ? "PASS" : "FAIL", c.name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
