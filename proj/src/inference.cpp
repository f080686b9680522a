#include "emoknn/inference.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "emoknn/io_util.hpp"

namespace emoknn {

void check_distribution(std::span<const double> p, double tol) {
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) throw NumericError("distribution entry outside [0, 1]");
    total += v;
  }
  if (std::abs(total - 1.0) > tol) throw NumericError("distribution does not sum to 1");
}

ProbDist interpolate(std::span<const double> p_model, std::span<const double> p_knn, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("interpolate: alpha outside [0, 1]");
  if (p_model.size() != p_knn.size()) throw std::invalid_argument("interpolate: size mismatch");
  ProbDist p(p_model.size());
  for (std::size_t c = 0; c < p.size(); ++c) p[c] = alpha * p_knn[c] + (1.0 - alpha) * p_model[c];
  return p;
}

Prediction predict(const HeadParams& model, const Datastore& ds, std::span<const double> x,
                   std::size_t k, double alpha, const KnnWeighting& weighting,
                   std::optional<std::size_t> exclude) {
  const ForwardTrace t = forward(model, x);
  if (alpha == 0.0) return {static_cast<Label>(argmax(t.probs)), t.probs};
  const NeighborSet ns = knn_search(ds, t.embedding(), k, exclude);
  const ProbDist p_knn = knn_distribution(ns, ds, model.num_classes, weighting);
  ProbDist p = interpolate(t.probs, p_knn, alpha);
  const auto label = static_cast<Label>(argmax(p));
  return {label, std::move(p)};
}

EvalReport report_from_confusion(std::vector<std::vector<std::size_t>> confusion) {
  EvalReport r;
  const std::size_t c = confusion.size();
  std::size_t total = 0;
  std::size_t diag = 0;
  r.per_class_recall.assign(c, std::numeric_limits<double>::quiet_NaN());
  double recall_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t i = 0; i < c; ++i) {
    std::size_t row = 0;
    for (std::size_t j = 0; j < c; ++j) row += confusion[i][j];
    total += row;
    diag += confusion[i][i];
    if (row > 0) {
      r.per_class_recall[i] = static_cast<double>(confusion[i][i]) / static_cast<double>(row);
      recall_sum += r.per_class_recall[i];
      ++present;
    }
  }
  if (total == 0) throw std::invalid_argument("evaluate: no predictions");
  r.wa = static_cast<double>(diag) / static_cast<double>(total);
  r.ua = recall_sum / static_cast<double>(present);
  r.confusion = std::move(confusion);
  return r;
}

EvalReport evaluate(std::span<const LabelPair> predictions, std::size_t num_classes) {
  if (predictions.empty()) throw std::invalid_argument("evaluate: no predictions");
  std::vector<std::vector<std::size_t>> confusion(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (const auto& p : predictions) {
    if (p.truth >= num_classes || p.predicted >= num_classes) {
      throw std::invalid_argument("evaluate: label out of range");
    }
    confusion[p.truth][p.predicted] += 1;
  }
  return report_from_confusion(std::move(confusion));
}

std::vector<double> SearchOptions::default_alpha_grid() {
  std::vector<double> grid;
  for (int j = 1; j <= 19; ++j) grid.push_back(j / 20.0);
  return grid;
}

std::optional<std::size_t> find_self_entry(const Datastore& ds, const Query& q,
                                           std::span<const double> key) {
  if (!ds.ids().empty()) {
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.ids()[i] == q.id) return i;
    }
    return std::nullopt;
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.split(i) == Split::val && ds.distance(i, key) == 0.0) return i;
  }
  return std::nullopt;
}

HparamChoice search_hparams(const HeadParams& model, const Datastore& ds,
                            std::span<const Query> val, const SearchOptions& opt) {
  if (val.empty()) throw std::invalid_argument("search_hparams: no validation samples");
  if (opt.alpha_grid.empty()) throw std::invalid_argument("search_hparams: empty alpha grid");
  if (opt.k_min < 1 || opt.k_max < opt.k_min) throw std::invalid_argument("search_hparams: bad k range");
  for (double a : opt.alpha_grid) {
    if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("search_hparams: alpha outside [0, 1]");
  }
  const std::size_t classes = model.num_classes;

  std::unordered_map<std::string, std::size_t> row_of;
  if (!ds.ids().empty()) {
    for (std::size_t i = 0; i < ds.size(); ++i) row_of.emplace(ds.ids()[i], i);
  }

  // Largest k every query can support once its self entry is removed.
  const std::size_t k_cap = std::min(opt.k_max, ds.size() - 1 > 0 ? ds.size() - 1 : 1);
  if (k_cap < opt.k_min) throw std::invalid_argument("search_hparams: datastore too small for k range");
  const std::size_t nk = k_cap - opt.k_min + 1;
  const std::size_t na = opt.alpha_grid.size();

  // correct[(ki * na + ai) * classes + c]
  std::vector<std::size_t> correct(nk * na * classes, 0);
  std::vector<std::size_t> class_total(classes, 0);

  for (const auto& q : val) {
    const ForwardTrace t = forward(model, q.x);
    std::optional<std::size_t> self;
    if (!row_of.empty()) {
      if (const auto it = row_of.find(q.id); it != row_of.end()) self = it->second;
    } else {
      self = find_self_entry(ds, q, t.embedding());
    }
    const std::size_t usable = ds.size() - (self ? 1 : 0);
    const NeighborSet all = knn_search(ds, t.embedding(), std::min(k_cap, usable), self);
    class_total.at(q.label) += 1;

    for (std::size_t ki = 0; ki < nk; ++ki) {
      const std::size_t k = opt.k_min + ki;
      if (k > all.indices.size()) break;
      NeighborSet prefix;
      prefix.indices.assign(all.indices.begin(), all.indices.begin() + static_cast<std::ptrdiff_t>(k));
      prefix.distances.assign(all.distances.begin(), all.distances.begin() + static_cast<std::ptrdiff_t>(k));
      const ProbDist p_knn = knn_distribution(prefix, ds, classes, opt.weighting);
      for (std::size_t ai = 0; ai < na; ++ai) {
        const ProbDist p = interpolate(t.probs, p_knn, opt.alpha_grid[ai]);
        if (argmax(p) == q.label) correct[(ki * na + ai) * classes + q.label] += 1;
      }
    }
  }

  const auto score = [&](std::size_t ki, std::size_t ai) {
    const std::size_t* row = &correct[(ki * na + ai) * classes];
    if (opt.metric == SelectionMetric::wa) {
      std::size_t hits = 0;
      for (std::size_t c = 0; c < classes; ++c) hits += row[c];
      return static_cast<double>(hits) / static_cast<double>(val.size());
    }
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      if (class_total[c] == 0) continue;
      sum += static_cast<double>(row[c]) / static_cast<double>(class_total[c]);
      ++present;
    }
    return sum / static_cast<double>(present);
  };

  // Grid order is (k asc, alpha asc); only a strictly better score moves the choice.
  std::vector<std::size_t> alpha_order(na);
  for (std::size_t i = 0; i < na; ++i) alpha_order[i] = i;
  std::sort(alpha_order.begin(), alpha_order.end(),
            [&](std::size_t a, std::size_t b) { return opt.alpha_grid[a] < opt.alpha_grid[b]; });

  HparamChoice best{opt.k_min, opt.alpha_grid[alpha_order.front()], -1.0};
  for (std::size_t ki = 0; ki < nk; ++ki) {
    for (std::size_t ai : alpha_order) {
      const double s = score(ki, ai);
      if (s > best.score) best = {opt.k_min + ki, opt.alpha_grid[ai], s};
    }
  }
  return best;
}

double embedding_distance_ratio(const std::vector<Vec>& embeddings, std::span<const Label> labels) {
  if (embeddings.size() != labels.size()) throw std::invalid_argument("distance ratio: size mismatch");
  double inter = 0.0, intra = 0.0;
  std::size_t n_inter = 0, n_intra = 0;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    for (std::size_t j = i + 1; j < embeddings.size(); ++j) {
      const double d = std::sqrt(squared_distance(embeddings[i], embeddings[j]));
      if (labels[i] == labels[j]) {
        intra += d;
        ++n_intra;
      } else {
        inter += d;
        ++n_inter;
      }
    }
  }
  if (n_inter == 0 || n_intra == 0 || intra == 0.0) {
    throw std::invalid_argument("distance ratio: need both same-class and cross-class pairs");
  }
  return (inter / static_cast<double>(n_inter)) / (intra / static_cast<double>(n_intra));
}

// ---------------------------------------------------------------------------

namespace {

std::vector<UtteranceMeta> metas_of(const ViewSource& source) {
  std::vector<UtteranceMeta> metas;
  metas.reserve(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) metas.push_back(source.meta(i));
  return metas;
}

std::vector<Query> queries_of(const ViewSource& source, std::span<const std::size_t> rows) {
  std::vector<Query> out;
  out.reserve(rows.size());
  for (std::size_t i : rows) {
    const auto x = source.original(i);
    out.push_back({Vec(x.begin(), x.end()), source.meta(i).label, source.meta(i).id});
  }
  return out;
}

struct StageModel {
  const char* train_key;
  const char* plain_stage;
  const char* knn_stage;
  bool scl;
};

constexpr StageModel kModels[] = {
    {"noscl", kStageS1, kStageKnnNoScl, false},
    {"scl", kStageS2, kStageS3, true},
};

}  // namespace

FoldOutcome run_fold(const ViewSource& source, const FoldSpec& fold, std::size_t num_classes,
                     const PipelineConfig& config) {
  const auto idx = split_by_fold(metas_of(source), fold);
  if (idx.test.empty()) throw DataError("fold " + std::to_string(fold.fold_index) + ": empty test split");

  FoldOutcome out;
  out.fold_index = fold.fold_index;
  const auto val_queries = queries_of(source, idx.val);
  const auto test_queries = queries_of(source, idx.test);

  std::vector<DatastoreEntry> entries;
  for (std::size_t i : idx.train) {
    const auto x = source.original(i);
    entries.push_back({Vec(x.begin(), x.end()), source.meta(i).label, Split::train, source.meta(i).id});
  }
  for (std::size_t i : idx.val) {
    const auto x = source.original(i);
    entries.push_back({Vec(x.begin(), x.end()), source.meta(i).label, Split::val, source.meta(i).id});
  }
  out.datastore_size = entries.size();

  for (const auto& m : kModels) {
    TrainConfig tc = config.train;
    tc.seed = derive_seed(config.train.seed, "fold", static_cast<std::uint64_t>(fold.fold_index));
    if (!m.scl) tc.loss.lambda = 0.0;
    TrainResult trained = train_fold(source, idx.train, idx.val, num_classes, tc);
    const HeadParams& head = trained.best;

    const Datastore ds = build_datastore(head, entries);
    const HparamChoice choice = search_hparams(head, ds, val_queries, config.search);

    std::vector<LabelPair> plain, knn;
    std::vector<Vec> test_embeddings;
    std::vector<Label> test_labels;
    for (const auto& q : test_queries) {
      plain.push_back({q.label, predict(head, ds, q.x, choice.k, 0.0, config.search.weighting).label});
      knn.push_back(
          {q.label, predict(head, ds, q.x, choice.k, choice.alpha, config.search.weighting).label});
      test_embeddings.push_back(embed(head, q.x));
      test_labels.push_back(q.label);
    }

    EvalReport plain_report = evaluate(plain, num_classes);
    plain_report.fold_index = fold.fold_index;
    EvalReport knn_report = evaluate(knn, num_classes);
    knn_report.fold_index = fold.fold_index;
    knn_report.chosen_k = choice.k;
    knn_report.chosen_alpha = choice.alpha;

    out.reports[m.plain_stage] = std::move(plain_report);
    out.reports[m.knn_stage] = std::move(knn_report);
    out.predictions[m.plain_stage] = std::move(plain);
    out.predictions[m.knn_stage] = std::move(knn);
    out.distance_ratio[m.plain_stage] = embedding_distance_ratio(test_embeddings, test_labels);
    out.training[m.train_key] = std::move(trained);
  }
  return out;
}

PipelineResult run_pipeline(const ViewSource& source, const std::vector<FoldSpec>& folds,
                            std::size_t num_classes, const PipelineConfig& config) {
  if (folds.empty()) throw std::invalid_argument("run_pipeline: no folds");
  PipelineResult result;
  result.augmentation = source.augmentation_label();
  for (const auto& fold : folds) {
    try {
      result.folds.push_back(run_fold(source, fold, num_classes, config));
    } catch (const NumericError& e) {
      throw NumericError("fold " + std::to_string(fold.fold_index) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("fold " + std::to_string(fold.fold_index) + ": " + e.what());
    }
  }

  for (const auto& stage : kStages) {
    if (config.aggregation == Aggregation::pooled) {
      std::vector<LabelPair> pooled;
      for (const auto& f : result.folds) {
        const auto& p = f.predictions.at(stage);
        pooled.insert(pooled.end(), p.begin(), p.end());
      }
      result.aggregate[stage] = evaluate(pooled, num_classes);
    } else {
      std::vector<std::vector<std::size_t>> confusion(num_classes,
                                                      std::vector<std::size_t>(num_classes, 0));
      double wa = 0.0, ua = 0.0;
      for (const auto& f : result.folds) {
        const auto& r = f.reports.at(stage);
        wa += r.wa;
        ua += r.ua;
        for (std::size_t i = 0; i < num_classes; ++i) {
          for (std::size_t j = 0; j < num_classes; ++j) confusion[i][j] += r.confusion[i][j];
        }
      }
      EvalReport agg = report_from_confusion(std::move(confusion));
      agg.wa = wa / static_cast<double>(result.folds.size());
      agg.ua = ua / static_cast<double>(result.folds.size());
      result.aggregate[stage] = std::move(agg);
    }
  }
  for (const char* stage : {kStageS1, kStageS2}) {
    double sum = 0.0;
    for (const auto& f : result.folds) sum += f.distance_ratio.at(stage);
    result.mean_distance_ratio[stage] = sum / static_cast<double>(result.folds.size());
  }
  return result;
}

nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["fold_index"] = r.fold_index;
  j["confusion"] = r.confusion;
  j["wa"] = r.wa;
  j["ua"] = r.ua;
  auto recall = nlohmann::ordered_json::array();
  for (double v : r.per_class_recall) {
    if (std::isnan(v)) {
      recall.push_back(nullptr);
    } else {
      recall.push_back(v);
    }
  }
  j["per_class_recall"] = std::move(recall);
  j["chosen_k"] = r.chosen_k;
  j["chosen_alpha"] = r.chosen_alpha;
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.fold_index = j.at("fold_index").get<int>();
  r.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
  r.wa = j.at("wa").get<double>();
  r.ua = j.at("ua").get<double>();
  for (const auto& v : j.at("per_class_recall")) {
    r.per_class_recall.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN()
                                             : v.get<double>());
  }
  r.chosen_k = j.at("chosen_k").get<std::size_t>();
  r.chosen_alpha = j.at("chosen_alpha").get<double>();
  return r;
}

nlohmann::ordered_json pipeline_to_json(const PipelineResult& result,
                                        const std::vector<std::string>& label_names) {
  nlohmann::ordered_json j;
  j["labels"] = label_names;
  j["augmentation"] = result.augmentation;
  j["augmentation_is_waveform"] = result.augmentation.rfind("waveform:", 0) == 0;
  nlohmann::ordered_json stages;
  for (const auto& s : kStages) stages[s] = report_to_json(result.aggregate.at(s));
  j["stages"] = std::move(stages);
  nlohmann::ordered_json ratio;
  for (const char* s : {kStageS1, kStageS2}) ratio[s] = result.mean_distance_ratio.at(s);
  j["distance_ratio"] = std::move(ratio);
  auto folds = nlohmann::ordered_json::array();
  for (const auto& f : result.folds) {
    nlohmann::ordered_json fj;
    fj["fold_index"] = f.fold_index;
    fj["datastore_size"] = f.datastore_size;
    nlohmann::ordered_json reports;
    for (const auto& s : kStages) reports[s] = report_to_json(f.reports.at(s));
    fj["stages"] = std::move(reports);
    nlohmann::ordered_json fr;
    for (const char* s : {kStageS1, kStageS2}) fr[s] = f.distance_ratio.at(s);
    fj["distance_ratio"] = std::move(fr);
    nlohmann::ordered_json best;
    for (const auto& [key, t] : f.training) {
      best[key] = {{"best_epoch", t.best_epoch}, {"best_val_loss", t.best_val_loss},
                   {"epochs_run", t.log.size()}};
    }
    fj["training"] = std::move(best);
    folds.push_back(std::move(fj));
  }
  j["folds"] = std::move(folds);
  return j;
}

std::string pipeline_to_csv(const PipelineResult& result) {
  std::ostringstream out;
  out << "fold,stage,wa,ua,k,alpha\n";
  for (const auto& f : result.folds) {
    for (const auto& s : kStages) {
      const auto& r = f.reports.at(s);
      out << f.fold_index << ',' << s << ',' << format_double(r.wa) << ',' << format_double(r.ua)
          << ',' << r.chosen_k << ',' << format_double(r.chosen_alpha) << '\n';
    }
  }
  return out.str();
}

}  // namespace emoknn
