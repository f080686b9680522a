#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "emoknn/corpus.hpp"
#include "emoknn/encoder.hpp"
#include "emoknn/retrieval.hpp"
#include "emoknn/trainer.hpp"

namespace emoknn {

using ProbDist = Vec;

/// Throws unless every entry is in [0, 1] and the sum is 1 within `tol`.
void check_distribution(std::span<const double> p, double tol = 1e-9);

/// alpha * p_knn + (1 - alpha) * p_model.
ProbDist interpolate(std::span<const double> p_model, std::span<const double> p_knn, double alpha);

struct Prediction {
  Label label = 0;
  ProbDist probs;
};

/// Model distribution interpolated with the k-NN distribution of the
/// query's embedding. alpha == 0 skips retrieval entirely.
Prediction predict(const HeadParams& model, const Datastore& ds, std::span<const double> x,
                   std::size_t k, double alpha, const KnnWeighting& weighting,
                   std::optional<std::size_t> exclude = std::nullopt);

struct LabelPair {
  Label truth = 0;
  Label predicted = 0;
};

struct EvalReport {
  std::vector<std::vector<std::size_t>> confusion;  // rows = true, cols = predicted
  double wa = 0.0;
  double ua = 0.0;
  Vec per_class_recall;  // NaN for classes absent from the truth labels
  std::size_t chosen_k = 0;  // 0 when retrieval is unused
  double chosen_alpha = 0.0;
  int fold_index = -1;
};

/// WA = trace / total; UA = mean recall over classes present in the truth.
EvalReport evaluate(std::span<const LabelPair> predictions, std::size_t num_classes);
EvalReport report_from_confusion(std::vector<std::vector<std::size_t>> confusion);

enum class SelectionMetric { wa, ua };

struct SearchOptions {
  std::size_t k_min = 1;
  std::size_t k_max = 32;
  std::vector<double> alpha_grid = default_alpha_grid();
  SelectionMetric metric = SelectionMetric::wa;
  KnnWeighting weighting;

  static std::vector<double> default_alpha_grid();  // 0.05, 0.10, ..., 0.95
  bool operator==(const SearchOptions&) const = default;
};

struct Query {
  Vec x;
  Label label = 0;
  std::string id;
};

struct HparamChoice {
  std::size_t k = 1;
  double alpha = 0.0;
  double score = 0.0;
};

/// Row of `ds` holding the query itself: by id when the datastore has ids,
/// else the first validation-flagged row at distance exactly 0.
std::optional<std::size_t> find_self_entry(const Datastore& ds, const Query& q,
                                           std::span<const double> key);

/// Exhaustive (k, alpha) grid search on validation queries. Each query's own
/// datastore entry is excluded from its neighbours. Ties go to smaller k,
/// then smaller alpha.
HparamChoice search_hparams(const HeadParams& model, const Datastore& ds,
                            std::span<const Query> val, const SearchOptions& options);

/// Mean pairwise Euclidean distance across classes over the mean within
/// classes.
double embedding_distance_ratio(const std::vector<Vec>& embeddings, std::span<const Label> labels);

// ---------------------------------------------------------------------------
// Staged cross-validation protocol.

inline constexpr const char* kStageS1 = "S1";                    // CE only, no kNN
inline constexpr const char* kStageS2 = "S2";                    // CE + SCL, no kNN
inline constexpr const char* kStageKnnNoScl = "S2+knn(noscl)";  // CE only + kNN
inline constexpr const char* kStageS3 = "S3";                    // CE + SCL + kNN
inline const std::vector<std::string> kStages{kStageS1, kStageS2, kStageKnnNoScl, kStageS3};

enum class Aggregation { pooled, mean_of_folds };

struct PipelineConfig {
  TrainConfig train;  // loss.lambda is the SCL weight of the S2/S3 model
  SearchOptions search;
  Aggregation aggregation = Aggregation::pooled;
};

struct FoldOutcome {
  int fold_index = 0;
  std::map<std::string, EvalReport> reports;  // keyed by stage
  std::map<std::string, double> distance_ratio;  // "S1" / "S2" models
  std::map<std::string, TrainResult> training;   // "noscl" / "scl"
  std::map<std::string, std::vector<LabelPair>> predictions;
  std::size_t datastore_size = 0;
};

struct PipelineResult {
  std::vector<FoldOutcome> folds;
  std::map<std::string, EvalReport> aggregate;
  std::map<std::string, double> mean_distance_ratio;
  std::string augmentation;
};

/// Indices of one fold resolved against the source.
FoldOutcome run_fold(const ViewSource& source, const FoldSpec& fold, std::size_t num_classes,
                     const PipelineConfig& config);

PipelineResult run_pipeline(const ViewSource& source, const std::vector<FoldSpec>& folds,
                            std::size_t num_classes, const PipelineConfig& config);

nlohmann::ordered_json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
nlohmann::ordered_json pipeline_to_json(const PipelineResult& result,
                                        const std::vector<std::string>& label_names);
/// `fold,stage,wa,ua,k,alpha`, one row per fold per stage.
std::string pipeline_to_csv(const PipelineResult& result);

}  // namespace emoknn
