#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "emoknn/augment.hpp"
#include "emoknn/corpus.hpp"
#include "emoknn/encoder.hpp"
#include "emoknn/objective.hpp"

namespace emoknn {

struct TrainConfig {
  std::size_t batch_n = 6;  // originals per batch; 2N = 12 instances
  int max_epochs = 150;
  double lr0 = 1e-4;
  int plateau_patience = 20;
  double lr_factor = 0.5;
  double min_lr = 1e-6;
  double max_len_seconds = 7.5;
  std::size_t hidden_dim = 64;
  std::uint64_t seed = 0;
  LossConfig loss;
  AugmentSpec augment;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Source of training instances: the original input vector of every sample
/// and freshly augmented views of it.
class ViewSource {
 public:
  virtual ~ViewSource() = default;

  virtual std::size_t size() const = 0;
  virtual std::size_t input_dim() const = 0;
  virtual const UtteranceMeta& meta(std::size_t i) const = 0;
  virtual std::span<const double> original(std::size_t i) const = 0;
  virtual Vec augmented(std::size_t i, std::uint64_t seed) const = 0;
  /// Short tag for reports, e.g. "waveform:mixed" or "embedding_jitter".
  virtual std::string augmentation_label() const = 0;
};

/// Imported embeddings; views are Gaussian jitter in embedding space.
class EmbeddingViews final : public ViewSource {
 public:
  EmbeddingViews(std::vector<LabeledEmbedding> items, double jitter_sigma);

  std::size_t size() const override { return items_.size(); }
  std::size_t input_dim() const override { return dim_; }
  const UtteranceMeta& meta(std::size_t i) const override { return items_[i].meta; }
  std::span<const double> original(std::size_t i) const override { return inputs_[i]; }
  Vec augmented(std::size_t i, std::uint64_t seed) const override;
  std::string augmentation_label() const override { return "embedding_jitter"; }

 private:
  std::vector<LabeledEmbedding> items_;
  std::vector<Vec> inputs_;
  std::size_t dim_ = 0;
  double sigma_;
};

/// Waveforms run through the toy frontend. Inputs are fitted to the maximum
/// utterance length; views are waveform augmentations of the original.
class WaveformViews final : public ViewSource {
 public:
  WaveformViews(std::vector<UtteranceMeta> metas, std::vector<Waveform> waves, AugmentSpec spec,
                double max_len_seconds, FrontendConfig frontend = {});

  std::size_t size() const override { return metas_.size(); }
  std::size_t input_dim() const override { return frontend_.feature_dim(); }
  const UtteranceMeta& meta(std::size_t i) const override { return metas_[i]; }
  std::span<const double> original(std::size_t i) const override { return inputs_[i]; }
  Vec augmented(std::size_t i, std::uint64_t seed) const override;
  std::string augmentation_label() const override { return "waveform:" + to_string(spec_.kind); }

 private:
  std::vector<UtteranceMeta> metas_;
  std::vector<Waveform> waves_;
  std::vector<Vec> inputs_;
  AugmentSpec spec_;
  double max_len_;
  FrontendConfig frontend_;
};

/// Inputs of one 2N batch in (view, original) pair order.
struct ViewBatch {
  Matrix inputs;
  std::vector<Label> labels;
  std::vector<std::string> ids;
};

/// Row 2t is the augmented view of originals[t], row 2t + 1 the original.
/// View seeds are derive_seed(seed, "view", t).
ViewBatch build_batch(const ViewSource& source, std::span<const std::size_t> originals,
                      std::uint64_t seed);

/// params - lr * grads. Non-finite gradients throw NumericError naming `batch_id`.
HeadParams sgd_step(const HeadParams& params, const HeadParams& grads, double lr,
                    const std::string& batch_id = "?");

struct TrainState {
  HeadParams params;
  int epoch = 0;
  double lr = 0.0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;
  int decays_at_floor = 0;  // plateau events with lr already at min_lr
  bool improved = false;    // set by the most recent plateau_schedule call
};

/// Reduce-on-plateau: an improvement is val_loss < best - 1e-12; after
/// `plateau_patience` epochs without one, lr <- max(lr * factor, min_lr).
TrainState plateau_schedule(TrainState state, double val_loss, const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct BatchLoss {
  double loss = 0.0;
  HeadParams grad;
};

/// Forward, combined loss and backward over one view batch.
BatchLoss batch_loss_and_grad(const HeadParams& params, const ViewBatch& batch,
                              const LossConfig& loss);

struct TrainResult {
  HeadParams best;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int best_epoch = 0;  // 0 = initial parameters
  std::vector<EpochRecord> log;
};

/// Fine-tunes a head on `train`, selecting the checkpoint with the lowest
/// validation loss. Only train and validation rows are visible here.
TrainResult train_fold(const ViewSource& source, std::span<const std::size_t> train,
                       std::span<const std::size_t> val, std::size_t num_classes,
                       const TrainConfig& config);

/// Validation objective: fixed batches with epoch-independent view seeds.
double validation_loss(const HeadParams& params, const ViewSource& source,
                       std::span<const std::size_t> val, const TrainConfig& config);

std::string format_train_log(const std::vector<EpochRecord>& log);

}  // namespace emoknn
