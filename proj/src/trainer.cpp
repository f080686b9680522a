#include "emoknn/trainer.hpp"

#include <chrono>
#include <cmath>

#include <json.hpp>

namespace emoknn {

void TrainConfig::validate() const {
  if (batch_n < 1) throw ConfigError("train.batch_n must be >= 1");
  if (max_epochs < 0) throw ConfigError("train.max_epochs must be >= 0");
  if (!(lr0 > 0.0)) throw ConfigError("train.lr0 must be > 0");
  if (plateau_patience < 1) throw ConfigError("train.plateau_patience must be >= 1");
  if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw ConfigError("train.lr_factor must be in (0, 1)");
  if (!(min_lr > 0.0) || min_lr > lr0) throw ConfigError("train.min_lr must be in (0, lr0]");
  if (!(max_len_seconds > 0.0)) throw ConfigError("train.max_len_seconds must be > 0");
  if (hidden_dim < 1) throw ConfigError("train.hidden_dim must be >= 1");
  loss.validate();
  augment.validate();
}

EmbeddingViews::EmbeddingViews(std::vector<LabeledEmbedding> items, double jitter_sigma)
    : items_(std::move(items)), sigma_(jitter_sigma) {
  dim_ = items_.empty() ? 0 : items_.front().x.size();
  inputs_.reserve(items_.size());
  for (const auto& e : items_) {
    if (e.x.size() != dim_) throw DataError("embedding '" + e.meta.id + "' has inconsistent dimension");
    inputs_.emplace_back(e.x.begin(), e.x.end());
  }
}

Vec EmbeddingViews::augmented(std::size_t i, std::uint64_t seed) const {
  return jitter_embedding(inputs_[i], sigma_, seed);
}

WaveformViews::WaveformViews(std::vector<UtteranceMeta> metas, std::vector<Waveform> waves,
                             AugmentSpec spec, double max_len_seconds, FrontendConfig frontend)
    : metas_(std::move(metas)),
      waves_(std::move(waves)),
      spec_(std::move(spec)),
      max_len_(max_len_seconds),
      frontend_(std::move(frontend)) {
  if (metas_.size() != waves_.size()) throw std::invalid_argument("WaveformViews: size mismatch");
  inputs_.reserve(waves_.size());
  for (const auto& w : waves_) inputs_.push_back(featurize(fit_length(w, max_len_), frontend_));
}

Vec WaveformViews::augmented(std::size_t i, std::uint64_t seed) const {
  try {
    return featurize(fit_length(apply_augment(waves_[i], spec_, seed), max_len_), frontend_);
  } catch (const std::exception& e) {
    throw DataError("augmentation failed for '" + metas_[i].id + "': " + e.what());
  }
}

ViewBatch build_batch(const ViewSource& source, std::span<const std::size_t> originals,
                      std::uint64_t seed) {
  if (originals.empty()) throw std::invalid_argument("build_batch: need N >= 1 originals");
  ViewBatch b;
  b.inputs = Matrix(2 * originals.size(), source.input_dim());
  for (std::size_t t = 0; t < originals.size(); ++t) {
    const std::size_t i = originals[t];
    const Vec view = source.augmented(i, derive_seed(seed, "view", t));
    const auto orig = source.original(i);
    std::copy(view.begin(), view.end(), b.inputs.row(2 * t).begin());
    std::copy(orig.begin(), orig.end(), b.inputs.row(2 * t + 1).begin());
    const auto& meta = source.meta(i);
    b.labels.push_back(meta.label);
    b.labels.push_back(meta.label);
    b.ids.push_back(meta.id + "#view");
    b.ids.push_back(meta.id);
  }
  return b;
}

HeadParams sgd_step(const HeadParams& params, const HeadParams& grads, double lr,
                    const std::string& batch_id) {
  if (!params.same_shape(grads)) throw std::invalid_argument("sgd_step: shape mismatch");
  if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: lr must be > 0");
  if (!grads.all_finite()) throw NumericError("sgd_step: non-finite gradient in batch " + batch_id);
  HeadParams out = params;
  const auto step = [lr](Matrix& p, const Matrix& g) {
    for (std::size_t i = 0; i < p.size(); ++i) p.data()[i] -= lr * g.data()[i];
  };
  step(out.w1, grads.w1);
  step(out.w2, grads.w2);
  for (std::size_t i = 0; i < out.b1.size(); ++i) out.b1[i] -= lr * grads.b1[i];
  for (std::size_t i = 0; i < out.b2.size(); ++i) out.b2[i] -= lr * grads.b2[i];
  return out;
}

TrainState plateau_schedule(TrainState state, double val_loss, const TrainConfig& config) {
  if (!std::isfinite(val_loss)) throw std::invalid_argument("plateau_schedule: non-finite val loss");
  state.improved = val_loss < state.best_val_loss - 1e-12;
  if (state.improved) {
    state.best_val_loss = val_loss;
    state.epochs_since_improvement = 0;
    return state;
  }
  state.epochs_since_improvement += 1;
  if (state.epochs_since_improvement >= config.plateau_patience) {
    if (state.lr <= config.min_lr) state.decays_at_floor += 1;
    state.lr = std::max(state.lr * config.lr_factor, config.min_lr);
    state.epochs_since_improvement = 0;
  }
  return state;
}

BatchLoss batch_loss_and_grad(const HeadParams& params, const ViewBatch& batch,
                              const LossConfig& loss) {
  const std::size_t rows = batch.inputs.rows();
  std::vector<ForwardTrace> traces;
  traces.reserve(rows);
  ContrastiveBatch cb{Matrix(rows, params.hidden_dim), batch.labels};
  Matrix logits(rows, params.num_classes);
  for (std::size_t r = 0; r < rows; ++r) {
    traces.push_back(forward(params, batch.inputs.row(r)));
    std::copy(traces.back().hidden.begin(), traces.back().hidden.end(), cb.embeddings.row(r).begin());
    std::copy(traces.back().logits.begin(), traces.back().logits.end(), logits.row(r).begin());
  }
  check_pairing(cb);
  const CombinedLoss cl = combined_loss(logits, cb, loss);
  BatchLoss out{cl.loss, HeadParams::zeros(params.input_dim, params.hidden_dim, params.num_classes)};
  for (std::size_t r = 0; r < rows; ++r) {
    accumulate_backward(params, traces[r], cl.grad_embeddings.row(r), cl.grad_logits.row(r),
                        out.grad);
  }
  return out;
}

namespace {

std::string describe_batch(const ViewBatch& b, int epoch, std::size_t index) {
  std::string s = "epoch " + std::to_string(epoch) + " batch " + std::to_string(index) + " [";
  for (std::size_t i = 1; i < b.ids.size(); i += 2) s += (i > 1 ? "," : "") + b.ids[i];
  return s + "]";
}

BatchLoss checked_batch(const HeadParams& params, const ViewBatch& batch, const LossConfig& loss,
                        const std::string& where) {
  BatchLoss bl;
  try {
    bl = batch_loss_and_grad(params, batch, loss);
  } catch (const std::invalid_argument& e) {
    throw NumericError(where + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(where + ": " + e.what());
  }
  if (!std::isfinite(bl.loss)) throw NumericError(where + ": non-finite loss");
  return bl;
}

}  // namespace

double validation_loss(const HeadParams& params, const ViewSource& source,
                       std::span<const std::size_t> val, const TrainConfig& config) {
  if (val.empty()) throw DataError("validation split is empty");
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < val.size(); start += config.batch_n) {
    const std::size_t count = std::min(config.batch_n, val.size() - start);
    const auto batch = build_batch(source, val.subspan(start, count),
                                   derive_seed(config.seed, "val", batches));
    total += checked_batch(params, batch, config.loss,
                           "validation batch " + std::to_string(batches)).loss;
    ++batches;
  }
  return total / static_cast<double>(batches);
}

TrainResult train_fold(const ViewSource& source, std::span<const std::size_t> train,
                       std::span<const std::size_t> val, std::size_t num_classes,
                       const TrainConfig& config) {
  config.validate();
  if (train.empty()) throw DataError("train_fold: empty training split");
  if (val.empty()) throw DataError("train_fold: empty validation split");

  TrainResult result;
  result.best = init_params(source.input_dim(), config.hidden_dim, num_classes,
                            derive_seed(config.seed, "init"));
  if (config.max_epochs == 0) return result;

  TrainState state;
  state.params = result.best;
  state.lr = config.lr0;

  std::vector<std::size_t> order(train.begin(), train.end());
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    state.epoch = epoch;
    std::sort(order.begin(), order.end());
    Rng shuffle(derive_seed(config.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    shuffle.shuffle(order);

    double train_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_n) {
      const std::size_t count = std::min(config.batch_n, order.size() - start);
      const auto batch = build_batch(
          source, std::span<const std::size_t>(order).subspan(start, count),
          derive_seed(config.seed, "augment", static_cast<std::uint64_t>(epoch), batches));
      const std::string where = describe_batch(batch, epoch, batches);
      const BatchLoss bl = checked_batch(state.params, batch, config.loss, where);
      state.params = sgd_step(state.params, bl.grad, state.lr, where);
      train_total += bl.loss;
      ++batches;
    }

    const double val_loss = validation_loss(state.params, source, val, config);
    const double lr_used = state.lr;
    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.best = state.params;
      result.best_epoch = epoch;
    }
    state = plateau_schedule(std::move(state), val_loss, config);

    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;
    result.log.push_back(
        {epoch, train_total / static_cast<double>(batches), val_loss, lr_used, elapsed.count()});

    if (state.decays_at_floor > 0) break;  // patience ran out at min_lr
  }
  return result;
}

std::string format_train_log(const std::vector<EpochRecord>& log) {
  std::string out;
  for (const auto& r : log) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["train_loss"] = r.train_loss;
    j["val_loss"] = r.val_loss;
    j["lr"] = r.lr;
    j["seconds"] = r.seconds;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace emoknn
