#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "emoknn/corpus.hpp"
#include "emoknn/inference.hpp"
#include "emoknn/trainer.hpp"

namespace emoknn {

/// Everything a CLI run needs, as flat `section.key=value` text. Defaults
/// follow the reference training protocol (tau 0.07, lambda 0.1, lr 1e-4,
/// patience 20, 150 epochs, 12-instance batches, 7.5 s, k in 1..32).
struct RunConfig {
  std::string manifest;
  std::string embeddings;  // empty: read waveforms listed in the manifest
  int n_folds = 10;

  TrainConfig train;
  SearchOptions search;
  Aggregation aggregation = Aggregation::pooled;
  // Fixed inference hyper-parameters; unset means grid search on validation.
  std::optional<std::size_t> fixed_k;
  std::optional<double> fixed_alpha;

  SyntheticConfig synth;  // used by `synth`; its seed follows the root seed

  std::string out = "out";
  std::uint64_t seed = 7;

  /// Applies one `key=value`; throws ConfigError on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  std::string to_text() const;

  /// Every offending field, one message each. Empty when valid.
  std::vector<std::string> problems() const;
  /// Throws a ConfigError listing all problems.
  void validate() const;

  /// Copies the root seed into the places that consume it.
  TrainConfig effective_train() const;
  SyntheticConfig effective_synth() const;
  PipelineConfig pipeline() const;

  bool operator==(const RunConfig&) const = default;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

}  // namespace emoknn
