#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "emoknn/common.hpp"

namespace emoknn {

struct UtteranceMeta {
  std::string id;
  std::string speaker;
  Label label = 0;
  double duration = 0.0;  // seconds
  std::string waveform_path;  // empty when absent

  bool operator==(const UtteranceMeta&) const = default;
};

/// A fixed-length utterance representation. Stored as 32-bit floats, which
/// is also the on-disk precision.
struct LabeledEmbedding {
  UtteranceMeta meta;
  std::vector<float> x;

  bool operator==(const LabeledEmbedding&) const = default;
};

struct Manifest {
  std::vector<std::string> label_names;
  std::vector<UtteranceMeta> records;
};

struct FoldSpec {
  int fold_index = 0;
  std::vector<std::string> train_speakers;
  std::vector<std::string> val_speakers;
  std::vector<std::string> test_speakers;
};

/// Row indices of one fold, split by speaker membership.
struct FoldIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// Manifest: tab-separated `id speaker label_name duration [waveform_path]`,
// '#' comments, and a mandatory `#labels a,b,c` header before any record.
Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(const std::string& text);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

// EMB1 embedding files (little-endian):
//   "EMB1" u32 N u32 D, then N x {u16 id_len, id, u16 label, u16 spk_len, spk, D x f32}
std::vector<LabeledEmbedding> load_embeddings(const std::filesystem::path& path);
std::vector<LabeledEmbedding> decode_embeddings(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_embeddings(const std::vector<LabeledEmbedding>& items);
void save_embeddings(const std::filesystem::path& path, const std::vector<LabeledEmbedding>& items);

/// Mean over the rows of a T x D frame matrix.
Vec pool_frames(const Matrix& frames);

/// Orders speakers so that members of one session are adjacent. Speakers
/// named `<session>_<x>` group by prefix; otherwise sorted names are paired.
std::vector<std::string> session_ordered_speakers(std::vector<std::string> speakers);

/// Speaker-disjoint folds. Speakers are split into `n_folds` contiguous test
/// groups in session order; the validation group of fold f is the test group
/// of its session partner fold (f ^ 1, or f - 1 for a trailing odd fold).
/// Every speaker is tested exactly once.
std::vector<FoldSpec> make_folds(const std::vector<UtteranceMeta>& metas, int n_folds);

FoldIndices split_by_fold(const std::vector<UtteranceMeta>& metas, const FoldSpec& fold);

/// Checks that ids from an embedding file line up with the manifest.
void check_consistent(const Manifest& manifest, const std::vector<LabeledEmbedding>& items);

std::vector<std::size_t> class_histogram(const std::vector<UtteranceMeta>& metas,
                                         std::size_t num_classes);

// ---------------------------------------------------------------------------
// Synthetic corpus: isotropic Gaussian class blobs with per-speaker offsets
// and one deliberately overlapping class pair.

struct SyntheticConfig {
  std::vector<std::string> classes{"angry", "happy", "sad", "neutral"};
  std::size_t dim = 16;
  // IEMOCAP's 1103/1636/1084/1708 class balance at one tenth scale.
  std::vector<std::size_t> samples_per_class{110, 164, 108, 171};
  std::vector<double> scale{1.0};  // one entry per class, or one shared entry
  double separation = 3.0;
  // Second class of the pair sits at the first one's mean plus
  // overlap_distance along its own axis. Empty pair disables the overlap.
  std::pair<std::string, std::string> overlap_pair{"happy", "neutral"};
  double overlap_distance = 1.6;
  std::size_t speakers = 10;
  double speaker_scale = 0.3;
  std::uint64_t seed = 7;
  // Explicit means override the generated layout, keyed by class name.
  std::map<std::string, std::vector<double>> means;

  std::vector<std::vector<double>> class_means() const;
  double class_scale(std::size_t c) const;
  void validate() const;
  bool operator==(const SyntheticConfig&) const = default;
};

/// Applies one `key=value` of the synthetic config format.
void set_synthetic_field(SyntheticConfig& config, const std::string& key, const std::string& value);
SyntheticConfig parse_synthetic_config(const std::string& text);
SyntheticConfig load_synthetic_config(const std::filesystem::path& path);
std::string format_synthetic_config(const SyntheticConfig& config);

struct SyntheticCorpus {
  Manifest manifest;
  std::vector<LabeledEmbedding> embeddings;
};

SyntheticCorpus generate_synthetic_corpus(const SyntheticConfig& config);

}  // namespace emoknn
