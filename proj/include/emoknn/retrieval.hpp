#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "emoknn/common.hpp"
#include "emoknn/encoder.hpp"

namespace emoknn {

enum class Split : std::uint8_t { train = 0, val = 1 };

struct DatastoreEntry {
  std::vector<double> x;  // model input (or the key itself for pass-through)
  Label label = 0;
  Split split = Split::train;
  std::string id;
};

/// Immutable (key, label) store built from train + validation samples.
/// Keys are kept as 32-bit floats; distances are evaluated in double.
class Datastore {
 public:
  Datastore(std::size_t key_dim, std::size_t num_classes, std::vector<float> keys,
            std::vector<Label> labels, std::vector<Split> splits, std::vector<std::string> ids);

  std::size_t size() const { return labels_.size(); }
  std::size_t key_dim() const { return key_dim_; }
  std::size_t num_classes() const { return num_classes_; }

  std::span<const float> key(std::size_t i) const { return {keys_.data() + i * key_dim_, key_dim_}; }
  Label label(std::size_t i) const { return labels_[i]; }
  Split split(std::size_t i) const { return splits_[i]; }
  /// Empty when loaded from a DST1 file, which does not carry ids.
  const std::vector<std::string>& ids() const { return ids_; }

  double distance(std::size_t i, std::span<const double> query) const;

  bool operator==(const Datastore&) const = default;

 private:
  std::size_t key_dim_;
  std::size_t num_classes_;
  std::vector<float> keys_;
  std::vector<Label> labels_;
  std::vector<Split> splits_;
  std::vector<std::string> ids_;
};

/// Keys are the head's embedding z of each entry, in input order.
Datastore build_datastore(const HeadParams& model, std::span<const DatastoreEntry> samples);
/// Pass-through: keys are the entries' vectors themselves.
Datastore build_datastore(std::span<const DatastoreEntry> samples, std::size_t num_classes);

struct NeighborSet {
  std::vector<std::size_t> indices;
  std::vector<double> distances;  // ascending; ties by ascending index
};

/// Exact k-NN by full scan. `exclude` removes one datastore row from
/// consideration (self-match suppression).
NeighborSet knn_search(const Datastore& ds, std::span<const double> query, std::size_t k,
                       std::optional<std::size_t> exclude = std::nullopt);

struct KnnWeighting {
  enum class Kind { uniform, softmax_negdist };
  Kind kind = Kind::uniform;
  double beta = 1.0;

  bool operator==(const KnnWeighting&) const = default;
};

std::string to_string(const KnnWeighting& w);
KnnWeighting parse_knn_weighting(const std::string& name, double beta);

Vec knn_distribution(const NeighborSet& ns, const Datastore& ds, std::size_t num_classes,
                     const KnnWeighting& weighting);

// DST1: "DST1" u32 M, u32 H, u32 C, then M x {H x f32, u16 label, u8 split}.
std::vector<std::uint8_t> encode_datastore(const Datastore& ds);
Datastore decode_datastore(const std::vector<std::uint8_t>& bytes);
void save_datastore(const std::filesystem::path& path, const Datastore& ds);
Datastore load_datastore(const std::filesystem::path& path);

}  // namespace emoknn
