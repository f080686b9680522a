#include "emoknn/retrieval.hpp"

#include <algorithm>
#include <cmath>

#include "emoknn/io_util.hpp"

namespace emoknn {

Datastore::Datastore(std::size_t key_dim, std::size_t num_classes, std::vector<float> keys,
                     std::vector<Label> labels, std::vector<Split> splits,
                     std::vector<std::string> ids)
    : key_dim_(key_dim),
      num_classes_(num_classes),
      keys_(std::move(keys)),
      labels_(std::move(labels)),
      splits_(std::move(splits)),
      ids_(std::move(ids)) {
  if (labels_.empty()) throw std::invalid_argument("datastore: needs at least one entry");
  if (key_dim_ == 0 || keys_.size() != labels_.size() * key_dim_ ||
      splits_.size() != labels_.size() || (!ids_.empty() && ids_.size() != labels_.size())) {
    throw std::invalid_argument("datastore: inconsistent sizes");
  }
  for (Label l : labels_) {
    if (l >= num_classes_) throw std::invalid_argument("datastore: label out of range");
  }
  for (float v : keys_) {
    if (!std::isfinite(v)) throw std::invalid_argument("datastore: non-finite key");
  }
}

double Datastore::distance(std::size_t i, std::span<const double> query) const {
  const auto k = key(i);
  double s = 0.0;
  for (std::size_t d = 0; d < key_dim_; ++d) {
    const double diff = static_cast<double>(k[d]) - query[d];
    s += diff * diff;
  }
  return std::sqrt(s);
}

namespace {

Datastore assemble(std::span<const DatastoreEntry> samples, std::size_t num_classes,
                   std::size_t key_dim, const auto& key_of) {
  if (samples.empty()) throw std::invalid_argument("build_datastore: no samples");
  std::vector<float> keys;
  keys.reserve(samples.size() * key_dim);
  std::vector<Label> labels;
  std::vector<Split> splits;
  std::vector<std::string> ids;
  for (const auto& s : samples) {
    const Vec key = key_of(s);
    if (key.size() != key_dim) throw std::invalid_argument("build_datastore: dimension mismatch");
    for (double v : key) keys.push_back(static_cast<float>(v));
    labels.push_back(s.label);
    splits.push_back(s.split);
    ids.push_back(s.id);
  }
  return Datastore(key_dim, num_classes, std::move(keys), std::move(labels), std::move(splits),
                   std::move(ids));
}

}  // namespace

Datastore build_datastore(const HeadParams& model, std::span<const DatastoreEntry> samples) {
  return assemble(samples, model.num_classes, model.hidden_dim, [&model](const DatastoreEntry& s) {
    if (s.x.size() != model.input_dim) {
      throw std::invalid_argument("build_datastore: entry '" + s.id + "' has dimension " +
                                  std::to_string(s.x.size()) + ", model expects " +
                                  std::to_string(model.input_dim));
    }
    return embed(model, s.x);
  });
}

Datastore build_datastore(std::span<const DatastoreEntry> samples, std::size_t num_classes) {
  const std::size_t dim = samples.empty() ? 0 : samples.front().x.size();
  return assemble(samples, num_classes, dim, [](const DatastoreEntry& s) { return s.x; });
}

NeighborSet knn_search(const Datastore& ds, std::span<const double> query, std::size_t k,
                       std::optional<std::size_t> exclude) {
  const std::size_t available = ds.size() - (exclude && *exclude < ds.size() ? 1 : 0);
  if (k < 1 || k > available) {
    throw std::invalid_argument("knn_search: k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(available) + "]");
  }
  if (query.size() != ds.key_dim()) throw std::invalid_argument("knn_search: query dimension mismatch");

  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (exclude && i == *exclude) continue;
    cand.emplace_back(ds.distance(i, query), i);
  }
  // Pair ordering gives (distance, index) lexicographic order: ties go to the lower index.
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
  NeighborSet ns;
  ns.indices.reserve(k);
  ns.distances.reserve(k);
  for (std::size_t j = 0; j < k; ++j) {
    ns.distances.push_back(cand[j].first);
    ns.indices.push_back(cand[j].second);
  }
  return ns;
}

std::string to_string(const KnnWeighting& w) {
  return w.kind == KnnWeighting::Kind::uniform ? "uniform" : "softmax_negdist";
}

KnnWeighting parse_knn_weighting(const std::string& name, double beta) {
  if (name == "uniform") return {KnnWeighting::Kind::uniform, beta};
  if (name == "softmax_negdist") {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("retrieval.beta must be > 0");
    return {KnnWeighting::Kind::softmax_negdist, beta};
  }
  throw ConfigError("retrieval.weighting must be uniform or softmax_negdist, got '" + name + "'");
}

Vec knn_distribution(const NeighborSet& ns, const Datastore& ds, std::size_t num_classes,
                     const KnnWeighting& weighting) {
  if (ns.indices.empty()) throw std::invalid_argument("knn_distribution: empty neighbour set");
  Vec p(num_classes, 0.0);
  const std::size_t k = ns.indices.size();
  if (weighting.kind == KnnWeighting::Kind::uniform) {
    for (std::size_t idx : ns.indices) p.at(ds.label(idx)) += 1.0;
    for (double& v : p) v /= static_cast<double>(k);
    return p;
  }
  const double nearest = ns.distances.front();
  Vec w(k);
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    w[j] = std::exp(-weighting.beta * (ns.distances[j] - nearest));
    total += w[j];
  }
  for (std::size_t j = 0; j < k; ++j) p.at(ds.label(ns.indices[j])) += w[j] / total;
  return p;
}

std::vector<std::uint8_t> encode_datastore(const Datastore& ds) {
  ByteWriter w;
  w.raw("DST1");
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(ds.key_dim()));
  w.u32(static_cast<std::uint32_t>(ds.num_classes()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (float v : ds.key(i)) w.f32(v);
    w.u16(ds.label(i));
    w.u8(static_cast<std::uint8_t>(ds.split(i)));
  }
  return std::move(w.bytes());
}

Datastore decode_datastore(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "DST1");
  r.expect_magic("DST1");
  const std::uint32_t m = r.u32();
  const std::uint32_t h = r.u32();
  const std::uint32_t c = r.u32();
  if (m == 0 || h == 0 || c == 0) throw DataError("DST1: zero-sized datastore");
  const std::uint64_t expected = std::uint64_t{m} * (4ULL * h + 3);
  if (r.remaining() != expected) {
    throw DataError("DST1: payload is " + std::to_string(r.remaining()) + " bytes, expected " +
                    std::to_string(expected));
  }
  std::vector<float> keys(std::size_t{m} * h);
  std::vector<Label> labels(m);
  std::vector<Split> splits(m);
  for (std::uint32_t i = 0; i < m; ++i) {
    for (std::uint32_t d = 0; d < h; ++d) {
      keys[std::size_t{i} * h + d] = r.f32();
      if (!std::isfinite(keys[std::size_t{i} * h + d])) throw DataError("DST1: non-finite key");
    }
    labels[i] = r.u16();
    if (labels[i] >= c) throw DataError("DST1: label out of range in record " + std::to_string(i));
    const std::uint8_t flag = r.u8();
    if (flag > 1) throw DataError("DST1: bad split flag in record " + std::to_string(i));
    splits[i] = static_cast<Split>(flag);
  }
  return Datastore(h, c, std::move(keys), std::move(labels), std::move(splits), {});
}

void save_datastore(const std::filesystem::path& path, const Datastore& ds) {
  write_file_bytes(path, encode_datastore(ds));
}

Datastore load_datastore(const std::filesystem::path& path) {
  return decode_datastore(read_file_bytes(path));
}

}  // namespace emoknn
