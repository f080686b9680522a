#include "emoknn/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "emoknn/io_util.hpp"

namespace emoknn {

namespace {

[[noreturn]] void manifest_error(int line, const std::string& field, const std::string& msg) {
  throw DataError("manifest line " + std::to_string(line) + ", field '" + field + "': " + msg);
}

}  // namespace

Manifest parse_manifest(const std::string& text) {
  Manifest m;
  std::unordered_map<std::string, Label> label_index;
  std::unordered_set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool have_labels = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("#labels", 0) == 0) {
      if (have_labels) manifest_error(lineno, "labels", "duplicate #labels header");
      for (const auto& name : split(trim(line.substr(7)), ',')) {
        const std::string n = trim(name);
        if (n.empty()) manifest_error(lineno, "labels", "empty label name");
        if (label_index.count(n)) manifest_error(lineno, "labels", "duplicate label '" + n + "'");
        label_index[n] = static_cast<Label>(m.label_names.size());
        m.label_names.push_back(n);
      }
      have_labels = true;
      continue;
    }
    if (trim(line).empty() || line[0] == '#') continue;
    if (!have_labels) manifest_error(lineno, "labels", "record before #labels header");

    const auto fields = split(line, '\t');
    if (fields.size() < 4 || fields.size() > 5) {
      manifest_error(lineno, "record",
                     "expected 4 or 5 tab-separated fields, got " + std::to_string(fields.size()));
    }
    UtteranceMeta meta;
    meta.id = fields[0];
    if (meta.id.empty()) manifest_error(lineno, "id", "empty id");
    if (!seen.insert(meta.id).second) manifest_error(lineno, "id", "duplicate id '" + meta.id + "'");
    meta.speaker = fields[1];
    if (meta.speaker.empty()) manifest_error(lineno, "speaker", "empty speaker");
    const auto it = label_index.find(fields[2]);
    if (it == label_index.end()) manifest_error(lineno, "label", "unknown label '" + fields[2] + "'");
    meta.label = it->second;
    try {
      meta.duration = parse_double("duration", fields[3]);
    } catch (const ConfigError&) {
      manifest_error(lineno, "duration", "not a number: '" + fields[3] + "'");
    }
    if (!(meta.duration >= 0.0) || !std::isfinite(meta.duration)) {
      manifest_error(lineno, "duration", "must be finite and non-negative");
    }
    if (fields.size() == 5) meta.waveform_path = fields[4];
    m.records.push_back(std::move(meta));
  }
  if (!have_labels) throw DataError("manifest: missing #labels header");
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_file_text(path));
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::string out = "#labels ";
  for (std::size_t i = 0; i < manifest.label_names.size(); ++i) {
    if (i) out += ',';
    out += manifest.label_names[i];
  }
  out += '\n';
  for (const auto& r : manifest.records) {
    out += r.id + '\t' + r.speaker + '\t' + manifest.label_names.at(r.label) + '\t' +
           format_double(r.duration);
    if (!r.waveform_path.empty()) out += '\t' + r.waveform_path;
    out += '\n';
  }
  write_file_text(path, out);
}

std::vector<std::uint8_t> encode_embeddings(const std::vector<LabeledEmbedding>& items) {
  const std::size_t dim = items.empty() ? 0 : items.front().x.size();
  ByteWriter w;
  w.raw("EMB1");
  w.u32(static_cast<std::uint32_t>(items.size()));
  w.u32(static_cast<std::uint32_t>(dim));
  for (const auto& e : items) {
    if (e.x.size() != dim) throw DataError("EMB1: dimension mismatch for '" + e.meta.id + "'");
    if (e.meta.id.size() > 0xFFFF || e.meta.speaker.size() > 0xFFFF) {
      throw DataError("EMB1: id or speaker too long for '" + e.meta.id + "'");
    }
    w.u16(static_cast<std::uint16_t>(e.meta.id.size()));
    w.raw(e.meta.id);
    w.u16(e.meta.label);
    w.u16(static_cast<std::uint16_t>(e.meta.speaker.size()));
    w.raw(e.meta.speaker);
    for (float v : e.x) {
      if (!std::isfinite(v)) throw DataError("EMB1: non-finite value in '" + e.meta.id + "'");
      w.f32(v);
    }
  }
  return std::move(w.bytes());
}

std::vector<LabeledEmbedding> decode_embeddings(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "EMB1");
  r.expect_magic("EMB1");
  const std::uint32_t n = r.u32();
  const std::uint32_t dim = r.u32();
  std::vector<LabeledEmbedding> out;
  out.reserve(std::min<std::size_t>(n, bytes.size()));
  for (std::uint32_t i = 0; i < n; ++i) {
    LabeledEmbedding e;
    e.meta.id = r.raw(r.u16());
    e.meta.label = r.u16();
    e.meta.speaker = r.raw(r.u16());
    e.x.resize(dim);
    for (auto& v : e.x) {
      v = r.f32();
      if (!std::isfinite(v)) {
        throw DataError("EMB1: non-finite value in record " + std::to_string(i) + " ('" +
                        e.meta.id + "')");
      }
    }
    out.push_back(std::move(e));
  }
  if (r.remaining() != 0) {
    throw DataError("EMB1: " + std::to_string(r.remaining()) +
                    " trailing bytes (dimension or count mismatch)");
  }
  return out;
}

std::vector<LabeledEmbedding> load_embeddings(const std::filesystem::path& path) {
  return decode_embeddings(read_file_bytes(path));
}

void save_embeddings(const std::filesystem::path& path, const std::vector<LabeledEmbedding>& items) {
  write_file_bytes(path, encode_embeddings(items));
}

Vec pool_frames(const Matrix& frames) {
  if (frames.rows() == 0) throw std::invalid_argument("pool_frames: no frames");
  if (!all_finite(frames.data())) throw std::invalid_argument("pool_frames: non-finite frame");
  Vec mean(frames.cols(), 0.0);
  for (std::size_t t = 0; t < frames.rows(); ++t) {
    const auto row = frames.row(t);
    for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += row[d];
  }
  for (double& v : mean) v /= static_cast<double>(frames.rows());
  return mean;
}

std::vector<std::string> session_ordered_speakers(std::vector<std::string> speakers) {
  std::sort(speakers.begin(), speakers.end());
  speakers.erase(std::unique(speakers.begin(), speakers.end()), speakers.end());
  const bool sessioned = std::all_of(speakers.begin(), speakers.end(), [](const std::string& s) {
    return s.find('_') != std::string::npos;
  });
  if (!sessioned) return speakers;  // sorted neighbours form the pairs
  std::stable_sort(speakers.begin(), speakers.end(), [](const std::string& a, const std::string& b) {
    return a.substr(0, a.rfind('_')) < b.substr(0, b.rfind('_'));
  });
  return speakers;
}

std::vector<FoldSpec> make_folds(const std::vector<UtteranceMeta>& metas, int n_folds) {
  if (n_folds < 1) throw std::invalid_argument("make_folds: n_folds must be >= 1");
  std::vector<std::string> all;
  for (const auto& m : metas) all.push_back(m.speaker);
  const auto order = session_ordered_speakers(all);
  const auto folds = static_cast<std::size_t>(n_folds);
  if (order.size() < folds) {
    throw DataError("make_folds: " + std::to_string(order.size()) + " speakers is too few for " +
                    std::to_string(n_folds) + " folds");
  }

  std::vector<std::vector<std::string>> test_groups(folds);
  const std::size_t base = order.size() / folds;
  const std::size_t extra = order.size() % folds;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t count = base + (f < extra ? 1 : 0);
    test_groups[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                          order.begin() + static_cast<std::ptrdiff_t>(pos + count));
    pos += count;
  }

  std::vector<FoldSpec> out;
  for (std::size_t f = 0; f < folds; ++f) {
    FoldSpec spec;
    spec.fold_index = static_cast<int>(f);
    spec.test_speakers = test_groups[f];
    if (folds > 1) {
      std::size_t partner = f ^ 1U;
      if (partner >= folds) partner = f - 1;
      spec.val_speakers = test_groups[partner];
    }
    for (const auto& s : order) {
      const auto in = [&](const std::vector<std::string>& g) {
        return std::find(g.begin(), g.end(), s) != g.end();
      };
      if (!in(spec.test_speakers) && !in(spec.val_speakers)) spec.train_speakers.push_back(s);
    }
    if (spec.train_speakers.empty()) {
      throw DataError("make_folds: fold " + std::to_string(f) + " has an empty training set (" +
                      std::to_string(order.size()) + " speakers, " + std::to_string(n_folds) +
                      " folds)");
    }
    if (spec.val_speakers.empty()) {
      throw DataError("make_folds: fold " + std::to_string(f) + " has no validation speakers");
    }
    out.push_back(std::move(spec));
  }
  return out;
}

FoldIndices split_by_fold(const std::vector<UtteranceMeta>& metas, const FoldSpec& fold) {
  const std::set<std::string> train(fold.train_speakers.begin(), fold.train_speakers.end());
  const std::set<std::string> val(fold.val_speakers.begin(), fold.val_speakers.end());
  const std::set<std::string> test(fold.test_speakers.begin(), fold.test_speakers.end());
  FoldIndices idx;
  for (std::size_t i = 0; i < metas.size(); ++i) {
    const auto& s = metas[i].speaker;
    if (train.count(s)) {
      idx.train.push_back(i);
    } else if (val.count(s)) {
      idx.val.push_back(i);
    } else if (test.count(s)) {
      idx.test.push_back(i);
    }
  }
  return idx;
}

void check_consistent(const Manifest& manifest, const std::vector<LabeledEmbedding>& items) {
  std::unordered_map<std::string, const UtteranceMeta*> by_id;
  for (const auto& r : manifest.records) by_id[r.id] = &r;
  std::size_t dim = items.empty() ? 0 : items.front().x.size();
  for (const auto& e : items) {
    const auto it = by_id.find(e.meta.id);
    if (it == by_id.end()) throw DataError("embedding '" + e.meta.id + "' not in manifest");
    if (it->second->label != e.meta.label || it->second->speaker != e.meta.speaker) {
      throw DataError("embedding '" + e.meta.id + "' disagrees with manifest label/speaker");
    }
    if (e.meta.label >= manifest.label_names.size()) {
      throw DataError("embedding '" + e.meta.id + "' label out of range");
    }
    if (e.x.size() != dim) throw DataError("embedding '" + e.meta.id + "' dimension mismatch");
  }
}

std::vector<std::size_t> class_histogram(const std::vector<UtteranceMeta>& metas,
                                         std::size_t num_classes) {
  std::vector<std::size_t> h(num_classes, 0);
  for (const auto& m : metas) h.at(m.label) += 1;
  return h;
}

// ---------------------------------------------------------------------------

namespace {

std::size_t class_index(const std::vector<std::string>& classes, const std::string& name) {
  const auto it = std::find(classes.begin(), classes.end(), name);
  if (it == classes.end()) throw ConfigError("synthetic: unknown class '" + name + "'");
  return static_cast<std::size_t>(it - classes.begin());
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

template <typename T>
std::string join_numbers(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

}  // namespace

double SyntheticConfig::class_scale(std::size_t c) const {
  return scale.size() == 1 ? scale[0] : scale.at(c);
}

void SyntheticConfig::validate() const {
  if (classes.empty()) throw ConfigError("synthetic: no classes");
  if (dim == 0) throw ConfigError("synthetic: dim must be positive");
  if (samples_per_class.size() != classes.size()) {
    throw ConfigError("synthetic: samples_per_class needs one entry per class");
  }
  for (auto n : samples_per_class) {
    if (n == 0) throw ConfigError("synthetic: samples_per_class entries must be positive");
  }
  if (scale.size() != 1 && scale.size() != classes.size()) {
    throw ConfigError("synthetic: scale needs one entry or one per class");
  }
  for (double s : scale) {
    if (!(s > 0.0)) throw ConfigError("synthetic: scale entries must be positive");
  }
  if (speakers == 0) throw ConfigError("synthetic: speakers must be positive");
  if (means.empty() && dim < classes.size()) {
    throw ConfigError("synthetic: generated layout needs dim >= number of classes");
  }
  for (const auto& [name, mean] : means) {
    class_index(classes, name);
    if (mean.size() != dim) throw ConfigError("synthetic: mean." + name + " has wrong dimension");
  }
  if (!overlap_pair.first.empty()) {
    const auto a = class_index(classes, overlap_pair.first);
    const auto b = class_index(classes, overlap_pair.second);
    if (a == b) throw ConfigError("synthetic: overlap_pair must name two different classes");
  }
  if (speaker_scale < 0.0) throw ConfigError("synthetic: speaker_scale must be non-negative");
}

std::vector<std::vector<double>> SyntheticConfig::class_means() const {
  std::vector<std::vector<double>> out(classes.size(), std::vector<double>(dim, 0.0));
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (const auto it = means.find(classes[c]); it != means.end()) {
      out[c] = it->second;
    } else {
      out[c][c % dim] = separation;
    }
  }
  if (!overlap_pair.first.empty()) {
    const auto a = class_index(classes, overlap_pair.first);
    const auto b = class_index(classes, overlap_pair.second);
    if (!means.count(classes[b])) {
      out[b] = out[a];
      out[b][b % dim] += overlap_distance;
    }
  }
  return out;
}

void set_synthetic_field(SyntheticConfig& cfg, const std::string& k, const std::string& v) {
  if (k == "classes") {
    cfg.classes.clear();
    for (const auto& c : split(v, ',')) cfg.classes.push_back(trim(c));
  } else if (k == "dim") {
    cfg.dim = parse_u64(k, v);
  } else if (k == "samples_per_class") {
    cfg.samples_per_class.clear();
    for (const auto& c : split(v, ',')) cfg.samples_per_class.push_back(parse_u64(k, trim(c)));
  } else if (k == "scale") {
    cfg.scale = parse_double_list(k, v);
  } else if (k == "separation") {
    cfg.separation = parse_double(k, v);
  } else if (k == "overlap_pair") {
    if (v.empty() || v == "none") {
      cfg.overlap_pair = {};
    } else {
      const auto parts = split(v, ',');
      if (parts.size() != 2) throw ConfigError("overlap_pair: expected 'a,b'");
      cfg.overlap_pair = {trim(parts[0]), trim(parts[1])};
    }
  } else if (k == "overlap_distance") {
    cfg.overlap_distance = parse_double(k, v);
  } else if (k == "speakers") {
    cfg.speakers = parse_u64(k, v);
  } else if (k == "speaker_scale") {
    cfg.speaker_scale = parse_double(k, v);
  } else if (k == "seed") {
    cfg.seed = parse_u64(k, v);
  } else if (k.rfind("mean.", 0) == 0) {
    cfg.means[k.substr(5)] = parse_double_list(k, v);
  } else {
    throw ConfigError("synthetic config: unknown key '" + k + "'");
  }
}

SyntheticConfig parse_synthetic_config(const std::string& text) {
  SyntheticConfig cfg;
  for (const auto& kv : parse_key_values(text)) {
    try {
      set_synthetic_field(cfg, kv.key, kv.value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(kv.line) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

SyntheticConfig load_synthetic_config(const std::filesystem::path& path) {
  return parse_synthetic_config(read_file_text(path));
}

std::string format_synthetic_config(const SyntheticConfig& c) {
  std::string out;
  out += "classes=" + join(c.classes) + "\n";
  out += "dim=" + std::to_string(c.dim) + "\n";
  out += "samples_per_class=" + join_numbers(c.samples_per_class) + "\n";
  out += "scale=" + join_numbers(c.scale) + "\n";
  out += "separation=" + format_double(c.separation) + "\n";
  out += "overlap_pair=" +
         (c.overlap_pair.first.empty() ? std::string("none")
                                       : c.overlap_pair.first + "," + c.overlap_pair.second) +
         "\n";
  out += "overlap_distance=" + format_double(c.overlap_distance) + "\n";
  out += "speakers=" + std::to_string(c.speakers) + "\n";
  out += "speaker_scale=" + format_double(c.speaker_scale) + "\n";
  out += "seed=" + std::to_string(c.seed) + "\n";
  for (const auto& [name, mean] : c.means) out += "mean." + name + "=" + join_numbers(mean) + "\n";
  return out;
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticConfig& config) {
  config.validate();
  const auto means = config.class_means();

  // IEMOCAP-style names: sessions of two speakers, "Ses01F"/"Ses01M".
  std::vector<std::string> speaker_names;
  for (std::size_t s = 0; s < config.speakers; ++s) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "Ses%02zu%c", s / 2 + 1, s % 2 == 0 ? 'F' : 'M');
    speaker_names.emplace_back(buf);
  }

  Rng speaker_rng(derive_seed(config.seed, "synth.speaker"));
  std::vector<std::vector<double>> offsets(config.speakers, std::vector<double>(config.dim));
  for (auto& o : offsets) {
    for (double& v : o) v = config.speaker_scale * speaker_rng.normal();
  }

  SyntheticCorpus corpus;
  corpus.manifest.label_names = config.classes;
  Rng rng(derive_seed(config.seed, "synth.samples"));
  for (std::size_t c = 0; c < config.classes.size(); ++c) {
    for (std::size_t j = 0; j < config.samples_per_class[c]; ++j) {
      const std::size_t spk = (j + c) % config.speakers;
      UtteranceMeta meta;
      char id[64];
      std::snprintf(id, sizeof(id), "%s_%s_%04zu", speaker_names[spk].c_str(),
                    config.classes[c].c_str(), j);
      meta.id = id;
      meta.speaker = speaker_names[spk];
      meta.label = static_cast<Label>(c);
      meta.duration = std::round(rng.uniform(1.0, 10.0) * 1000.0) / 1000.0;

      LabeledEmbedding e;
      e.meta = meta;
      e.x.resize(config.dim);
      for (std::size_t d = 0; d < config.dim; ++d) {
        const double v = means[c][d] + offsets[spk][d] + config.class_scale(c) * rng.normal();
        e.x[d] = static_cast<float>(v);
      }
      corpus.manifest.records.push_back(std::move(meta));
      corpus.embeddings.push_back(std::move(e));
    }
  }
  return corpus;
}

}  // namespace emoknn
