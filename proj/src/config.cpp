#include "emoknn/config.hpp"

#include <cmath>

#include "emoknn/io_util.hpp"

namespace emoknn {

namespace {

ParamRange parse_range(const std::string& key, const std::string& value) {
  const auto v = parse_double_list(key, value);
  if (v.size() == 1) return {v[0], v[0]};
  if (v.size() == 2) return {v[0], v[1]};
  throw ConfigError(key + ": expected 'x' or 'lo,hi'");
}

std::string format_range(const ParamRange& r) {
  return r.lo == r.hi ? format_double(r.lo) : format_double(r.lo) + "," + format_double(r.hi);
}

std::string format_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

int parse_int(const std::string& key, const std::string& value) {
  const long long v = parse_i64(key, value);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw ConfigError(key + ": out of range");
  }
  return static_cast<int>(v);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  auto& t = train;
  if (key == "corpus.manifest") {
    manifest = value;
  } else if (key == "corpus.embeddings") {
    embeddings = value;
  } else if (key == "corpus.n_folds") {
    n_folds = parse_int(key, value);
  } else if (key == "train.batch_n") {
    t.batch_n = parse_u64(key, value);
  } else if (key == "train.max_epochs") {
    t.max_epochs = parse_int(key, value);
  } else if (key == "train.lr0") {
    t.lr0 = parse_double(key, value);
  } else if (key == "train.plateau_patience") {
    t.plateau_patience = parse_int(key, value);
  } else if (key == "train.lr_factor") {
    t.lr_factor = parse_double(key, value);
  } else if (key == "train.min_lr") {
    t.min_lr = parse_double(key, value);
  } else if (key == "train.max_len_seconds") {
    t.max_len_seconds = parse_double(key, value);
  } else if (key == "train.hidden_dim") {
    t.hidden_dim = parse_u64(key, value);
  } else if (key == "loss.tau") {
    t.loss.tau = parse_double(key, value);
  } else if (key == "loss.lambda") {
    t.loss.lambda = parse_double(key, value);
  } else if (key == "loss.normalize") {
    t.loss.normalize_embeddings = parse_bool(key, value);
  } else if (key == "loss.ce_on_views") {
    t.loss.ce_on_views = parse_bool(key, value);
  } else if (key == "loss.mean_over_anchors") {
    t.loss.mean_over_anchors = parse_bool(key, value);
  } else if (key == "augment.kind") {
    t.augment.kind = parse_augment_kind(value);
  } else if (key == "augment.snr_db") {
    t.augment.snr_db = parse_range(key, value);
  } else if (key == "augment.gain") {
    t.augment.gain = parse_range(key, value);
  } else if (key == "augment.rt60_seconds") {
    t.augment.rt60_seconds = parse_range(key, value);
  } else if (key == "augment.pitch_semitones") {
    t.augment.pitch_semitones = parse_range(key, value);
  } else if (key == "augment.mixed") {
    t.augment.mixed.clear();
    for (const auto& k : split(value, ',')) t.augment.mixed.push_back(parse_augment_kind(trim(k)));
  } else if (key == "augment.jitter_sigma") {
    t.augment.jitter_sigma = parse_double(key, value);
  } else if (key == "retrieval.weighting") {
    search.weighting.kind = value == "uniform" ? KnnWeighting::Kind::uniform
                            : value == "softmax_negdist"
                                ? KnnWeighting::Kind::softmax_negdist
                                : throw ConfigError(key + ": expected uniform or softmax_negdist");
  } else if (key == "retrieval.beta") {
    search.weighting.beta = parse_double(key, value);
  } else if (key == "inference.k_min") {
    search.k_min = parse_u64(key, value);
  } else if (key == "inference.k_max") {
    search.k_max = parse_u64(key, value);
  } else if (key == "inference.alpha_grid") {
    search.alpha_grid = parse_double_list(key, value);
  } else if (key == "inference.metric") {
    if (value == "wa") {
      search.metric = SelectionMetric::wa;
    } else if (value == "ua") {
      search.metric = SelectionMetric::ua;
    } else {
      throw ConfigError(key + ": expected wa or ua");
    }
  } else if (key == "inference.aggregation") {
    if (value == "pooled") {
      aggregation = Aggregation::pooled;
    } else if (value == "mean_of_folds") {
      aggregation = Aggregation::mean_of_folds;
    } else {
      throw ConfigError(key + ": expected pooled or mean_of_folds");
    }
  } else if (key == "inference.k") {
    fixed_k = value == "auto" ? std::nullopt : std::optional<std::size_t>(parse_u64(key, value));
  } else if (key == "inference.alpha") {
    fixed_alpha = value == "auto" ? std::nullopt : std::optional<double>(parse_double(key, value));
  } else if (key.rfind("synth.", 0) == 0) {
    if (key == "synth.seed") throw ConfigError("synth.seed: the synthetic corpus follows the root 'seed'");
    set_synthetic_field(synth, key.substr(6), value);
  } else if (key == "out") {
    out = value;
  } else if (key == "seed") {
    seed = parse_u64(key, value);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

std::string RunConfig::to_text() const {
  const auto& t = train;
  std::string s;
  const auto put = [&s](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
  const auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  put("seed", std::to_string(seed));
  put("out", out);
  put("corpus.manifest", manifest);
  put("corpus.embeddings", embeddings);
  put("corpus.n_folds", std::to_string(n_folds));
  put("train.batch_n", std::to_string(t.batch_n));
  put("train.max_epochs", std::to_string(t.max_epochs));
  put("train.lr0", format_double(t.lr0));
  put("train.plateau_patience", std::to_string(t.plateau_patience));
  put("train.lr_factor", format_double(t.lr_factor));
  put("train.min_lr", format_double(t.min_lr));
  put("train.max_len_seconds", format_double(t.max_len_seconds));
  put("train.hidden_dim", std::to_string(t.hidden_dim));
  put("loss.tau", format_double(t.loss.tau));
  put("loss.lambda", format_double(t.loss.lambda));
  put("loss.normalize", b(t.loss.normalize_embeddings));
  put("loss.ce_on_views", b(t.loss.ce_on_views));
  put("loss.mean_over_anchors", b(t.loss.mean_over_anchors));
  put("augment.kind", to_string(t.augment.kind));
  put("augment.snr_db", format_range(t.augment.snr_db));
  put("augment.gain", format_range(t.augment.gain));
  put("augment.rt60_seconds", format_range(t.augment.rt60_seconds));
  put("augment.pitch_semitones", format_range(t.augment.pitch_semitones));
  std::string mixed;
  for (std::size_t i = 0; i < t.augment.mixed.size(); ++i) {
    mixed += (i ? "," : "") + to_string(t.augment.mixed[i]);
  }
  put("augment.mixed", mixed);
  put("augment.jitter_sigma", format_double(t.augment.jitter_sigma));
  put("retrieval.weighting", to_string(search.weighting));
  put("retrieval.beta", format_double(search.weighting.beta));
  put("inference.k_min", std::to_string(search.k_min));
  put("inference.k_max", std::to_string(search.k_max));
  put("inference.alpha_grid", format_list(search.alpha_grid));
  put("inference.metric", search.metric == SelectionMetric::wa ? "wa" : "ua");
  put("inference.aggregation", aggregation == Aggregation::pooled ? "pooled" : "mean_of_folds");
  put("inference.k", fixed_k ? std::to_string(*fixed_k) : "auto");
  put("inference.alpha", fixed_alpha ? format_double(*fixed_alpha) : "auto");
  // The synthetic block reuses its own format, minus the seed line.
  for (const auto& line : split(format_synthetic_config(synth), '\n')) {
    if (line.empty() || line.rfind("seed=", 0) == 0) continue;
    s += "synth." + line + "\n";
  }
  return s;
}

std::vector<std::string> RunConfig::problems() const {
  std::vector<std::string> p;
  const auto check = [&p](auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      p.emplace_back(e.what());
    }
  };
  const auto& t = train;
  if (n_folds < 1) p.emplace_back("corpus.n_folds must be >= 1");
  if (t.batch_n < 1) p.emplace_back("train.batch_n must be >= 1");
  if (t.max_epochs < 0) p.emplace_back("train.max_epochs must be >= 0");
  if (!(t.lr0 > 0.0)) p.emplace_back("train.lr0 must be > 0");
  if (t.plateau_patience < 1) p.emplace_back("train.plateau_patience must be >= 1");
  if (!(t.lr_factor > 0.0 && t.lr_factor < 1.0)) p.emplace_back("train.lr_factor must be in (0, 1)");
  if (!(t.min_lr > 0.0) || t.min_lr > t.lr0) p.emplace_back("train.min_lr must be in (0, lr0]");
  if (!(t.max_len_seconds > 0.0)) p.emplace_back("train.max_len_seconds must be > 0");
  if (t.hidden_dim < 1) p.emplace_back("train.hidden_dim must be >= 1");
  check([&] { t.loss.validate(); });
  check([&] { t.augment.validate(); });
  if (search.weighting.kind == KnnWeighting::Kind::softmax_negdist &&
      !(search.weighting.beta > 0.0)) {
    p.emplace_back("retrieval.beta must be > 0");
  }
  if (search.k_min < 1 || search.k_max < search.k_min) {
    p.emplace_back("inference.k_min/k_max must satisfy 1 <= k_min <= k_max");
  }
  if (search.alpha_grid.empty()) p.emplace_back("inference.alpha_grid must not be empty");
  for (double a : search.alpha_grid) {
    if (!(a >= 0.0 && a <= 1.0)) {
      p.emplace_back("inference.alpha_grid entries must be in [0, 1]");
      break;
    }
  }
  if (fixed_k && *fixed_k < 1) p.emplace_back("inference.k must be >= 1");
  if (fixed_alpha && !(*fixed_alpha >= 0.0 && *fixed_alpha <= 1.0)) {
    p.emplace_back("inference.alpha must be in [0, 1]");
  }
  check([&] { synth.validate(); });
  return p;
}

void RunConfig::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::string msg = "invalid configuration:";
  for (const auto& s : p) msg += "\n  - " + s;
  throw ConfigError(msg);
}

TrainConfig RunConfig::effective_train() const {
  TrainConfig t = train;
  t.seed = seed;
  return t;
}

SyntheticConfig RunConfig::effective_synth() const {
  SyntheticConfig s = synth;
  s.seed = seed;
  return s;
}

PipelineConfig RunConfig::pipeline() const {
  return {effective_train(), search, aggregation};
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::vector<std::string> errors;
  for (const auto& kv : parse_key_values(text)) {
    try {
      cfg.set(kv.key, kv.value);
    } catch (const ConfigError& e) {
      errors.push_back("line " + std::to_string(kv.line) + ": " + e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& s : errors) msg += "\n  - " + s;
    throw ConfigError(msg);
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  try {
    return parse_run_config(read_file_text(path));
  } catch (const DataError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

}  // namespace emoknn
