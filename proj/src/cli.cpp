#include "emoknn/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <unordered_map>

#include <CLI11.hpp>
#include <json.hpp>

#include "emoknn/augment.hpp"
#include "emoknn/inference.hpp"
#include "emoknn/io_util.hpp"
#include "emoknn/retrieval.hpp"

namespace emoknn {

namespace fs = std::filesystem;

LoadedCorpus load_corpus(const RunConfig& config) {
  if (config.manifest.empty()) throw ConfigError("corpus.manifest is required");
  LoadedCorpus out;
  out.manifest = load_manifest(config.manifest);
  if (out.manifest.records.empty()) throw DataError("manifest has no records");

  if (!config.embeddings.empty()) {
    auto items = load_embeddings(config.embeddings);
    check_consistent(out.manifest, items);
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < items.size(); ++i) pos.emplace(items[i].meta.id, i);
    std::vector<LabeledEmbedding> ordered;
    ordered.reserve(out.manifest.records.size());
    for (const auto& r : out.manifest.records) {
      const auto it = pos.find(r.id);
      if (it == pos.end()) throw DataError("no embedding for manifest id '" + r.id + "'");
      ordered.push_back(items[it->second]);
      ordered.back().meta = r;
    }
    out.source = std::make_unique<EmbeddingViews>(std::move(ordered), config.train.augment.jitter_sigma);
    return out;
  }

  const fs::path base = fs::path(config.manifest).parent_path();
  std::vector<Waveform> waves;
  for (const auto& r : out.manifest.records) {
    if (r.waveform_path.empty()) {
      throw DataError("manifest id '" + r.id + "' has no waveform path and no embeddings file was given");
    }
    fs::path p(r.waveform_path);
    if (p.is_relative()) p = base / p;
    waves.push_back(read_wav(p));
  }
  out.source = std::make_unique<WaveformViews>(out.manifest.records, std::move(waves),
                                               config.train.augment, config.train.max_len_seconds);
  return out;
}

namespace {

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig resolve_config(const CommonOptions& o) {
  RunConfig cfg = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  std::vector<std::string> errors;
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      errors.push_back("--set expects key=value, got '" + s + "'");
      continue;
    }
    try {
      cfg.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    } catch (const ConfigError& e) {
      errors.emplace_back(e.what());
    }
  }
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.out = o.out;
  for (auto& p : cfg.problems()) errors.push_back(std::move(p));
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  return cfg;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory " + dir.string());
}

struct FoldContext {
  LoadedCorpus corpus;
  FoldSpec fold;
  FoldIndices idx;
};

FoldContext load_fold(const RunConfig& cfg, int fold_index) {
  FoldContext ctx{load_corpus(cfg), {}, {}};
  const auto folds = make_folds(ctx.corpus.manifest.records, cfg.n_folds);
  if (fold_index < 0 || fold_index >= static_cast<int>(folds.size())) {
    throw ConfigError("--fold must be in [0, " + std::to_string(folds.size()) + ")");
  }
  ctx.fold = folds[static_cast<std::size_t>(fold_index)];
  ctx.idx = split_by_fold(ctx.corpus.manifest.records, ctx.fold);
  return ctx;
}

std::vector<DatastoreEntry> datastore_entries(const ViewSource& src, const FoldIndices& idx) {
  std::vector<DatastoreEntry> entries;
  const auto add = [&](std::size_t i, Split split) {
    const auto x = src.original(i);
    entries.push_back({Vec(x.begin(), x.end()), src.meta(i).label, split, src.meta(i).id});
  };
  for (std::size_t i : idx.train) add(i, Split::train);
  for (std::size_t i : idx.val) add(i, Split::val);
  return entries;
}

std::vector<Query> queries(const ViewSource& src, std::span<const std::size_t> rows) {
  std::vector<Query> q;
  for (std::size_t i : rows) {
    const auto x = src.original(i);
    q.push_back({Vec(x.begin(), x.end()), src.meta(i).label, src.meta(i).id});
  }
  return q;
}

EvalReport evaluate_split(const HeadParams& model, const Datastore* ds, std::span<const Query> qs,
                          std::size_t k, double alpha, const KnnWeighting& weighting) {
  std::vector<LabelPair> pairs;
  for (const auto& q : qs) {
    const Label p = alpha == 0.0 ? static_cast<Label>(argmax(forward(model, q.x).probs))
                                 : predict(model, *ds, q.x, k, alpha, weighting).label;
    pairs.push_back({q.label, p});
  }
  EvalReport r = evaluate(pairs, model.num_classes);
  if (alpha != 0.0) {
    r.chosen_k = k;
    r.chosen_alpha = alpha;
  }
  return r;
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
  write_file_text(path, j.dump(2) + "\n");
}

int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  const fs::path dir(cfg.out);
  ensure_dir(dir);
  const auto synth = cfg.effective_synth();
  const auto corpus = generate_synthetic_corpus(synth);
  save_manifest(dir / "manifest.tsv", corpus.manifest);
  save_embeddings(dir / "embeddings.emb1", corpus.embeddings);
  write_file_text(dir / "synth.cfg", format_synthetic_config(synth));
  RunConfig next = cfg;
  next.manifest = (dir / "manifest.tsv").string();
  next.embeddings = (dir / "embeddings.emb1").string();
  write_file_text(dir / "run.cfg", next.to_text());
  out << "wrote " << corpus.embeddings.size() << " utterances to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_augment(const RunConfig& cfg, const std::string& input, const std::string& output,
                std::ostream& out) {
  if (input.empty() || output.empty()) throw ConfigError("augment needs --input and --output");
  const Waveform w = read_wav(input);
  const Waveform a = apply_augment(w, cfg.train.augment, derive_seed(cfg.seed, "augment"));
  write_wav(output, a);
  out << "wrote " << a.samples.size() << " samples (" << to_string(cfg.train.augment.kind)
      << ") to " << output << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, int fold_index, std::ostream& out) {
  const auto ctx = load_fold(cfg, fold_index);
  TrainConfig tc = cfg.effective_train();
  tc.seed = derive_seed(cfg.seed, "fold", static_cast<std::uint64_t>(fold_index));
  const auto result = train_fold(*ctx.corpus.source, ctx.idx.train, ctx.idx.val,
                                 ctx.corpus.manifest.label_names.size(), tc);
  const fs::path dir(cfg.out);
  ensure_dir(dir);
  save_params(dir / "head.hdp", result.best);
  write_file_text(dir / "train_log.jsonl", format_train_log(result.log));
  out << "fold " << fold_index << ": best epoch " << result.best_epoch << " of "
      << result.log.size() << ", val loss " << result.best_val_loss << "\n";
  return kExitOk;
}

int cmd_build_datastore(const RunConfig& cfg, int fold_index, const std::string& model_path,
                        std::ostream& out) {
  if (model_path.empty()) throw ConfigError("build-datastore needs --model");
  const auto ctx = load_fold(cfg, fold_index);
  const HeadParams head = load_params(model_path);
  const auto entries = datastore_entries(*ctx.corpus.source, ctx.idx);
  const Datastore ds = build_datastore(head, entries);
  const fs::path dir(cfg.out);
  ensure_dir(dir);
  save_datastore(dir / "datastore.dst", ds);
  out << "datastore: " << ds.size() << " entries, key dim " << ds.key_dim() << "\n";
  return kExitOk;
}

int cmd_infer(const RunConfig& cfg, int fold_index, const std::string& model_path,
              const std::string& ds_path, std::ostream& out) {
  if (model_path.empty() || ds_path.empty()) throw ConfigError("infer needs --model and --datastore");
  const auto ctx = load_fold(cfg, fold_index);
  const HeadParams head = load_params(model_path);
  const Datastore ds = load_datastore(ds_path);
  const auto& src = *ctx.corpus.source;

  std::size_t k = 0;
  double alpha = 0.0;
  if (cfg.fixed_alpha) {
    alpha = *cfg.fixed_alpha;
    if (alpha > 0.0) {
      if (!cfg.fixed_k) throw ConfigError("inference.alpha is fixed but inference.k is auto");
      k = *cfg.fixed_k;
    }
  } else {
    SearchOptions opt = cfg.search;
    if (cfg.fixed_k) opt.k_min = opt.k_max = *cfg.fixed_k;
    const auto val = queries(src, ctx.idx.val);
    const auto choice = search_hparams(head, ds, val, opt);
    k = choice.k;
    alpha = choice.alpha;
  }
  const auto test = queries(src, ctx.idx.test);
  EvalReport r = evaluate_split(head, &ds, test, k, alpha, cfg.search.weighting);
  r.fold_index = fold_index;
  const fs::path dir(cfg.out);
  ensure_dir(dir);
  write_json(dir / "report.json", report_to_json(r));
  out << "fold " << fold_index << ": WA " << r.wa << " UA " << r.ua << " (k=" << r.chosen_k
      << ", alpha=" << r.chosen_alpha << ")\n";
  return kExitOk;
}

int cmd_evaluate(const RunConfig& cfg, int fold_index, const std::string& model_path,
                 std::ostream& out) {
  if (model_path.empty()) throw ConfigError("evaluate needs --model");
  const auto ctx = load_fold(cfg, fold_index);
  const HeadParams head = load_params(model_path);
  const auto test = queries(*ctx.corpus.source, ctx.idx.test);
  EvalReport r = evaluate_split(head, nullptr, test, 0, 0.0, cfg.search.weighting);
  r.fold_index = fold_index;
  const fs::path dir(cfg.out);
  ensure_dir(dir);
  write_json(dir / "report.json", report_to_json(r));
  out << "fold " << fold_index << ": WA " << r.wa << " UA " << r.ua << "\n";
  return kExitOk;
}

int cmd_run_all(const RunConfig& cfg, std::ostream& out) {
  const auto corpus = load_corpus(cfg);
  const auto folds = make_folds(corpus.manifest.records, cfg.n_folds);
  const auto result = run_pipeline(*corpus.source, folds, corpus.manifest.label_names.size(),
                                   cfg.pipeline());
  const fs::path dir(cfg.out);
  ensure_dir(dir / "logs");
  write_json(dir / "report.json", pipeline_to_json(result, corpus.manifest.label_names));
  write_file_text(dir / "folds.csv", pipeline_to_csv(result));
  write_file_text(dir / "run.cfg", cfg.to_text());
  for (const auto& f : result.folds) {
    for (const auto& [key, t] : f.training) {
      write_file_text(dir / "logs" / ("fold" + std::to_string(f.fold_index) + "_" + key + ".jsonl"),
                      format_train_log(t.log));
    }
  }
  if (result.augmentation.rfind("waveform:", 0) != 0) {
    out << "note: views come from embedding-space jitter, not waveform augmentation\n";
  }
  for (const auto& s : kStages) {
    const auto& r = result.aggregate.at(s);
    out << s << ": WA " << r.wa << " UA " << r.ua << "\n";
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contrastive fine-tuning and kNN-interpolated inference for emotion recognition"};
  app.require_subcommand(1);

  CommonOptions common;
  int fold_index = 0;
  std::string model_path, ds_path, input, output;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "key=value run configuration");
    sub->add_option("--set", common.sets, "override a config key (key=value); repeatable");
    sub->add_option("--seed", common.seed, "root seed");
    sub->add_option("--out", common.out, "output directory");
  };
  auto* synth = app.add_subcommand("synth", "write a synthetic corpus (manifest + EMB1)");
  add_common(synth);
  auto* augment = app.add_subcommand("augment", "apply the configured augmentation to a WAV file");
  add_common(augment);
  augment->add_option("--input", input, "16-bit PCM mono WAV")->required();
  augment->add_option("--output", output, "output WAV")->required();
  auto* train = app.add_subcommand("train", "fine-tune the head on one fold");
  add_common(train);
  train->add_option("--fold", fold_index, "fold index");
  auto* build = app.add_subcommand("build-datastore", "embed train+val samples into a datastore");
  add_common(build);
  build->add_option("--fold", fold_index, "fold index");
  build->add_option("--model", model_path, "HDP1 checkpoint")->required();
  auto* infer = app.add_subcommand("infer", "kNN-interpolated evaluation on the test split");
  add_common(infer);
  infer->add_option("--fold", fold_index, "fold index");
  infer->add_option("--model", model_path, "HDP1 checkpoint")->required();
  infer->add_option("--datastore", ds_path, "DST1 datastore")->required();
  auto* eval = app.add_subcommand("evaluate", "bare-model evaluation on the test split");
  add_common(eval);
  eval->add_option("--fold", fold_index, "fold index");
  eval->add_option("--model", model_path, "HDP1 checkpoint")->required();
  auto* all = app.add_subcommand("run-all", "full cross-validated staged protocol");
  add_common(all);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    const RunConfig cfg = resolve_config(common);
    if (*synth) return cmd_synth(cfg, out);
    if (*augment) return cmd_augment(cfg, input, output, out);
    if (*train) return cmd_train(cfg, fold_index, out);
    if (*build) return cmd_build_datastore(cfg, fold_index, model_path, out);
    if (*infer) return cmd_infer(cfg, fold_index, model_path, ds_path, out);
    if (*eval) return cmd_evaluate(cfg, fold_index, model_path, out);
    if (*all) return cmd_run_all(cfg, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace emoknn
