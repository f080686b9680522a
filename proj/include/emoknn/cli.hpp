#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "emoknn/config.hpp"
#include "emoknn/corpus.hpp"
#include "emoknn/trainer.hpp"

namespace emoknn {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitNumeric = 3,
};

struct LoadedCorpus {
  Manifest manifest;
  std::unique_ptr<ViewSource> source;  // rows follow manifest order
};

/// Manifest plus either the EMB1 file or the waveforms it lists.
LoadedCorpus load_corpus(const RunConfig& config);

/// Entry point of the `emoknn` tool. Subcommands: synth, augment, train,
/// build-datastore, infer, evaluate, run-all.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace emoknn
