// Copyright 2026 The rvqmotion Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//       http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// rvqmotion: corpus generation, training, generation, distillation and
// evaluation from the command line.
//
// Exit codes: 0 success, 1 unexpected failure, 2 invalid configuration,
// 3 missing or unreadable artifact, 4 numeric divergence, 5 model/codec
// checksum mismatch.

#include <CLI11.hpp>
#include <deque>
#include <iostream>
#include <optional>

#include "rvqmotion/cli/pipeline.hpp"

namespace {

using namespace rvqmotion;

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kMissing = 3, kDiverged = 4, kMismatch = 5 };

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::string> workdir;
  std::optional<std::string> threads;
  bool quiet = false;
};

// Command-specific flags, each bound to one configuration key.
struct FlagBinding {
  std::string key;
  std::optional<std::string> value;
};

class Command {
 public:
  Command(CLI::App& app, const std::string& name, const std::string& help) : sub_(app.add_subcommand(name, help)) {
    sub_->add_option("-c,--config", common_.config, "configuration file (key = value, include = other.cfg)");
    sub_->add_option("-s,--set", common_.sets, "override one setting, key=value (repeatable)");
    sub_->add_option("-w,--workdir", common_.workdir, "artifact directory (config key: workdir)");
    sub_->add_option("--threads", common_.threads, "worker threads (config key: threads)");
    sub_->add_flag("-q,--quiet", common_.quiet, "suppress progress records on stderr");
  }

  void bind(const std::string& flag, const std::string& key, const std::string& help) {
    bindings_.push_back({key, std::nullopt});
    sub_->add_option(flag, bindings_.back().value, help + " (config key: " + key + ")");
  }

  bool parsed() const { return sub_->parsed(); }
  const std::string& name() const { return name_ = sub_->get_name(); }
  CLI::App* app() { return sub_; }

  RunConfig run_config() const {
    RunConfig rc;
    if (!common_.config.empty()) rc.load_file(common_.config);
    if (common_.workdir) rc.set("workdir", *common_.workdir, "--workdir");
    if (common_.threads) rc.set("threads", *common_.threads, "--threads");
    for (const auto& b : bindings_) {
      if (b.value) rc.set(b.key, *b.value, "--" + b.key);
    }
    for (const auto& s : common_.sets) rc.set(s, "--set");
    return rc;
  }

  LogSink log() const {
    if (common_.quiet) return {};
    return [](const std::string& line) { std::cerr << line << '\n'; };
  }

 private:
  CLI::App* sub_;
  Common common_;
  std::deque<FlagBinding> bindings_;
  mutable std::string name_;
};

int run(Command& cmd) {
  RunConfig rc = cmd.run_config();
  const PipelineSettings s = PipelineSettings::read(rc);
  std::filesystem::create_directories(s.workdir);
  rc.write_snapshot(s.path(cmd.name() + ".cfg"));
  const LogSink log = cmd.log();
  const std::string& name = cmd.name();

  if (name == "gen-data") {
    stage_gen_data(s, log);
    return kOk;
  }
  const Corpus corpus = load_corpus(s);
  if (name == "train-codec") {
    stage_train_codec(s, corpus, log);
    return kOk;
  }
  if (name == "train-sync") {
    stage_train_sync(s, corpus, SyncVariant::kFusion, log);
    stage_train_sync(s, corpus, SyncVariant::kCosine, log);
    return kOk;
  }
  if (name == "train-style") {
    stage_train_style(s, corpus, log);
    return kOk;
  }
  const Codec codec = load_codec(s);
  if (name == "train-ar") {
    stage_train_ar(s, corpus, codec, log);
    return kOk;
  }
  const ArModel model = load_ar(s, codec);
  std::optional<SyncNet> rejection;
  const bool needs_rejection = (name == "generate" && s.sampling.strategy == Strategy::kSyncReject) ||
                               (name == "distill" && s.distill.aggregation.strategy == Strategy::kSyncReject);
  if (needs_rejection) rejection.emplace(load_sync(s, s.rejection_variant));
  const SyncNet* reject = rejection ? &*rejection : nullptr;
  if (name == "generate") {
    stage_generate(s, corpus, codec, model, reject, log);
    return kOk;
  }
  if (name == "distill") {
    stage_distill(s, corpus, codec, model, reject, log);
    return kOk;
  }
  if (name == "evaluate") {
    const SyncNet fusion = load_sync(s, SyncVariant::kFusion), cos = load_sync(s, SyncVariant::kCosine);
    const StyleNet style = load_style(s);
    std::optional<ArModel> student;
    if (s.eval_student) student.emplace(load_ar(s, codec, "student.ckpt"));
    const EvalModels models{&codec, &model, &fusion, &cos, &style,
                            s.rejection_variant == SyncVariant::kFusion ? &fusion : &cos};
    const EvalReport report = stage_evaluate(s, corpus, models, student ? &*student : nullptr, log);
    std::cout << report.table() << '\n' << report.key_values();
    return kOk;
  }
  throw std::logic_error("unhandled command " + name);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("rvqmotion: residual-VQ autoregressive facial motion synthesis");
  app.require_subcommand(1);
  std::deque<Command> commands;
  commands.emplace_back(app, "gen-data", "generate the synthetic paired corpus");
  commands.emplace_back(app, "train-codec", "train the residual-VQ motion codec");
  commands.emplace_back(app, "train-ar", "train the two-stage autoregressive model on a frozen codec");
  commands.emplace_back(app, "train-sync", "train both synchronization networks (fusion and cosine)");
  commands.emplace_back(app, "train-style", "train the speaking-style recognizer");
  Command& gen = commands.emplace_back(app, "generate", "sample motion for held-out driving signals");
  gen.bind("--strategy", "sampling.strategy", "default, knn, average or syncnet-rejection");
  gen.bind("--n", "sampling.n", "candidates per frame");
  gen.bind("--k", "sampling.k", "neighbours for knn");
  gen.bind("--keep-fraction", "sampling.keep_fraction", "share kept by rejection");
  gen.bind("--depth-limit", "sampling.depth_limit", "decode depth, 0 = full");
  gen.bind("--temperature", "sampling.temperature", "softmax temperature, 0 = greedy");
  gen.bind("--seed", "sampling.seed", "sampling seed");
  gen.bind("--samples", "generate.samples", "samples per clip");
  gen.bind("--clips", "generate.clips", "clips of the split to generate for");
  gen.bind("--split", "generate.split", "train, val or test");
  Command& dis = commands.emplace_back(app, "distill", "distill aggregated sampling into a single-pass student");
  dis.bind("--strategy", "distill.strategy", "aggregation used for relabeling");
  dis.bind("--n", "distill.n", "candidates per frame for relabeling");
  dis.bind("--epochs", "distill.epochs", "student epochs");
  Command& ev = commands.emplace_back(app, "evaluate", "compute the evaluation table on the test split");
  ev.bind("--samples", "eval.samples", "|S|, samples per driving signal");
  ev.bind("--clips", "eval.clips", "test clips evaluated (evenly spaced), 0 = all");
  ev.bind("--methods", "eval.methods", "comma list of strategy[:n]");
  ev.bind("--student", "eval.student", "also evaluate student.ckpt (true/false)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  Command* chosen = nullptr;
  for (auto& c : commands) {
    if (c.parsed()) chosen = &c;
  }
  try {
    return run(*chosen);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << '\n';
    return kMissing;
  } catch (const CodecMismatchError& e) {
    std::cerr << "checksum mismatch: " << e.what() << '\n';
    return kMismatch;
  } catch (const NumericError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}
