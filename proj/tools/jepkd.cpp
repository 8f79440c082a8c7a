// jepkd gen-data|train|eval|compare|selftest
//
// Exit codes: 0 success, 1 verification or comparison failure, 2 usage or
// config error, 3 I/O error.
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "jepkd/config.hpp"
#include "jepkd/eval.hpp"
#include "jepkd/feature_io.hpp"
#include "jepkd/trainer.hpp"
#include "jepkd/verify.hpp"

namespace fs = std::filesystem;
using namespace jepkd;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kIo = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string split = "test";
  std::string stages = "1,2,3";
  std::string mode;
  std::optional<std::uint64_t> seed;
  bool force = false;
  bool mutate_ctc = false;
  double tolerance = 0.0;
  std::string report_a, report_b;
  std::string report_out;
};

RunConfig resolve_config(const Options& o) {
  RunConfig c = o.config.empty() ? config_from_json(nlohmann::json::object()) : load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.mode.empty()) c.mode = mode_from_name(o.mode);
  if (!o.out.empty()) c.out_dir = o.out;
  return c;
}

fs::path data_dir(const Options& o, const RunConfig& c) {
  return o.data.empty() ? fs::path(c.out_dir) / "data" : fs::path(o.data);
}

std::vector<int> parse_stages(const std::string& text) {
  std::vector<int> stages;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item != "1" && item != "2" && item != "3") throw UsageError("--stages: '" + item + "' is not 1, 2 or 3");
    const int s = item[0] - '0';
    if (!stages.empty() && s <= stages.back()) throw UsageError("--stages: stages must be listed in increasing order");
    stages.push_back(s);
  }
  if (stages.empty()) throw UsageError("--stages: empty list");
  return stages;
}

int cmd_gen_data(const Options& o) {
  const RunConfig c = resolve_config(o);
  const fs::path dir = data_dir(o, c);
  const std::string hash = hash_hex(data_hash(c));
  const fs::path manifest = dir / "manifest.json";
  if (fs::exists(manifest)) {
    const auto existing = read_corpus(dir).data_hash;
    if (existing != hash && !o.force) {
      std::cerr << "gen-data: " << manifest << " was written for data hash " << existing
                << ", current config has " << hash << " (use --force to overwrite)\n";
      return kUsage;
    }
  }
  const CorpusBundle b = build_corpus(c);
  write_corpus(dir, b.corpus, b.vmap, data_hash(c));
  std::size_t total = 0;
  for (const auto& [name, samples] : b.corpus.splits) {
    std::cout << name << ": " << samples.size() << " samples\n";
    total += samples.size();
  }
  std::cout << "wrote " << total << " samples to " << dir.string() << " (data hash " << hash << ")\n";
  return kOk;
}

LoadedCorpus load_matching_corpus(const Options& o, const RunConfig& c) {
  const fs::path dir = data_dir(o, c);
  if (!fs::exists(dir / "manifest.json")) throw IoError("no corpus at " + dir.string() + " (run gen-data first)");
  LoadedCorpus lc = read_corpus(dir);
  const std::string want = hash_hex(data_hash(c));
  if (lc.data_hash != want) {
    throw UsageError("corpus at " + dir.string() + " has data hash " + lc.data_hash + ", config expects " + want);
  }
  return lc;
}

// Keeps only metrics lines up to the checkpoint cursor, so an interrupted run
// that is resumed leaves no duplicate records behind.
void trim_metrics(const fs::path& path, const Cursor& cursor) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const int stage = j.at("stage").get<int>();
    const std::size_t epoch = j.at("epoch").get<std::size_t>();
    if (stage < cursor.stage || (stage == cursor.stage && epoch <= cursor.epoch && cursor.epoch > 0)) {
      kept += line + "\n";
    }
  }
  write_file_atomic(path, kept);
}

int cmd_train(const Options& o) {
  const RunConfig c = resolve_config(o);
  const std::vector<int> stages = parse_stages(o.stages);
  const LoadedCorpus data = load_matching_corpus(o, c);
  const fs::path out(c.out_dir);
  fs::create_directories(out);
  const ConfigHash hash = config_hash(c);
  const SeedStreams seeds = fan_out(c.seed);

  Quartet q(model_config(c), seeds.init);
  Trainer trainer(q, data.corpus, c.schedule, c.optim, train_seeds(seeds));
  const fs::path ckpt_path = out / "checkpoint.jpkc";
  const fs::path metrics_path = out / "metrics.jsonl";
  if (fs::exists(ckpt_path)) {
    const Checkpoint ck = load_checkpoint(ckpt_path, hash);
    restore_checkpoint(ck, q, trainer.optim, trainer.cursor);
    trim_metrics(metrics_path, trainer.cursor);
    std::cerr << "resuming at stage " << trainer.cursor.stage << ", epoch " << trainer.cursor.epoch << "\n";
  } else if (fs::exists(metrics_path)) {
    fs::remove(metrics_path);
  }

  std::ofstream metrics(metrics_path, std::ios::app);
  if (!metrics) throw IoError("cannot write " + metrics_path.string());
  trainer.on_epoch = [&](const EpochMetrics& m) {
    metrics << m.to_json().dump() << "\n";
    metrics.flush();
    save_checkpoint(ckpt_path, capture_checkpoint(q, trainer.optim, trainer.cursor, hash, seeds.teacher));
    std::cerr << "stage " << m.stage << " epoch " << m.epoch << " step " << m.step;
    if (m.loss) std::cerr << " loss " << *m.loss;
    if (m.val_cer) std::cerr << " val_cer " << *m.val_cer;
    if (m.mean_l1_gap) std::cerr << " l1_gap " << *m.mean_l1_gap;
    std::cerr << "\n";
  };

  for (int stage : stages) {
    if (stage < trainer.cursor.stage) {
      std::cerr << "stage " << stage << " already completed, skipping\n";
      continue;
    }
    trainer.run_stage(stage);
    const Checkpoint ck = capture_checkpoint(q, trainer.optim, trainer.cursor, hash, seeds.teacher);
    save_checkpoint(ckpt_path, ck);
    save_checkpoint(out / ("stage" + std::to_string(stage) + ".jpkc"), ck);
  }
  std::cout << "config hash " << hash_hex(hash) << "\n";
  return kOk;
}

int cmd_eval(const Options& o) {
  const RunConfig c = resolve_config(o);
  const LoadedCorpus data = load_matching_corpus(o, c);
  const auto& samples = data.corpus.split(o.split);
  if (samples.empty()) throw UsageError("split '" + o.split + "' is empty");
  const fs::path ckpt_path = o.checkpoint.empty() ? fs::path(c.out_dir) / "checkpoint.jpkc" : fs::path(o.checkpoint);
  const ConfigHash hash = config_hash(c);
  const Checkpoint ck = load_checkpoint(ckpt_path, hash);
  Quartet q(model_config(c), fan_out(c.seed).init);
  OptimState optim;
  Cursor cursor;
  restore_checkpoint(ck, q, optim, cursor);

  const auto start = std::chrono::steady_clock::now();
  EvalReport r = evaluate_corpus(q, samples, c.mode, fan_out(c.seed).eval, o.split);
  r.config_hash = hash_hex(hash);
  r.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const fs::path report_path = o.report_out.empty()
                                   ? fs::path(c.out_dir) / ("report-" + o.split + "-" + std::string(mode_name(c.mode)) + ".json")
                                   : fs::path(o.report_out);
  if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
  write_file_atomic(report_path, report_to_json(r).dump(2) + "\n");
  std::cout << "CER=" << r.cer << "\n";
  std::cerr << "report " << report_path.string() << " (" << r.samples << " samples, " << r.wall_clock_seconds
            << " s)\n";
  return kOk;
}

EvalReport read_report(const std::string& path) {
  if (!fs::exists(path)) throw IoError("no report at " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_bytes(path));
  } catch (const nlohmann::json::exception& e) {
    throw ReportSchemaError(path + ": " + e.what());
  }
  return report_from_json(j);
}

int cmd_compare(const Options& o) {
  const EvalReport a = read_report(o.report_a);
  const EvalReport b = read_report(o.report_b);
  const Comparison cmp = compare(a, b, o.tolerance);
  std::cout << cmp.table;
  if (!o.report_out.empty()) {
    write_file_atomic(o.report_out, cmp.json.dump(2) + "\n");
  } else {
    std::cout << cmp.json.dump(2) << "\n";
  }
  return cmp.ordering_holds ? kOk : kFailure;
}

int cmd_selftest(const Options& o) {
  if (o.mutate_ctc) mutation::set_ctc_skip_disabled(true);
  const auto start = std::chrono::steady_clock::now();
  const fs::path scratch = o.out.empty() ? fs::temp_directory_path() / "jepkd-selftest" : fs::path(o.out);
  std::vector<verify::CheckResult> all;
  for (auto suite : {verify::ctc_oracle_suite(), verify::gradient_suite(), verify::edit_distance_suite(),
                     verify::lsgan_suite(), verify::format_suite(scratch)}) {
    all.insert(all.end(), suite.begin(), suite.end());
  }
  std::size_t failed = 0;
  for (const auto& r : all) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " [" << r.detail << "]\n";
    failed += !r.passed;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << all.size() - failed << "/" << all.size() << " checks passed in " << secs << " s\n";
  return failed == 0 ? kOk : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint-embedding predictive distillation at desk scale"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run config");
    sub->add_option("--out", o.out, "output directory (overrides out_dir)");
    sub->add_option("--seed", o.seed, "master seed (overrides seed)");
    sub->add_option("--mode", o.mode, "baseline | jepkd")->check(CLI::IsMember({"baseline", "jepkd"}));
    sub->add_option("--data", o.data, "corpus directory (default <out>/data)");
  };
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
  common(gen);
  gen->add_flag("--force", o.force, "overwrite a corpus written under another config");
  auto* train = app.add_subcommand("train", "run training stages");
  common(train);
  train->add_option("--stages", o.stages, "comma-separated stage list, e.g. 1,2,3 or 1");
  train->add_flag("--force", o.force, "accepted for symmetry; training always resumes from <out>");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  common(eval);
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint (default <out>/checkpoint.jpkc)");
  eval->add_option("--split", o.split, "train | val | test");
  eval->add_option("--report", o.report_out, "report path (default <out>/report-<split>-<mode>.json)");
  auto* cmp = app.add_subcommand("compare", "compare a baseline report (a) with a JEP-KD report (b)");
  cmp->add_option("a", o.report_a, "baseline report")->required();
  cmp->add_option("b", o.report_b, "candidate report")->required();
  cmp->add_option("--tolerance", o.tolerance, "allowed CER excess of b over a");
  cmp->add_option("--out", o.report_out, "write the JSON delta here instead of stdout");
  auto* self = app.add_subcommand("selftest", "run the oracle and gradient suites");
  self->add_option("--out", o.out, "scratch directory for format checks");
  self->add_flag("--mutate-ctc", o.mutate_ctc, "disable the CTC skip transition (the oracle must then fail)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*cmp) return cmd_compare(o);
    if (*self) return cmd_selftest(o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ReportSchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == CheckpointErrc::config_mismatch ? kUsage : kIo;
  } catch (const FeatureFileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const TrainingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
