// Run configuration, seed fan-out and the on-disk corpus layout.
//
// Config file (JSON; every field optional, unknown keys rejected):
//   {
//     "seed": 1,
//     "mode": "jepkd" | "baseline",
//     "out_dir": "run",
//     "corpus":   {"train": 2000, "val": 200, "test": 200, "min_len": 6, "max_len": 12,
//                  "kappa": 0.25, "vocab_size": 24},
//     "model":    {"feature_dim": 32, "encoder_layers": 2, "decoder_layers": 2, "generator_blocks": 2,
//                  "attention_heads": 4, "ff_dim": 64, "max_len": 32, "z_dim": 8,
//                  "frontend_kernel": 3, "disc_kernel": 3, "dropout": 0.0},
//     "schedule": {"stage1_epochs": 20, "stage2_epochs": 10, "stage3_epochs": 2, "lambda": 0.3,
//                  "gamma": 0.1, "d_steps_per_g_step": 1, "batch_size": 8,
//                  "rewarm_per_stage": false, "label_smoothing": 0.0},
//     "optim":    {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "max_lr": 0.001, "warmup_steps": 200}
//   }
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "jepkd/eval.hpp"
#include "jepkd/synthdata.hpp"
#include "jepkd/trainer.hpp"

namespace jepkd {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::uint64_t seed = 1;
  EvalMode mode = EvalMode::jepkd;
  std::string out_dir = "run";
  CorpusSpec corpus;  // corpus.seed is derived from `seed`, not read from the file
  QuartetConfig model;
  StageSchedule schedule;
  OptimConfig optim;
};

nlohmann::json config_to_json(const RunConfig& c);
// Fields missing from j keep the values already in `base`.
RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);

// SHA-256 of the canonical serialization of everything that shapes a trained
// model: seed, corpus, model, schedule and optimizer. out_dir and mode are
// excluded, so one checkpoint can be evaluated in either mode.
ConfigHash config_hash(const RunConfig& c);
// Hash of the fields that shape the generated corpus (seed, corpus, model).
ConfigHash data_hash(const RunConfig& c);

struct SeedStreams {
  std::uint64_t corpus, lm, teacher, init, noise, shuffle, dropout, eval;
};
SeedStreams fan_out(std::uint64_t master);
TrainSeeds train_seeds(const SeedStreams& s);

// The model config with the corpus-dependent widths filled in.
QuartetConfig model_config(const RunConfig& c);

struct CorpusBundle {
  VisemeMap vmap;
  BigramLm lm;
  TeacherEncoder teacher;
  Corpus corpus;
};
CorpusBundle build_corpus(const RunConfig& c);

// Corpus on disk: manifest.json plus one pair of feature files per sample
// under features/. write_corpus is byte-deterministic.
void write_corpus(const std::filesystem::path& dir, const Corpus& corpus, const VisemeMap& vmap,
                  const ConfigHash& hash);
struct LoadedCorpus {
  Corpus corpus;
  std::string data_hash;
};
LoadedCorpus read_corpus(const std::filesystem::path& dir);

}  // namespace jepkd
