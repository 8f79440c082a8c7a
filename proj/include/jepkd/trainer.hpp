// Three-stage training of the quartet.
//
//   stage 1 (warm-up):     encoder, generator, decoder; CTC + L1(G(z,v), a) + CE
//   stage 2 (enhancement): generator and discriminator, adversarial + L1
//   stage 3 (refinement):  decoder only; CTC + CE on the generator's output
//
// The stage-1-only baseline is the same trainer with stages 2 and 3 at zero
// epochs.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "jepkd/losses.hpp"
#include "jepkd/models.hpp"
#include "jepkd/synthdata.hpp"

namespace jepkd {

struct OptimConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_lr = 1e-3;
  std::uint64_t warmup_steps = 200;
};

// max_lr * min(step / warmup, sqrt(warmup / step)); 0 at step 0.
double lr_at(std::uint64_t step, const OptimConfig& cfg);

struct AdamSlot {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
};

struct OptimState {
  std::map<std::string, AdamSlot> slots;
  std::uint64_t step = 0;  // optimizer iterations taken; drives lr_at
};

// Bias-corrected Adam on every parameter whose group is listed and trainable.
void adam_step(ParameterStore& params, const GradientMap& grads, OptimState& state, const OptimConfig& cfg, double lr,
               std::span<const Group> groups);

struct StageSchedule {
  std::array<std::size_t, 3> epochs = {20, 10, 2};
  StageLossWeights weights;
  LsGanConfig lsgan;
  std::size_t d_steps_per_g_step = 1;
  std::size_t batch_size = 8;
  bool rewarm_per_stage = false;
  double label_smoothing = 0.0;
};

// Trainable groups of each stage (1-based).
std::vector<Group> stage_groups(int stage);

struct TrainSeeds {
  std::uint64_t noise = 1;    // z per (stage, epoch, sample)
  std::uint64_t shuffle = 2;  // batch order per (stage, epoch)
  std::uint64_t dropout = 3;
  std::uint64_t eval = 4;     // z during validation
};

struct Cursor {
  int stage = 1;                  // stage to run next
  std::size_t epoch = 0;          // epochs already completed within it
  std::uint64_t stage_start_step = 0;

  bool operator==(const Cursor&) const = default;
};

struct EpochMetrics {
  int stage = 0;
  std::size_t epoch = 0;  // 0 records the state on entering the stage
  std::uint64_t step = 0;
  double lr = 0.0;
  std::optional<double> loss, ctc, ce, l1, d_loss, g_loss;
  std::optional<double> val_cer, mean_l1_gap;
  std::size_t skipped = 0;  // samples dropped for an infeasible CTC target

  nlohmann::json to_json() const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Trainer {
 public:
  Trainer(Quartet& quartet, const Corpus& corpus, StageSchedule schedule, OptimConfig optim, TrainSeeds seeds);

  // Runs the remaining epochs of `stage` (resuming mid-stage if the cursor
  // points into it) and advances the cursor to the next stage.
  std::vector<EpochMetrics> run_stage(int stage);
  std::vector<EpochMetrics> run_stage1() { return run_stage(1); }
  std::vector<EpochMetrics> run_stage2() { return run_stage(2); }
  std::vector<EpochMetrics> run_stage3() { return run_stage(3); }

  // Decoder-only training that reads the teacher features directly. Gives the
  // topline a student can at best approach; the cursor is left untouched.
  std::vector<EpochMetrics> run_teacher_topline(std::size_t epochs);

  // Called after every record, including the stage-entry record.
  std::function<void(const EpochMetrics&)> on_epoch;

  // Mean of l1_distance(G(z, v), a) over a split, z from the eval stream.
  double mean_l1_gap(const std::vector<PairedSample>& samples) const;

  Cursor cursor;
  OptimState optim;

  const StageSchedule& schedule() const { return schedule_; }
  const OptimConfig& optim_config() const { return optim_cfg_; }

 private:
  struct StepStats;
  StepStats step_stage1(std::span<const std::size_t> batch, std::uint64_t epoch_key, double lr);
  StepStats step_stage2(std::span<const std::size_t> batch, std::uint64_t epoch_key, double lr);
  StepStats step_stage3(std::span<const std::size_t> batch, std::uint64_t epoch_key, double lr);
  Tensor noise_for(std::uint64_t epoch_key, std::size_t sample) const;
  EpochMetrics validation_record(int stage, std::size_t epoch) const;
  void apply(const Tensor& loss, double lr, std::span<const Group> groups);

  Quartet& q_;
  const Corpus& corpus_;
  StageSchedule schedule_;
  OptimConfig optim_cfg_;
  TrainSeeds seeds_;
  std::vector<Tensor> frozen_v_;  // encoder outputs, cached while the encoder is frozen
};

// ---------------------------------------------------------------------------
// Checkpoints.
//
//   "JPKC" | version u32 | config hash (32 bytes) | u32 block count |
//   blocks: name length u32 | UTF-8 name | tensor record (64-bit payload)
//
// Parameter blocks are named after the parameter; optimizer moments are
// "optim.m/<name>", "optim.v/<name>", "optim.t/<name>"; "optim.step",
// "cursor" and "teacher_seed" carry the rest. Blocks are name-sorted.

using ConfigHash = std::array<std::uint8_t, 32>;
std::string hash_hex(const ConfigHash& h);

enum class CheckpointErrc { bad_magic = 1, bad_version = 2, truncated = 3, config_mismatch = 4, io_error = 5 };

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  CheckpointErrc code() const { return code_; }

 private:
  CheckpointErrc code_;
};

struct Checkpoint {
  ConfigHash config_hash{};
  std::uint64_t teacher_seed = 0;
  Cursor cursor;
  std::map<std::string, Tensor> parameters;
  OptimState optim;
};

Checkpoint capture_checkpoint(const Quartet& q, const OptimState& optim, const Cursor& cursor,
                              const ConfigHash& hash, std::uint64_t teacher_seed);
// Copies parameter values into q (shapes must match) and returns the optimizer
// state and cursor via the out-parameters.
void restore_checkpoint(const Checkpoint& ckpt, Quartet& q, OptimState& optim, Cursor& cursor);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const char> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// As load_checkpoint, but rejects a checkpoint written under another config.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ConfigHash& expected);

}  // namespace jepkd
