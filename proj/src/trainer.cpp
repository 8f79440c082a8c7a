#include "jepkd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "jepkd/eval.hpp"
#include "jepkd/feature_io.hpp"

namespace jepkd {

double lr_at(std::uint64_t step, const OptimConfig& cfg) {
  if (step == 0) return 0.0;
  if (cfg.warmup_steps == 0) return cfg.max_lr;
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(cfg.warmup_steps);
  return cfg.max_lr * std::min(s / w, std::sqrt(w / s));
}

void adam_step(ParameterStore& params, const GradientMap& grads, OptimState& state, const OptimConfig& cfg, double lr,
               std::span<const Group> groups) {
  for (const auto& [name, param] : params.entries()) {
    const auto g = group_from_name(name);
    if (!g || !params.trainable(*g)) continue;
    if (std::find(groups.begin(), groups.end(), *g) == groups.end()) continue;
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    const Tensor& grad = it->second;
    if (grad.shape() != param.shape()) {
      throw ShapeError("adam_step: gradient for " + name + " has shape " + shape_str(grad.shape()) +
                       ", parameter has " + shape_str(param.shape()));
    }
    AdamSlot& slot = state.slots[name];
    if (slot.m.empty()) {
      slot.m.assign(param.numel(), 0.0);
      slot.v.assign(param.numel(), 0.0);
    }
    ++slot.t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(slot.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(slot.t));
    Tensor handle = param;
    auto p = handle.mutable_values();
    const auto gv = grad.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * gv[i];
      slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * gv[i] * gv[i];
      const double mhat = slot.m[i] / c1;
      const double vhat = slot.v[i] / c2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

std::vector<Group> stage_groups(int stage) {
  switch (stage) {
    case 1: return {Group::encoder, Group::generator, Group::decoder};
    case 2: return {Group::generator, Group::discriminator};
    case 3: return {Group::decoder};
  }
  throw std::invalid_argument("no such stage: " + std::to_string(stage));
}

nlohmann::json EpochMetrics::to_json() const {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json j;
  j["stage"] = stage;
  j["epoch"] = epoch;
  j["step"] = step;
  j["lr"] = lr;
  j["loss"] = opt(loss);
  j["ctc"] = opt(ctc);
  j["ce"] = opt(ce);
  j["l1"] = opt(l1);
  j["d_loss"] = opt(d_loss);
  j["g_loss"] = opt(g_loss);
  j["val_cer"] = opt(val_cer);
  j["mean_l1_gap"] = opt(mean_l1_gap);
  j["skipped"] = skipped;
  return j;
}

struct Trainer::StepStats {
  std::size_t samples = 0;
  std::size_t skipped = 0;
  double loss = 0.0, ctc = 0.0, ce = 0.0, l1 = 0.0, d_loss = 0.0, g_loss = 0.0;
};

namespace {

std::vector<int> decoder_targets(std::span<const int> tokens, const QuartetConfig& cfg) {
  std::vector<int> t;
  t.reserve(tokens.size() + 1);
  for (int id : tokens) t.push_back(id - 1);
  t.push_back(static_cast<int>(eos_index(cfg)));
  return t;
}

Tensor mean_of(const std::vector<Tensor>& terms) {
  Tensor total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return scale(total, 1.0 / static_cast<double>(terms.size()));
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

std::uint64_t stage_epoch_seed(std::uint64_t base, int stage, std::size_t epoch) {
  return derive_seed(derive_seed(base, static_cast<std::uint64_t>(stage)), epoch);
}

// Per-token CTC, so its scale matches the per-token cross-entropy.
std::optional<Tensor> normalized_ctc(const Tensor& ctc_logits, std::span<const int> tokens) {
  if (!ctc_feasible(ctc_logits.dim(0), tokens)) return std::nullopt;
  return scale(ctc_loss(log_softmax_last(ctc_logits), tokens), 1.0 / static_cast<double>(tokens.size()));
}

}  // namespace

Trainer::Trainer(Quartet& quartet, const Corpus& corpus, StageSchedule schedule, OptimConfig optim, TrainSeeds seeds)
    : q_(quartet), corpus_(corpus), schedule_(std::move(schedule)), optim_cfg_(optim), seeds_(seeds) {
  schedule_.weights.validate();
  if (schedule_.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
}

Tensor Trainer::noise_for(std::uint64_t epoch_key, std::size_t sample) const {
  Rng rng(derive_seed(epoch_key, sample));
  return sample_noise(q_.config.z_dim, rng);
}

void Trainer::apply(const Tensor& loss, double lr, std::span<const Group> groups) {
  const GradientMap grads = backward(loss, q_.store);
  adam_step(q_.store, grads, optim, optim_cfg_, lr, groups);
}

Trainer::StepStats Trainer::step_stage1(std::span<const std::size_t> batch, std::uint64_t epoch_key, double lr) {
  const auto& train = corpus_.split("train");
  const auto& w = schedule_.weights;
  StepStats st;
  Tape tape;
  Rng dropout_rng(derive_seed(derive_seed(epoch_key, "dropout"), batch.front()));
  ForwardContext ctx;
  if (q_.config.dropout > 0.0) ctx = {&dropout_rng, q_.config.dropout};
  std::vector<Tensor> terms;
  for (std::size_t idx : batch) {
    const PairedSample& s = train[idx];
    const Tensor v = q_.encoder.encode(s.x_v, ctx);
    const Tensor g = q_.generator.generate(v, noise_for(epoch_key, idx));
    const DecoderOutput out = q_.decoder.decode_teacher_forced(g, s.tokens, ctx);
    auto ctc = normalized_ctc(out.ctc_logits, s.tokens);
    if (!ctc) {
      ++st.skipped;
      continue;
    }
    const Tensor l1 = l1_distance(g, s.a);
    const Tensor ce = cross_entropy(out.logits, decoder_targets(s.tokens, q_.config), schedule_.label_smoothing);
    const Tensor loss = stage1_loss(*ctc, l1, ce, w);
    st.ctc += ctc->item();
    st.l1 += l1.item();
    st.ce += ce.item();
    st.loss += loss.item();
    terms.push_back(loss);
  }
  st.samples = terms.size();
  if (terms.empty()) return st;
  const Tensor batch_loss = mean_of(terms);
  if (!std::isfinite(batch_loss.item())) throw TrainingError("non-finite loss");
  const auto groups = stage_groups(1);
  apply(batch_loss, lr, groups);
  return st;
}

Trainer::StepStats Trainer::step_stage2(std::span<const std::size_t> batch, std::uint64_t epoch_key, double lr) {
  const auto& train = corpus_.split("train");
  const auto& gan = schedule_.lsgan;
  StepStats st;
  std::vector<Tensor> z;
  for (std::size_t idx : batch) z.push_back(noise_for(epoch_key, idx));

  const std::vector<Group> d_groups = {Group::discriminator};
  for (std::size_t k = 0; k < schedule_.d_steps_per_g_step; ++k) {
    Tape tape;
    std::vector<Tensor> terms;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const PairedSample& s = train[batch[i]];
      Tensor g;
      {
        NoGradGuard detached;
        g = q_.generator.generate(frozen_v_[batch[i]], z[i]);
      }
      terms.push_back(lsgan_d_loss(q_.discriminator.discriminate(s.a), q_.discriminator.discriminate(g), gan));
    }
    const Tensor loss = mean_of(terms);
    if (!std::isfinite(loss.item())) throw TrainingError("non-finite discriminator loss");
    st.d_loss += loss.item() * static_cast<double>(batch.size()) / static_cast<double>(schedule_.d_steps_per_g_step);
    apply(loss, lr, d_groups);
  }

  const std::vector<Group> g_groups = {Group::generator};
  Tape tape;
  std::vector<Tensor> terms;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const PairedSample& s = train[batch[i]];
    const Tensor g = q_.generator.generate(frozen_v_[batch[i]], z[i]);
    const Tensor l1 = l1_distance(g, s.a);
    const Tensor loss = lsgan_g_loss(q_.discriminator.discriminate(g), l1, gan);
    st.l1 += l1.item();
    st.g_loss += loss.item();
    terms.push_back(loss);
  }
  const Tensor loss = mean_of(terms);
  if (!std::isfinite(loss.item())) throw TrainingError("non-finite generator loss");
  apply(loss, lr, g_groups);
  st.samples = batch.size();
  st.loss = st.g_loss;
  return st;
}

Trainer::StepStats Trainer::step_stage3(std::span<const std::size_t> batch, std::uint64_t epoch_key, double lr) {
  const auto& train = corpus_.split("train");
  StepStats st;
  Tape tape;
  Rng dropout_rng(derive_seed(derive_seed(epoch_key, "dropout"), batch.front()));
  ForwardContext ctx;
  if (q_.config.dropout > 0.0) ctx = {&dropout_rng, q_.config.dropout};
  std::vector<Tensor> terms;
  for (std::size_t idx : batch) {
    const PairedSample& s = train[idx];
    Tensor g;
    {
      NoGradGuard frozen;
      g = q_.generator.generate(frozen_v_[idx], noise_for(epoch_key, idx));
    }
    const DecoderOutput out = q_.decoder.decode_teacher_forced(g, s.tokens, ctx);
    auto ctc = normalized_ctc(out.ctc_logits, s.tokens);
    if (!ctc) {
      ++st.skipped;
      continue;
    }
    const Tensor ce = cross_entropy(out.logits, decoder_targets(s.tokens, q_.config), schedule_.label_smoothing);
    const Tensor loss = stage3_loss(*ctc, ce, schedule_.weights);
    st.ctc += ctc->item();
    st.ce += ce.item();
    st.loss += loss.item();
    terms.push_back(loss);
  }
  st.samples = terms.size();
  if (terms.empty()) return st;
  const Tensor batch_loss = mean_of(terms);
  if (!std::isfinite(batch_loss.item())) throw TrainingError("non-finite loss");
  const auto groups = stage_groups(3);
  apply(batch_loss, lr, groups);
  return st;
}

double Trainer::mean_l1_gap(const std::vector<PairedSample>& samples) const {
  if (samples.empty()) throw std::invalid_argument("mean_l1_gap: empty split");
  NoGradGuard guard;
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Tensor v = q_.encoder.encode(samples[i].x_v);
    const Tensor g = q_.generator.generate(v, eval_noise(seeds_.eval, i, q_.config.z_dim));
    total += l1_distance(g, samples[i].a).item();
  }
  return total / static_cast<double>(samples.size());
}

EpochMetrics Trainer::validation_record(int stage, std::size_t epoch) const {
  EpochMetrics m;
  m.stage = stage;
  m.epoch = epoch;
  m.step = optim.step;
  m.lr = lr_at(optim.step, optim_cfg_);
  auto it = corpus_.splits.find("val");
  if (it != corpus_.splits.end() && !it->second.empty()) {
    const EvalReport r = evaluate_corpus(q_, it->second, EvalMode::jepkd, seeds_.eval, "val", 0);
    m.val_cer = r.cer;
    m.mean_l1_gap = r.l1_gap_mean;
  }
  return m;
}

std::vector<EpochMetrics> Trainer::run_stage(int stage) {
  const auto groups = stage_groups(stage);
  if (stage < cursor.stage) {
    throw TrainingError("stage " + std::to_string(stage) + " already completed (cursor at stage " +
                        std::to_string(cursor.stage) + ")");
  }
  if (stage > cursor.stage) cursor = Cursor{stage, 0, optim.step};

  for (Group g : kAllGroups) q_.store.set_trainable(g, false);
  for (Group g : groups) q_.store.set_trainable(g, true);

  std::vector<EpochMetrics> log;
  auto emit = [&](EpochMetrics m) {
    log.push_back(m);
    if (on_epoch) on_epoch(log.back());
  };

  const std::size_t epochs = schedule_.epochs[static_cast<std::size_t>(stage - 1)];
  const auto& train = corpus_.split("train");
  if (epochs > 0 && cursor.epoch < epochs) {
    if (train.empty()) throw TrainingError("training split is empty");
    frozen_v_.clear();
    if (stage >= 2) {
      NoGradGuard guard;
      frozen_v_.reserve(train.size());
      for (const auto& s : train) frozen_v_.push_back(q_.encoder.encode(s.x_v));
    }
    if (cursor.epoch == 0) emit(validation_record(stage, 0));

    for (std::size_t e = cursor.epoch; e < epochs; ++e) {
      const std::uint64_t epoch_key = stage_epoch_seed(seeds_.noise, stage, e);
      const auto order = permutation(train.size(), stage_epoch_seed(seeds_.shuffle, stage, e));
      StepStats total;
      double last_lr = 0.0;
      for (std::size_t b = 0; b * schedule_.batch_size < order.size(); ++b) {
        const std::size_t begin = b * schedule_.batch_size;
        const std::size_t end = std::min(order.size(), begin + schedule_.batch_size);
        const std::span<const std::size_t> batch(order.data() + begin, end - begin);
        const std::uint64_t sched_step =
            optim.step + 1 - (schedule_.rewarm_per_stage ? cursor.stage_start_step : 0);
        last_lr = lr_at(sched_step, optim_cfg_);
        StepStats st;
        try {
          if (stage == 1) {
            st = step_stage1(batch, epoch_key, last_lr);
          } else if (stage == 2) {
            st = step_stage2(batch, epoch_key, last_lr);
          } else {
            st = step_stage3(batch, epoch_key, last_lr);
          }
        } catch (const std::exception& err) {
          if (!dynamic_cast<const TrainingError*>(&err) && !dynamic_cast<const NumericError*>(&err)) throw;
          throw TrainingError(std::string(err.what()) + " in stage " + std::to_string(stage) + ", epoch " +
                              std::to_string(e + 1) + ", batch " + std::to_string(b) + " (samples " +
                              train[batch.front()].id + ".." + train[batch.back()].id + ")");
        }
        ++optim.step;
        total.samples += st.samples;
        total.skipped += st.skipped;
        total.loss += st.loss;
        total.ctc += st.ctc;
        total.ce += st.ce;
        total.l1 += st.l1;
        total.d_loss += st.d_loss;
        total.g_loss += st.g_loss;
      }
      cursor.epoch = e + 1;
      EpochMetrics m = validation_record(stage, e + 1);
      m.lr = last_lr;
      m.skipped = total.skipped;
      if (total.samples > 0) {
        const double n = static_cast<double>(total.samples);
        m.loss = total.loss / n;
        m.l1 = total.l1 / n;
        if (stage != 2) {
          m.ctc = total.ctc / n;
          m.ce = total.ce / n;
        } else {
          m.d_loss = total.d_loss / n;
          m.g_loss = total.g_loss / n;
        }
        if (stage == 3) m.l1.reset();
      }
      emit(m);
    }
  }
  frozen_v_.clear();
  cursor = Cursor{stage + 1, 0, optim.step};
  return log;
}

std::vector<EpochMetrics> Trainer::run_teacher_topline(std::size_t epochs) {
  const auto& train = corpus_.split("train");
  if (train.empty()) throw TrainingError("training split is empty");
  for (Group g : kAllGroups) q_.store.set_trainable(g, g == Group::decoder);
  const std::vector<Group> groups = {Group::decoder};
  OptimState state;
  std::vector<EpochMetrics> log;
  auto val = corpus_.splits.find("val");
  for (std::size_t e = 0; e < epochs; ++e) {
    const std::uint64_t epoch_key = stage_epoch_seed(seeds_.noise, 0, e);
    const auto order = permutation(train.size(), stage_epoch_seed(seeds_.shuffle, 0, e));
    StepStats total;
    double lr = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += schedule_.batch_size) {
      const std::span<const std::size_t> batch(order.data() + begin,
                                               std::min(order.size() - begin, schedule_.batch_size));
      lr = lr_at(state.step + 1, optim_cfg_);
      Tape tape;
      Rng dropout_rng(derive_seed(derive_seed(epoch_key, "dropout"), batch.front()));
      ForwardContext ctx;
      if (q_.config.dropout > 0.0) ctx = {&dropout_rng, q_.config.dropout};
      std::vector<Tensor> terms;
      for (std::size_t idx : batch) {
        const PairedSample& s = train[idx];
        const DecoderOutput out = q_.decoder.decode_teacher_forced(s.a, s.tokens, ctx);
        auto ctc = normalized_ctc(out.ctc_logits, s.tokens);
        if (!ctc) {
          ++total.skipped;
          continue;
        }
        const Tensor ce = cross_entropy(out.logits, decoder_targets(s.tokens, q_.config), schedule_.label_smoothing);
        const Tensor loss = stage3_loss(*ctc, ce, schedule_.weights);
        total.ctc += ctc->item();
        total.ce += ce.item();
        total.loss += loss.item();
        terms.push_back(loss);
      }
      ++state.step;
      total.samples += terms.size();
      if (terms.empty()) continue;
      const Tensor batch_loss = mean_of(terms);
      if (!std::isfinite(batch_loss.item())) throw TrainingError("non-finite loss in teacher topline, epoch " +
                                                                 std::to_string(e + 1));
      adam_step(q_.store, backward(batch_loss, q_.store), state, optim_cfg_, lr, groups);
    }
    EpochMetrics m;
    m.stage = 0;
    m.epoch = e + 1;
    m.step = state.step;
    m.lr = lr;
    m.skipped = total.skipped;
    if (total.samples > 0) {
      const double n = static_cast<double>(total.samples);
      m.loss = total.loss / n;
      m.ctc = total.ctc / n;
      m.ce = total.ce / n;
    }
    if (val != corpus_.splits.end() && !val->second.empty()) {
      m.val_cer = evaluate_teacher_memory(q_, val->second, "val", 0).cer;
    }
    log.push_back(m);
    if (on_epoch) on_epoch(log.back());
  }
  return log;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[4] = {'J', 'P', 'K', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

Tensor u64_pair(std::uint64_t v) {
  return Tensor({2}, {static_cast<double>(v >> 32), static_cast<double>(v & 0xffffffffULL)});
}

std::uint64_t from_u64_pair(const Tensor& t, std::size_t offset = 0) {
  const auto v = t.values();
  if (v.size() < offset + 2) throw CheckpointError(CheckpointErrc::truncated, "truncated checkpoint: short counter");
  return (static_cast<std::uint64_t>(v[offset]) << 32) | static_cast<std::uint64_t>(v[offset + 1]);
}

const Tensor& block(const std::map<std::string, Tensor>& blocks, const std::string& name) {
  auto it = blocks.find(name);
  if (it == blocks.end()) throw CheckpointError(CheckpointErrc::truncated, "truncated checkpoint: missing " + name);
  return it->second;
}

}  // namespace

std::string hash_hex(const ConfigHash& h) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  for (auto b : h) {
    s += kHex[b >> 4];
    s += kHex[b & 15];
  }
  return s;
}

Checkpoint capture_checkpoint(const Quartet& q, const OptimState& optim, const Cursor& cursor,
                              const ConfigHash& hash, std::uint64_t teacher_seed) {
  Checkpoint c;
  c.config_hash = hash;
  c.teacher_seed = teacher_seed;
  c.cursor = cursor;
  for (const auto& [name, t] : q.store.entries()) {
    c.parameters.emplace(name, Tensor(t.shape(), std::vector<double>(t.values().begin(), t.values().end())));
  }
  c.optim = optim;
  return c;
}

void restore_checkpoint(const Checkpoint& ckpt, Quartet& q, OptimState& optim, Cursor& cursor) {
  if (ckpt.parameters.size() != q.store.size()) {
    throw CheckpointError(CheckpointErrc::config_mismatch, "checkpoint has " + std::to_string(ckpt.parameters.size()) +
                                                               " parameters, model has " +
                                                               std::to_string(q.store.size()));
  }
  for (const auto& [name, t] : q.store.entries()) {
    auto it = ckpt.parameters.find(name);
    if (it == ckpt.parameters.end() || it->second.shape() != t.shape()) {
      throw CheckpointError(CheckpointErrc::config_mismatch, "checkpoint does not match parameter " + name);
    }
    Tensor handle = t;
    auto dst = handle.mutable_values();
    const auto src = it->second.values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  optim = ckpt.optim;
  cursor = ckpt.cursor;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::map<std::string, Tensor> blocks = ckpt.parameters;
  for (const auto& [name, slot] : ckpt.optim.slots) {
    const Shape shape = ckpt.parameters.count(name) ? ckpt.parameters.at(name).shape() : Shape{slot.m.size()};
    blocks.emplace("optim.m/" + name, Tensor(shape, slot.m));
    blocks.emplace("optim.v/" + name, Tensor(shape, slot.v));
    blocks.emplace("optim.t/" + name, u64_pair(slot.t));
  }
  blocks.emplace("optim.step", u64_pair(ckpt.optim.step));
  blocks.emplace("teacher_seed", u64_pair(ckpt.teacher_seed));
  blocks.emplace("cursor", Tensor({5}, {static_cast<double>(ckpt.cursor.stage),
                                        static_cast<double>(static_cast<std::uint64_t>(ckpt.cursor.epoch) >> 32),
                                        static_cast<double>(ckpt.cursor.epoch & 0xffffffffULL),
                                        static_cast<double>(ckpt.cursor.stage_start_step >> 32),
                                        static_cast<double>(ckpt.cursor.stage_start_step & 0xffffffffULL)}));

  std::string out(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  out.append(reinterpret_cast<const char*>(ckpt.config_hash.data()), ckpt.config_hash.size());
  put_u32(out, static_cast<std::uint32_t>(blocks.size()));
  for (const auto& [name, t] : blocks) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    append_tensor(out, t, TensorEncoding::f64);
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const char> bytes) {
  if (bytes.size() < 4) throw CheckpointError(CheckpointErrc::truncated, "truncated checkpoint: no header");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError(CheckpointErrc::bad_magic, "not a checkpoint: bad magic");
  }
  std::map<std::string, Tensor> blocks;
  Checkpoint c;
  try {
    std::size_t off = 4;
    const std::uint32_t version = get_u32(bytes, off);
    if (version != kCheckpointVersion) {
      throw CheckpointError(CheckpointErrc::bad_version, "unsupported checkpoint version " + std::to_string(version));
    }
    if (bytes.size() < off + c.config_hash.size()) {
      throw CheckpointError(CheckpointErrc::truncated, "truncated checkpoint: short config hash");
    }
    std::memcpy(c.config_hash.data(), bytes.data() + off, c.config_hash.size());
    off += c.config_hash.size();
    const std::uint32_t count = get_u32(bytes, off);
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::uint32_t len = get_u32(bytes, off);
      if (bytes.size() < off + len) throw CheckpointError(CheckpointErrc::truncated, "truncated checkpoint: short name");
      std::string name(bytes.data() + off, len);
      off += len;
      blocks.insert_or_assign(std::move(name), parse_tensor(bytes, off));
    }
    if (off != bytes.size()) {
      throw CheckpointError(CheckpointErrc::truncated, "corrupt checkpoint: trailing bytes after last block");
    }
  } catch (const FeatureFileError& e) {
    const auto code = e.code() == FeatureIoErrc::truncated ? CheckpointErrc::truncated : CheckpointErrc::bad_version;
    throw CheckpointError(code, std::string(code == CheckpointErrc::truncated ? "truncated checkpoint: " : "corrupt checkpoint: ") +
                                    e.what());
  }

  const Tensor& cur = block(blocks, "cursor");
  if (cur.numel() != 5) throw CheckpointError(CheckpointErrc::truncated, "truncated checkpoint: short cursor");
  c.cursor.stage = static_cast<int>(cur.values()[0]);
  c.cursor.epoch = static_cast<std::size_t>(from_u64_pair(cur, 1));
  c.cursor.stage_start_step = from_u64_pair(cur, 3);
  c.optim.step = from_u64_pair(block(blocks, "optim.step"));
  c.teacher_seed = from_u64_pair(block(blocks, "teacher_seed"));
  for (auto& [name, t] : blocks) {
    if (name == "cursor" || name == "optim.step" || name == "teacher_seed") continue;
    if (name.rfind("optim.", 0) == 0) {
      const auto slash = name.find('/');
      if (slash == std::string::npos) continue;
      const std::string kind = name.substr(0, slash);
      AdamSlot& slot = c.optim.slots[name.substr(slash + 1)];
      const auto v = t.values();
      if (kind == "optim.m") slot.m.assign(v.begin(), v.end());
      else if (kind == "optim.v") slot.v.assign(v.begin(), v.end());
      else if (kind == "optim.t") slot.t = from_u64_pair(t);
      continue;
    }
    c.parameters.emplace(name, t);
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  try {
    write_file_atomic(path, encode_checkpoint(ckpt));
  } catch (const FeatureFileError& e) {
    throw CheckpointError(CheckpointErrc::io_error, e.what());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const FeatureFileError& e) {
    throw CheckpointError(CheckpointErrc::io_error, e.what());
  }
  return decode_checkpoint(bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ConfigHash& expected) {
  Checkpoint c = load_checkpoint(path);
  if (c.config_hash != expected) {
    throw CheckpointError(CheckpointErrc::config_mismatch, "config hash mismatch: checkpoint " +
                                                               hash_hex(c.config_hash) + ", current config " +
                                                               hash_hex(expected));
  }
  return c;
}

}  // namespace jepkd
