#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <filesystem>

#include "jepkd/config.hpp"
#include "jepkd/eval.hpp"
#include "jepkd/feature_io.hpp"
#include "jepkd/trainer.hpp"

using namespace jepkd;
namespace fs = std::filesystem;

namespace {

RunConfig micro_config(std::size_t train = 24) {
  RunConfig c;
  c.corpus.train_count = train;
  c.corpus.val_count = 8;
  c.corpus.test_count = 8;
  c.model.feature_dim = 16;
  c.model.attention_heads = 2;
  c.model.ff_dim = 32;
  c.model.encoder_layers = 1;
  c.model.decoder_layers = 1;
  c.model.generator_blocks = 1;
  c.schedule.epochs = {2, 2, 1};
  c.schedule.batch_size = 8;
  c.optim.warmup_steps = 4;
  return c;
}

struct Run {
  RunConfig config;
  CorpusBundle data;
  Quartet quartet;
  Trainer trainer;

  explicit Run(const RunConfig& c)
      : config(c),
        data(build_corpus(c)),
        quartet(model_config(c), fan_out(c.seed).init),
        trainer(quartet, data.corpus, c.schedule, c.optim, train_seeds(fan_out(c.seed))) {}
};

bool stores_equal(const ParameterStore& a, const ParameterStore& b) {
  for (const auto& [name, t] : a.entries()) {
    const Tensor& u = b.at(name);
    if (!std::equal(t.values().begin(), t.values().end(), u.values().begin())) return false;
  }
  return true;
}

std::string dump(const std::vector<EpochMetrics>& log) {
  std::string s;
  for (const auto& m : log) s += m.to_json().dump() + "\n";
  return s;
}

struct Stop {};

}  // namespace

TEST_CASE("learning-rate schedule") {
  OptimConfig oc;
  oc.warmup_steps = 200;
  CHECK(lr_at(200, oc) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(lr_at(100, oc) == doctest::Approx(0.0005).epsilon(1e-15));
  CHECK(lr_at(800, oc) == doctest::Approx(0.0005).epsilon(1e-15));
  CHECK(lr_at(0, oc) == 0.0);
  CHECK(std::abs(lr_at(199, oc) - lr_at(201, oc)) < 2e-5);
  oc.warmup_steps = 5000;
  CHECK(lr_at(5000, oc) == doctest::Approx(0.001).epsilon(1e-15));
}

TEST_CASE("adam: first step, zero gradient, shape mismatch, frozen group") {
  ParameterStore store;
  Tensor w = store.add("decoder.w", {2}, {1.0, -1.0});
  store.add("encoder.w", {1}, {3.0});
  OptimConfig oc;
  OptimState state;
  const std::vector<Group> groups = {Group::decoder, Group::encoder};

  GradientMap zero = {{"decoder.w", Tensor({2}, {0.0, 0.0})}, {"encoder.w", Tensor({1}, {0.0})}};
  adam_step(store, zero, state, oc, 1e-3, groups);
  CHECK(w.values()[0] == 1.0);
  CHECK(w.values()[1] == -1.0);

  OptimState fresh;
  GradientMap g = {{"decoder.w", Tensor({2}, {0.5, -0.5})}, {"encoder.w", Tensor({1}, {2.0})}};
  store.set_trainable(Group::encoder, false);
  adam_step(store, g, fresh, oc, 1e-3, groups);
  CHECK(w.values()[0] == doctest::Approx(1.0 - 0.001).epsilon(1e-10));
  CHECK(w.values()[1] == doctest::Approx(-1.0 + 0.001).epsilon(1e-10));
  CHECK(store.at("encoder.w").values()[0] == 3.0);

  GradientMap bad = {{"decoder.w", Tensor({3}, {0.5, 0.5, 0.5})}};
  CHECK_THROWS_AS(adam_step(store, bad, fresh, oc, 1e-3, groups), ShapeError);
}

TEST_CASE("freeze ledger per stage") {
  Run r(micro_config());
  auto hashes = [&] {
    std::map<Group, std::uint64_t> h;
    for (Group g : kAllGroups) h[g] = r.quartet.store.group_hash(g);
    return h;
  };
  const std::map<int, std::set<Group>> trained = {
      {1, {Group::encoder, Group::generator, Group::decoder}},
      {2, {Group::generator, Group::discriminator}},
      {3, {Group::decoder}}};
  for (int stage = 1; stage <= 3; ++stage) {
    const auto before = hashes();
    r.trainer.run_stage(stage);
    const auto after = hashes();
    for (Group g : kAllGroups) {
      INFO("stage " << stage << " group " << group_name(g));
      CHECK((before.at(g) != after.at(g)) == (trained.at(stage).count(g) == 1));
    }
  }
}

TEST_CASE("zero-epoch stages are identities") {
  RunConfig c = micro_config();
  c.schedule.epochs = {0, 0, 0};
  Run r(c);
  std::vector<std::uint64_t> before;
  for (Group g : kAllGroups) before.push_back(r.quartet.store.group_hash(g));
  for (int s = 1; s <= 3; ++s) CHECK(r.trainer.run_stage(s).empty());
  std::size_t i = 0;
  for (Group g : kAllGroups) CHECK(r.quartet.store.group_hash(g) == before[i++]);
  CHECK(r.trainer.cursor.stage == 4);
}

TEST_CASE("stages cannot be rerun") {
  Run r(micro_config());
  r.trainer.run_stage(1);
  CHECK_THROWS_AS(r.trainer.run_stage(1), TrainingError);
}

TEST_CASE("identical config and seed give identical metrics logs") {
  Run a(micro_config()), b(micro_config());
  std::string la, lb;
  for (int s = 1; s <= 3; ++s) {
    la += dump(a.trainer.run_stage(s));
    lb += dump(b.trainer.run_stage(s));
  }
  CHECK(la == lb);
  CHECK(stores_equal(a.quartet.store, b.quartet.store));
  RunConfig other = micro_config();
  other.seed = 2;
  Run c(other);
  CHECK(dump(c.trainer.run_stage(1)) != dump(Run(micro_config()).trainer.run_stage(1)));
}

TEST_CASE("checkpoint-split training equals straight-through training bitwise") {
  const fs::path dir = fs::temp_directory_path() / "jepkd-test-resume";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const RunConfig c = micro_config();
  const ConfigHash hash = config_hash(c);

  Run straight(c);
  std::string straight_log;
  for (int s = 1; s <= 3; ++s) straight_log += dump(straight.trainer.run_stage(s));

  // Interrupt after every completed epoch, resume in a fresh process image.
  std::string split_log;
  const fs::path ckpt = dir / "ckpt.jpkc";
  bool done = false;
  int restarts = 0;
  while (!done) {
    Run r(c);
    if (fs::exists(ckpt)) {
      restore_checkpoint(load_checkpoint(ckpt, hash), r.quartet, r.trainer.optim, r.trainer.cursor);
    }
    bool first_record = true;
    r.trainer.on_epoch = [&](const EpochMetrics& m) {
      split_log += m.to_json().dump() + "\n";
      save_checkpoint(ckpt, capture_checkpoint(r.quartet, r.trainer.optim, r.trainer.cursor, hash, 0));
      if (m.epoch > 0 && !first_record) throw Stop{};
      first_record = false;
    };
    try {
      for (int s = r.trainer.cursor.stage; s <= 3; ++s) r.trainer.run_stage(s);
      done = true;
      CHECK(stores_equal(r.quartet.store, straight.quartet.store));
      CHECK(r.trainer.optim.step == straight.trainer.optim.step);
    } catch (const Stop&) {
      ++restarts;
    }
    REQUIRE(restarts < 50);
  }
  CHECK(restarts >= 3);
  CHECK(split_log == straight_log);
}

TEST_CASE("checkpoint errors") {
  const fs::path dir = fs::temp_directory_path() / "jepkd-test-ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Run r(micro_config());
  const ConfigHash hash = config_hash(r.config);
  save_checkpoint(dir / "c.jpkc", capture_checkpoint(r.quartet, r.trainer.optim, r.trainer.cursor, hash, 9));
  const std::string bytes = read_file_bytes(dir / "c.jpkc");
  write_file_atomic(dir / "t.jpkc", bytes.substr(0, bytes.size() - 10));
  CHECK_THROWS_WITH(load_checkpoint(dir / "t.jpkc"), doctest::Contains("truncated checkpoint"));

  RunConfig other = r.config;
  other.seed = 99;
  const ConfigHash other_hash = config_hash(other);
  try {
    load_checkpoint(dir / "c.jpkc", other_hash);
    FAIL("expected a mismatch");
  } catch (const CheckpointError& e) {
    CHECK(e.code() == CheckpointErrc::config_mismatch);
    const std::string what = e.what();
    CHECK(what.find(hash_hex(hash)) != std::string::npos);
    CHECK(what.find(hash_hex(other_hash)) != std::string::npos);
  }
  const Checkpoint loaded = load_checkpoint(dir / "c.jpkc", hash);
  CHECK(loaded.teacher_seed == 9);
}

TEST_CASE("non-finite loss aborts with the offending batch") {
  Run r(micro_config());
  Tensor handle = r.quartet.store.at("decoder.out.w");
  handle.mutable_values()[0] = 1e308;
  handle.mutable_values()[1] = 1e308;
  CHECK_THROWS_WITH_AS(r.trainer.run_stage(1), doctest::Contains("batch 0"), TrainingError);
}

TEST_CASE("overfit a four-sentence corpus") {
  RunConfig c = micro_config(4);
  c.model = QuartetConfig{};
  c.schedule.epochs = {500, 0, 0};
  c.schedule.batch_size = 4;
  c.optim.warmup_steps = 200;
  c.corpus.val_count = 0;
  c.corpus.test_count = 0;
  Run r(c);
  std::vector<double> losses, ces;
  r.trainer.on_epoch = [&](const EpochMetrics& m) {
    if (m.loss) losses.push_back(*m.loss);
    if (m.ce) ces.push_back(*m.ce);
  };
  r.trainer.run_stage(1);
  REQUIRE(ces.size() == 500);
  // One step per epoch: entries 200..204 are the first five epochs after warmup.
  int non_decreasing = 0;
  for (std::size_t e = 201; e < 205; ++e) non_decreasing += losses[e] >= losses[e - 1];
  CHECK(non_decreasing <= 1);
  const auto first_below = std::find_if(ces.begin(), ces.end(), [](double v) { return v < 0.05; });
  CHECK(first_below != ces.end());
  MESSAGE("CE below 0.05 after " << (first_below - ces.begin()) + 1 << " steps");
  const EvalReport rep = evaluate_corpus(r.quartet, r.data.corpus.split("train"), EvalMode::jepkd, 1, "train");
  CHECK(rep.cer < 0.02);
}

TEST_CASE("degenerate stage 2: indistinguishable inputs settle the discriminator at 0.25") {
  RunConfig c = micro_config(32);
  c.schedule.epochs = {0, 60, 0};
  c.optim.warmup_steps = 10;
  c.optim.max_lr = 0.01;
  Run r(c);
  // Teacher features replaced by the encoder's own output: v = a exactly.
  Corpus degenerate = r.data.corpus;
  for (auto& [name, samples] : degenerate.splits) {
    for (auto& s : samples) {
      NoGradGuard guard;
      s.a = r.quartet.encoder.encode(s.x_v);
    }
  }
  Trainer t(r.quartet, degenerate, c.schedule, c.optim, train_seeds(fan_out(c.seed)));
  t.run_stage(1);
  const auto log = t.run_stage(2);
  REQUIRE(!log.empty());
  const double d_loss = *log.back().d_loss;
  MESSAGE("final d_loss " << d_loss);
  CHECK(d_loss == doctest::Approx(0.25).epsilon(0.05));
  for (const auto& s : degenerate.split("train")) {
    const double d = r.quartet.discriminator.discriminate(s.a).item();
    CHECK(d == doctest::Approx(0.5).epsilon(0.1));
  }
}

TEST_CASE("metrics records carry the documented fields") {
  RunConfig c = micro_config();
  c.schedule.epochs = {1, 1, 1};
  Run r(c);
  std::vector<EpochMetrics> all;
  for (int s = 1; s <= 3; ++s) {
    auto log = r.trainer.run_stage(s);
    all.insert(all.end(), log.begin(), log.end());
  }
  REQUIRE(all.size() == 6);
  for (const auto& m : all) {
    const auto j = m.to_json();
    for (const char* key : {"stage", "epoch", "step", "lr", "loss", "ctc", "ce", "l1", "d_loss", "g_loss", "val_cer",
                            "mean_l1_gap"}) {
      CHECK(j.contains(key));
    }
    CHECK(m.val_cer.has_value());
  }
  CHECK(all[1].ce.has_value());
  CHECK(all[3].d_loss.has_value());
  CHECK(all[3].g_loss.has_value());
  CHECK(all[5].ctc.has_value());
  CHECK(all[5].step == 3 * 3);
}
