#include <doctest.h>

#include <cmath>

#include "jepkd/losses.hpp"
#include "jepkd/models.hpp"
#include "jepkd/trainer.hpp"
#include "jepkd/verify.hpp"

using namespace jepkd;

namespace {

Tensor randn(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

void randomize(ParameterStore& store, Group g, Rng& rng) {
  for (const auto& [name, t] : store.entries()) {
    if (group_from_name(name) != g) continue;
    Tensor handle = t;
    for (auto& v : handle.mutable_values()) v = 0.5 * rng.normal();
  }
}

bool same(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

}  // namespace

TEST_CASE("config validation") {
  QuartetConfig c;
  CHECK_NOTHROW(c.validate());
  c.attention_heads = 5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = QuartetConfig{};
  c.z_dim = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("parameter counts match the closed form") {
  for (const QuartetConfig& cfg : {QuartetConfig{}, verify::tiny_config()}) {
    Quartet q(cfg, 1);
    std::size_t total = 0;
    for (Group g : kAllGroups) {
      INFO("group " << group_name(g));
      CHECK(q.store.scalar_count(g) == expected_parameter_count(cfg, g));
      total += expected_parameter_count(cfg, g);
    }
    CHECK(q.store.scalar_count() == total);
  }
}

TEST_CASE("encoder preserves length, is deterministic and position-aware") {
  const QuartetConfig cfg;
  Quartet q(cfg, 2);
  Rng rng(3);
  const Tensor x = randn({5, cfg.input_dim}, rng);
  const Tensor v = q.encoder.encode(x);
  CHECK(v.shape() == Shape{5, cfg.feature_dim});
  CHECK(same(v, q.encoder.encode(x)));
  std::vector<double> swapped(x.values().begin(), x.values().end());
  std::swap_ranges(swapped.begin(), swapped.begin() + cfg.input_dim, swapped.begin() + cfg.input_dim);
  CHECK_FALSE(same(v, q.encoder.encode(Tensor(x.shape(), swapped))));
  CHECK_THROWS(q.encoder.encode(randn({cfg.max_len + 1, cfg.input_dim}, rng)));
}

TEST_CASE("fresh generator is the identity on v; shape and z checks") {
  const QuartetConfig cfg;
  Quartet q(cfg, 4);
  Rng rng(5);
  const Tensor v = randn({6, cfg.feature_dim}, rng);
  const Tensor z = sample_noise(cfg.z_dim, rng);
  CHECK(same(q.generator.generate(v, z), v));
  randomize(q.store, Group::generator, rng);
  const Tensor g = q.generator.generate(v, z);
  CHECK(g.shape() == v.shape());
  CHECK_FALSE(same(g, v));
  CHECK(same(g, q.generator.generate(v, z)));
  CHECK_THROWS(q.generator.generate(v, sample_noise(cfg.z_dim + 1, rng)));
}

TEST_CASE("generator L1 gradient passes the finite-difference check") {
  const QuartetConfig cfg = verify::tiny_config();
  Quartet q(cfg, 6);
  Rng rng(7);
  randomize(q.store, Group::generator, rng);
  const Tensor v = randn({3, cfg.feature_dim}, rng), a = randn({3, cfg.feature_dim}, rng);
  const Tensor z = sample_noise(cfg.z_dim, rng);
  for (const auto& [name, t] : q.store.entries()) {
    if (group_from_name(name) != Group::generator) continue;
    Tensor leaf = t;
    INFO(name);
    CHECK(finite_diff_check([&] { return l1_distance(q.generator.generate(v, z), a); }, leaf) < 1e-4);
  }
}

TEST_CASE("discriminator: scalar output, zero at init, sensitive to every entry") {
  const QuartetConfig cfg = verify::tiny_config();
  Quartet q(cfg, 8);
  Rng rng(9);
  CHECK(q.discriminator.discriminate(Tensor::zeros({4, cfg.feature_dim})).rank() == 0);
  CHECK(q.discriminator.discriminate(Tensor::zeros({4, cfg.feature_dim})).item() == 0.0);
  randomize(q.store, Group::discriminator, rng);
  const Tensor f = randn({4, cfg.feature_dim}, rng);
  const double base = q.discriminator.discriminate(f).item();
  CHECK(std::isfinite(base));
  for (std::size_t i = 0; i < f.numel(); ++i) {
    std::vector<double> p(f.values().begin(), f.values().end());
    p[i] += 1.0;
    CHECK(q.discriminator.discriminate(Tensor(f.shape(), p)).item() != base);
  }
}

TEST_CASE("decoder shapes and causal masking") {
  const QuartetConfig cfg;
  Quartet q(cfg, 10);
  Rng rng(11);
  const Tensor memory = randn({7, cfg.feature_dim}, rng);
  const std::vector<int> y = {3, 9, 1, 24};
  const DecoderOutput out = q.decoder.decode_teacher_forced(memory, y);
  CHECK(out.logits.shape() == Shape{5, cfg.vocab_size + 2});
  CHECK(out.ctc_logits.shape() == Shape{7, cfg.vocab_size + 1});
  for (std::size_t u = 0; u < y.size(); ++u) {
    std::vector<int> changed = y;
    changed[u] = changed[u] % 24 + 1;
    const DecoderOutput o2 = q.decoder.decode_teacher_forced(memory, changed);
    // Row r sees the sos-prefixed input up to position r, which holds y[r-1].
    for (std::size_t r = 0; r <= u; ++r) {
      for (std::size_t c = 0; c < o2.logits.cols(); ++c) CHECK(o2.logits.at(r, c) == out.logits.at(r, c));
    }
    bool later_changed = false;
    for (std::size_t c = 0; c < o2.logits.cols(); ++c) later_changed |= o2.logits.at(u + 1, c) != out.logits.at(u + 1, c);
    CHECK(later_changed);
  }
  CHECK_THROWS(q.decoder.decode_teacher_forced(Tensor::zeros({0, cfg.feature_dim}), y));
}

TEST_CASE("greedy decoding: empty at zero steps, deterministic") {
  const QuartetConfig cfg;
  Quartet q(cfg, 12);
  Rng rng(13);
  const Tensor memory = randn({5, cfg.feature_dim}, rng);
  CHECK(q.decoder.greedy_decode(memory, 0).empty());
  CHECK(q.decoder.greedy_decode(memory, 8) == q.decoder.greedy_decode(memory, 8));
  CHECK(q.decoder.greedy_decode(memory, 8).size() <= 8);
}

TEST_CASE("decoder trained to copy a one-token corpus emits it then stops") {
  const QuartetConfig cfg = verify::tiny_config();
  Quartet q(cfg, 14);
  Rng rng(15);
  const Tensor memory = randn({3, cfg.feature_dim}, rng);
  const std::vector<int> y = {3};
  const std::vector<int> targets = {2, static_cast<int>(eos_index(cfg))};
  OptimState state;
  OptimConfig oc;
  oc.warmup_steps = 0;
  oc.max_lr = 0.01;
  const std::vector<Group> groups = {Group::decoder};
  for (int step = 0; step < 300; ++step) {
    Tape tape;
    const Tensor loss = cross_entropy(q.decoder.decode_teacher_forced(memory, y).logits, targets);
    adam_step(q.store, backward(loss, q.store), state, oc, oc.max_lr, groups);
  }
  CHECK(q.decoder.greedy_decode(memory, 5) == y);
}

TEST_CASE("end-to-end stage-1 composite gradient on a tiny config") {
  const QuartetConfig cfg = verify::tiny_config();
  Quartet q(cfg, 16);
  Rng rng(17);
  for (Group g : kAllGroups) randomize(q.store, g, rng);
  const std::vector<int> y = {1, 4, 2};
  const Tensor x = one_hot(std::vector<int>{1, 2, 1}, cfg.input_dim, 1);
  const Tensor a = randn({3, cfg.feature_dim}, rng);
  const Tensor z = sample_noise(cfg.z_dim, rng);
  const std::vector<int> targets = {0, 3, 1, static_cast<int>(eos_index(cfg))};
  auto loss = [&] {
    const Tensor v = q.encoder.encode(x);
    const Tensor g = q.generator.generate(v, z);
    const DecoderOutput o = q.decoder.decode_teacher_forced(g, y);
    return stage1_loss(ctc_loss(log_softmax_last(o.ctc_logits), y), l1_distance(g, a), cross_entropy(o.logits, targets),
                       StageLossWeights{});
  };
  double worst = 0.0;
  for (const auto& [name, t] : q.store.entries()) {
    const auto g = group_from_name(name);
    if (g == Group::discriminator) continue;
    Tensor leaf = t;
    worst = std::max(worst, finite_diff_check(loss, leaf));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("teacher is frozen and seed-determined") {
  const QuartetConfig cfg;
  const TeacherEncoder t1(cfg, 42), t2(cfg, 42), t3(cfg, 43);
  const std::vector<int> y = {1, 5, 7, 2};
  CHECK(same(t1.features(y), t2.features(y)));
  CHECK_FALSE(same(t1.features(y), t3.features(y)));
  CHECK(t1.features(y).shape() == Shape{4, cfg.feature_dim});
  for (const auto& [name, t] : t1.parameters().entries()) CHECK_FALSE(t.grad_enabled());
}

TEST_CASE("frozen groups are bitwise unchanged by an optimizer step") {
  const QuartetConfig cfg = verify::tiny_config();
  Quartet q(cfg, 18);
  Rng rng(19);
  for (Group g : kAllGroups) randomize(q.store, g, rng);
  q.store.set_trainable(Group::encoder, false);
  const auto before = q.store.group_hash(Group::encoder);
  const auto gen_before = q.store.group_hash(Group::generator);
  Tape tape;
  const Tensor v = q.encoder.encode(one_hot(std::vector<int>{1, 2}, cfg.input_dim, 1));
  const Tensor loss = sum(square(q.generator.generate(v, sample_noise(cfg.z_dim, rng))));
  const GradientMap grads = backward(loss, q.store);
  bool encoder_grad_nonzero = false;
  for (const auto& [name, g] : grads) {
    if (group_from_name(name) == Group::encoder) {
      for (double x : g.values()) encoder_grad_nonzero |= x != 0.0;
    }
  }
  CHECK(encoder_grad_nonzero);
  OptimState state;
  const std::vector<Group> groups(std::begin(kAllGroups), std::end(kAllGroups));
  adam_step(q.store, grads, state, OptimConfig{}, 1e-3, groups);
  CHECK(q.store.group_hash(Group::encoder) == before);
  CHECK(q.store.group_hash(Group::generator) != gen_before);
}
