#include "jepkd/verify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>

#include "jepkd/feature_io.hpp"
#include "jepkd/models.hpp"
#include "jepkd/trainer.hpp"

namespace jepkd::verify {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

Tensor random_log_probs(std::size_t frames, std::size_t classes, Rng& rng) {
  NoGradGuard guard;
  return log_softmax_last(random_tensor({frames, classes}, rng));
}

// Collapse a CTC path: merge repeats, then drop blanks.
std::vector<int> collapse(std::span<const int> path) {
  std::vector<int> out;
  int prev = -1;
  for (int s : path) {
    if (s != prev && s != kBlank) out.push_back(s);
    prev = s;
  }
  return out;
}

// (cost, substitutions) of the best alignment; better = lower cost, then more substitutions.
using Score = std::pair<std::size_t, std::size_t>;
bool better(const Score& a, const Score& b) {
  return a.first < b.first || (a.first == b.first && a.second > b.second);
}

EditStats stats_from(const Score& best, std::size_t n, std::size_t m) {
  // With cost C and S fixed, D + I = C - S and D - I = n - m determine the rest.
  EditStats st;
  st.reference_length = n;
  st.substitutions = best.second;
  const long long rest = static_cast<long long>(best.first - best.second);
  const long long diff = static_cast<long long>(n) - static_cast<long long>(m);
  st.deletions = static_cast<std::size_t>((rest + diff) / 2);
  st.insertions = static_cast<std::size_t>((rest - diff) / 2);
  return st;
}

std::vector<std::vector<int>> all_sequences(std::size_t max_len, int alphabet) {
  std::vector<std::vector<int>> out = {{}};
  std::size_t begin = 0;
  for (std::size_t len = 1; len <= max_len; ++len) {
    const std::size_t end = out.size();
    for (std::size_t i = begin; i < end; ++i) {
      for (int a = 1; a <= alphabet; ++a) {
        auto s = out[i];
        s.push_back(a);
        out.push_back(std::move(s));
      }
    }
    begin = end;
  }
  return out;
}

CheckResult grad_check(const std::string& name, double err, double tol = 1e-4) {
  return {name, err < tol, "max rel err " + fmt(err)};
}

// Weighted sum of all entries, so every output coordinate feeds the scalar.
Tensor probe(const Tensor& t, const Tensor& w) { return sum(mul(t, w)); }

}  // namespace

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

double brute_force_ctc(const Tensor& log_probs, std::span<const int> target) {
  const std::size_t frames = log_probs.dim(0), classes = log_probs.dim(1);
  const auto lp = log_probs.values();
  const std::vector<int> want(target.begin(), target.end());
  std::vector<int> path(frames, 0);
  std::vector<double> matches;
  while (true) {
    if (collapse(path) == want) {
      double s = 0.0;
      for (std::size_t t = 0; t < frames; ++t) s += lp[t * classes + static_cast<std::size_t>(path[t])];
      matches.push_back(s);
    }
    std::size_t t = 0;
    while (t < frames && path[t] == static_cast<int>(classes) - 1) path[t++] = 0;
    if (t == frames) break;
    ++path[t];
  }
  if (matches.empty()) return kInf;
  const double top = *std::max_element(matches.begin(), matches.end());
  double acc = 0.0;
  for (double m : matches) acc += std::exp(m - top);
  return -(top + std::log(acc));
}

EditStats edit_distance_exhaustive(std::span<const int> ref, std::span<const int> hyp) {
  Score best = {std::numeric_limits<std::size_t>::max(), 0};
  std::function<void(std::size_t, std::size_t, std::size_t, std::size_t)> walk =
      [&](std::size_t i, std::size_t j, std::size_t cost, std::size_t subs) {
        if (i == ref.size() && j == hyp.size()) {
          if (better({cost, subs}, best)) best = {cost, subs};
          return;
        }
        if (i < ref.size() && j < hyp.size()) {
          const bool sub = ref[i] != hyp[j];
          walk(i + 1, j + 1, cost + sub, subs + sub);
        }
        if (i < ref.size()) walk(i + 1, j, cost + 1, subs);
        if (j < hyp.size()) walk(i, j + 1, cost + 1, subs);
      };
  walk(0, 0, 0, 0);
  return stats_from(best, ref.size(), hyp.size());
}

EditStats edit_distance_memo(std::span<const int> ref, std::span<const int> hyp) {
  std::map<std::pair<std::size_t, std::size_t>, Score> memo;
  std::function<Score(std::size_t, std::size_t)> solve = [&](std::size_t i, std::size_t j) -> Score {
    if (i == ref.size()) return {hyp.size() - j, 0};
    if (j == hyp.size()) return {ref.size() - i, 0};
    if (auto it = memo.find({i, j}); it != memo.end()) return it->second;
    const bool sub = ref[i] != hyp[j];
    Score diag = solve(i + 1, j + 1);
    Score best = {diag.first + sub, diag.second + sub};
    for (Score cand : {solve(i + 1, j), solve(i, j + 1)}) {
      cand.first += 1;
      if (better(cand, best)) best = cand;
    }
    memo[{i, j}] = best;
    return best;
  };
  return stats_from(solve(0, 0), ref.size(), hyp.size());
}

std::vector<int> viterbi_decode(std::span<const int> visemes, const BigramLm& lm, const VisemeMap& vmap) {
  if (visemes.empty()) return {};
  const double neg_inf = -kInf;
  auto logp = [&](int prev, int tok) {
    const double p = lm.prob(prev, tok);
    return p > 0.0 ? std::log(p) : neg_inf;
  };
  std::vector<std::vector<int>> cands;
  for (int c : visemes) cands.push_back(vmap.members(c));
  std::vector<std::vector<double>> score(visemes.size());
  std::vector<std::vector<std::size_t>> back(visemes.size());
  for (int tok : cands[0]) score[0].push_back(logp(0, tok));
  back[0].assign(cands[0].size(), 0);
  for (std::size_t t = 1; t < visemes.size(); ++t) {
    for (int tok : cands[t]) {
      double best = neg_inf;
      std::size_t arg = 0;
      for (std::size_t k = 0; k < cands[t - 1].size(); ++k) {
        const double s = score[t - 1][k] + logp(cands[t - 1][k], tok);
        if (s > best) best = s, arg = k;
      }
      score[t].push_back(best);
      back[t].push_back(arg);
    }
  }
  std::size_t k = 0;
  for (std::size_t i = 1; i < score.back().size(); ++i) {
    if (score.back()[i] > score.back()[k]) k = i;
  }
  std::vector<int> out(visemes.size());
  for (std::size_t t = visemes.size(); t-- > 0;) {
    out[t] = cands[t][k];
    k = back[t][k];
  }
  return out;
}

double conditional_entropy_bits(const BigramLm& lm, const VisemeMap& vmap, std::size_t tokens, std::uint64_t seed,
                                std::size_t min_len, std::size_t max_len) {
  Rng rng(seed);
  std::map<std::tuple<int, int, int>, std::size_t> joint;
  std::map<std::pair<int, int>, std::size_t> context;
  std::size_t n = 0;
  while (n < tokens) {
    const std::size_t len = min_len + rng.below(max_len - min_len + 1);
    int prev = 0;
    for (std::size_t i = 0; i < len; ++i) {
      const int tok = lm.sample(prev, rng);
      const int cls = vmap(tok);
      ++joint[{prev, cls, tok}];
      ++context[{prev, cls}];
      prev = tok;
      ++n;
    }
  }
  double h = 0.0;
  for (const auto& [key, count] : joint) {
    const auto& [prev, cls, tok] = key;
    (void)tok;
    const double p_joint = static_cast<double>(count) / static_cast<double>(n);
    const double p_cond = static_cast<double>(count) / static_cast<double>(context[{prev, cls}]);
    h -= p_joint * std::log2(p_cond);
  }
  return h;
}

double lsgan_pointwise_minimizer(double p_r, double p_g, const LsGanConfig& cfg) {
  auto objective = [&](double d) {
    const Tensor real_only = lsgan_d_loss(Tensor::scalar(d), Tensor::scalar(cfg.fake_target), cfg);
    const Tensor fake_only = lsgan_d_loss(Tensor::scalar(cfg.real_target), Tensor::scalar(d), cfg);
    return p_r * real_only.item() + p_g * fake_only.item();
  };
  // J is exactly quadratic in d: J(d) = A d^2 + B d + C.
  const double j0 = objective(0.0), j1 = objective(1.0), jm = objective(-1.0);
  const double a = 0.5 * (j1 + jm) - j0;
  const double b = 0.5 * (j1 - jm);
  return -b / (2.0 * a);
}

std::vector<CheckResult> ctc_oracle_suite() {
  std::size_t cases = 0;
  double worst = 0.0;
  std::string first_failure;
  Rng rng(20240501);
  for (std::size_t vocab = 1; vocab <= 3; ++vocab) {
    const auto targets = all_sequences(3, static_cast<int>(vocab));
    for (std::size_t frames = 1; frames <= 6; ++frames) {
      for (const auto& y : targets) {
        const Tensor lp = random_log_probs(frames, vocab + 1, rng);
        const double want = brute_force_ctc(lp, y);
        const double got = ctc_loss(lp, y).item();
        ++cases;
        double err = 0.0;
        if (std::isinf(want) || std::isinf(got)) {
          err = (std::isinf(want) && std::isinf(got)) ? 0.0 : kInf;
        } else {
          err = std::abs(got - want) / std::max(std::abs(want), 1e-300);
        }
        worst = std::max(worst, err);
        if (err > 1e-9 && first_failure.empty()) {
          std::ostringstream os;
          os << "T=" << frames << " V=" << vocab << " |y|=" << y.size() << " got " << got << " want " << want;
          first_failure = os.str();
        }
      }
    }
  }
  const bool ok = worst <= 1e-9;
  std::string detail = std::to_string(cases) + " cases, max rel err " + fmt(worst);
  if (!ok) detail += "; first failure " + first_failure;
  return {{"ctc brute-force oracle (T<=6, V<=3, |y|<=3)", ok, detail}};
}

QuartetConfig tiny_config() {
  QuartetConfig c;
  c.feature_dim = 4;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.generator_blocks = 1;
  c.attention_heads = 2;
  c.ff_dim = 6;
  c.vocab_size = 4;
  c.input_dim = 2;
  c.max_len = 8;
  c.z_dim = 2;
  return c;
}

std::vector<CheckResult> gradient_suite() {
  std::vector<CheckResult> out;
  Rng rng(7);

  // Losses.
  {
    const Tensor x = random_tensor({5, 4}, rng);
    const std::vector<int> y = {1, 3, 3};
    out.push_back(grad_check("ctc_loss", finite_diff_check([&](const Tensor& t) {
                               return ctc_loss(log_softmax_last(t), y);
                             }, x)));
    const std::vector<int> y2 = {2, 1};
    out.push_back(grad_check("ctc_loss (skip transitions)", finite_diff_check([&](const Tensor& t) {
                               return ctc_loss(log_softmax_last(t), y2);
                             }, x)));
    const Tensor logits = random_tensor({4, 6}, rng);
    const std::vector<int> targets = {0, 5, 2, 2};
    out.push_back(grad_check("cross_entropy", finite_diff_check([&](const Tensor& t) {
                               return cross_entropy(t, targets);
                             }, logits)));
    out.push_back(grad_check("cross_entropy (smoothing 0.1)", finite_diff_check([&](const Tensor& t) {
                               return cross_entropy(t, targets, 0.1);
                             }, logits)));
    const Tensor g = random_tensor({3, 4}, rng);
    const Tensor a = random_tensor({3, 4}, rng);
    out.push_back(grad_check("l1_distance", finite_diff_check([&](const Tensor& t) { return l1_distance(t, a); }, g)));
    const Tensor d_real = random_tensor({3}, rng);
    const Tensor d_fake = random_tensor({3}, rng);
    out.push_back(grad_check("lsgan_d_loss (real)", finite_diff_check([&](const Tensor& t) {
                               return lsgan_d_loss(t, d_fake);
                             }, d_real)));
    out.push_back(grad_check("lsgan_d_loss (fake)", finite_diff_check([&](const Tensor& t) {
                               return lsgan_d_loss(d_real, t);
                             }, d_fake)));
    const Tensor l1 = Tensor::scalar(0.7);
    out.push_back(grad_check("lsgan_g_loss (d_fake)", finite_diff_check([&](const Tensor& t) {
                               return lsgan_g_loss(t, l1);
                             }, d_fake)));
    out.push_back(grad_check("lsgan_g_loss (l1 term)", finite_diff_check([&](const Tensor& t) {
                               return lsgan_g_loss(d_fake, t);
                             }, l1)));
    const Tensor parts = random_tensor({3}, rng);
    const StageLossWeights w;
    out.push_back(grad_check("stage1_loss", finite_diff_check([&](const Tensor& t) {
                               return stage1_loss(slice(t, 0, 0, 1), slice(t, 0, 1, 2), slice(t, 0, 2, 3), w);
                             }, parts)));
    out.push_back(grad_check("stage3_loss", finite_diff_check([&](const Tensor& t) {
                               return stage3_loss(slice(t, 0, 0, 1), slice(t, 0, 2, 3), w);
                             }, parts)));
  }

  // Model forwards: every parameter tensor and the input of each model.
  const QuartetConfig cfg = tiny_config();
  Quartet q(cfg, 11);
  for (const auto& [name, t] : q.store.entries()) {
    Tensor handle = t;
    for (auto& v : handle.mutable_values()) v = 0.5 * rng.normal();
  }
  const std::size_t frames = 4;
  const std::vector<int> y = {2, 4, 1};
  const Tensor x_v = random_tensor({frames, cfg.input_dim}, rng);
  const Tensor v_in = random_tensor({frames, cfg.feature_dim}, rng);
  const Tensor z = random_tensor({cfg.z_dim}, rng);
  const Tensor w_feat = random_tensor({frames, cfg.feature_dim}, rng);
  const Tensor w_logits = random_tensor({y.size() + 1, cfg.vocab_size + 2}, rng);
  const Tensor w_ctc = random_tensor({frames, cfg.vocab_size + 1}, rng);

  struct ModelCase {
    std::string label;
    Group group;
    std::function<Tensor()> scalar;
  };
  Tensor enc_x = x_v, gen_v = v_in, disc_x = v_in, dec_mem = v_in;
  const std::vector<ModelCase> cases = {
      {"encoder", Group::encoder, [&] { return probe(q.encoder.encode(enc_x), w_feat); }},
      {"generator", Group::generator, [&] { return probe(q.generator.generate(gen_v, z), w_feat); }},
      {"discriminator", Group::discriminator, [&] { return q.discriminator.discriminate(disc_x); }},
      {"decoder", Group::decoder, [&] {
         const DecoderOutput o = q.decoder.decode_teacher_forced(dec_mem, y);
         return add(probe(o.logits, w_logits), probe(o.ctc_logits, w_ctc));
       }},
  };
  for (const auto& c : cases) {
    double worst = 0.0;
    std::size_t tensors = 0;
    for (const auto& [name, t] : q.store.entries()) {
      if (group_from_name(name) != c.group) continue;
      Tensor leaf = t;
      worst = std::max(worst, finite_diff_check(c.scalar, leaf));
      ++tensors;
    }
    Tensor* input = c.group == Group::encoder     ? &enc_x
                    : c.group == Group::generator ? &gen_v
                    : c.group == Group::discriminator ? &disc_x
                                                      : &dec_mem;
    Tensor grad_input(input->shape(), std::vector<double>(input->values().begin(), input->values().end()), true);
    *input = grad_input;
    worst = std::max(worst, finite_diff_check(c.scalar, grad_input));
    out.push_back(grad_check(c.label + " forward (" + std::to_string(tensors) + " parameter tensors + input)", worst));
  }
  return out;
}

std::vector<CheckResult> edit_distance_suite() {
  std::vector<CheckResult> out;
  const auto seqs = all_sequences(4, 3);
  std::size_t mismatches = 0, bound_violations = 0, asymmetric = 0;
  for (const auto& r : seqs) {
    for (const auto& h : seqs) {
      const EditStats got = edit_distance(r, h);
      if (!(got == edit_distance_exhaustive(r, h))) ++mismatches;
      if (got.edits() > std::max(r.size(), h.size())) ++bound_violations;
      const EditStats rev = edit_distance(h, r);
      if (rev.edits() != got.edits() || rev.deletions != got.insertions || rev.insertions != got.deletions) {
        ++asymmetric;
      }
    }
  }
  const std::size_t pairs = seqs.size() * seqs.size();
  out.push_back({"edit distance vs exhaustive alignment (len<=4, 3 symbols)", mismatches == 0,
                 std::to_string(pairs) + " pairs, " + std::to_string(mismatches) + " mismatches"});
  out.push_back({"edit count bounded by max length", bound_violations == 0,
                 std::to_string(bound_violations) + " violations"});
  out.push_back({"cost symmetric with D and I exchanged", asymmetric == 0, std::to_string(asymmetric) + " violations"});

  Rng rng(99);
  std::size_t random_mismatch = 0;
  for (int k = 0; k < 1000; ++k) {
    std::vector<int> r(rng.below(21)), h(rng.below(21));
    for (auto& x : r) x = static_cast<int>(rng.below(4)) + 1;
    for (auto& x : h) x = static_cast<int>(rng.below(4)) + 1;
    if (!(edit_distance(r, h) == edit_distance_memo(r, h))) ++random_mismatch;
  }
  out.push_back({"edit distance vs memoized recursion (1000 random pairs, len<=20)", random_mismatch == 0,
                 std::to_string(random_mismatch) + " mismatches"});

  const std::vector<int> abc = {1, 2, 3}, axc = {1, 9, 3}, ab = {1, 2};
  const EditStats sub = edit_distance(abc, axc);
  const EditStats ins = edit_distance({}, ab);
  const bool examples = sub == EditStats{1, 0, 0, 3} && ins == EditStats{0, 0, 2, 0} &&
                        cer(sub) == 1.0 / 3.0 && cer(EditStats{0, 1, 2, 2}) == 1.5 &&
                        cer(EditStats{0, 0, 0, 5}) == 0.0 && cer(EditStats{0, 0, 0, 0}) == 0.0 &&
                        std::isinf(cer(EditStats{0, 0, 1, 0}));
  out.push_back({"CER worked examples", examples, "1 sub on N=3 -> " + fmt(cer(sub))});
  return out;
}

std::vector<CheckResult> lsgan_suite() {
  std::vector<CheckResult> out;
  double worst = 0.0;
  const std::vector<std::pair<double, double>> masses = {{1, 0}, {0, 1}, {0.5, 0.5}, {0.3, 0.7},
                                                         {0.9, 0.1}, {2, 3},   {1e-3, 1}};
  for (auto [pr, pg] : masses) {
    worst = std::max(worst, std::abs(lsgan_pointwise_minimizer(pr, pg) - pr / (pr + pg)));
  }
  out.push_back({"LS-GAN pointwise optimum p_r/(p_r+p_g)", worst < 1e-6, "max abs err " + fmt(worst)});

  const double jd = lsgan_d_loss(Tensor({3}, {1, 1, 1}), Tensor({3}, {0, 0, 0})).item();
  // A generator that reproduces a exactly inherits D's output on real data.
  const double jg = lsgan_g_loss(Tensor({3}, {1, 1, 1}), Tensor::scalar(0.0)).item();
  out.push_back({"J(D) = J(G) = 0 at the ideal configuration", jd == 0.0 && jg == 0.0,
                 "J(D)=" + fmt(jd) + " J(G)=" + fmt(jg)});
  const double half = lsgan_d_loss(Tensor::scalar(0.5), Tensor::scalar(0.5)).item();
  out.push_back({"J(D) = 0.25 when D = 0.5 on both inputs", half == 0.25, fmt(half)});
  return out;
}

std::vector<CheckResult> format_suite(const std::filesystem::path& dir) {
  std::vector<CheckResult> out;
  std::filesystem::create_directories(dir);
  Rng rng(5);

  auto expect_code = [](auto&& fn, auto code) {
    try {
      fn();
    } catch (const FeatureFileError& e) {
      return static_cast<int>(e.code()) == static_cast<int>(code);
    } catch (const CheckpointError& e) {
      return static_cast<int>(e.code()) == static_cast<int>(code);
    }
    return false;
  };

  const auto f = dir / "roundtrip.jpkd";
  const Tensor t = narrow_to_f32(random_tensor({2, 3}, rng));
  write_features(f, t);
  const std::string bytes1 = read_file_bytes(f);
  const Tensor back = read_features(f);
  write_features(dir / "roundtrip2.jpkd", back);
  const std::string bytes2 = read_file_bytes(dir / "roundtrip2.jpkd");
  const bool same_values = std::equal(t.values().begin(), t.values().end(), back.values().begin());
  out.push_back({"feature file write->read->write byte-identical", bytes1 == bytes2 && same_values,
                 std::to_string(bytes1.size()) + " bytes"});
  out.push_back({"2x3 feature file is 44 bytes", bytes1.size() == 44, std::to_string(bytes1.size()) + " bytes"});

  auto corrupt = [&](const std::string& name, const std::string& content) {
    const auto p = dir / name;
    write_file_atomic(p, content);
    return p;
  };
  std::string bad_magic = bytes1;
  bad_magic[0] = 'X';
  std::string bad_version = bytes1;
  bad_version[4] = 9;
  const std::string truncated = bytes1.substr(0, bytes1.size() - 3);
  const bool codes =
      expect_code([&] { read_features(corrupt("magic.jpkd", bad_magic)); }, FeatureIoErrc::bad_magic) &&
      expect_code([&] { read_features(corrupt("version.jpkd", bad_version)); }, FeatureIoErrc::bad_version) &&
      expect_code([&] { read_features(corrupt("trunc.jpkd", truncated)); }, FeatureIoErrc::truncated) &&
      expect_code([&] { read_features(corrupt("short.jpkd", "JPK")); }, FeatureIoErrc::truncated);
  out.push_back({"corrupted feature headers give distinct error codes", codes, "bad magic, bad version, truncated"});

  Quartet q(tiny_config(), 3);
  OptimState optim;
  optim.step = 17;
  for (const auto& [name, p] : q.store.entries()) {
    AdamSlot slot;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      slot.m.push_back(rng.normal());
      slot.v.push_back(std::abs(rng.normal()));
    }
    slot.t = 17;
    optim.slots.emplace(name, std::move(slot));
  }
  ConfigHash hash{};
  for (std::size_t i = 0; i < hash.size(); ++i) hash[i] = static_cast<std::uint8_t>(i * 7 + 1);
  const Checkpoint ckpt = capture_checkpoint(q, optim, Cursor{2, 3, 12}, hash, 0xfeedfacecafebeefULL);
  const auto c1 = dir / "a.jpkc";
  save_checkpoint(c1, ckpt);
  const Checkpoint loaded = load_checkpoint(c1, hash);
  save_checkpoint(dir / "b.jpkc", loaded);
  const std::string cb1 = read_file_bytes(c1), cb2 = read_file_bytes(dir / "b.jpkc");
  const bool state_equal = loaded.cursor == ckpt.cursor && loaded.teacher_seed == ckpt.teacher_seed &&
                           loaded.optim.step == 17 && loaded.parameters.size() == ckpt.parameters.size();
  out.push_back({"checkpoint save->load->save byte-identical", cb1 == cb2 && state_equal,
                 std::to_string(cb1.size()) + " bytes"});

  std::string ck_magic = cb1;
  ck_magic[1] = 'Q';
  ConfigHash other = hash;
  other[0] ^= 0xff;
  const bool ck_codes =
      expect_code([&] { load_checkpoint(corrupt("m.jpkc", ck_magic)); }, CheckpointErrc::bad_magic) &&
      expect_code([&] { load_checkpoint(corrupt("t.jpkc", cb1.substr(0, cb1.size() / 2))); },
                  CheckpointErrc::truncated) &&
      expect_code([&] { load_checkpoint(c1, other); }, CheckpointErrc::config_mismatch);
  out.push_back({"corrupted checkpoints give distinct error codes", ck_codes, "bad magic, truncated, config mismatch"});
  return out;
}

}  // namespace jepkd::verify
