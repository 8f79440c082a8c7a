// Training objectives: CTC, cross-entropy, L1 embedding distance, the
// least-squares adversarial pair and the staged composites.
#pragma once

#include <span>

#include "jepkd/tensor.hpp"

namespace jepkd {

inline constexpr int kBlank = 0;

// Scalar targets of the least-squares adversarial objective. Not to be confused
// with the feature sequences: real_target is what D should output on teacher
// features, fake_target on generated ones, gen_target is what G aims for.
struct LsGanConfig {
  double real_target = 1.0;
  double fake_target = 0.0;
  double gen_target = 1.0;
};

struct StageLossWeights {
  double lambda = 0.3;  // CTC weight
  double gamma = 0.1;   // L1 weight (stage 1 only)

  // Throws std::invalid_argument unless lambda, gamma and 1-lambda-gamma are in [0,1].
  void validate() const;
};

// True iff a T-frame lattice can emit `target`: T >= U + (number of adjacent repeats).
bool ctc_feasible(std::size_t frames, std::span<const int> target);

// -log P(target | log_probs) by the log-space forward recursion over the
// blank-interleaved label sequence. log_probs is (T, V+1) with blank at 0.
// Returns a rank-0 +inf (not recorded) when the target is infeasible.
Tensor ctc_loss(const Tensor& log_probs, std::span<const int> target);

// Mean over positions of -log softmax(logits)[target]. With smoothing > 0 the
// target distribution puts smoothing/V on every class in addition.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, double smoothing = 0.0);

// Mean absolute difference over all entries.
Tensor l1_distance(const Tensor& g, const Tensor& a);

Tensor lsgan_d_loss(const Tensor& d_real, const Tensor& d_fake, const LsGanConfig& cfg = {});
Tensor lsgan_g_loss(const Tensor& d_fake, const Tensor& l1_term, const LsGanConfig& cfg = {});

Tensor stage1_loss(const Tensor& ctc, const Tensor& l1, const Tensor& ce, const StageLossWeights& w);
Tensor stage3_loss(const Tensor& ctc, const Tensor& ce, const StageLossWeights& w);

namespace mutation {
// Test hook: when set, the CTC recursion omits the skip transition over a
// blank. Exists so the self-test can prove the brute-force oracle catches it.
void set_ctc_skip_disabled(bool disabled);
bool ctc_skip_disabled();
}  // namespace mutation

}  // namespace jepkd
