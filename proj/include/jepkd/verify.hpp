// Independent reference implementations and the check suites built on them.
// Shared by the test binaries and `jepkd selftest`; nothing in the training
// path depends on this library.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "jepkd/eval.hpp"
#include "jepkd/losses.hpp"
#include "jepkd/synthdata.hpp"

namespace jepkd::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

bool all_passed(const std::vector<CheckResult>& results);

// -log of the total probability of every length-T path over {blank, 1..V}
// that collapses to `target`, by explicit enumeration. +inf if none does.
double brute_force_ctc(const Tensor& log_probs, std::span<const int> target);

// Min-cost alignment with the most substitutions, found by enumerating every
// alignment path. Exponential; meant for lengths up to about 5.
EditStats edit_distance_exhaustive(std::span<const int> ref, std::span<const int> hyp);
// Same objective by top-down memoized recursion.
EditStats edit_distance_memo(std::span<const int> ref, std::span<const int> hyp);

// Most probable token sequence under the LM whose projection equals `visemes`;
// the lowest token id wins ties.
std::vector<int> viterbi_decode(std::span<const int> visemes, const BigramLm& lm, const VisemeMap& vmap);

// Plug-in estimate of H(token | viseme, previous token) in bits over roughly
// `tokens` tokens drawn as sentences with lengths uniform in [min_len, max_len].
double conditional_entropy_bits(const BigramLm& lm, const VisemeMap& vmap, std::size_t tokens, std::uint64_t seed,
                                std::size_t min_len = 6, std::size_t max_len = 12);

// Minimizer over a shared discriminator output d of
//   p_r * J_D(d_real = d) + p_g * J_D(d_fake = d)
// recovered from three evaluations of lsgan_d_loss by fitting the parabola.
double lsgan_pointwise_minimizer(double p_r, double p_g, const LsGanConfig& cfg = {});

// Suites. Each returns one result per named check.
std::vector<CheckResult> ctc_oracle_suite();           // exhaustive T <= 6, V <= 3, |y| <= 3
std::vector<CheckResult> gradient_suite();             // every loss and model forward, tiny configs
std::vector<CheckResult> edit_distance_suite();        // exhaustive short pairs + 1000 random
std::vector<CheckResult> lsgan_suite();                // pointwise optimum and the zero configuration
std::vector<CheckResult> format_suite(const std::filesystem::path& scratch_dir);

// A tiny model config used by the gradient suite and unit tests.
QuartetConfig tiny_config();

}  // namespace jepkd::verify
