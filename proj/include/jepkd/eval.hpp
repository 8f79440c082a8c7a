// Character error rate, corpus evaluation and the baseline/JEP-KD comparison.
#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "jepkd/models.hpp"
#include "jepkd/synthdata.hpp"

namespace jepkd {

struct EditStats {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t reference_length = 0;

  std::size_t edits() const { return substitutions + deletions + insertions; }
  EditStats& operator+=(const EditStats& o);
  bool operator==(const EditStats&) const = default;
};

// Minimal unit-cost alignment of ref -> hyp. Among minimal alignments the one
// with the most substitutions is reported; the backtrace prefers a diagonal
// move, then a deletion, then an insertion.
EditStats edit_distance(std::span<const int> ref, std::span<const int> hyp);

// (S + D + I) / N. N = 0 gives 0 without edits and +inf with any.
double cer(const EditStats& stats);

enum class EvalMode { baseline, jepkd };
std::string_view mode_name(EvalMode m);
EvalMode mode_from_name(std::string_view name);

struct SampleResult {
  std::string id;
  EditStats stats;
  double cer = 0.0;
  std::vector<int> hypothesis;
};

struct EvalReport {
  std::string split;
  EvalMode mode = EvalMode::jepkd;
  std::size_t samples = 0;
  EditStats total;
  double cer = 0.0;               // pooled: sum of edits / sum of N
  double mean_sample_cer = 0.0;   // per-sample average, for transparency
  double ctc_greedy_cer = 0.0;    // diagnostic: CTC head, argmax + collapse
  double l1_gap_mean = 0.0;       // l1_distance(G(z, v), a)
  double l1_gap_p50 = 0.0;
  double l1_gap_p90 = 0.0;
  std::vector<SampleResult> worst;  // highest per-sample CER first
  std::string config_hash;
  double wall_clock_seconds = 0.0;  // not serialized: reports are reproducible byte for byte
};

class ReportSchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

// Worker count for read-only fan-out: JEPKD_THREADS if set, else the hardware
// concurrency, at least 1.
std::size_t worker_threads();

// Greedy CTC path: frame argmax, merge repeats, drop blanks.
std::vector<int> ctc_greedy_collapse(const Tensor& ctc_logits);

// Memory is G(z, v) in jepkd mode and v itself in baseline mode. z is drawn per
// sample from a stream derived from `seed` and the sample index.
EvalReport evaluate_corpus(const Quartet& quartet, const std::vector<PairedSample>& samples, EvalMode mode,
                           std::uint64_t seed, const std::string& split_name = "", std::size_t worst_count = 5);

// Same report with memory = the teacher features a (l1_gap is then 0).
EvalReport evaluate_teacher_memory(const Quartet& quartet, const std::vector<PairedSample>& samples,
                                   const std::string& split_name = "", std::size_t worst_count = 5);

Tensor eval_noise(std::uint64_t seed, std::size_t index, std::size_t z_dim);

struct Comparison {
  double cer_delta = 0.0;     // b - a
  double l1_gap_delta = 0.0;  // b - a
  std::string verdict;        // improved | unchanged | regressed
  bool ordering_holds = true; // b.cer <= a.cer + tolerance
  std::string table;
  nlohmann::json json;
};

// a is the reference (baseline) report, b the candidate (JEP-KD).
Comparison compare(const EvalReport& a, const EvalReport& b, double tolerance = 0.0);

}  // namespace jepkd
