#include "jepkd/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <sstream>
#include <thread>

#include "jepkd/losses.hpp"

namespace jepkd {

EditStats& EditStats::operator+=(const EditStats& o) {
  substitutions += o.substitutions;
  deletions += o.deletions;
  insertions += o.insertions;
  reference_length += o.reference_length;
  return *this;
}

EditStats edit_distance(std::span<const int> ref, std::span<const int> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  // Each cell holds (cost, insertions); lexicographic minimum. With cost and
  // D - I = n - m fixed, fewest insertions means most substitutions.
  struct Cell {
    std::size_t cost, ins;
    bool operator<(const Cell& o) const { return cost != o.cost ? cost < o.cost : ins < o.ins; }
    bool operator==(const Cell& o) const { return cost == o.cost && ins == o.ins; }
  };
  std::vector<Cell> dp((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> Cell& { return dp[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = {i, 0};
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = {j, j};
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const Cell diag{at(i - 1, j - 1).cost + (ref[i - 1] != hyp[j - 1] ? 1u : 0u), at(i - 1, j - 1).ins};
      const Cell del{at(i - 1, j).cost + 1, at(i - 1, j).ins};
      const Cell ins{at(i, j - 1).cost + 1, at(i, j - 1).ins + 1};
      at(i, j) = std::min({diag, del, ins});
    }
  }
  EditStats s;
  s.reference_length = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    const Cell here = at(i, j);
    if (i > 0 && j > 0) {
      const bool differ = ref[i - 1] != hyp[j - 1];
      const Cell diag{at(i - 1, j - 1).cost + (differ ? 1u : 0u), at(i - 1, j - 1).ins};
      if (diag == here) {
        if (differ) ++s.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0) {
      const Cell del{at(i - 1, j).cost + 1, at(i - 1, j).ins};
      if (del == here) {
        ++s.deletions;
        --i;
        continue;
      }
    }
    ++s.insertions;
    --j;
  }
  return s;
}

double cer(const EditStats& stats) {
  if (stats.reference_length == 0) {
    return stats.edits() == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  }
  return static_cast<double>(stats.edits()) / static_cast<double>(stats.reference_length);
}

std::string_view mode_name(EvalMode m) { return m == EvalMode::baseline ? "baseline" : "jepkd"; }

EvalMode mode_from_name(std::string_view name) {
  if (name == "baseline") return EvalMode::baseline;
  if (name == "jepkd") return EvalMode::jepkd;
  throw std::invalid_argument("unknown mode '" + std::string(name) + "' (valid: baseline, jepkd)");
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("JEPKD_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<int> ctc_greedy_collapse(const Tensor& ctc_logits) {
  std::vector<int> out;
  int prev = -1;
  const std::size_t width = ctc_logits.cols();
  for (std::size_t t = 0; t < ctc_logits.rows(); ++t) {
    auto row = ctc_logits.values().subspan(t * width, width);
    const int best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best != kBlank && best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

Tensor eval_noise(std::uint64_t seed, std::size_t index, std::size_t z_dim) {
  Rng rng(derive_seed(derive_seed(seed, "eval-noise"), index));
  return sample_noise(z_dim, rng);
}

namespace {

struct SampleEval {
  SampleResult result;
  EditStats ctc_stats;
  double l1_gap = 0.0;
};

SampleEval evaluate_one(const Quartet& q, const PairedSample& s, std::size_t index, EvalMode mode,
                        std::uint64_t seed, bool teacher_memory) {
  NoGradGuard no_grad;
  SampleEval out;
  if (teacher_memory) {
    out.result.id = s.id;
    out.result.hypothesis = q.decoder.greedy_decode(s.a, q.config.max_len);
    out.result.stats = edit_distance(s.tokens, out.result.hypothesis);
    out.result.cer = cer(out.result.stats);
    out.ctc_stats = edit_distance(s.tokens, ctc_greedy_collapse(q.decoder.ctc_logits(s.a)));
    return out;
  }
  const Tensor v = q.encoder.encode(s.x_v);
  const Tensor g = q.generator.generate(v, eval_noise(seed, index, q.config.z_dim));
  const Tensor& memory = mode == EvalMode::jepkd ? g : v;
  out.result.id = s.id;
  out.result.hypothesis = q.decoder.greedy_decode(memory, q.config.max_len);
  out.result.stats = edit_distance(s.tokens, out.result.hypothesis);
  out.result.cer = cer(out.result.stats);
  out.ctc_stats = edit_distance(s.tokens, ctc_greedy_collapse(q.decoder.ctc_logits(memory)));
  out.l1_gap = l1_distance(g, s.a).item();
  return out;
}

double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

EvalReport evaluate_samples(const Quartet& quartet, const std::vector<PairedSample>& samples, EvalMode mode,
                            std::uint64_t seed, const std::string& split_name, std::size_t worst_count,
                            bool teacher_memory) {
  if (samples.empty()) throw std::invalid_argument("evaluate_corpus: split '" + split_name + "' is empty");
  const auto started = std::chrono::steady_clock::now();
  std::vector<SampleEval> results(samples.size());
  const std::size_t workers = std::min(worker_threads(), samples.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) results[i] = evaluate_one(quartet, samples[i], i, mode, seed, teacher_memory);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < samples.size(); i += workers) {
          results[i] = evaluate_one(quartet, samples[i], i, mode, seed, teacher_memory);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  EvalReport r;
  r.split = split_name;
  r.mode = mode;
  r.samples = samples.size();
  EditStats ctc_total;
  std::vector<double> gaps;
  double cer_sum = 0.0;
  for (const auto& e : results) {
    r.total += e.result.stats;
    ctc_total += e.ctc_stats;
    cer_sum += e.result.cer;
    gaps.push_back(e.l1_gap);
  }
  r.cer = cer(r.total);
  r.mean_sample_cer = cer_sum / static_cast<double>(results.size());
  r.ctc_greedy_cer = cer(ctc_total);
  r.l1_gap_mean = std::accumulate(gaps.begin(), gaps.end(), 0.0) / static_cast<double>(gaps.size());
  r.l1_gap_p50 = percentile(gaps, 0.5);
  r.l1_gap_p90 = percentile(gaps, 0.9);

  std::vector<std::size_t> order(results.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return results[x].result.cer > results[y].result.cer; });
  for (std::size_t k = 0; k < std::min(worst_count, order.size()); ++k) {
    r.worst.push_back(results[order[k]].result);
  }
  r.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return r;
}

}  // namespace

EvalReport evaluate_corpus(const Quartet& quartet, const std::vector<PairedSample>& samples, EvalMode mode,
                           std::uint64_t seed, const std::string& split_name, std::size_t worst_count) {
  return evaluate_samples(quartet, samples, mode, seed, split_name, worst_count, false);
}

EvalReport evaluate_teacher_memory(const Quartet& quartet, const std::vector<PairedSample>& samples,
                                   const std::string& split_name, std::size_t worst_count) {
  return evaluate_samples(quartet, samples, EvalMode::baseline, 0, split_name, worst_count, true);
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json stats_json(const EditStats& s) {
  return {{"S", s.substitutions}, {"D", s.deletions}, {"I", s.insertions}, {"N", s.reference_length}};
}

const nlohmann::json& field(const nlohmann::json& j, const char* name, const std::string& where) {
  if (!j.is_object() || !j.contains(name)) {
    throw ReportSchemaError("eval report: missing field '" + where + name + "'");
  }
  return j.at(name);
}

template <typename T>
T get_field(const nlohmann::json& j, const char* name, const std::string& where = "") {
  try {
    return field(j, name, where).get<T>();
  } catch (const nlohmann::json::type_error&) {
    throw ReportSchemaError("eval report: field '" + where + name + "' has the wrong type");
  }
}

EditStats stats_from_json(const nlohmann::json& j, const std::string& where) {
  EditStats s;
  s.substitutions = get_field<std::size_t>(j, "S", where);
  s.deletions = get_field<std::size_t>(j, "D", where);
  s.insertions = get_field<std::size_t>(j, "I", where);
  s.reference_length = get_field<std::size_t>(j, "N", where);
  return s;
}

}  // namespace

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json worst = nlohmann::json::array();
  for (const auto& w : r.worst) {
    worst.push_back({{"id", w.id}, {"cer", w.cer}, {"stats", stats_json(w.stats)}, {"hypothesis", w.hypothesis}});
  }
  return {{"split", r.split},
          {"mode", std::string(mode_name(r.mode))},
          {"samples", r.samples},
          {"cer", r.cer},
          {"mean_sample_cer", r.mean_sample_cer},
          {"ctc_greedy_cer", r.ctc_greedy_cer},
          {"stats", stats_json(r.total)},
          {"l1_gap", {{"mean", r.l1_gap_mean}, {"p50", r.l1_gap_p50}, {"p90", r.l1_gap_p90}}},
          {"worst", worst},
          {"config_hash", r.config_hash}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.split = get_field<std::string>(j, "split");
  try {
    r.mode = mode_from_name(get_field<std::string>(j, "mode"));
  } catch (const std::invalid_argument& e) {
    throw ReportSchemaError(std::string("eval report: ") + e.what());
  }
  r.samples = get_field<std::size_t>(j, "samples");
  r.cer = get_field<double>(j, "cer");
  r.mean_sample_cer = get_field<double>(j, "mean_sample_cer");
  r.ctc_greedy_cer = get_field<double>(j, "ctc_greedy_cer");
  r.total = stats_from_json(field(j, "stats", ""), "stats.");
  const auto& gap = field(j, "l1_gap", "");
  r.l1_gap_mean = get_field<double>(gap, "mean", "l1_gap.");
  r.l1_gap_p50 = get_field<double>(gap, "p50", "l1_gap.");
  r.l1_gap_p90 = get_field<double>(gap, "p90", "l1_gap.");
  for (const auto& w : field(j, "worst", "")) {
    SampleResult s;
    s.id = get_field<std::string>(w, "id", "worst[].");
    s.cer = get_field<double>(w, "cer", "worst[].");
    s.stats = stats_from_json(field(w, "stats", "worst[]."), "worst[].stats.");
    s.hypothesis = get_field<std::vector<int>>(w, "hypothesis", "worst[].");
    r.worst.push_back(std::move(s));
  }
  r.config_hash = get_field<std::string>(j, "config_hash");
  return r;
}

Comparison compare(const EvalReport& a, const EvalReport& b, double tolerance) {
  Comparison c;
  c.cer_delta = b.cer - a.cer;
  c.l1_gap_delta = b.l1_gap_mean - a.l1_gap_mean;
  c.verdict = c.cer_delta < 0.0 ? "improved" : (c.cer_delta > 0.0 ? "regressed" : "unchanged");
  c.ordering_holds = b.cer <= a.cer + tolerance;

  std::ostringstream t;
  char line[128];
  std::snprintf(line, sizeof line, "%-16s %12s %12s %12s\n", "metric", "reference", "candidate", "delta");
  t << line;
  auto row = [&](const char* name, double x, double y) {
    std::snprintf(line, sizeof line, "%-16s %12.6f %12.6f %+12.6f\n", name, x, y, y - x);
    t << line;
  };
  row("cer", a.cer, b.cer);
  row("mean_sample_cer", a.mean_sample_cer, b.mean_sample_cer);
  row("ctc_greedy_cer", a.ctc_greedy_cer, b.ctc_greedy_cer);
  row("l1_gap_mean", a.l1_gap_mean, b.l1_gap_mean);
  t << "verdict: " << c.verdict << '\n';
  c.table = t.str();

  c.json = {{"cer", {{"reference", a.cer}, {"candidate", b.cer}, {"delta", c.cer_delta}}},
            {"l1_gap_mean", {{"reference", a.l1_gap_mean}, {"candidate", b.l1_gap_mean}, {"delta", c.l1_gap_delta}}},
            {"verdict", c.verdict},
            {"ordering_holds", c.ordering_holds},
            {"tolerance", tolerance}};
  return c;
}

}  // namespace jepkd
