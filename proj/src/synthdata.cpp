#include "jepkd/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

namespace jepkd {

VisemeMap VisemeMap::paired(std::size_t vocab_size) {
  std::vector<int> cls(vocab_size);
  for (std::size_t i = 0; i < vocab_size; ++i) cls[i] = static_cast<int>(i / 2) + 1;
  return VisemeMap(std::move(cls));
}

VisemeMap::VisemeMap(std::vector<int> class_of) : class_of_(std::move(class_of)) {
  if (class_of_.empty()) throw std::invalid_argument("VisemeMap: empty vocabulary");
  const int top = *std::max_element(class_of_.begin(), class_of_.end());
  if (*std::min_element(class_of_.begin(), class_of_.end()) < 1) {
    throw std::invalid_argument("VisemeMap: class ids start at 1");
  }
  classes_ = static_cast<std::size_t>(top);
  members_.assign(classes_, {});
  for (std::size_t i = 0; i < class_of_.size(); ++i) {
    members_[static_cast<std::size_t>(class_of_[i] - 1)].push_back(static_cast<int>(i) + 1);
  }
  for (std::size_t c = 0; c < classes_; ++c) {
    if (members_[c].empty()) throw std::invalid_argument("VisemeMap: class " + std::to_string(c + 1) + " is empty");
  }
}

int VisemeMap::operator()(int token) const {
  if (token < 1 || static_cast<std::size_t>(token) > class_of_.size()) {
    throw std::invalid_argument("viseme map: token " + std::to_string(token) + " out of vocabulary");
  }
  return class_of_[static_cast<std::size_t>(token - 1)];
}

std::vector<int> viseme_project(std::span<const int> tokens, const VisemeMap& vmap) {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (int t : tokens) out.push_back(vmap(t));
  return out;
}

BigramLm::BigramLm(std::size_t vocab_size, std::vector<double> probs) : vocab_(vocab_size), probs_(std::move(probs)) {
  if (probs_.size() != (vocab_ + 1) * vocab_) throw std::invalid_argument("BigramLm: table has wrong size");
}

int BigramLm::sample(int prev, Rng& rng) const {
  const auto r = row(prev);
  double u = rng.uniform();
  for (std::size_t j = 0; j < r.size(); ++j) {
    u -= r[j];
    if (u < 0.0) return static_cast<int>(j) + 1;
  }
  // Rounding slack: last token with nonzero mass.
  for (std::size_t j = r.size(); j-- > 0;) {
    if (r[j] > 0.0) return static_cast<int>(j) + 1;
  }
  throw std::logic_error("BigramLm: empty row");
}

BigramLm build_bigram_lm(std::uint64_t seed, const VisemeMap& vmap, double kappa) {
  if (!(kappa > 0.0)) throw std::invalid_argument("build_bigram_lm: kappa must be positive");
  const std::size_t vocab = vmap.vocab_size();
  const double sharpness = 1.0 / kappa;
  // Class affinities span half the range of the within-class preference.
  constexpr double kClassSpread = 0.5;
  Rng rng(seed);
  std::vector<double> probs((vocab + 1) * vocab, 0.0);
  for (std::size_t prev = 0; prev <= vocab; ++prev) {
    std::vector<double> score(vocab, 0.0);
    for (std::size_t c = 1; c <= vmap.class_count(); ++c) {
      const auto& members = vmap.members(static_cast<int>(c));
      const double affinity = kClassSpread * rng.uniform();
      const int preferred = members[rng.below(members.size())];
      for (int t : members) score[static_cast<std::size_t>(t - 1)] = affinity + (t == preferred ? 1.0 : 0.0);
    }
    const double top = *std::max_element(score.begin(), score.end());
    double z = 0.0;
    double* out = &probs[prev * vocab];
    for (std::size_t j = 0; j < vocab; ++j) {
      if (prev != 0 && j + 1 == prev) continue;
      out[j] = std::exp(sharpness * (score[j] - top));
      z += out[j];
    }
    for (std::size_t j = 0; j < vocab; ++j) out[j] /= z;
  }
  return BigramLm(vocab, std::move(probs));
}

const std::vector<PairedSample>& Corpus::split(const std::string& name) const {
  auto it = splits.find(name);
  if (it == splits.end()) {
    throw std::invalid_argument("unknown split '" + name + "' (valid: train, val, test)");
  }
  return it->second;
}

Tensor narrow_to_f32(const Tensor& t) {
  std::vector<double> v(t.values().begin(), t.values().end());
  for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
  return Tensor(t.shape(), std::move(v));
}

PairedSample make_sample(std::string id, std::vector<int> tokens, const VisemeMap& vmap,
                         const TeacherEncoder& teacher) {
  PairedSample s;
  s.id = std::move(id);
  s.visemes = viseme_project(tokens, vmap);
  s.x_v = one_hot(s.visemes, vmap.class_count(), 1);
  s.a = narrow_to_f32(teacher.features(tokens));
  s.tokens = std::move(tokens);
  return s;
}

Corpus generate_corpus(const CorpusSpec& spec, const BigramLm& lm, const VisemeMap& vmap,
                       const TeacherEncoder& teacher) {
  if (spec.min_len == 0 || spec.min_len > spec.max_len) throw std::invalid_argument("CorpusSpec: bad length range");
  Corpus corpus;
  std::set<std::vector<int>> earlier;
  const std::array<std::size_t, 3> counts = {spec.train_count, spec.val_count, spec.test_count};
  for (std::size_t s = 0; s < kSplitNames.size(); ++s) {
    const std::string name = kSplitNames[s];
    const std::uint64_t split_seed = derive_seed(spec.seed, "corpus/" + name);
    std::vector<PairedSample> samples;
    samples.reserve(counts[s]);
    std::set<std::vector<int>> this_split;
    for (std::size_t i = 0; i < counts[s]; ++i) {
      Rng rng(derive_seed(split_seed, i));
      std::vector<int> tokens;
      do {
        const std::size_t len = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
        tokens.clear();
        int prev = 0;
        for (std::size_t t = 0; t < len; ++t) {
          prev = lm.sample(prev, rng);
          tokens.push_back(prev);
        }
      } while (earlier.count(tokens));
      this_split.insert(tokens);
      std::ostringstream id;
      id << name << '-' << std::setw(5) << std::setfill('0') << i;
      samples.push_back(make_sample(id.str(), std::move(tokens), vmap, teacher));
    }
    earlier.insert(this_split.begin(), this_split.end());
    corpus.splits.emplace(name, std::move(samples));
  }
  return corpus;
}

}  // namespace jepkd
