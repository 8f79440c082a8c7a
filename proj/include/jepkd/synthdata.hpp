// Synthetic paired-modality corpus.
//
// Tokens are merged into viseme classes on the video side, so identity within
// a class is destroyed. A bigram language model makes the destroyed identity
// recoverable from context: for every previous token each class has one
// preferred member, and the concentration knob kappa controls how strongly.
// kappa -> infinity gives a uniform model where nothing is recoverable.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "jepkd/models.hpp"
#include "jepkd/tensor.hpp"

namespace jepkd {

struct Vocabulary {
  std::size_t size = 24;  // content tokens 1..V

  static constexpr int blank() { return 0; }
  int sos() const { return static_cast<int>(size) + 1; }
  int eos() const { return static_cast<int>(size) + 2; }
};

class VisemeMap {
 public:
  // Token 2k-1 and 2k share class k; an odd V leaves the last token alone.
  static VisemeMap paired(std::size_t vocab_size);
  // class_of[i] is the class (1-based) of token id i+1.
  explicit VisemeMap(std::vector<int> class_of);

  int operator()(int token) const;
  std::size_t vocab_size() const { return class_of_.size(); }
  std::size_t class_count() const { return classes_; }
  const std::vector<int>& members(int cls) const { return members_.at(static_cast<std::size_t>(cls - 1)); }
  const std::vector<int>& table() const { return class_of_; }

 private:
  std::vector<int> class_of_;
  std::size_t classes_ = 0;
  std::vector<std::vector<int>> members_;
};

std::vector<int> viseme_project(std::span<const int> tokens, const VisemeMap& vmap);

// Row r (0 = sentence start, r = previous token id otherwise) is a probability
// vector over token ids 1..V, stored at column id-1.
class BigramLm {
 public:
  BigramLm(std::size_t vocab_size, std::vector<double> probs);

  std::size_t vocab_size() const { return vocab_; }
  double prob(int prev, int token) const { return probs_[static_cast<std::size_t>(prev) * vocab_ + token - 1]; }
  std::span<const double> row(int prev) const {
    return std::span<const double>(probs_).subspan(static_cast<std::size_t>(prev) * vocab_, vocab_);
  }
  int sample(int prev, Rng& rng) const;

 private:
  std::size_t vocab_;
  std::vector<double> probs_;
};

// Default concentration; see CorpusSpec.
inline constexpr double kDefaultKappa = 0.25;
// A kappa large enough that every row is uniform to double precision.
inline constexpr double kUniformKappa = 1e12;

// Self-transitions get probability zero so that one-frame-per-token sequences
// always stay CTC-feasible. Rejects kappa <= 0.
BigramLm build_bigram_lm(std::uint64_t seed, const VisemeMap& vmap, double kappa);

struct CorpusSpec {
  std::uint64_t seed = 1;
  std::size_t train_count = 2000;
  std::size_t val_count = 200;
  std::size_t test_count = 200;
  std::size_t min_len = 6;
  std::size_t max_len = 12;
  double kappa = kDefaultKappa;
  std::size_t vocab_size = 24;
};

struct PairedSample {
  std::string id;
  std::vector<int> tokens;   // ground truth y
  std::vector<int> visemes;  // viseme_project(tokens)
  Tensor x_v;                // (T, classes) one-hot video stand-in
  Tensor a;                  // (T, d) teacher features, 32-bit representable
};

inline constexpr std::array<const char*, 3> kSplitNames = {"train", "val", "test"};

struct Corpus {
  std::map<std::string, std::vector<PairedSample>> splits;

  const std::vector<PairedSample>& split(const std::string& name) const;
};

// Deterministic in spec.seed. Sentences never repeat across splits: val
// rejects train sentences and test rejects both.
Corpus generate_corpus(const CorpusSpec& spec, const BigramLm& lm, const VisemeMap& vmap,
                       const TeacherEncoder& teacher);

// Builds a sample's derived fields from its tokens.
PairedSample make_sample(std::string id, std::vector<int> tokens, const VisemeMap& vmap,
                         const TeacherEncoder& teacher);

// Rounds every value to the nearest 32-bit float.
Tensor narrow_to_f32(const Tensor& t);

}  // namespace jepkd
