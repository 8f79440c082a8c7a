// The four trainable models (video encoder, generator, discriminator, decoder)
// and the frozen teacher encoder, at desk scale.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "jepkd/rng.hpp"
#include "jepkd/tensor.hpp"

namespace jepkd {

struct QuartetConfig {
  std::size_t feature_dim = 32;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t generator_blocks = 2;
  std::size_t attention_heads = 4;
  std::size_t ff_dim = 64;
  std::size_t vocab_size = 24;   // content tokens, ids 1..V
  std::size_t input_dim = 12;    // width of one video frame (viseme classes)
  std::size_t max_len = 32;
  std::size_t z_dim = 8;
  std::size_t frontend_kernel = 3;
  std::size_t disc_kernel = 3;   // both the 1-d kernel and each side of the 2-d kernel
  double dropout = 0.0;

  void validate() const;
};

// Output index layout of the decoder: token id k -> k-1, sos -> V, eos -> V+1.
inline std::size_t sos_index(const QuartetConfig& c) { return c.vocab_size; }
inline std::size_t eos_index(const QuartetConfig& c) { return c.vocab_size + 1; }
inline int sos_id(const QuartetConfig& c) { return static_cast<int>(c.vocab_size) + 1; }

// Rank-1 Gaussian noise vector for the generator.
Tensor sample_noise(std::size_t z_dim, Rng& rng);

Tensor sinusoidal_positions(std::size_t length, std::size_t dim);

// Optional per-call dropout source; null disables dropout.
struct ForwardContext {
  Rng* dropout_rng = nullptr;
  double dropout = 0.0;
};

namespace layers {

struct Linear {
  Tensor weight;  // (in, out)
  Tensor bias;    // (1, out)

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                       Rng& rng, bool zero_init = false, bool grad = true);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  static LayerNorm create(ParameterStore& store, const std::string& name, std::size_t dim, bool grad = true);
  Tensor operator()(const Tensor& x) const { return layer_norm_last(x, gain, bias); }
};

struct MultiHeadAttention {
  Linear q, k, v, o;
  std::size_t heads = 1;
  static MultiHeadAttention create(ParameterStore& store, const std::string& name, std::size_t dim,
                                   std::size_t heads, Rng& rng, bool grad = true);
  // mask, when given, is added to every head's (Tq, Tk) score matrix.
  Tensor operator()(const Tensor& query, const Tensor& memory, const Tensor* mask = nullptr) const;
};

struct FeedForward {
  Linear up, down;
  static FeedForward create(ParameterStore& store, const std::string& name, std::size_t dim, std::size_t hidden,
                            Rng& rng, bool grad = true);
  Tensor operator()(const Tensor& x) const { return down(relu(up(x))); }
};

}  // namespace layers

// Temporal conv frontend + projection + pre-norm transformer encoder stack.
class VideoEncoder {
 public:
  VideoEncoder() = default;
  VideoEncoder(ParameterStore& store, const std::string& prefix, const QuartetConfig& cfg, std::size_t input_dim,
               Rng& rng, bool grad = true);

  // (T, input_dim) -> (T, d). Rejects T > max_len.
  Tensor encode(const Tensor& frames, const ForwardContext& ctx = {}) const;

 private:
  struct Block {
    layers::LayerNorm ln_attn, ln_ff;
    layers::MultiHeadAttention attn;
    layers::FeedForward ff;
  };
  QuartetConfig cfg_;
  std::size_t input_dim_ = 0;
  Tensor conv_w_, conv_b_;
  layers::Linear proj_;
  std::vector<Block> blocks_;
  layers::LayerNorm ln_out_;
};

// G(z, v) = v + out(blocks(in([v | z]))). The output projection starts at zero,
// so a fresh generator is the identity on v.
class Generator {
 public:
  Generator() = default;
  Generator(ParameterStore& store, const QuartetConfig& cfg, Rng& rng);

  Tensor generate(const Tensor& v, const Tensor& z) const;

 private:
  QuartetConfig cfg_;
  layers::Linear in_;
  std::vector<std::pair<layers::Linear, layers::Linear>> blocks_;
  layers::Linear out_;
};

// Mean of a 1-d conv branch (features as channels) and a single-channel 2-d
// conv branch over the (T, d) plane, each mean-pooled to a scalar.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(ParameterStore& store, const QuartetConfig& cfg);

  Tensor discriminate(const Tensor& features) const;  // -> rank 0

 private:
  QuartetConfig cfg_;
  Tensor conv1_w_, conv1_b_, conv2_w_, conv2_b_;
};

struct DecoderOutput {
  Tensor logits;      // (U+1, V+2)
  Tensor ctc_logits;  // (T, V+1)
};

class Decoder {
 public:
  Decoder() = default;
  Decoder(ParameterStore& store, const QuartetConfig& cfg, Rng& rng);

  // Teacher-forced logits for sos+y predicting y+eos, plus the CTC head on memory.
  DecoderOutput decode_teacher_forced(const Tensor& memory, std::span<const int> y,
                                      const ForwardContext& ctx = {}) const;
  Tensor ctc_logits(const Tensor& memory) const;
  // Logits of the attention path for an sos-prefixed input of token ids.
  Tensor attention_logits(const Tensor& memory, std::span<const int> prefix, const ForwardContext& ctx = {}) const;

  // Argmax autoregressive decoding; the lowest index wins ties.
  std::vector<int> greedy_decode(const Tensor& memory, std::size_t max_steps) const;

 private:
  struct Block {
    layers::LayerNorm ln_self, ln_cross, ln_ff;
    layers::MultiHeadAttention self_attn, cross_attn;
    layers::FeedForward ff;
  };
  QuartetConfig cfg_;
  Tensor embedding_;  // (V+1, d): token ids 1..V then sos
  std::vector<Block> blocks_;
  layers::LayerNorm ln_out_;
  layers::Linear out_;
  layers::Linear ctc_;
};

// Frozen random network over one-hot clean token sequences; stands in for the
// audio encoder whose outputs are distilled into the student. The frontend
// kernel is rescaled so each frame carries its own token and its position in
// comparable measure, with no leakage from neighbouring tokens; a fresh
// network's features are dominated by the positional encoding instead.
inline constexpr double kTeacherCentreGain = 4.0;
inline constexpr double kTeacherContextGain = 0.0;

class TeacherEncoder {
 public:
  TeacherEncoder(const QuartetConfig& cfg, std::uint64_t seed);

  Tensor features(std::span<const int> tokens) const;  // (T, d)
  std::uint64_t seed() const { return seed_; }
  const ParameterStore& parameters() const { return store_; }

 private:
  QuartetConfig cfg_;
  std::uint64_t seed_;
  ParameterStore store_;
  VideoEncoder net_;
};

struct Quartet {
  QuartetConfig config;
  ParameterStore store;
  VideoEncoder encoder;
  Generator generator;
  Discriminator discriminator;
  Decoder decoder;

  Quartet(const QuartetConfig& cfg, std::uint64_t init_seed);
  // Copies would alias the parameter nodes.
  Quartet(const Quartet&) = delete;
  Quartet& operator=(const Quartet&) = delete;
  Quartet(Quartet&&) = default;
};

// Closed-form parameter counts implied by a config.
std::size_t expected_parameter_count(const QuartetConfig& cfg, Group g);

// One-hot (T, width) frames for ids in [offset, offset + width).
Tensor one_hot(std::span<const int> ids, std::size_t width, int offset);

}  // namespace jepkd
