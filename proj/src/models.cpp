#include "jepkd/models.hpp"

#include <cmath>
#include <stdexcept>

namespace jepkd {

void QuartetConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw std::invalid_argument(std::string("QuartetConfig: ") + what + " must be positive");
  };
  positive(feature_dim, "feature_dim");
  positive(attention_heads, "attention_heads");
  positive(ff_dim, "ff_dim");
  positive(vocab_size, "vocab_size");
  positive(input_dim, "input_dim");
  positive(max_len, "max_len");
  positive(z_dim, "z_dim");
  if (feature_dim % attention_heads != 0) {
    throw std::invalid_argument("QuartetConfig: feature_dim " + std::to_string(feature_dim) +
                                " not divisible by attention_heads " + std::to_string(attention_heads));
  }
  if (frontend_kernel % 2 == 0 || disc_kernel % 2 == 0) {
    throw std::invalid_argument("QuartetConfig: kernels must be odd");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("QuartetConfig: dropout must be in [0,1)");
}

Tensor sample_noise(std::size_t z_dim, Rng& rng) {
  std::vector<double> z(z_dim);
  for (auto& v : z) v = rng.normal();
  return Tensor({z_dim}, std::move(z));
}

Tensor sinusoidal_positions(std::size_t length, std::size_t dim) {
  std::vector<double> pe(length * dim);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * rate;
      pe[pos * dim + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor({length, dim}, std::move(pe));
}

Tensor one_hot(std::span<const int> ids, std::size_t width, int offset) {
  if (ids.empty()) throw ShapeError("one_hot: empty sequence");
  std::vector<double> v(ids.size() * width, 0.0);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const int col = ids[t] - offset;
    if (col < 0 || static_cast<std::size_t>(col) >= width) {
      throw std::invalid_argument("one_hot: id " + std::to_string(ids[t]) + " outside range");
    }
    v[t * width + static_cast<std::size_t>(col)] = 1.0;
  }
  return Tensor({ids.size(), width}, std::move(v));
}

namespace {

std::vector<double> xavier(std::size_t fan_in, std::size_t fan_out, std::size_t count, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(count);
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return v;
}

Tensor ones_column(std::size_t rows) { return Tensor::filled({rows, 1}, 1.0); }

Tensor maybe_dropout(const Tensor& x, const ForwardContext& ctx) {
  if (!ctx.dropout_rng || ctx.dropout <= 0.0) return x;
  std::vector<double> mask(x.numel());
  const double keep = 1.0 - ctx.dropout;
  for (auto& m : mask) m = ctx.dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

Tensor causal_mask(std::size_t n) {
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = -1e9;
  return Tensor({n, n}, std::move(m));
}

}  // namespace

namespace layers {

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                      bool zero_init, bool grad) {
  Linear l;
  auto w = zero_init ? std::vector<double>(in * out, 0.0) : xavier(in, out, in * out, rng);
  l.weight = store.add(name + ".w", {in, out}, std::move(w), grad);
  l.bias = store.add(name + ".b", {1, out}, std::vector<double>(out, 0.0), grad);
  return l;
}

Tensor Linear::operator()(const Tensor& x) const {
  return add(matmul(x, weight), matmul(ones_column(x.rows()), bias));
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, std::size_t dim, bool grad) {
  LayerNorm ln;
  ln.gain = store.add(name + ".gain", {dim}, std::vector<double>(dim, 1.0), grad);
  ln.bias = store.add(name + ".bias", {dim}, std::vector<double>(dim, 0.0), grad);
  return ln;
}

MultiHeadAttention MultiHeadAttention::create(ParameterStore& store, const std::string& name, std::size_t dim,
                                              std::size_t heads, Rng& rng, bool grad) {
  MultiHeadAttention m;
  m.q = Linear::create(store, name + ".wq", dim, dim, rng, false, grad);
  m.k = Linear::create(store, name + ".wk", dim, dim, rng, false, grad);
  m.v = Linear::create(store, name + ".wv", dim, dim, rng, false, grad);
  m.o = Linear::create(store, name + ".wo", dim, dim, rng, false, grad);
  m.heads = heads;
  return m;
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& memory, const Tensor* mask) const {
  const Tensor qs = q(query);
  const Tensor kt = transpose(k(memory));
  const Tensor vs = v(memory);
  const std::size_t dim = qs.cols();
  const std::size_t hd = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  Tensor merged;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor scores = scale(matmul(slice(qs, 1, h * hd, (h + 1) * hd), slice(kt, 0, h * hd, (h + 1) * hd)), inv_sqrt);
    if (mask) scores = add(scores, *mask);
    Tensor head = matmul(softmax_last(scores), slice(vs, 1, h * hd, (h + 1) * hd));
    merged = h == 0 ? head : concat_last(merged, head);
  }
  return o(merged);
}

FeedForward FeedForward::create(ParameterStore& store, const std::string& name, std::size_t dim, std::size_t hidden,
                                Rng& rng, bool grad) {
  FeedForward f;
  f.up = Linear::create(store, name + ".w1", dim, hidden, rng, false, grad);
  f.down = Linear::create(store, name + ".w2", hidden, dim, rng, false, grad);
  return f;
}

}  // namespace layers

// ---------------------------------------------------------------------------

VideoEncoder::VideoEncoder(ParameterStore& store, const std::string& prefix, const QuartetConfig& cfg,
                           std::size_t input_dim, Rng& rng, bool grad)
    : cfg_(cfg), input_dim_(input_dim) {
  cfg.validate();
  const std::size_t d = cfg.feature_dim;
  const std::size_t k = cfg.frontend_kernel;
  conv_w_ = store.add(prefix + ".frontend.conv.w", {k * input_dim, d}, xavier(k * input_dim, d, k * input_dim * d, rng),
                      grad);
  conv_b_ = store.add(prefix + ".frontend.conv.b", {d}, std::vector<double>(d, 0.0), grad);
  proj_ = layers::Linear::create(store, prefix + ".frontend.proj", d, d, rng, false, grad);
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i) {
    const std::string p = prefix + ".layer" + std::to_string(i);
    Block b;
    b.ln_attn = layers::LayerNorm::create(store, p + ".ln_attn", d, grad);
    b.attn = layers::MultiHeadAttention::create(store, p + ".attn", d, cfg.attention_heads, rng, grad);
    b.ln_ff = layers::LayerNorm::create(store, p + ".ln_ff", d, grad);
    b.ff = layers::FeedForward::create(store, p + ".ff", d, cfg.ff_dim, rng, grad);
    blocks_.push_back(std::move(b));
  }
  ln_out_ = layers::LayerNorm::create(store, prefix + ".ln_out", d, grad);
}

Tensor VideoEncoder::encode(const Tensor& frames, const ForwardContext& ctx) const {
  if (frames.rank() != 2 || frames.dim(1) != input_dim_) {
    throw ShapeError("encode: expected (T, " + std::to_string(input_dim_) + "), got " + shape_str(frames.shape()));
  }
  const std::size_t len = frames.dim(0);
  if (len > cfg_.max_len) {
    throw std::invalid_argument("encode: length " + std::to_string(len) + " exceeds max_len " +
                                std::to_string(cfg_.max_len));
  }
  Tensor h = proj_(relu(conv1d_same(frames, conv_w_, conv_b_, cfg_.frontend_kernel)));
  h = add(h, sinusoidal_positions(len, cfg_.feature_dim));
  for (const auto& b : blocks_) {
    const Tensor x = b.ln_attn(h);
    h = add(h, maybe_dropout(b.attn(x, x), ctx));
    h = add(h, maybe_dropout(b.ff(b.ln_ff(h)), ctx));
  }
  return ln_out_(h);
}

Generator::Generator(ParameterStore& store, const QuartetConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const std::size_t d = cfg.feature_dim;
  in_ = layers::Linear::create(store, "generator.in", d + cfg.z_dim, d, rng);
  for (std::size_t i = 0; i < cfg.generator_blocks; ++i) {
    const std::string p = "generator.block" + std::to_string(i);
    auto l1 = layers::Linear::create(store, p + ".fc1", d, d, rng);
    auto l2 = layers::Linear::create(store, p + ".fc2", d, d, rng);
    blocks_.emplace_back(std::move(l1), std::move(l2));
  }
  out_ = layers::Linear::create(store, "generator.out", d, d, rng, /*zero_init=*/true);
}

Tensor Generator::generate(const Tensor& v, const Tensor& z) const {
  if (z.numel() != cfg_.z_dim) {
    throw ShapeError("generate: z has " + std::to_string(z.numel()) + " entries, expected " +
                     std::to_string(cfg_.z_dim));
  }
  if (v.rank() != 2 || v.dim(1) != cfg_.feature_dim) {
    throw ShapeError("generate: v must be (T, " + std::to_string(cfg_.feature_dim) + "), got " + shape_str(v.shape()));
  }
  const Tensor zb = matmul(ones_column(v.dim(0)), reshape(z, {1, cfg_.z_dim}));
  Tensor h = in_(concat_last(v, zb));
  for (const auto& [fc1, fc2] : blocks_) h = add(h, fc2(relu(fc1(h))));
  return add(v, out_(h));
}

Discriminator::Discriminator(ParameterStore& store, const QuartetConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  const std::size_t d = cfg.feature_dim, k = cfg.disc_kernel;
  conv1_w_ = store.add("discriminator.conv1d.w", {k * d, 1}, std::vector<double>(k * d, 0.0));
  conv1_b_ = store.add("discriminator.conv1d.b", {1}, {0.0});
  conv2_w_ = store.add("discriminator.conv2d.w", {k, k}, std::vector<double>(k * k, 0.0));
  conv2_b_ = store.add("discriminator.conv2d.b", {}, {0.0});
}

Tensor Discriminator::discriminate(const Tensor& features) const {
  if (features.rank() != 2 || features.dim(1) != cfg_.feature_dim) {
    throw ShapeError("discriminate: expected (T, " + std::to_string(cfg_.feature_dim) + "), got " +
                     shape_str(features.shape()));
  }
  const Tensor temporal = mean(conv1d_same(features, conv1_w_, conv1_b_, cfg_.disc_kernel));
  const Tensor planar = mean(conv2d_same(features, conv2_w_, conv2_b_));
  return scale(add(temporal, planar), 0.5);
}

Decoder::Decoder(ParameterStore& store, const QuartetConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const std::size_t d = cfg.feature_dim, v = cfg.vocab_size;
  embedding_ = store.add("decoder.embedding", {v + 1, d}, xavier(v + 1, d, (v + 1) * d, rng));
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
    const std::string p = "decoder.layer" + std::to_string(i);
    Block b;
    b.ln_self = layers::LayerNorm::create(store, p + ".ln_self", d);
    b.self_attn = layers::MultiHeadAttention::create(store, p + ".self_attn", d, cfg.attention_heads, rng);
    b.ln_cross = layers::LayerNorm::create(store, p + ".ln_cross", d);
    b.cross_attn = layers::MultiHeadAttention::create(store, p + ".cross_attn", d, cfg.attention_heads, rng);
    b.ln_ff = layers::LayerNorm::create(store, p + ".ln_ff", d);
    b.ff = layers::FeedForward::create(store, p + ".ff", d, cfg.ff_dim, rng);
    blocks_.push_back(std::move(b));
  }
  ln_out_ = layers::LayerNorm::create(store, "decoder.ln_out", d);
  out_ = layers::Linear::create(store, "decoder.out", d, v + 2, rng);
  ctc_ = layers::Linear::create(store, "decoder.ctc_head", d, v + 1, rng);
}

Tensor Decoder::attention_logits(const Tensor& memory, std::span<const int> prefix, const ForwardContext& ctx) const {
  if (memory.rank() != 2 || memory.dim(1) != cfg_.feature_dim) {
    throw ShapeError("decoder: memory must be (T, " + std::to_string(cfg_.feature_dim) + "), got " +
                     shape_str(memory.shape()));
  }
  if (prefix.empty()) throw std::invalid_argument("decoder: empty input prefix");
  // Token id k sits at embedding row k-1; sos (id V+1) at row V.
  const Tensor onehot = one_hot(prefix, cfg_.vocab_size + 1, 1);
  Tensor h = add(matmul(onehot, embedding_), sinusoidal_positions(prefix.size(), cfg_.feature_dim));
  const Tensor mask = causal_mask(prefix.size());
  for (const auto& b : blocks_) {
    const Tensor x = b.ln_self(h);
    h = add(h, maybe_dropout(b.self_attn(x, x, &mask), ctx));
    h = add(h, maybe_dropout(b.cross_attn(b.ln_cross(h), memory), ctx));
    h = add(h, maybe_dropout(b.ff(b.ln_ff(h)), ctx));
  }
  return out_(ln_out_(h));
}

Tensor Decoder::ctc_logits(const Tensor& memory) const { return ctc_(memory); }

DecoderOutput Decoder::decode_teacher_forced(const Tensor& memory, std::span<const int> y,
                                             const ForwardContext& ctx) const {
  if (y.size() > cfg_.max_len) {
    throw std::invalid_argument("decoder: target length " + std::to_string(y.size()) + " exceeds max_len");
  }
  std::vector<int> input;
  input.reserve(y.size() + 1);
  input.push_back(sos_id(cfg_));
  input.insert(input.end(), y.begin(), y.end());
  return {attention_logits(memory, input, ctx), ctc_logits(memory)};
}

std::vector<int> Decoder::greedy_decode(const Tensor& memory, std::size_t max_steps) const {
  NoGradGuard no_grad;
  std::vector<int> prefix{sos_id(cfg_)};
  std::vector<int> out;
  const std::size_t width = cfg_.vocab_size + 2;
  for (std::size_t step = 0; step < max_steps; ++step) {
    const Tensor logits = attention_logits(memory, prefix);
    auto row = logits.values().subspan((prefix.size() - 1) * width, width);
    std::size_t best = 0;
    for (std::size_t j = 1; j < width; ++j) {
      if (row[j] > row[best]) best = j;
    }
    if (best == eos_index(cfg_)) break;
    const int id = static_cast<int>(best) + 1;
    out.push_back(id);
    prefix.push_back(id);
  }
  return out;
}

TeacherEncoder::TeacherEncoder(const QuartetConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  Rng rng(seed);
  net_ = VideoEncoder(store_, "teacher", cfg, cfg.vocab_size, rng, /*grad=*/false);
  Tensor conv = store_.at("teacher.frontend.conv.w");
  auto w = conv.mutable_values();
  const std::size_t tap = cfg.vocab_size * cfg.feature_dim;
  const std::size_t centre = cfg.frontend_kernel / 2;
  for (std::size_t i = 0; i < w.size(); ++i) w[i] *= i / tap == centre ? kTeacherCentreGain : kTeacherContextGain;
}

Tensor TeacherEncoder::features(std::span<const int> tokens) const {
  NoGradGuard no_grad;
  return net_.encode(one_hot(tokens, cfg_.vocab_size, 1));
}

Quartet::Quartet(const QuartetConfig& cfg, std::uint64_t init_seed) : config(cfg) {
  cfg.validate();
  Rng rng(init_seed);
  encoder = VideoEncoder(store, "encoder", cfg, cfg.input_dim, rng);
  generator = Generator(store, cfg, rng);
  discriminator = Discriminator(store, cfg);
  decoder = Decoder(store, cfg, rng);
}

std::size_t expected_parameter_count(const QuartetConfig& c, Group g) {
  const std::size_t d = c.feature_dim, v = c.vocab_size;
  auto linear = [](std::size_t in, std::size_t out) { return in * out + out; };
  const std::size_t ln = 2 * d;
  const std::size_t mha = 4 * linear(d, d);
  const std::size_t ff = linear(d, c.ff_dim) + linear(c.ff_dim, d);
  switch (g) {
    case Group::encoder:
      return c.frontend_kernel * c.input_dim * d + d + linear(d, d) + c.encoder_layers * (2 * ln + mha + ff) + ln;
    case Group::generator:
      return linear(d + c.z_dim, d) + c.generator_blocks * 2 * linear(d, d) + linear(d, d);
    case Group::discriminator:
      return c.disc_kernel * d + 1 + c.disc_kernel * c.disc_kernel + 1;
    case Group::decoder:
      return (v + 1) * d + c.decoder_layers * (3 * ln + 2 * mha + ff) + ln + linear(d, v + 2) + linear(d, v + 1);
  }
  return 0;
}

}  // namespace jepkd
