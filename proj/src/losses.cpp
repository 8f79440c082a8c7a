#include "jepkd/losses.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <string>

namespace jepkd {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::atomic<bool> g_ctc_skip_disabled{false};

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace

namespace mutation {
void set_ctc_skip_disabled(bool disabled) { g_ctc_skip_disabled = disabled; }
bool ctc_skip_disabled() { return g_ctc_skip_disabled; }
}  // namespace mutation

void StageLossWeights::validate() const {
  const double rest = 1.0 - lambda - gamma;
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(lambda) || !in_unit(gamma) || rest < -1e-12) {
    throw std::invalid_argument("stage loss weights out of range: lambda=" + std::to_string(lambda) +
                                " gamma=" + std::to_string(gamma));
  }
}

bool ctc_feasible(std::size_t frames, std::span<const int> target) {
  std::size_t need = target.size();
  for (std::size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++need;
  }
  return need <= frames;
}

Tensor ctc_loss(const Tensor& log_probs, std::span<const int> target) {
  if (log_probs.rank() != 2) {
    throw ShapeError("ctc_loss: log_probs must be (T, V+1), got " + shape_str(log_probs.shape()));
  }
  const std::size_t frames = log_probs.dim(0);
  const std::size_t classes = log_probs.dim(1);
  if (frames == 0) throw ShapeError("ctc_loss: zero frames");
  for (int tok : target) {
    if (tok <= 0 || static_cast<std::size_t>(tok) >= classes) {
      throw std::invalid_argument("ctc_loss: token " + std::to_string(tok) + " outside 1.." +
                                  std::to_string(classes - 1));
    }
  }
  autograd::check_finite(log_probs, "ctc_loss");
  if (!ctc_feasible(frames, target)) return Tensor::scalar(std::numeric_limits<double>::infinity());

  const std::size_t states = 2 * target.size() + 1;
  std::vector<int> label(states, kBlank);
  for (std::size_t u = 0; u < target.size(); ++u) label[2 * u + 1] = target[u];
  const bool skip_enabled = !mutation::ctc_skip_disabled();
  auto can_skip = [&](std::size_t s) {
    return skip_enabled && s >= 2 && label[s] != kBlank && label[s] != label[s - 2];
  };

  auto lp = log_probs.values();
  auto at = [&](std::size_t t, std::size_t s) { return lp[t * classes + static_cast<std::size_t>(label[s])]; };

  std::vector<double> alpha(frames * states, kNegInf);
  alpha[0] = at(0, 0);
  if (states > 1) alpha[1] = at(0, 1);
  for (std::size_t t = 1; t < frames; ++t) {
    for (std::size_t s = 0; s < states; ++s) {
      double acc = alpha[(t - 1) * states + s];
      if (s >= 1) acc = log_add(acc, alpha[(t - 1) * states + s - 1]);
      if (can_skip(s)) acc = log_add(acc, alpha[(t - 1) * states + s - 2]);
      alpha[t * states + s] = acc == kNegInf ? kNegInf : acc + at(t, s);
    }
  }
  const std::size_t last = (frames - 1) * states;
  double log_p = alpha[last + states - 1];
  if (states > 1) log_p = log_add(log_p, alpha[last + states - 2]);

  auto alpha_ptr = std::make_shared<std::vector<double>>(std::move(alpha));
  return autograd::make_result(
      {}, {-log_p}, {log_probs},
      [alpha_ptr, label, frames, states, classes, log_p, skip_enabled](autograd::Node& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        const auto& lp = in.value;
        auto at = [&](std::size_t t, std::size_t s) {
          return lp[t * classes + static_cast<std::size_t>(label[s])];
        };
        auto can_skip_fwd = [&](std::size_t s) {
          // Transition s -> s+2 is legal iff s+2 may skip back to s.
          return skip_enabled && s + 2 < states && label[s + 2] != kBlank && label[s + 2] != label[s];
        };
        std::vector<double> beta(frames * states, kNegInf);
        const std::size_t last = (frames - 1) * states;
        beta[last + states - 1] = at(frames - 1, states - 1);
        if (states > 1) beta[last + states - 2] = at(frames - 1, states - 2);
        for (std::size_t t = frames - 1; t-- > 0;) {
          for (std::size_t s = 0; s < states; ++s) {
            double acc = beta[(t + 1) * states + s];
            if (s + 1 < states) acc = log_add(acc, beta[(t + 1) * states + s + 1]);
            if (can_skip_fwd(s)) acc = log_add(acc, beta[(t + 1) * states + s + 2]);
            beta[t * states + s] = acc == kNegInf ? kNegInf : acc + at(t, s);
          }
        }
        const auto& alpha = *alpha_ptr;
        const double g = self.grad[0];
        for (std::size_t t = 0; t < frames; ++t) {
          for (std::size_t s = 0; s < states; ++s) {
            const double a = alpha[t * states + s];
            const double b = beta[t * states + s];
            if (a == kNegInf || b == kNegInf) continue;
            const double occupancy = std::exp(a + b - at(t, s) - log_p);
            in.grad[t * classes + static_cast<std::size_t>(label[s])] -= g * occupancy;
          }
        }
      });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, double smoothing) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  const std::size_t positions = logits.dim(0), classes = logits.dim(1);
  std::vector<double> weight(positions * classes, 0.0);
  for (std::size_t u = 0; u < positions; ++u) {
    const int t = targets[u];
    if (t < 0 || static_cast<std::size_t>(t) >= classes) {
      throw std::invalid_argument("cross_entropy: target " + std::to_string(t) + " outside 0.." +
                                  std::to_string(classes - 1));
    }
    for (std::size_t c = 0; c < classes; ++c) weight[u * classes + c] = smoothing / static_cast<double>(classes);
    weight[u * classes + static_cast<std::size_t>(t)] += 1.0 - smoothing;
  }
  Tensor mask(logits.shape(), std::move(weight));
  return scale(sum(mul(log_softmax_last(logits), mask)), -1.0 / static_cast<double>(positions));
}

Tensor l1_distance(const Tensor& g, const Tensor& a) {
  if (g.shape() != a.shape()) {
    throw ShapeError("l1_distance: shapes differ " + shape_str(g.shape()) + " vs " + shape_str(a.shape()));
  }
  return mean(abs(sub(g, a)));
}

Tensor lsgan_d_loss(const Tensor& d_real, const Tensor& d_fake, const LsGanConfig& cfg) {
  if (d_real.numel() == 0 || d_fake.numel() == 0) throw std::invalid_argument("lsgan_d_loss: empty input");
  Tensor real_term = mean(square(sub(d_real, Tensor::scalar(cfg.real_target))));
  Tensor fake_term = mean(square(sub(d_fake, Tensor::scalar(cfg.fake_target))));
  return scale(add(real_term, fake_term), 0.5);
}

Tensor lsgan_g_loss(const Tensor& d_fake, const Tensor& l1_term, const LsGanConfig& cfg) {
  if (d_fake.numel() == 0) throw std::invalid_argument("lsgan_g_loss: empty input");
  if (l1_term.numel() != 1) throw ShapeError("lsgan_g_loss: l1 term must be scalar");
  Tensor adv = scale(mean(square(sub(d_fake, Tensor::scalar(cfg.gen_target)))), 0.5);
  return add(adv, reshape(l1_term, {}));
}

namespace {

Tensor scalar_of(const Tensor& t, const char* what) {
  if (t.numel() != 1) throw ShapeError(std::string(what) + " must be scalar, got " + shape_str(t.shape()));
  return t.rank() == 0 ? t : reshape(t, {});
}

}  // namespace

Tensor stage1_loss(const Tensor& ctc, const Tensor& l1, const Tensor& ce, const StageLossWeights& w) {
  w.validate();
  const double rest = std::max(0.0, 1.0 - w.lambda - w.gamma);
  return add(add(scale(scalar_of(ctc, "ctc"), w.lambda), scale(scalar_of(l1, "l1"), w.gamma)),
             scale(scalar_of(ce, "ce"), rest));
}

Tensor stage3_loss(const Tensor& ctc, const Tensor& ce, const StageLossWeights& w) {
  w.validate();
  return add(scale(scalar_of(ctc, "ctc"), w.lambda), scale(scalar_of(ce, "ce"), 1.0 - w.lambda));
}

}  // namespace jepkd
