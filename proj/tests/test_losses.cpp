#include <doctest.h>

#include <cmath>

#include "jepkd/losses.hpp"
#include "jepkd/rng.hpp"
#include "jepkd/verify.hpp"

using namespace jepkd;

namespace {

Tensor log_of(Shape shape, std::vector<double> probs) {
  for (auto& p : probs) p = std::log(p);
  return Tensor(std::move(shape), std::move(probs));
}

Tensor random_log_probs(std::size_t frames, std::size_t classes, Rng& rng) {
  std::vector<double> v(frames * classes);
  for (auto& x : v) x = rng.normal();
  return log_softmax_last(Tensor({frames, classes}, std::move(v)));
}

}  // namespace

TEST_CASE("ctc: single frame, single label") {
  const Tensor lp = log_of({1, 3}, {0.5, 0.3, 0.2});
  const std::vector<int> y = {1};
  CHECK(ctc_loss(lp, y).item() == doctest::Approx(-std::log(0.3)).epsilon(1e-12));
}

TEST_CASE("ctc: two frames, one label, every alignment enumerated") {
  const Tensor lp = log_of({2, 3}, {0.5, 0.3, 0.2, 0.4, 0.5, 0.1});
  const std::vector<int> y = {1};
  // Paths collapsing to [1]: (1,1), (blank,1), (1,blank).
  const double p = 0.3 * 0.5 + 0.5 * 0.5 + 0.3 * 0.4;
  CHECK(p == doctest::Approx(0.52));
  CHECK(ctc_loss(lp, y).item() == doctest::Approx(-std::log(0.52)).epsilon(1e-12));
  CHECK(verify::brute_force_ctc(lp, y) == doctest::Approx(0.6539).epsilon(1e-4));
}

TEST_CASE("ctc: infeasible targets give +inf without recording") {
  const Tensor lp = log_of({1, 3}, {0.5, 0.3, 0.2});
  const std::vector<int> two = {1, 2};
  CHECK(std::isinf(ctc_loss(lp, two).item()));
  const std::vector<int> repeat = {1, 1};
  const Tensor lp2 = log_of({2, 3}, {0.5, 0.3, 0.2, 0.4, 0.5, 0.1});
  CHECK_FALSE(ctc_feasible(2, repeat));
  CHECK(std::isinf(ctc_loss(lp2, repeat).item()));
  CHECK(ctc_feasible(3, repeat));
}

TEST_CASE("ctc: out-of-vocabulary tokens are rejected") {
  const Tensor lp = log_of({2, 3}, {0.5, 0.3, 0.2, 0.4, 0.5, 0.1});
  const std::vector<int> blank = {0}, big = {3};
  CHECK_THROWS_AS(ctc_loss(lp, blank), std::invalid_argument);
  CHECK_THROWS_AS(ctc_loss(lp, big), std::invalid_argument);
}

TEST_CASE("ctc: an appended pure-blank frame leaves the loss unchanged") {
  Rng rng(3);
  const Tensor lp = random_log_probs(4, 4, rng);
  std::vector<double> ext(lp.values().begin(), lp.values().end());
  ext.insert(ext.end(), {0.0, -1e300, -1e300, -1e300});
  // exp(-1e300) underflows to exactly 0, so the frame is pure blank.
  const Tensor lp5({5, 4}, ext);
  for (const std::vector<int>& y : {std::vector<int>{1, 2}, std::vector<int>{3, 3}, std::vector<int>{}}) {
    CHECK(ctc_loss(lp5, y).item() == doctest::Approx(ctc_loss(lp, y).item()).epsilon(1e-12));
  }
}

TEST_CASE("ctc matches brute-force enumeration exhaustively") {
  const auto results = verify::ctc_oracle_suite();
  for (const auto& r : results) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.passed);
  }
}

TEST_CASE("ctc oracle catches a recursion without skip transitions") {
  mutation::set_ctc_skip_disabled(true);
  const bool passed = verify::all_passed(verify::ctc_oracle_suite());
  mutation::set_ctc_skip_disabled(false);
  CHECK_FALSE(passed);
  CHECK(verify::all_passed(verify::ctc_oracle_suite()));
}

TEST_CASE("cross entropy worked values") {
  const std::vector<int> t0 = {0};
  CHECK(cross_entropy(Tensor({1, 4}, {0, 0, 0, 0}), t0).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(cross_entropy(Tensor({1, 3}, {2, 0, 0}), t0).item() ==
        doctest::Approx(std::log(1 + 2 * std::exp(-2.0))).epsilon(1e-12));
  CHECK(cross_entropy(Tensor({1, 3}, {2, 0, 0}), t0).item() == doctest::Approx(0.2395).epsilon(1e-4));
  CHECK(cross_entropy(Tensor({1, 2}, {30, 0}), t0).item() < 1e-12);
  const std::vector<int> bad = {3};
  CHECK_THROWS_AS(cross_entropy(Tensor({1, 3}, {2, 0, 0}), bad), std::invalid_argument);
}

TEST_CASE("l1 distance") {
  const Tensor g({2}, {1, 2}), a({2}, {0, 4});
  CHECK(l1_distance(g, a).item() == 1.5);
  CHECK(l1_distance(a, g).item() == 1.5);
  CHECK(l1_distance(g, g).item() == 0.0);
  CHECK_THROWS_AS(l1_distance(g, Tensor({3}, {0, 0, 0})), ShapeError);
}

TEST_CASE("least-squares adversarial losses") {
  auto d = [](double r, double f) { return lsgan_d_loss(Tensor::scalar(r), Tensor::scalar(f)).item(); };
  auto g = [](double f, double l1) { return lsgan_g_loss(Tensor::scalar(f), Tensor::scalar(l1)).item(); };
  CHECK(d(1, 0) == 0.0);
  CHECK(d(0.5, 0.5) == 0.25);
  CHECK(d(0, 1) == 1.0);
  CHECK(g(1, 0) == 0.0);
  CHECK(g(0, 0.3) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(g(0.5, 0) == 0.125);
  CHECK_THROWS(lsgan_d_loss(Tensor({0}, {}), Tensor::scalar(0)));
  const LsGanConfig defaults;
  CHECK(defaults.real_target == 1.0);
  CHECK(defaults.fake_target == 0.0);
  CHECK(defaults.gen_target == 1.0);
}

TEST_CASE("least-squares discriminator pointwise optimum") {
  for (const auto& r : verify::lsgan_suite()) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.passed);
  }
  CHECK(verify::lsgan_pointwise_minimizer(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(verify::lsgan_pointwise_minimizer(0, 1) == doctest::Approx(0.0));
  CHECK(verify::lsgan_pointwise_minimizer(0.3, 0.7) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("stage composites") {
  const StageLossWeights w;
  CHECK(w.lambda == 0.3);
  CHECK(w.gamma == 0.1);
  auto s = [](double v) { return Tensor::scalar(v); };
  CHECK(stage1_loss(s(0), s(0), s(0), w).item() == 0.0);
  CHECK(stage1_loss(s(1), s(1), s(1), w).item() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(stage1_loss(s(2), s(1), s(1), w).item() == doctest::Approx(1.3).epsilon(1e-15));
  CHECK(stage3_loss(s(0), s(0), w).item() == 0.0);
  CHECK(stage3_loss(s(1), s(1), w).item() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(stage3_loss(s(2), s(0), w).item() == doctest::Approx(0.6).epsilon(1e-15));
  CHECK_THROWS_AS((StageLossWeights{0.8, 0.5}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((StageLossWeights{-0.1, 0.1}.validate()), std::invalid_argument);
}

TEST_CASE("losses are non-negative on random inputs") {
  Rng rng(8);
  for (int k = 0; k < 20; ++k) {
    const Tensor lp = random_log_probs(6, 4, rng);
    const std::vector<int> y = {1, 2, 3};
    CHECK(ctc_loss(lp, y).item() >= 0.0);
    CHECK(cross_entropy(lp, std::vector<int>{0, 1, 2, 3, 0, 1}).item() >= 0.0);
    const Tensor d({2}, {rng.normal(), rng.normal()});
    CHECK(lsgan_d_loss(d, d).item() >= 0.0);
    CHECK(lsgan_g_loss(d, Tensor::scalar(0.0)).item() >= 0.0);
  }
}

TEST_CASE("every loss passes the finite-difference check") {
  for (const auto& r : verify::gradient_suite()) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.passed);
  }
}
