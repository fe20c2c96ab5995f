#include "dgsd/error.hpp"
#include "dgsd/losses.hpp"

#include "doctest.h"
#include "helpers.hpp"

#include <cmath>
#include <random>

using namespace dgsd;
using namespace dgsd::losses;

namespace {

VectorXd softmax(const VectorXd& z) {
  const VectorXd e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

VectorXd vec2(double a, double b) {
  VectorXd v(2);
  v << a, b;
  return v;
}

std::span<const double> view(const VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

}  // namespace

TEST_CASE("cross entropy") {
  const VectorXd p = vec2(0.25, 0.75);
  CHECK(cross_entropy(view(p), 1) == doctest::Approx(-std::log(0.75)));
  CHECK(cross_entropy(view(p), 0) == doctest::Approx(std::log(4.0)));
  const VectorXd certain = vec2(0.0, 1.0);
  CHECK(cross_entropy(view(certain), 0) == doctest::Approx(-std::log(kProbabilityFloor)));
  CHECK(cross_entropy(view(certain), 1) == 0.0);
  CHECK_THROWS_AS(cross_entropy(view(p), 2), Error);
  const VectorXd not_normalised = vec2(0.5, 0.6);
  CHECK_THROWS_AS(cross_entropy(view(not_normalised), 0), Error);
}

TEST_CASE("KL divergence") {
  const VectorXd p = vec2(0.3, 0.7), q = vec2(0.6, 0.4);
  const double expected = 0.3 * std::log(0.3 / 0.6) + 0.7 * std::log(0.7 / 0.4);
  CHECK(kl_divergence(view(p), view(q)) == doctest::Approx(expected));
  CHECK(kl_divergence(view(p), view(p)) == 0.0);
  CHECK(kl_divergence(view(q), view(p)) > 0.0);
}

TEST_CASE("distillation terms vanish when all layers coincide") {
  const VectorXd f = (VectorXd(3) << 0.1, -2.0, 5.0).finished();
  const std::vector<VectorXd> features{f, f, f, f};
  CHECK(feature_distillation(features) == 0.0);
  const std::vector<VectorXd> probs{vec2(0.2, 0.8), vec2(0.2, 0.8), vec2(0.2, 0.8)};
  CHECK(hierarchical_distillation(probs) == 0.0);
  CHECK(hierarchical_distillation(probs, KlDirection::StudentToTeacher) == 0.0);
}

TEST_CASE("distillation terms use the deepest layer as teacher") {
  const std::vector<VectorXd> features{vec2(1, 0), vec2(0, 2), vec2(0, 0)};
  // mean((1,0)^2) + mean((0,2)^2) = 0.5 + 2
  CHECK(feature_distillation(features) == doctest::Approx(2.5));

  const std::vector<VectorXd> probs{vec2(0.3, 0.7), vec2(0.5, 0.5), vec2(0.6, 0.4)};
  const VectorXd& teacher = probs.back();
  const double t2s = kl_divergence(view(teacher), view(probs[0])) +
                     kl_divergence(view(teacher), view(probs[1]));
  const double s2t = kl_divergence(view(probs[0]), view(teacher)) +
                     kl_divergence(view(probs[1]), view(teacher));
  CHECK(hierarchical_distillation(probs) == doctest::Approx(t2s));
  CHECK(hierarchical_distillation(probs, KlDirection::StudentToTeacher) == doctest::Approx(s2t));
  CHECK(t2s != doctest::Approx(s2t));
}

TEST_CASE("combine") {
  LossBreakdown l{0.4, 0.2, 0.1, 0.0};
  CHECK(combine(l, LossWeights(0.7, 0.3)).total == doctest::Approx(0.7 * 0.4 + 0.3 * 0.2 + 0.3 * 0.1));
  const auto only_ce = combine(l, LossWeights(1.0, 0.0));
  CHECK(std::abs(only_ce.total - l.loss1) <= 1e-10);
  CHECK(only_ce.loss2 == 0.2);  // still reported
  CHECK_THROWS_AS(LossWeights(1.2, 0.3), Error);
  CHECK_THROWS_AS(LossWeights(0.7, -0.1), Error);
}

TEST_CASE("logit gradients match finite differences") {
  std::mt19937_64 rng(101);
  std::normal_distribution<double> normal(0.0, 2.0);
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    const VectorXd z = vec2(normal(rng), normal(rng));
    const VectorXd teacher = softmax(vec2(normal(rng), normal(rng)));
    const int label = trial % 2;

    const VectorXd g_ce = cross_entropy_grad_logits<double>(softmax(z), label);
    const VectorXd g_t2s = kl_grad_logits<double>(softmax(z), teacher, KlDirection::TeacherToStudent);
    const VectorXd g_s2t = kl_grad_logits<double>(softmax(z), teacher, KlDirection::StudentToTeacher);
    for (int j = 0; j < 2; ++j) {
      VectorXd up = z, down = z;
      up(j) += h;
      down(j) -= h;
      const VectorXd pu = softmax(up), pd = softmax(down);
      const double n_ce = (cross_entropy(view(pu), label) - cross_entropy(view(pd), label)) / (2 * h);
      const double n_t2s = (kl_divergence(view(teacher), view(pu)) - kl_divergence(view(teacher), view(pd))) / (2 * h);
      const double n_s2t = (kl_divergence(view(pu), view(teacher)) - kl_divergence(view(pd), view(teacher))) / (2 * h);
      CHECK(g_ce(j) == doctest::Approx(n_ce).epsilon(1e-6));
      CHECK(g_t2s(j) == doctest::Approx(n_t2s).epsilon(1e-6));
      CHECK(g_s2t(j) == doctest::Approx(n_s2t).epsilon(1e-6));
    }
  }
}

TEST_CASE("feature distillation gradient") {
  const VectorXd s = (VectorXd(4) << 1, 2, 3, 4).finished();
  const VectorXd t = (VectorXd(4) << 0, 2, 5, 4).finished();
  const VectorXd g = feature_distillation_grad<double>(s, t);
  CHECK(testing::max_abs_diff(g, 2.0 * (s - t) / 4.0) == 0.0);
}

TEST_CASE("cross-entropy gradient stays live below the probability floor") {
  const VectorXd p = vec2(1e-15, 1.0 - 1e-15);
  const VectorXd g = cross_entropy_grad_logits<double>(p, 0);
  CHECK(g(0) == doctest::Approx(-1.0));
  CHECK(g(1) == doctest::Approx(1.0));
}
