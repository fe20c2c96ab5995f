#include "dgsd/losses.hpp"

#include "dgsd/error.hpp"

#include <cmath>
#include <sstream>

namespace dgsd::losses {

namespace {

void require_distribution(std::span<const double> p) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0 + 1e-9)) {
      fail(ErrorKind::InvalidArgument, "probability outside [0, 1]");
    }
    sum += v;
  }
  if (p.empty() || std::abs(sum - 1.0) > 1e-6) {
    std::ostringstream msg;
    msg << "distribution sums to " << sum;
    fail(ErrorKind::InvalidArgument, msg.str());
  }
}

std::span<const double> as_span(const VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace

LossWeights::LossWeights(double alpha, double beta) : alpha_(alpha), beta_(beta) {
  if (!(alpha >= 0.0 && alpha <= 1.0 && beta >= 0.0 && beta <= 1.0)) {
    std::ostringstream msg;
    msg << "loss weights must lie in [0, 1], got alpha=" << alpha << " beta=" << beta;
    fail(ErrorKind::InvalidArgument, msg.str());
  }
}

double cross_entropy(std::span<const double> p, int label) {
  require_distribution(p);
  require(label >= 0 && static_cast<std::size_t>(label) < p.size(), ErrorKind::InvalidArgument,
          "label out of range");
  return -std::log(std::max(p[static_cast<std::size_t>(label)], kProbabilityFloor));
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), ErrorKind::Dimension, "KL arguments differ in length");
  double kl = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (p[c] <= 0.0) continue;  // 0 ln 0 = 0
    kl += p[c] * (std::log(std::max(p[c], kProbabilityFloor)) -
                  std::log(std::max(q[c], kProbabilityFloor)));
  }
  return std::max(kl, 0.0);
}

double feature_distillation(std::span<const VectorXd> features) {
  require(features.size() >= 2, ErrorKind::InvalidArgument, "need at least two layers");
  const VectorXd& teacher = features.back();
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < features.size(); ++i) {
    if (features[i].size() != teacher.size()) {
      fail(ErrorKind::Dimension, "pooled feature lengths differ");
    }
    total += (features[i] - teacher).squaredNorm() / static_cast<double>(teacher.size());
  }
  return total;
}

double hierarchical_distillation(std::span<const VectorXd> distributions, KlDirection direction) {
  require(distributions.size() >= 2, ErrorKind::InvalidArgument, "need at least two layers");
  const VectorXd& teacher = distributions.back();
  require_distribution(as_span(teacher));
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < distributions.size(); ++i) {
    require_distribution(as_span(distributions[i]));
    total += direction == KlDirection::TeacherToStudent
                 ? kl_divergence(as_span(teacher), as_span(distributions[i]))
                 : kl_divergence(as_span(distributions[i]), as_span(teacher));
  }
  return total;
}

LossBreakdown combine(LossBreakdown components, const LossWeights& weights) {
  components.total = weights.alpha() * components.loss1 +
                     (1.0 - weights.alpha()) * components.loss2 +
                     weights.beta() * components.loss3;
  return components;
}

template <typename T>
Vec<T> cross_entropy_grad_logits(const Vec<T>& p, int label) {
  // The floor guards the logarithm only; the softmax gradient stays live so a
  // confidently wrong window can still recover.
  Vec<T> g = p;
  g(label) -= T(1);
  return g;
}

template <typename T>
Vec<T> feature_distillation_grad(const Vec<T>& student, const Vec<T>& teacher) {
  return (student - teacher) * (T(2) / static_cast<T>(student.size()));
}

template <typename T>
Vec<T> kl_grad_logits(const Vec<T>& student, const Vec<T>& teacher, KlDirection direction) {
  if (direction == KlDirection::TeacherToStudent) {
    // d/dz [-sum_c t_c ln softmax(z)_c] with sum t = 1
    return student - teacher;
  }
  const T floor = static_cast<T>(kProbabilityFloor);
  Vec<T> a = student.cwiseMax(floor).array().log() - teacher.cwiseMax(floor).array().log();
  const T mean = student.dot(a);
  return student.cwiseProduct((a.array() - mean).matrix());
}

template Vec<float> cross_entropy_grad_logits<float>(const Vec<float>&, int);
template Vec<double> cross_entropy_grad_logits<double>(const Vec<double>&, int);
template Vec<float> feature_distillation_grad<float>(const Vec<float>&, const Vec<float>&);
template Vec<double> feature_distillation_grad<double>(const Vec<double>&, const Vec<double>&);
template Vec<float> kl_grad_logits<float>(const Vec<float>&, const Vec<float>&, KlDirection);
template Vec<double> kl_grad_logits<double>(const Vec<double>&, const Vec<double>&, KlDirection);

}  // namespace dgsd::losses
