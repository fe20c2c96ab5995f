#pragma once

#include "dgsd/common.hpp"

#include <span>

namespace dgsd::losses {

/// Probability floor for logs of probabilities.
inline constexpr double kProbabilityFloor = 1e-12;

/// Weights of the combined objective. Both must lie in [0, 1].
class LossWeights {
 public:
  LossWeights(double alpha, double beta);

  double alpha() const { return alpha_; }
  double beta() const { return beta_; }

 private:
  double alpha_;
  double beta_;
};

struct LossBreakdown {
  double loss1 = 0.0;  // cross-entropy of the deepest classifier
  double loss2 = 0.0;  // feature distillation
  double loss3 = 0.0;  // hierarchical distillation
  double total = 0.0;
};

/// Which argument of the hierarchical KL term is the reference distribution.
enum class KlDirection {
  TeacherToStudent,  // KL(p_n || p_i), default
  StudentToTeacher,  // KL(p_i || p_n)
};

/// -ln p[y] with p[y] floored.
double cross_entropy(std::span<const double> p, int label);

/// sum_{i<n} mean((F_i - F_n)^2). The last vector is the teacher.
double feature_distillation(std::span<const VectorXd> features);

/// sum_{i<n} KL between p_i and the teacher p_n (the last entry).
double hierarchical_distillation(std::span<const VectorXd> distributions,
                                 KlDirection direction = KlDirection::TeacherToStudent);

/// KL(p || q) = sum_c p_c ln(p_c / q_c), both floored.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// alpha*loss1 + (1-alpha)*loss2 + beta*loss3, written into `total`.
LossBreakdown combine(LossBreakdown components, const LossWeights& weights);

// Gradients used by the training loop. Teachers are constants here.

/// d CE / d logits = p - onehot(y), also where the value is floored.
template <typename T>
Vec<T> cross_entropy_grad_logits(const Vec<T>& p, int label);

/// d mean((f - teacher)^2) / d f.
template <typename T>
Vec<T> feature_distillation_grad(const Vec<T>& student, const Vec<T>& teacher);

/// d KL / d student logits, for the given direction.
template <typename T>
Vec<T> kl_grad_logits(const Vec<T>& student, const Vec<T>& teacher, KlDirection direction);

}  // namespace dgsd::losses
