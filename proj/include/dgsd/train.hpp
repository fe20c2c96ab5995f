#pragma once

#include "dgsd/common.hpp"
#include "dgsd/eval.hpp"
#include "dgsd/losses.hpp"
#include "dgsd/model.hpp"
#include "dgsd/signal.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dgsd::train {

/// How W is updated after backpropagation.
enum class WUpdate {
  OptimizerDescent,  // W is an ordinary Adam parameter
  LiteralBlend,      // W <- (1 - rho) W + rho dloss/dW
};

std::string_view to_string(WUpdate mode);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct TrainConfig {
  double learning_rate = 0.004;
  int batch_size = 32;
  int epochs = 200;
  std::uint64_t seed = 1111;
  losses::LossWeights weights{0.7, 0.3};
  losses::KlDirection kl_direction = losses::KlDirection::TeacherToStudent;
  SplitRatios split{};
  WUpdate w_update = WUpdate::OptimizerDescent;
  /// Stop after this many epochs without a validation improvement; 0 disables.
  int early_stop_patience = 0;

  void validate() const;
};

/// Labelled feature windows of one subject, already in training precision.
template <typename T>
struct Dataset {
  std::vector<Mat<T>> inputs;  // N x d each
  std::vector<Label> labels;

  std::size_t size() const { return inputs.size(); }
};

Dataset<float> make_dataset(std::span<const signal::DeFeatureMatrix> windows);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Seeded permutation; val and test get floor(n * ratio) windows, train the rest.
Split split_dataset(std::size_t n_windows, const SplitRatios& ratios, std::uint64_t seed);

/// w_ij <- max(w_ij, 0).
template <typename T>
void project_w(model::DgsdModel<T>& model);

/// W <- (1 - rho) W + rho * grad_w.
template <typename T>
void update_w_literal(model::DgsdModel<T>& model, const Mat<T>& grad_w, T rho);

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
template <typename T>
class Adam {
 public:
  Adam(std::size_t n_params, double learning_rate);

  /// Updates params[first, first + count). Returns the number of scalars touched.
  std::size_t step(std::span<T> params, std::span<const T> grads, std::size_t first,
                   std::size_t count);
  /// Call once per optimisation step, before step().
  void tick() { ++t_; }
  double learning_rate() const { return lr_; }

 private:
  double lr_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long t_ = 0;
  std::vector<T> m_;
  std::vector<T> v_;
};

/// Multipliers applied to each component in the reverse pass. Defaults to
/// (alpha, 1 - alpha, beta); gradient checks use unit vectors to isolate terms.
struct ComponentWeights {
  double loss1 = 0.0;
  double loss2 = 0.0;
  double loss3 = 0.0;

  static ComponentWeights from(const losses::LossWeights& w) {
    return {w.alpha(), 1.0 - w.alpha(), w.beta()};
  }
};

/// Deepest-layer outputs used as distillation targets, one column per window.
template <typename T>
struct TeacherTargets {
  Mat<T> features;
  Mat<T> probs;
};

struct LossOptions {
  losses::LossWeights weights{0.7, 0.3};
  losses::KlDirection kl_direction = losses::KlDirection::TeacherToStudent;
};

template <typename T>
struct LossAndGradient {
  losses::LossBreakdown losses;
  AlignedVector<T> gradient;  // flat, model parameter layout
};

/// Batch-mean losses and their gradient. The teacher (F_n, p_n) is treated
/// as a constant; when `frozen` is given it replaces the live teacher.
template <typename T>
LossAndGradient<T> loss_and_gradient(const model::DgsdModel<T>& model,
                                     const model::GraphContext<T>& graph, const Dataset<T>& data,
                                     std::span<const std::size_t> idx, const LossOptions& opts,
                                     std::optional<ComponentWeights> components = std::nullopt,
                                     const TeacherTargets<T>* frozen = nullptr);

template <typename T>
losses::LossBreakdown evaluate_loss(const model::DgsdModel<T>& model, const Dataset<T>& data,
                                    std::span<const std::size_t> idx, const LossOptions& opts,
                                    const TeacherTargets<T>* frozen = nullptr);

template <typename T>
TeacherTargets<T> teacher_targets(const model::DgsdModel<T>& model, const Dataset<T>& data,
                                  std::span<const std::size_t> idx);

/// Model, optimizer and bookkeeping of one training run.
struct TrainState {
  TrainState(model::DgsdModel<float> m, const TrainConfig& cfg, std::size_t dataset_size);

  model::DgsdModel<float> model;
  Adam<float> optimizer;
  std::size_t steps = 0;
  std::size_t last_step_scalars = 0;
  /// How many gradient computations each dataset window took part in.
  std::vector<std::size_t> gradient_contributions;
};

/// One iteration of the training algorithm: project W, rebuild the graph,
/// forward, losses, backward, update. Returns the pre-update losses.
losses::LossBreakdown train_step(TrainState& state, const Dataset<float>& data,
                                 std::span<const std::size_t> batch, const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  losses::LossBreakdown train_loss;
  double val_accuracy = 0.0;
  double best_val_accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 0 is the initial model
  double best_val_accuracy = 0.0;
  double test_accuracy = 0.0;
  eval::ConfusionCounts test_confusion;
  std::size_t train_size = 0;
  std::size_t val_size = 0;
  std::size_t test_size = 0;
  std::size_t optimizer_scalars_per_step = 0;
  std::vector<std::size_t> gradient_contributions;
  Split split;
};

struct FitResult {
  TrainReport report;
  model::DgsdModel<float> best_model;
};

/// Train on the split's train part, keep the checkpoint with the best
/// validation accuracy (earliest on ties), then score it on the test part.
FitResult fit(const Dataset<float>& data, const model::DgsdConfig& model_cfg,
              const TrainConfig& cfg);

/// Accuracy and confusion of `model` on data[idx].
eval::ConfusionCounts evaluate(const model::DgsdModel<float>& model, const Dataset<float>& data,
                               std::span<const std::size_t> idx);

struct GradCheckEntry {
  std::string group;
  std::size_t index = 0;  // within the group
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  GradCheckEntry worst;
  std::vector<std::pair<std::string, double>> group_max;  // per parameter group
  std::size_t checked = 0;
  /// Parameters whose +-epsilon probe flips a rectifier or moves the power
  /// iteration's stopping step; left out of the maxima because the
  /// difference quotient straddles a non-smooth point.
  std::size_t nonsmooth_skipped = 0;
};

/// Relative error used by gradient_check: |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Central differences on every parameter (W included) against the analytic
/// gradient, with the teacher frozen at the unperturbed point. Probes that
/// cross a non-smooth point are counted in nonsmooth_skipped instead.
GradCheckReport gradient_check(const model::DgsdModel<double>& model, const Dataset<double>& data,
                               std::span<const std::size_t> idx, const LossOptions& opts,
                               double epsilon = 1e-4,
                               std::optional<ComponentWeights> components = std::nullopt);

/// The 4-node, K=3, 4-layer toy problem the gradient check runs on.
struct ToyProblem {
  model::DgsdModel<double> model;
  Dataset<double> data;
  std::vector<std::size_t> batch;
};

ToyProblem make_toy_problem(std::uint64_t seed = 1111, int n_nodes = 4, int windows = 6);

}  // namespace dgsd::train
