#include "dgsd/train.hpp"

#include "dgsd/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace dgsd::train {

std::string_view to_string(WUpdate mode) {
  return mode == WUpdate::LiteralBlend ? "literal" : "optimizer";
}

void TrainConfig::validate() const {
  require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorKind::InvalidArgument,
          "learning rate must be positive");
  require(batch_size >= 1, ErrorKind::InvalidArgument, "batch size must be >= 1");
  require(epochs >= 0, ErrorKind::InvalidArgument, "epochs must be >= 0");
  require(early_stop_patience >= 0, ErrorKind::InvalidArgument, "patience must be >= 0");
  require(split.train >= 0.0 && split.val >= 0.0 && split.test >= 0.0 &&
              std::abs(split.train + split.val + split.test - 1.0) <= 1e-9,
          ErrorKind::InvalidArgument, "split ratios must be non-negative and sum to 1");
}

Dataset<float> make_dataset(std::span<const signal::DeFeatureMatrix> windows) {
  Dataset<float> out;
  out.inputs.reserve(windows.size());
  out.labels.reserve(windows.size());
  for (const auto& w : windows) {
    out.inputs.push_back(w.values.cast<float>());
    out.labels.push_back(w.label);
  }
  return out;
}

Split split_dataset(std::size_t n_windows, const SplitRatios& ratios, std::uint64_t seed) {
  if (n_windows < 10) {
    std::ostringstream msg;
    msg << "need at least 10 windows to split, got " << n_windows;
    fail(ErrorKind::InvalidArgument, msg.str());
  }
  require(ratios.train >= 0.0 && ratios.val >= 0.0 && ratios.test >= 0.0 &&
              std::abs(ratios.train + ratios.val + ratios.test - 1.0) <= 1e-9,
          ErrorKind::InvalidArgument, "split ratios must be non-negative and sum to 1");
  std::vector<std::size_t> perm(n_windows);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  const auto n = static_cast<double>(n_windows);
  // Small epsilon so that e.g. 0.1 * 10 floors to 1, not 0.
  const auto n_val = static_cast<std::size_t>(std::floor(n * ratios.val + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(n * ratios.test + 1e-9));
  Split s;
  s.train.assign(perm.begin(), perm.end() - static_cast<std::ptrdiff_t>(n_val + n_test));
  s.val.assign(perm.end() - static_cast<std::ptrdiff_t>(n_val + n_test),
               perm.end() - static_cast<std::ptrdiff_t>(n_test));
  s.test.assign(perm.end() - static_cast<std::ptrdiff_t>(n_test), perm.end());
  return s;
}

template <typename T>
void project_w(model::DgsdModel<T>& model) {
  auto w = model.adjacency();
  w = w.cwiseMax(T(0));
}

template <typename T>
void update_w_literal(model::DgsdModel<T>& model, const Mat<T>& grad_w, T rho) {
  auto w = model.adjacency();
  require(grad_w.rows() == w.rows() && grad_w.cols() == w.cols(), ErrorKind::Dimension,
          "gradient shape does not match W");
  require(grad_w.allFinite(), ErrorKind::Numeric, "non-finite W gradient");
  w = (T(1) - rho) * w + rho * grad_w;
}

template <typename T>
Adam<T>::Adam(std::size_t n_params, double learning_rate)
    : lr_(learning_rate), m_(n_params, T(0)), v_(n_params, T(0)) {}

template <typename T>
std::size_t Adam<T>::step(std::span<T> params, std::span<const T> grads, std::size_t first,
                          std::size_t count) {
  require(params.size() == m_.size() && grads.size() == m_.size() && first + count <= m_.size(),
          ErrorKind::Dimension, "optimizer state does not match parameters");
  require(t_ > 0, ErrorKind::InvalidArgument, "Adam::tick() must precede step()");
  const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
  const T corr1 = static_cast<T>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
  const T corr2 = static_cast<T>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
  const T lr = static_cast<T>(lr_), eps = static_cast<T>(eps_);
  for (std::size_t i = first; i < first + count; ++i) {
    const T g = grads[i];
    m_[i] = b1 * m_[i] + (T(1) - b1) * g;
    v_[i] = b2 * v_[i] + (T(1) - b2) * g * g;
    const T m_hat = m_[i] / corr1;
    const T v_hat = v_[i] / corr2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
  return count;
}

template <typename T>
TeacherTargets<T> teacher_targets(const model::DgsdModel<T>& model, const Dataset<T>& data,
                                  std::span<const std::size_t> idx) {
  const auto graph = model::prepare_graph(model);
  auto cache = model::forward_batch<T>(model, graph, data.inputs, idx);
  return {std::move(cache.features.back()), std::move(cache.probs.back())};
}

namespace {

template <typename T>
VectorXd to_double(const auto& v) {
  return v.template cast<double>();
}

template <typename T>
losses::LossBreakdown batch_losses(const model::BatchCache<T>& cache, const Dataset<T>& data,
                                   std::span<const std::size_t> idx, const LossOptions& opts,
                                   const Mat<T>& teacher_features, const Mat<T>& teacher_probs) {
  const std::size_t layers = cache.probs.size();
  losses::LossBreakdown sum;
  std::vector<VectorXd> feats(layers), dists(layers);
  for (Eigen::Index b = 0; b < cache.batch; ++b) {
    const int y = label_index(data.labels[idx[static_cast<std::size_t>(b)]]);
    const VectorXd deepest = to_double<T>(cache.probs.back().col(b));
    sum.loss1 += losses::cross_entropy({deepest.data(), static_cast<std::size_t>(deepest.size())}, y);
    for (std::size_t i = 0; i + 1 < layers; ++i) {
      feats[i] = to_double<T>(cache.features[i].col(b));
      dists[i] = to_double<T>(cache.probs[i].col(b));
    }
    feats.back() = to_double<T>(teacher_features.col(b));
    dists.back() = to_double<T>(teacher_probs.col(b));
    sum.loss2 += losses::feature_distillation(feats);
    sum.loss3 += losses::hierarchical_distillation(dists, opts.kl_direction);
  }
  const double inv = 1.0 / static_cast<double>(cache.batch);
  sum.loss1 *= inv;
  sum.loss2 *= inv;
  sum.loss3 *= inv;
  return losses::combine(sum, opts.weights);
}

}  // namespace

template <typename T>
LossAndGradient<T> loss_and_gradient(const model::DgsdModel<T>& model,
                                     const model::GraphContext<T>& graph, const Dataset<T>& data,
                                     std::span<const std::size_t> idx, const LossOptions& opts,
                                     std::optional<ComponentWeights> components,
                                     const TeacherTargets<T>* frozen) {
  const auto cache = model::forward_batch<T>(model, graph, data.inputs, idx);
  const Mat<T>& tfeat = frozen ? frozen->features : cache.features.back();
  const Mat<T>& tprob = frozen ? frozen->probs : cache.probs.back();
  require(tfeat.cols() == cache.batch && tprob.cols() == cache.batch, ErrorKind::Dimension,
          "teacher targets do not match the batch");

  LossAndGradient<T> out;
  out.losses = batch_losses(cache, data, idx, opts, tfeat, tprob);

  const auto cw = components.value_or(ComponentWeights::from(opts.weights));
  const std::size_t layers = cache.probs.size();
  const T inv_batch = T(1) / static_cast<T>(cache.batch);
  model::OutputGradients<T> up;
  up.logits.resize(layers);
  up.features.resize(layers);
  for (std::size_t i = 0; i < layers; ++i) {
    up.logits[i].setZero(cache.logits[i].rows(), cache.batch);
    up.features[i].setZero(cache.features[i].rows(), cache.batch);
  }
  const T c1 = static_cast<T>(cw.loss1) * inv_batch;
  const T c2 = static_cast<T>(cw.loss2) * inv_batch;
  const T c3 = static_cast<T>(cw.loss3) * inv_batch;
  for (Eigen::Index b = 0; b < cache.batch; ++b) {
    const int y = label_index(data.labels[idx[static_cast<std::size_t>(b)]]);
    up.logits.back().col(b) =
        c1 * losses::cross_entropy_grad_logits<T>(cache.probs.back().col(b), y);
    for (std::size_t i = 0; i + 1 < layers; ++i) {
      up.features[i].col(b) =
          c2 * losses::feature_distillation_grad<T>(cache.features[i].col(b), tfeat.col(b));
      up.logits[i].col(b) =
          c3 * losses::kl_grad_logits<T>(cache.probs[i].col(b), tprob.col(b), opts.kl_direction);
    }
  }
  out.gradient = model::backward(model, graph, cache, up);
  return out;
}

template <typename T>
losses::LossBreakdown evaluate_loss(const model::DgsdModel<T>& model, const Dataset<T>& data,
                                    std::span<const std::size_t> idx, const LossOptions& opts,
                                    const TeacherTargets<T>* frozen) {
  const auto graph = model::prepare_graph(model);
  const auto cache = model::forward_batch<T>(model, graph, data.inputs, idx);
  const Mat<T>& tfeat = frozen ? frozen->features : cache.features.back();
  const Mat<T>& tprob = frozen ? frozen->probs : cache.probs.back();
  return batch_losses(cache, data, idx, opts, tfeat, tprob);
}

TrainState::TrainState(model::DgsdModel<float> m, const TrainConfig& cfg, std::size_t dataset_size)
    : model(std::move(m)),
      optimizer(model.parameters().size(), cfg.learning_rate),
      gradient_contributions(dataset_size, 0) {}

losses::LossBreakdown train_step(TrainState& state, const Dataset<float>& data,
                                 std::span<const std::size_t> batch, const TrainConfig& cfg) {
  require(!batch.empty(), ErrorKind::InvalidArgument, "empty batch");
  project_w(state.model);
  const auto graph = model::prepare_graph(state.model);
  const LossOptions opts{cfg.weights, cfg.kl_direction};
  auto lg = loss_and_gradient(state.model, graph, data, batch, opts);

  const std::pair<const char*, double> parts[] = {
      {"loss1", lg.losses.loss1}, {"loss2", lg.losses.loss2},
      {"loss3", lg.losses.loss3}, {"total", lg.losses.total}};
  for (const auto& [name, value] : parts) {
    if (!std::isfinite(value)) fail(ErrorKind::Numeric, std::string("non-finite ") + name);
  }

  for (std::size_t i : batch) ++state.gradient_contributions.at(i);

  auto params = state.model.parameters();
  const std::span<const float> grads(lg.gradient);
  state.optimizer.tick();
  std::size_t touched = 0;
  if (cfg.w_update == WUpdate::LiteralBlend) {
    const auto n = static_cast<Eigen::Index>(state.model.config().n_nodes);
    const Mat<float> grad_w = Eigen::Map<const Mat<float>>(lg.gradient.data(), n, n);
    update_w_literal(state.model, grad_w, static_cast<float>(cfg.learning_rate));
    const auto nw = static_cast<std::size_t>(n * n);
    touched = nw + state.optimizer.step(params, grads, nw, params.size() - nw);
  } else {
    touched = state.optimizer.step(params, grads, 0, params.size());
  }
  state.last_step_scalars = touched;
  ++state.steps;
  return lg.losses;
}

eval::ConfusionCounts evaluate(const model::DgsdModel<float>& model, const Dataset<float>& data,
                               std::span<const std::size_t> idx) {
  const auto predicted = model::predict_batch<float>(model, data.inputs, idx);
  eval::ConfusionCounts c;
  for (std::size_t i = 0; i < idx.size(); ++i) c.add(data.labels[idx[i]], predicted[i]);
  return c;
}

FitResult fit(const Dataset<float>& data, const model::DgsdConfig& model_cfg,
              const TrainConfig& cfg) {
  cfg.validate();
  model_cfg.validate();
  require(data.inputs.size() == data.labels.size(), ErrorKind::Dimension,
          "inputs and labels differ in count");
  for (const auto& x : data.inputs) {
    if (x.rows() != model_cfg.n_nodes || x.cols() != model_cfg.in_features) {
      fail(ErrorKind::Dimension, "feature windows do not match the model configuration");
    }
  }

  TrainReport report;
  report.split = split_dataset(data.size(), cfg.split, cfg.seed);
  const auto& split = report.split;
  report.train_size = split.train.size();
  report.val_size = split.val.size();
  report.test_size = split.test.size();

  TrainState state(model::DgsdModel<float>::initialized(model_cfg, cfg.seed), cfg, data.size());
  project_w(state.model);

  std::mt19937_64 shuffle_rng(cfg.seed + 1);
  std::vector<std::size_t> order = split.train;

  double best_val = evaluate(state.model, data, split.val).accuracy();
  int best_epoch = 0;
  model::DgsdModel<float> best_model = state.model;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    losses::LossBreakdown epoch_loss;
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += bs, ++batch_no) {
      const std::span<const std::size_t> batch(order.data() + start,
                                               std::min(bs, order.size() - start));
      losses::LossBreakdown l;
      try {
        l = train_step(state, data, batch, cfg);
      } catch (const Error& e) {
        std::ostringstream msg;
        msg << "epoch " << epoch << ", batch " << batch_no << ": " << e.what();
        throw Error(e.kind(), msg.str());
      }
      const double w = static_cast<double>(batch.size()) / static_cast<double>(order.size());
      epoch_loss.loss1 += w * l.loss1;
      epoch_loss.loss2 += w * l.loss2;
      epoch_loss.loss3 += w * l.loss3;
      epoch_loss.total += w * l.total;
    }
    // The next step would project anyway; evaluate the graph it would see.
    project_w(state.model);
    const double val = evaluate(state.model, data, split.val).accuracy();
    if (val > best_val) {
      best_val = val;
      best_epoch = epoch;
      best_model = state.model;
    }
    report.epochs.push_back({epoch, epoch_loss, val, best_val});
    if (cfg.early_stop_patience > 0 && epoch - best_epoch >= cfg.early_stop_patience) break;
  }

  report.best_epoch = best_epoch;
  report.best_val_accuracy = best_val;
  report.test_confusion = evaluate(best_model, data, split.test);
  report.test_accuracy = report.test_confusion.accuracy();
  report.optimizer_scalars_per_step = state.last_step_scalars;
  report.gradient_contributions = std::move(state.gradient_contributions);
  return {std::move(report), std::move(best_model)};
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport gradient_check(const model::DgsdModel<double>& model, const Dataset<double>& data,
                               std::span<const std::size_t> idx, const LossOptions& opts,
                               double epsilon, std::optional<ComponentWeights> components) {
  require(model.config().n_nodes <= 8, ErrorKind::InvalidArgument,
          "gradient check is meant for small graphs (N <= 8)");
  const auto cw = components.value_or(ComponentWeights::from(opts.weights));
  const auto teacher = teacher_targets(model, data, idx);
  const auto graph = model::prepare_graph(model);
  const auto analytic = loss_and_gradient(model, graph, data, idx, opts, cw, &teacher).gradient;

  // Loss at a probe point plus its rectifier on/off pattern and the power
  // iteration's stopping step. The loss is only piecewise smooth in both; a
  // central difference straddling a switch says nothing about the derivative.
  using Pattern = std::vector<int>;
  auto objective = [&](const model::DgsdModel<double>& m, Pattern& pattern) {
    const auto g = model::prepare_graph(m);
    const auto cache = model::forward_batch<double>(m, g, data.inputs, idx);
    const auto l = batch_losses(cache, data, idx, opts, teacher.features, teacher.probs);
    pattern.clear();
    for (const auto& z : cache.preact)
      for (Eigen::Index i = 0; i < z.size(); ++i) pattern.push_back(z.data()[i] > 0.0);
    pattern.push_back(g.lambda_max.iterations);
    return cw.loss1 * l.loss1 + cw.loss2 * l.loss2 + cw.loss3 * l.loss3;
  };
  Pattern base, up_pattern, down_pattern;
  objective(model, base);

  GradCheckReport report;
  model::DgsdModel<double> probe = model;
  auto params = probe.parameters();
  for (const auto& group : model.groups()) {
    double group_max = 0.0;
    for (std::size_t j = 0; j < group.size; ++j) {
      const std::size_t p = group.offset + j;
      const double saved = params[p];
      params[p] = saved + epsilon;
      const double up = objective(probe, up_pattern);
      params[p] = saved - epsilon;
      const double down = objective(probe, down_pattern);
      params[p] = saved;
      if (up_pattern != base || down_pattern != base) {
        ++report.nonsmooth_skipped;
        continue;
      }
      const double numeric = (up - down) / (2.0 * epsilon);
      const double err = relative_error(analytic[p], numeric);
      group_max = std::max(group_max, err);
      ++report.checked;
      if (err >= report.max_relative_error) {
        report.max_relative_error = err;
        report.worst = {group.name, j, analytic[p], numeric, err};
      }
    }
    report.group_max.emplace_back(group.name, group_max);
  }
  return report;
}

ToyProblem make_toy_problem(std::uint64_t seed, int n_nodes, int windows) {
  model::DgsdConfig cfg;
  cfg.n_nodes = n_nodes;
  cfg.in_features = 5;
  cfg.hidden = 6;
  cfg.n_layers = 4;
  cfg.cheb_order = 3;
  cfg.feature_head_dim = 5;

  ToyProblem toy{model::DgsdModel<double>::initialized(cfg, seed), {}, {}};
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int w = 0; w < windows; ++w) {
    Mat<double> x(n_nodes, cfg.in_features);
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, j) = normal(rng);
    toy.data.inputs.push_back(std::move(x));
    toy.data.labels.push_back(label_from_index(w % 2));
    toy.batch.push_back(static_cast<std::size_t>(w));
  }
  return toy;
}

template void project_w<float>(model::DgsdModel<float>&);
template void project_w<double>(model::DgsdModel<double>&);
template void update_w_literal<float>(model::DgsdModel<float>&, const Mat<float>&, float);
template void update_w_literal<double>(model::DgsdModel<double>&, const Mat<double>&, double);
template class Adam<float>;
template class Adam<double>;

#define DGSD_INSTANTIATE(T)                                                                     \
  template TeacherTargets<T> teacher_targets<T>(const model::DgsdModel<T>&, const Dataset<T>&,  \
                                                std::span<const std::size_t>);                  \
  template LossAndGradient<T> loss_and_gradient<T>(                                             \
      const model::DgsdModel<T>&, const model::GraphContext<T>&, const Dataset<T>&,             \
      std::span<const std::size_t>, const LossOptions&, std::optional<ComponentWeights>,        \
      const TeacherTargets<T>*);                                                                \
  template losses::LossBreakdown evaluate_loss<T>(const model::DgsdModel<T>&, const Dataset<T>&, \
                                                  std::span<const std::size_t>,                  \
                                                  const LossOptions&, const TeacherTargets<T>*);

DGSD_INSTANTIATE(float)
DGSD_INSTANTIATE(double)

#undef DGSD_INSTANTIATE

}  // namespace dgsd::train
