// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances and budgets are the constants below.

#include "dgsd/cli.hpp"
#include "dgsd/error.hpp"
#include "dgsd/eval.hpp"
#include "dgsd/graph.hpp"
#include "dgsd/losses.hpp"
#include "dgsd/model.hpp"
#include "dgsd/signal.hpp"
#include "dgsd/train.hpp"

#include "helpers.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>

using namespace dgsd;

namespace {

constexpr double kSpectralTol = 1e-8;
constexpr double kSpectralBudgetS = 5.0;
constexpr double kGradTol = 1e-4;
constexpr double kGradEpsilon = 1e-4;
constexpr double kGradBudgetS = 30.0;
constexpr double kDeTol = 0.05;
constexpr double kIdentityTol = 1e-10;
constexpr double kSubjectAccMin = 0.90;
constexpr double kMeanAccMin = 0.92;
constexpr double kChanceHalfWidth = 0.07;
constexpr std::size_t kControlMinTest = 200;
constexpr double kLearningBudgetS = 600.0;
constexpr std::size_t kParamMax = 200000;
constexpr double kTTestPTol = 1e-3;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  args.insert(args.begin(), "dgsd");
  const int code = cli::run(args, out, err);
  if (code != cli::kExitOk) std::cerr << err.str();
  return code;
}

Verdict spectral_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1111);
  std::uniform_int_distribution<int> nodes(2, 8), order(1, 5);
  std::uniform_real_distribution<double> density(0.3, 1.0);
  double worst = 0.0;
  for (int g = 0; g < 50; ++g) {
    const int n = nodes(rng), k_order = order(rng);
    const MatrixXd w = testing::random_adjacency(n, rng, density(rng));
    const MatrixXd lap = graph::laplacian<double>(w);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(lap);
    const double lmax = es.eigenvalues().maxCoeff();
    const MatrixXd x = testing::random_matrix(n, 4, rng);
    std::vector<MatrixXd> theta;
    for (int k = 0; k < k_order; ++k) theta.push_back(testing::random_matrix(4, 3, rng));

    const auto basis = graph::chebyshev_basis<double>(graph::rescale_laplacian<double>(lap, lmax), k_order);
    const MatrixXd cheb = graph::graph_conv<double>(x, basis, theta);

    // U g(Lambda~) U^T x with T_k(cos t) = cos(k t) on the rescaled spectrum.
    const MatrixXd& u = es.eigenvectors();
    MatrixXd direct = MatrixXd::Zero(n, 3);
    for (int k = 0; k < k_order; ++k) {
      VectorXd gk(n);
      for (int i = 0; i < n; ++i) {
        const double s = std::clamp(2.0 * es.eigenvalues()(i) / lmax - 1.0, -1.0, 1.0);
        gk(i) = std::cos(k * std::acos(s));
      }
      direct += u * gk.asDiagonal() * u.transpose() * x * theta[static_cast<std::size_t>(k)];
    }
    worst = std::max(worst, testing::max_abs_diff(cheb, direct));
  }
  const double t = seconds_since(t0);
  return {worst < kSpectralTol && t < kSpectralBudgetS,
          "max abs error " + fmt(worst) + " over 50 graphs in " + fmt(t) + " s"};
}

Verdict gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto toy = train::make_toy_problem();
  const train::LossOptions opts{{0.7, 0.3}, losses::KlDirection::TeacherToStudent};
  const auto rep = train::gradient_check(toy.model, toy.data, toy.batch, opts, kGradEpsilon);
  const double t = seconds_since(t0);
  bool all_groups = rep.group_max.size() == toy.model.groups().size();
  return {rep.max_relative_error < kGradTol && all_groups && t < kGradBudgetS,
          "max relative error " + fmt(rep.max_relative_error) + " over " +
              std::to_string(rep.checked) + " parameters (" +
              std::to_string(rep.nonsmooth_skipped) + " skipped at non-smooth points), " +
              std::to_string(rep.group_max.size()) + " groups, " + fmt(t) + " s"};
}

Verdict de_analytic() {
  // Band-limited noise built directly in the frequency domain: Gaussian
  // cosine and sine coefficients on every in-band bin, scaled to variance s^2.
  const double fs = 128.0, sigma = 1.7;
  const int len = 640;
  const signal::BandSpec band{signal::BandName::Alpha, 8, 13};
  std::vector<int> bins;
  for (int k = 1; k < len / 2; ++k) {
    const double f = k * fs / len;
    if (f >= band.lo && f <= band.hi) bins.push_back(k);
  }
  const double coef_sd = sigma / std::sqrt(static_cast<double>(bins.size()));
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> normal(0.0, coef_sd);
  double mean = 0.0;
  const int windows = 200;
  for (int w = 0; w < windows; ++w) {
    signal::EegWindow win;
    win.sample_rate = fs;
    win.samples = MatrixXd::Zero(1, len);
    for (int k : bins) {
      const double a = normal(rng), b = normal(rng);
      for (int t = 0; t < len; ++t) {
        const double ph = 2.0 * std::numbers::pi * k * t / len;
        win.samples(0, t) += a * std::cos(ph) + b * std::sin(ph);
      }
    }
    mean += signal::extract_features(win, std::span<const signal::BandSpec>(&band, 1)).values(0, 0) / windows;
  }
  const double expected = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * sigma * sigma);
  const double err = std::abs(mean - expected);
  return {err < kDeTol, "mean DE " + fmt(mean) + " vs " + fmt(expected) + " (|diff| " + fmt(err) + ")"};
}

Verdict loss_identities() {
  auto toy = train::make_toy_problem();
  auto& m = toy.model;
  for (int i = 0; i < m.config().n_layers; ++i) {
    m.head_weight(i).setZero();
    m.head_bias(i).setConstant(0.3);
    m.classifier_weight(i).setZero();
    m.classifier_bias(i) << 0.1, -0.2;
  }
  const train::LossOptions opts{{0.7, 0.3}, losses::KlDirection::TeacherToStudent};
  const auto same = train::evaluate_loss(m, toy.data, toy.batch, opts);

  const auto fresh = train::make_toy_problem();
  const train::LossOptions ablation{{1.0, 0.0}, losses::KlDirection::TeacherToStudent};
  const auto abl = train::evaluate_loss(fresh.model, toy.data, toy.batch, ablation);
  const double gap = std::abs(abl.total - abl.loss1);
  return {same.loss2 == 0.0 && same.loss3 == 0.0 && gap <= kIdentityTol && abl.loss2 > 0.0,
          "coinciding layers: loss2 " + fmt(same.loss2) + ", loss3 " + fmt(same.loss3) +
              "; alpha=1 beta=0: |total - loss1| " + fmt(gap)};
}

struct LearningOutcome {
  Verdict learning;
  Verdict determinism;
};

LearningOutcome synthetic_learning_and_determinism(const testing::TempDir& dir) {
  const auto data = dir / "synth.aadb";
  const auto control = dir / "control.aadb";
  LearningOutcome out;
  if (run_cli({"synth", "--out", data.string()}) != 0 ||
      run_cli({"synth", "--out", control.string(), "--subjects", "1", "--trials", "40", "--seed",
               "2222"}) != 0) {
    out.learning = out.determinism = {false, "could not synthesise datasets"};
    return out;
  }

  const auto t0 = std::chrono::steady_clock::now();
  const int code_a = run_cli({"train", "--dataset", data.string(), "--run-dir", (dir / "a").string()});
  const int code_ctrl = run_cli({"train", "--dataset", control.string(), "--run-dir",
                                 (dir / "ctrl").string(), "--shuffle-labels"});
  const double t = seconds_since(t0);
  if (code_a != 0 || code_ctrl != 0) {
    out.learning = out.determinism = {false, "train exited with an error"};
    return out;
  }

  const auto results = eval::read_results_csv(dir / "a" / "results.csv");
  const auto ctrl = eval::read_results_csv(dir / "ctrl" / "results.csv");
  bool pass = results.size() == 4 && ctrl.size() == 1;
  std::string detail = "per-subject";
  std::vector<double> acc;
  for (const auto& r : results) {
    acc.push_back(r.accuracy);
    detail += " " + fmt(r.accuracy);
    pass = pass && r.accuracy >= kSubjectAccMin;
  }
  const double mean = acc.empty() ? 0.0 : eval::accuracy_stats(acc).mean;
  pass = pass && mean >= kMeanAccMin;
  detail += "; mean " + fmt(mean);
  if (ctrl.size() == 1) {
    const double c = ctrl[0].accuracy;
    const std::size_t n = ctrl[0].confusion.total();
    pass = pass && std::abs(c - 0.5) <= kChanceHalfWidth && n >= kControlMinTest;
    detail += "; shuffled control " + fmt(c) + " on " + std::to_string(n) + " test windows";
  }
  pass = pass && t < kLearningBudgetS;
  detail += "; " + fmt(t) + " s";
  out.learning = {pass, detail};

  const int code_b = run_cli({"train", "--dataset", data.string(), "--run-dir", (dir / "b").string()});
  bool same = code_b == 0;
  std::vector<std::string> files{"results.csv", "summary.json", "train_log.jsonl"};
  for (const auto& r : results) files.push_back("checkpoints/" + r.subject_id + ".dgsd");
  std::string differing;
  for (const auto& f : files) {
    if (!std::filesystem::exists(dir / "a" / f) || slurp(dir / "a" / f) != slurp(dir / "b" / f)) {
      same = false;
      differing += " " + f;
    }
  }
  out.determinism = {same, same ? std::to_string(files.size()) + " artefacts bit-identical across two runs"
                                : "differs:" + differing};
  return out;
}

Verdict parameter_count() {
  const model::DgsdConfig c;
  const std::size_t n = c.n_nodes, d = c.in_features, h = c.hidden, k = c.cheb_order,
                    layers = c.n_layers, dh = c.feature_head_dim, cls = c.n_classes;
  const std::size_t formula = n * n + d * h + h + layers * k * h * h + layers * (h * dh + dh) +
                              layers * (dh * cls + cls);
  const std::size_t reported = model::parameter_count(c);
  return {reported == formula && reported < kParamMax,
          std::to_string(reported) + " parameters (formula " + std::to_string(formula) + ")"};
}

Verdict literal_mode() {
  const auto toy = train::make_toy_problem();
  train::Dataset<float> data;
  for (const auto& x : toy.data.inputs) data.inputs.push_back(x.cast<float>());
  data.labels = toy.data.labels;

  train::TrainConfig still;
  still.w_update = train::WUpdate::LiteralBlend;
  still.learning_rate = 0.0;
  train::TrainState s(toy.model.cast<float>(), still, data.size());
  train::project_w(s.model);
  const Eigen::MatrixXf w0 = s.model.adjacency();
  for (int i = 0; i < 10; ++i) train::train_step(s, data, toy.batch, still);
  const bool unchanged = (s.model.adjacency().array() == w0.array()).all();

  train::TrainConfig replace = still;
  replace.learning_rate = 1.0;
  train::TrainState r(toy.model.cast<float>(), replace, data.size());
  train::project_w(r.model);
  const auto graph = model::prepare_graph(r.model);
  const auto lg = train::loss_and_gradient(r.model, graph, data, toy.batch,
                                           train::LossOptions{replace.weights, replace.kl_direction});
  train::train_step(r, data, toy.batch, replace);
  const int n = toy.model.config().n_nodes;
  const Eigen::Map<const Eigen::MatrixXf> grad_w(lg.gradient.data(), n, n);
  const bool equal = (r.model.adjacency().array() == grad_w.array()).all();
  return {unchanged && equal, std::string("rho=0: W ") + (unchanged ? "bit-unchanged" : "changed") +
                                  " over 10 steps; rho=1: W " + (equal ? "equals" : "differs from") +
                                  " the gradient"};
}

Verdict t_test() {
  const std::vector<double> b{0.80, 0.82, 0.78, 0.85, 0.81};
  const std::vector<double> a{0.85, 0.85, 0.82, 0.91, 0.83};
  const auto r = eval::paired_t_test(a, b);
  return {std::abs(r.p - 0.0048) <= kTTestPTol && std::abs(r.t - 5.66) < 0.01,
          "t " + fmt(r.t) + ", p " + fmt(r.p)};
}

}  // namespace

int main() {
  int failures = 0;
  const auto report = [&](const std::string& name, const std::function<Verdict()>& check) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
  };

  report("spectral-equivalence", spectral_equivalence);
  report("gradient-check", gradient_check);
  report("de-analytic", de_analytic);
  report("loss-identities", loss_identities);

  testing::TempDir dir("acceptance");
  LearningOutcome learning;
  try {
    learning = synthetic_learning_and_determinism(dir);
  } catch (const std::exception& e) {
    learning.learning = learning.determinism = {false, std::string("exception: ") + e.what()};
  }
  report("synthetic-learning", [&] { return learning.learning; });
  report("parameter-count", parameter_count);
  report("determinism", [&] { return learning.determinism; });
  report("literal-w-update", literal_mode);
  report("paired-t-test", t_test);
  return failures == 0 ? 0 : 1;
}
