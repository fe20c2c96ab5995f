#include "dgsd/eval.hpp"

#include "dgsd/error.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace dgsd::eval {

double ConfusionCounts::accuracy() const {
  const auto n = total();
  return n == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(n);
}

void ConfusionCounts::add(Label truth, Label predicted) {
  const bool pos_truth = truth == Label::Left;
  const bool pos_pred = predicted == Label::Left;
  if (pos_truth && pos_pred) ++tp;
  else if (!pos_truth && pos_pred) ++fp;
  else if (!pos_truth && !pos_pred) ++tn;
  else ++fn;
}

ConfusionCounts confusion(std::span<const Label> truth, std::span<const Label> predicted) {
  require(truth.size() == predicted.size(), ErrorKind::Dimension,
          "truth and prediction lengths differ");
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i) c.add(truth[i], predicted[i]);
  return c;
}

SubjectResult make_subject_result(std::string subject_id, double window_seconds,
                                  const ConfusionCounts& c) {
  return SubjectResult{std::move(subject_id), window_seconds, c.accuracy(), c};
}

AccuracyStats accuracy_stats(std::span<const double> accuracies) {
  require(accuracies.size() >= 2, ErrorKind::InvalidArgument,
          "standard deviation needs at least two subjects");
  const double n = static_cast<double>(accuracies.size());
  double sum = 0.0;
  for (double a : accuracies) sum += a;
  const double mean = sum / n;
  double ss = 0.0;
  for (double a : accuracies) ss += (a - mean) * (a - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

AccuracyStats accuracy_stats(std::span<const SubjectResult> results) {
  std::vector<double> acc;
  acc.reserve(results.size());
  for (const auto& r : results) acc.push_back(r.accuracy);
  return accuracy_stats(acc);
}

PrecisionRecall precision_recall(const ConfusionCounts& c) {
  PrecisionRecall pr;
  if (c.tp + c.fp > 0) pr.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) pr.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return pr;
}

MeanWithExclusions mean_defined(std::span<const std::optional<double>> values) {
  MeanWithExclusions out;
  double sum = 0.0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++out.used;
    } else {
      ++out.excluded;
    }
  }
  if (out.used > 0) out.mean = sum / static_cast<double>(out.used);
  return out;
}

namespace {

// Modified Lentz evaluation of the incomplete beta continued fraction.
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-10;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  fail(ErrorKind::Numeric, "incomplete beta continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  require(a > 0.0 && b > 0.0, ErrorKind::InvalidArgument, "incomplete beta needs a, b > 0");
  require(x >= 0.0 && x <= 1.0, ErrorKind::InvalidArgument, "incomplete beta needs x in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  // The fraction converges fast for x < (a+1)/(a+b+2); use symmetry otherwise.
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double dof) {
  require(dof > 0.0, ErrorKind::InvalidArgument, "t distribution needs dof > 0");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
  return t >= 0.0 ? 1.0 - tail : tail;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::Dimension, "paired samples must have equal length");
  require(a.size() >= 2, ErrorKind::InvalidArgument, "paired t-test needs at least two pairs");
  const std::size_t n = a.size();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dev = (a[i] - b[i]) - mean;
    ss += dev * dev;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  TTestResult r;
  r.dof = n - 1;
  if (sd == 0.0) {
    r.degenerate = true;
    if (mean == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = std::copysign(std::numeric_limits<double>::infinity(), mean);
      r.p = 0.0;
    }
  } else {
    r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    const double dof = static_cast<double>(r.dof);
    r.p = incomplete_beta(0.5 * dof, 0.5, dof / (dof + r.t * r.t));
  }
  r.significant = r.p < 0.05;
  return r;
}

namespace {

std::string format_optional(const std::optional<double>& v) {
  if (!v) return "undefined";
  std::ostringstream s;
  s << std::setprecision(17) << *v;
  return s.str();
}

std::optional<double> parse_optional(const std::string& field) {
  if (field == "undefined") return std::nullopt;
  return std::stod(field);
}

}  // namespace

std::string results_csv(std::span<const SubjectResult> results) {
  std::ostringstream out;
  out << kResultsHeader << '\n';
  out << std::setprecision(17);
  for (const auto& r : results) {
    const auto pr = precision_recall(r.confusion);
    out << r.subject_id << ',' << r.window_seconds << ',' << r.confusion.total() << ','
        << r.accuracy << ',' << r.confusion.tp << ',' << r.confusion.fp << ',' << r.confusion.tn
        << ',' << r.confusion.fn << ',' << format_optional(pr.precision) << ','
        << format_optional(pr.recall) << '\n';
  }
  return out.str();
}

void write_results_csv(std::span<const SubjectResult> results, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << results_csv(results);
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

std::vector<SubjectResult> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader) {
    fail(ErrorKind::Format, path.string() + ": unexpected results header");
  }
  std::vector<SubjectResult> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 10) {
      fail(ErrorKind::Format, path.string() + ":" + std::to_string(line_no) + ": expected 10 columns");
    }
    try {
      SubjectResult r;
      r.subject_id = fields[0];
      r.window_seconds = std::stod(fields[1]);
      r.accuracy = std::stod(fields[3]);
      r.confusion = {std::stoull(fields[4]), std::stoull(fields[5]), std::stoull(fields[6]),
                     std::stoull(fields[7])};
      (void)parse_optional(fields[8]);
      (void)parse_optional(fields[9]);
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      fail(ErrorKind::Format, path.string() + ":" + std::to_string(line_no) + ": malformed number");
    }
  }
  return out;
}

}  // namespace dgsd::eval
