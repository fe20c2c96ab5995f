#pragma once

#include "dgsd/common.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dgsd::eval {

/// Left is the positive class.
struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  /// (tp + tn) / total; 0 for an empty set.
  double accuracy() const;
  void add(Label truth, Label predicted);
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion(std::span<const Label> truth, std::span<const Label> predicted);

struct SubjectResult {
  std::string subject_id;
  double window_seconds = 0.0;
  double accuracy = 0.0;
  ConfusionCounts confusion;
};

SubjectResult make_subject_result(std::string subject_id, double window_seconds,
                                  const ConfusionCounts& c);

struct AccuracyStats {
  double mean = 0.0;
  double sd = 0.0;  // sample SD (n - 1)
};

/// Throws InvalidArgument for fewer than two subjects.
AccuracyStats accuracy_stats(std::span<const SubjectResult> results);
AccuracyStats accuracy_stats(std::span<const double> accuracies);

/// nullopt marks an empty denominator ("undefined"), which is not 0.
struct PrecisionRecall {
  std::optional<double> precision;
  std::optional<double> recall;
};

PrecisionRecall precision_recall(const ConfusionCounts& c);

/// Mean over defined values only; `excluded` counts the undefined ones.
struct MeanWithExclusions {
  std::optional<double> mean;
  std::size_t used = 0;
  std::size_t excluded = 0;
};

MeanWithExclusions mean_defined(std::span<const std::optional<double>> values);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  std::size_t dof = 0;
  bool significant = false;  // p < 0.05
  /// Differences have zero variance: p = 1 if all are zero, else p = 0.
  bool degenerate = false;
};

/// Two-sided paired t-test on a - b.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

/// Regularised incomplete beta I_x(a, b), continued fraction to 1e-10.
double incomplete_beta(double a, double b, double x);

/// Student t CDF with `dof` degrees of freedom.
double student_t_cdf(double t, double dof);

// Result tables. Column order (fixed):
// subject_id,window_seconds,n_windows,accuracy,tp,fp,tn,fn,precision,recall
// Undefined precision/recall are written as "undefined".
inline constexpr const char* kResultsHeader =
    "subject_id,window_seconds,n_windows,accuracy,tp,fp,tn,fn,precision,recall";

std::string results_csv(std::span<const SubjectResult> results);
void write_results_csv(std::span<const SubjectResult> results, const std::filesystem::path& path);
std::vector<SubjectResult> read_results_csv(const std::filesystem::path& path);

}  // namespace dgsd::eval
