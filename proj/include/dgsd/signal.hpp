#pragma once

#include "dgsd/common.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dgsd::signal {

/// One continuous, already preprocessed trial. `samples` is channel-major:
/// row c holds the time series of electrode c.
struct EegRecording {
  MatrixXd samples;
  double sample_rate = 128.0;
  std::string subject_id;
  std::string trial_id;
  Label label = Label::Left;

  Eigen::Index channels() const { return samples.rows(); }
  Eigen::Index length() const { return samples.cols(); }
};

struct WindowOrigin {
  std::string subject_id;
  std::string trial_id;
  std::size_t start = 0;  // offset in samples
};

struct EegWindow {
  MatrixXd samples;  // N x L_s
  double sample_rate = 128.0;
  Label label = Label::Left;
  WindowOrigin origin;
};

enum class BandName { Delta, Theta, Alpha, Beta, Gamma };

std::string_view to_string(BandName name);

struct BandSpec {
  BandName name;
  double lo;  // Hz
  double hi;  // Hz
};

/// delta 1-3, theta 4-7, alpha 8-13, beta 14-30, gamma 31-50 Hz.
std::vector<BandSpec> default_bands();

/// N x d matrix of differential entropies, one column per band.
struct DeFeatureMatrix {
  MatrixXd values;
  Label label = Label::Left;
};

/// Variance floor applied before taking the log in differential_entropy.
inline constexpr double kVarianceFloor = 1e-12;

/// Throws EmptyOutput when the recording is shorter than one window.
std::vector<EegWindow> slide_windows(const EegRecording& rec, double window_seconds,
                                     double hop_seconds);

/// FFT-mask band-pass: every bin whose |f| falls outside [lo, hi] is zeroed.
EegWindow bandpass(const EegWindow& window, const BandSpec& band);

/// 0.5 * ln(2 pi e var) per channel, population variance, floored.
VectorXd differential_entropy(const EegWindow& window);

/// Column b equals differential_entropy(bandpass(window, bands[b])), taken
/// from one spectrum per channel.
DeFeatureMatrix extract_features(const EegWindow& window, std::span<const BandSpec> bands);

/// Per-channel z-score (population variance). Constant channels become zero.
EegRecording znorm_trial(const EegRecording& rec);

void validate_band(const BandSpec& band, double sample_rate);

struct FeatureOptions {
  double window_seconds = 1.0;
  double hop_seconds = 0.0;  // 0 means hop = window (no overlap)
  std::vector<BandSpec> bands = default_bands();
  bool znorm = true;  // z-score each trial before windowing
};

struct WindowFeatures {
  DeFeatureMatrix features;
  WindowOrigin origin;
};

/// Trial-wise z-score (optional), sliding windows, DE per band.
std::vector<WindowFeatures> featurize(std::span<const EegRecording> recordings,
                                      const FeatureOptions& opts);

}  // namespace dgsd::signal
