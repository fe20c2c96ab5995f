#include "dgsd/signal.hpp"

#include "dgsd/error.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>

namespace dgsd::signal {

std::string_view to_string(BandName name) {
  switch (name) {
    case BandName::Delta: return "delta";
    case BandName::Theta: return "theta";
    case BandName::Alpha: return "alpha";
    case BandName::Beta: return "beta";
    case BandName::Gamma: return "gamma";
  }
  return "?";
}

std::vector<BandSpec> default_bands() {
  return {
      {BandName::Delta, 1.0, 3.0},  {BandName::Theta, 4.0, 7.0},
      {BandName::Alpha, 8.0, 13.0}, {BandName::Beta, 14.0, 30.0},
      {BandName::Gamma, 31.0, 50.0},
  };
}

void validate_band(const BandSpec& band, double sample_rate) {
  if (!(band.lo > 0.0 && band.lo < band.hi && band.hi <= sample_rate / 2.0)) {
    std::ostringstream msg;
    msg << "invalid band " << to_string(band.name) << " [" << band.lo << ", " << band.hi
        << "] Hz for sample rate " << sample_rate << " Hz";
    fail(ErrorKind::InvalidArgument, msg.str());
  }
}

std::vector<EegWindow> slide_windows(const EegRecording& rec, double window_seconds,
                                     double hop_seconds) {
  require(window_seconds > 0.0 && hop_seconds > 0.0, ErrorKind::InvalidArgument,
          "window and hop must be positive");
  require(rec.sample_rate > 0.0, ErrorKind::InvalidArgument, "sample rate must be positive");
  const auto win = static_cast<Eigen::Index>(std::lround(window_seconds * rec.sample_rate));
  const auto hop = static_cast<Eigen::Index>(std::lround(hop_seconds * rec.sample_rate));
  require(win >= 1 && hop >= 1, ErrorKind::InvalidArgument,
          "window or hop rounds to zero samples");
  if (rec.length() < win) {
    std::ostringstream msg;
    msg << "recording " << rec.subject_id << "/" << rec.trial_id << " has " << rec.length()
        << " samples, shorter than one window of " << win;
    fail(ErrorKind::EmptyOutput, msg.str());
  }

  const Eigen::Index count = (rec.length() - win) / hop + 1;
  std::vector<EegWindow> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Eigen::Index i = 0; i < count; ++i) {
    const Eigen::Index start = i * hop;
    out.push_back(EegWindow{
        .samples = rec.samples.middleCols(start, win),
        .sample_rate = rec.sample_rate,
        .label = rec.label,
        .origin = {rec.subject_id, rec.trial_id, static_cast<std::size_t>(start)},
    });
  }
  return out;
}

EegWindow bandpass(const EegWindow& window, const BandSpec& band) {
  validate_band(band, window.sample_rate);
  const Eigen::Index len = window.samples.cols();

  // Bin k carries frequency k*fs/L for k <= L/2 and (L-k)*fs/L above.
  std::vector<bool> keep(static_cast<std::size_t>(len));
  for (Eigen::Index k = 0; k < len; ++k) {
    const Eigen::Index folded = std::min(k, len - k);
    const double f = static_cast<double>(folded) * window.sample_rate / static_cast<double>(len);
    keep[static_cast<std::size_t>(k)] = f >= band.lo && f <= band.hi;
  }

  Eigen::FFT<double> fft;
  std::vector<double> time(static_cast<std::size_t>(len));
  std::vector<std::complex<double>> freq;

  EegWindow out = window;
  for (Eigen::Index c = 0; c < window.samples.rows(); ++c) {
    for (Eigen::Index t = 0; t < len; ++t) time[static_cast<std::size_t>(t)] = window.samples(c, t);
    fft.fwd(freq, time);
    for (std::size_t k = 0; k < freq.size(); ++k) {
      if (!keep[k]) freq[k] = 0.0;
    }
    fft.inv(time, freq);
    for (Eigen::Index t = 0; t < len; ++t) out.samples(c, t) = time[static_cast<std::size_t>(t)];
  }
  return out;
}

VectorXd differential_entropy(const EegWindow& window) {
  const Eigen::Index len = window.samples.cols();
  require(len >= 2, ErrorKind::InvalidArgument,
          "differential entropy needs at least 2 samples per channel");
  const double log_2pie = std::log(2.0 * std::numbers::pi * std::numbers::e);

  VectorXd de(window.samples.rows());
  for (Eigen::Index c = 0; c < window.samples.rows(); ++c) {
    const auto row = window.samples.row(c);
    const double mean = row.mean();
    const double var = (row.array() - mean).square().sum() / static_cast<double>(len);
    de(c) = 0.5 * (log_2pie + std::log(std::max(var, kVarianceFloor)));
  }
  return de;
}

DeFeatureMatrix extract_features(const EegWindow& window, std::span<const BandSpec> bands) {
  require(!bands.empty(), ErrorKind::InvalidArgument, "at least one band is required");
  const Eigen::Index len = window.samples.cols();
  require(len >= 2, ErrorKind::InvalidArgument,
          "differential entropy needs at least 2 samples per channel");
  for (const auto& band : bands) validate_band(band, window.sample_rate);

  // Bands exclude DC, so the filtered signal has zero mean and, by
  // Parseval, population variance sum_{k in band} |X_k|^2 / L^2. One
  // forward transform per channel serves every band.
  std::vector<std::vector<std::size_t>> bins(bands.size());
  for (std::size_t b = 0; b < bands.size(); ++b) {
    for (Eigen::Index k = 1; k < len; ++k) {
      const double f = static_cast<double>(std::min(k, len - k)) * window.sample_rate /
                       static_cast<double>(len);
      if (f >= bands[b].lo && f <= bands[b].hi) bins[b].push_back(static_cast<std::size_t>(k));
    }
  }

  const double log_2pie = std::log(2.0 * std::numbers::pi * std::numbers::e);
  const double scale = 1.0 / (static_cast<double>(len) * static_cast<double>(len));
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> time(static_cast<std::size_t>(len));
  std::vector<std::complex<double>> freq;

  DeFeatureMatrix out;
  out.label = window.label;
  out.values.resize(window.samples.rows(), static_cast<Eigen::Index>(bands.size()));
  for (Eigen::Index c = 0; c < window.samples.rows(); ++c) {
    for (Eigen::Index t = 0; t < len; ++t) time[static_cast<std::size_t>(t)] = window.samples(c, t);
    fft.fwd(freq, time);
    for (std::size_t b = 0; b < bands.size(); ++b) {
      double power = 0.0;
      for (std::size_t k : bins[b]) {
        // Only bins 0..L/2 are stored; |X_k| = |X_{L-k}| for real input.
        const std::size_t stored = k < freq.size() ? k : static_cast<std::size_t>(len) - k;
        power += std::norm(freq[stored]);
      }
      const double var = power * scale;
      out.values(c, static_cast<Eigen::Index>(b)) =
          0.5 * (log_2pie + std::log(std::max(var, kVarianceFloor)));
    }
  }
  return out;
}

EegRecording znorm_trial(const EegRecording& rec) {
  require(rec.length() >= 2, ErrorKind::InvalidArgument, "z-normalisation needs T >= 2");
  EegRecording out = rec;
  const double n = static_cast<double>(rec.length());
  for (Eigen::Index c = 0; c < rec.channels(); ++c) {
    auto row = out.samples.row(c);
    const double mean = row.mean();
    row.array() -= mean;
    const double var = row.squaredNorm() / n;
    // Rounding residue of a constant channel must not be blown up to unit variance.
    if (var > 1e-24 * std::max(1.0, mean * mean) && std::isfinite(var)) {
      row /= std::sqrt(var);
    } else {
      row.setZero();
    }
  }
  return out;
}

std::vector<WindowFeatures> featurize(std::span<const EegRecording> recordings,
                                      const FeatureOptions& opts) {
  const double hop = opts.hop_seconds > 0.0 ? opts.hop_seconds : opts.window_seconds;
  std::vector<WindowFeatures> out;
  for (const auto& raw : recordings) {
    for (const auto& band : opts.bands) validate_band(band, raw.sample_rate);
    const EegRecording rec = opts.znorm ? znorm_trial(raw) : raw;
    for (const auto& w : slide_windows(rec, opts.window_seconds, hop)) {
      out.push_back({extract_features(w, opts.bands), w.origin});
    }
  }
  return out;
}

}  // namespace dgsd::signal
