#include "dgsd/error.hpp"
#include "dgsd/signal.hpp"

#include "doctest.h"
#include "helpers.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace dgsd;
using namespace dgsd::signal;

namespace {

const double kLog2pie = std::log(2.0 * std::numbers::pi * std::numbers::e);

EegRecording recording(MatrixXd samples, double fs = 128.0) {
  EegRecording r;
  r.samples = std::move(samples);
  r.sample_rate = fs;
  r.subject_id = "S1";
  r.trial_id = "T0";
  return r;
}

EegWindow window_of(MatrixXd samples, double fs = 128.0) {
  EegWindow w;
  w.samples = std::move(samples);
  w.sample_rate = fs;
  return w;
}

/// Band-pass through the naive DFT: zero every bin whose folded frequency
/// is outside [lo, hi].
std::vector<double> oracle_bandpass(const std::vector<double>& x, double fs, double lo, double hi) {
  auto spec = testing::naive_dft(x);
  const std::size_t n = x.size();
  for (std::size_t k = 0; k < n; ++k) {
    const double f = static_cast<double>(std::min(k, n - k)) * fs / static_cast<double>(n);
    if (f < lo || f > hi) spec[k] = 0.0;
  }
  return testing::naive_idft(spec);
}

}  // namespace

TEST_CASE("slide_windows count and offsets") {
  const auto rec = recording(MatrixXd::Zero(2, 1000));
  const auto w = slide_windows(rec, 1.0, 1.0);
  REQUIRE(w.size() == 7);  // (1000 - 128) / 128 + 1
  CHECK(w[0].samples.cols() == 128);
  CHECK(w[6].origin.start == 6 * 128);
  CHECK(w[3].origin.subject_id == "S1");

  const auto overlapped = slide_windows(rec, 1.0, 0.5);
  CHECK(overlapped.size() == (1000 - 128) / 64 + 1);
}

TEST_CASE("slide_windows exact fit and too-short recording") {
  CHECK(slide_windows(recording(MatrixXd::Zero(1, 256)), 1.0, 1.0).size() == 2);
  CHECK(slide_windows(recording(MatrixXd::Zero(1, 128)), 1.0, 1.0).size() == 1);
  try {
    slide_windows(recording(MatrixXd::Zero(1, 100)), 1.0, 1.0);
    FAIL("expected EmptyOutput");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptyOutput);
  }
  CHECK_THROWS_AS(slide_windows(recording(MatrixXd::Zero(1, 200)), 0.0, 1.0), Error);
}

TEST_CASE("slide_windows copies the right samples") {
  MatrixXd s(1, 300);
  for (int t = 0; t < 300; ++t) s(0, t) = t;
  const auto w = slide_windows(recording(s), 1.0, 0.25);
  for (const auto& win : w) {
    CHECK(win.samples(0, 0) == static_cast<double>(win.origin.start));
    CHECK(win.samples(0, 127) == static_cast<double>(win.origin.start + 127));
  }
}

TEST_CASE("bandpass matches a naive DFT mask") {
  std::mt19937_64 rng(7);
  for (int len : {128, 101, 64}) {
    const MatrixXd x = testing::random_matrix(3, len, rng);
    for (const auto& band : default_bands()) {
      const auto y = bandpass(window_of(x), band);
      for (Eigen::Index c = 0; c < x.rows(); ++c) {
        std::vector<double> row(static_cast<std::size_t>(len));
        for (int t = 0; t < len; ++t) row[static_cast<std::size_t>(t)] = x(c, t);
        const auto expected = oracle_bandpass(row, 128.0, band.lo, band.hi);
        for (int t = 0; t < len; ++t) {
          CHECK(y.samples(c, t) == doctest::Approx(expected[static_cast<std::size_t>(t)]).epsilon(1e-9));
        }
      }
    }
  }
}

TEST_CASE("bandpass keeps in-band tones and removes out-of-band tones") {
  const int len = 128;
  MatrixXd x(1, len);
  for (int t = 0; t < len; ++t) {
    const double tt = t / 128.0;
    x(0, t) = std::sin(2 * std::numbers::pi * 10 * tt) + std::sin(2 * std::numbers::pi * 40 * tt);
  }
  const auto alpha = bandpass(window_of(x), {BandName::Alpha, 8, 13});
  for (int t = 0; t < len; ++t) {
    CHECK(alpha.samples(0, t) == doctest::Approx(std::sin(2 * std::numbers::pi * 10 * t / 128.0)).epsilon(1e-9));
  }
}

TEST_CASE("bandpass is idempotent and linear") {
  std::mt19937_64 rng(11);
  const MatrixXd a = testing::random_matrix(2, 128, rng);
  const MatrixXd b = testing::random_matrix(2, 128, rng);
  const BandSpec band{BandName::Beta, 14, 30};
  const auto once = bandpass(window_of(a), band);
  const auto twice = bandpass(once, band);
  CHECK(testing::max_abs_diff(once.samples, twice.samples) < 1e-12);
  const auto sum = bandpass(window_of(2.0 * a - b), band);
  const MatrixXd expected = 2.0 * once.samples - bandpass(window_of(b), band).samples;
  CHECK(testing::max_abs_diff(sum.samples, expected) < 1e-12);
}

TEST_CASE("band validation") {
  CHECK_NOTHROW(validate_band({BandName::Gamma, 31, 50}, 128));
  CHECK_THROWS_AS(validate_band({BandName::Gamma, 31, 70}, 128), Error);
  CHECK_THROWS_AS(validate_band({BandName::Delta, 0, 3}, 128), Error);
  CHECK_THROWS_AS(validate_band({BandName::Delta, 5, 3}, 128), Error);
  // Gamma needs fs >= 100 Hz.
  CHECK_THROWS_AS(bandpass(window_of(MatrixXd::Zero(1, 64), 64.0), {BandName::Gamma, 31, 50}),
                  Error);
}

TEST_CASE("differential entropy closed forms") {
  SUBCASE("sinusoid with whole cycles has variance A^2 / 2") {
    MatrixXd x(2, 128);
    for (int t = 0; t < 128; ++t) {
      x(0, t) = 3.0 * std::sin(2 * std::numbers::pi * 10 * t / 128.0);
      x(1, t) = 5.0 + std::cos(2 * std::numbers::pi * 4 * t / 128.0);
    }
    const auto de = differential_entropy(window_of(x));
    CHECK(de(0) == doctest::Approx(0.5 * (kLog2pie + std::log(4.5))).epsilon(1e-12));
    CHECK(de(1) == doctest::Approx(0.5 * (kLog2pie + std::log(0.5))).epsilon(1e-12));
  }
  SUBCASE("constant channel hits the variance floor") {
    const auto de = differential_entropy(window_of(MatrixXd::Constant(1, 64, 2.0)));
    CHECK(de(0) == doctest::Approx(0.5 * (kLog2pie + std::log(kVarianceFloor))));
    CHECK(std::isfinite(de(0)));
  }
  SUBCASE("scaling adds ln|a|") {
    std::mt19937_64 rng(3);
    const MatrixXd x = testing::random_matrix(4, 128, rng);
    const auto a = differential_entropy(window_of(x));
    const auto b = differential_entropy(window_of(3.0 * x));
    for (int c = 0; c < 4; ++c) CHECK(b(c) - a(c) == doctest::Approx(std::log(3.0)));
  }
}

TEST_CASE("extract_features equals bandpass followed by differential_entropy") {
  std::mt19937_64 rng(5);
  for (int len : {128, 127, 640}) {
    const auto w = window_of(testing::random_matrix(6, len, rng));
    const auto bands = default_bands();
    const auto f = extract_features(w, bands);
    REQUIRE(f.values.rows() == 6);
    REQUIRE(f.values.cols() == 5);
    for (std::size_t b = 0; b < bands.size(); ++b) {
      const auto de = differential_entropy(bandpass(w, bands[b]));
      for (int c = 0; c < 6; ++c) {
        CHECK(f.values(c, static_cast<Eigen::Index>(b)) == doctest::Approx(de(c)).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("extract_features on band-limited noise approaches the Gaussian DE") {
  // White noise of variance s^2 keeps a fraction (bins in band)/L of it.
  std::mt19937_64 rng(99);
  const double sigma = 2.0;
  const int len = 640;
  const BandSpec band{BandName::Alpha, 8, 13};
  int bins = 0;
  for (int k = 1; k < len; ++k) {
    const double f = std::min(k, len - k) * 128.0 / len;
    bins += f >= 8 && f <= 13;
  }
  const double var = sigma * sigma * bins / len;
  double mean = 0.0;
  const int windows = 100;
  for (int i = 0; i < windows; ++i) {
    const auto f = extract_features(window_of(testing::random_matrix(1, len, rng, sigma)),
                                    std::span<const BandSpec>(&band, 1));
    mean += f.values(0, 0) / windows;
  }
  CHECK(std::abs(mean - 0.5 * (kLog2pie + std::log(var))) < 0.05);
}

TEST_CASE("znorm_trial") {
  std::mt19937_64 rng(1);
  MatrixXd x = testing::random_matrix(3, 500, rng, 4.0);
  x.row(1).array() += 10.0;
  x.row(2).setConstant(7.0);
  const auto z = znorm_trial(recording(x));
  for (int c = 0; c < 2; ++c) {
    const auto row = z.samples.row(c);
    CHECK(std::abs(row.mean()) < 1e-12);
    CHECK(row.squaredNorm() / 500.0 == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(z.samples.row(2).isZero(0.0));
  CHECK(z.subject_id == "S1");
}

TEST_CASE("featurize") {
  std::mt19937_64 rng(2);
  std::vector<EegRecording> recs;
  recs.push_back(recording(testing::random_matrix(4, 128 * 3, rng)));
  recs.push_back(recording(testing::random_matrix(4, 128 * 2 + 10, rng)));
  recs[1].trial_id = "T1";
  recs[1].label = Label::Right;

  FeatureOptions opts;
  const auto out = featurize(recs, opts);
  REQUIRE(out.size() == 5);
  CHECK(out[3].origin.trial_id == "T1");
  CHECK(out[3].features.label == Label::Right);
  CHECK(out[0].features.values.rows() == 4);
  CHECK(out[0].features.values.cols() == 5);

  // z-scoring makes the features invariant to per-channel gain and offset.
  auto scaled = recs;
  scaled[0].samples = 5.0 * scaled[0].samples.array() + 3.0;
  const auto again = featurize(scaled, opts);
  CHECK(testing::max_abs_diff(out[0].features.values, again[0].features.values) < 1e-9);

  opts.hop_seconds = 0.5;
  CHECK(featurize(recs, opts).size() == 5 + 3);  // (384-128)/64+1 and (266-128)/64+1
}
