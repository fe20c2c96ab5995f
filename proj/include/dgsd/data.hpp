#pragma once

#include "dgsd/common.hpp"
#include "dgsd/signal.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dgsd::data {

// .aadb container
//
//   offset 0   "AADB"
//   offset 4   u32 format version (1)
//   offset 8   u32 manifest size M in bytes, a multiple of 4
//   offset 12  manifest, JSON text padded with '\n' to M bytes
//   12 + M     payload: per trial, float32 samples, channel-major
//
// Trial offsets are relative to the payload start; lengths are in bytes and
// equal n_channels * n_samples * 4. Integers and floats are little-endian.

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::string_view kMagic = "AADB";

struct TrialEntry {
  std::string trial_id;
  Label label = Label::Left;
  std::uint64_t n_samples = 0;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
};

struct SubjectEntry {
  std::string subject_id;
  std::vector<TrialEntry> trials;
};

struct DatasetManifest {
  std::uint32_t format_version = kFormatVersion;
  std::string dataset_name;
  double sample_rate = 128.0;
  std::uint32_t n_channels = 64;
  std::vector<SubjectEntry> subjects;

  std::size_t trial_count() const;
  /// Total recorded time of one subject in seconds.
  double subject_seconds(std::size_t subject) const;
};

/// Manifest for `recordings`, grouped by subject in order of first
/// appearance. Offsets and lengths are filled in.
DatasetManifest manifest_for(std::string dataset_name, std::span<const signal::EegRecording> recordings);

/// Recordings are taken in manifest order (subject by subject, trial by
/// trial). Offsets and lengths are recomputed; everything else must agree
/// with the recordings or the write is refused.
void write_dataset(const DatasetManifest& manifest, std::span<const signal::EegRecording> recordings,
                   const std::filesystem::path& path);

/// Opened container. The header and manifest are validated up front;
/// payloads are read on demand. Safe to share between threads after open.
class DatasetReader {
 public:
  static DatasetReader open(const std::filesystem::path& path);

  const DatasetManifest& manifest() const { return manifest_; }
  const std::filesystem::path& path() const { return path_; }

  signal::EegRecording load(std::size_t subject, std::size_t trial) const;
  std::vector<signal::EegRecording> load_subject(std::size_t subject) const;
  std::size_t find_subject(std::string_view subject_id) const;

 private:
  DatasetReader(std::filesystem::path path, DatasetManifest manifest, std::uint64_t payload_start)
      : path_(std::move(path)), manifest_(std::move(manifest)), payload_start_(payload_start) {}

  std::filesystem::path path_;
  DatasetManifest manifest_;
  std::uint64_t payload_start_ = 0;
};

// ---- synthetic data ----

struct SynthSpec {
  int n_subjects = 4;
  int trials_per_subject = 20;
  double trial_seconds = 60.0;
  int n_channels = 64;
  double sample_rate = 128.0;
  double alpha_hz = 10.0;
  /// Extra alpha gain on the attended-side hemisphere.
  double alpha_asymmetry = 1.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 1111;

  void validate() const;
};

enum class Hemisphere { Left, Right, Midline };

/// BioSemi 64-electrode labels in acquisition order.
const std::array<std::string_view, 64>& biosemi64_labels();

/// For 64 channels: odd-numbered electrodes left, even right, "z" midline.
/// For other counts: first half left, second half right, the middle channel
/// of an odd count on the midline.
std::vector<Hemisphere> hemisphere_map(int n_channels);

/// One subject's trials: white noise (sigma = noise_sigma) on every
/// channel plus an alpha sinusoid with amplitude 1 + asymmetry on the
/// hemisphere named by the label and 1 elsewhere. Labels alternate, so the
/// classes are balanced. Deterministic in (seed, subject).
std::vector<signal::EegRecording> synthesize_subject(const SynthSpec& spec, int subject);

struct SynthDataset {
  DatasetManifest manifest;
  std::vector<signal::EegRecording> recordings;
};

SynthDataset synthesize(const SynthSpec& spec);

std::string subject_name(int subject);

}  // namespace dgsd::data
