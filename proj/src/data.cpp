#include "dgsd/data.hpp"

#include "dgsd/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace dgsd::data {

using nlohmann::json;

std::size_t DatasetManifest::trial_count() const {
  std::size_t n = 0;
  for (const auto& s : subjects) n += s.trials.size();
  return n;
}

double DatasetManifest::subject_seconds(std::size_t subject) const {
  double samples = 0.0;
  for (const auto& t : subjects.at(subject).trials) samples += static_cast<double>(t.n_samples);
  return samples / sample_rate;
}

namespace {

std::uint64_t payload_bytes(std::uint32_t channels, std::uint64_t samples) {
  return std::uint64_t{channels} * samples * 4;
}

json manifest_to_json(const DatasetManifest& m) {
  json subjects = json::array();
  for (const auto& s : m.subjects) {
    json trials = json::array();
    for (const auto& t : s.trials) {
      trials.push_back({{"trial_id", t.trial_id},
                        {"label", std::string(to_string(t.label))},
                        {"n_samples", t.n_samples},
                        {"offset", t.offset},
                        {"length", t.length}});
    }
    subjects.push_back({{"subject_id", s.subject_id}, {"trials", std::move(trials)}});
  }
  return {{"format_version", m.format_version},
          {"dataset_name", m.dataset_name},
          {"sample_rate", m.sample_rate},
          {"n_channels", m.n_channels},
          {"subjects", std::move(subjects)}};
}

Label parse_label(const std::string& s) {
  if (s == "Left") return Label::Left;
  if (s == "Right") return Label::Right;
  fail(ErrorKind::Format, "label must be Left or Right, got '" + s + "'");
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  m.format_version = j.at("format_version").get<std::uint32_t>();
  m.dataset_name = j.at("dataset_name").get<std::string>();
  m.sample_rate = j.at("sample_rate").get<double>();
  m.n_channels = j.at("n_channels").get<std::uint32_t>();
  for (const auto& s : j.at("subjects")) {
    SubjectEntry subject{s.at("subject_id").get<std::string>(), {}};
    for (const auto& t : s.at("trials")) {
      subject.trials.push_back(TrialEntry{
          t.at("trial_id").get<std::string>(), parse_label(t.at("label").get<std::string>()),
          t.at("n_samples").get<std::uint64_t>(), t.at("offset").get<std::uint64_t>(),
          t.at("length").get<std::uint64_t>()});
    }
    m.subjects.push_back(std::move(subject));
  }
  return m;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 |
         std::uint32_t{p[3]} << 24;
}

std::string trial_name(const SubjectEntry& s, const TrialEntry& t) {
  return s.subject_id + "/" + t.trial_id;
}

}  // namespace

DatasetManifest manifest_for(std::string dataset_name,
                             std::span<const signal::EegRecording> recordings) {
  DatasetManifest m;
  m.dataset_name = std::move(dataset_name);
  if (!recordings.empty()) {
    m.sample_rate = recordings.front().sample_rate;
    m.n_channels = static_cast<std::uint32_t>(recordings.front().channels());
  }
  std::uint64_t offset = 0;
  for (const auto& rec : recordings) {
    auto it = std::find_if(m.subjects.begin(), m.subjects.end(),
                           [&](const SubjectEntry& s) { return s.subject_id == rec.subject_id; });
    if (it == m.subjects.end()) {
      m.subjects.push_back({rec.subject_id, {}});
      it = std::prev(m.subjects.end());
    }
    const auto n = static_cast<std::uint64_t>(rec.length());
    it->trials.push_back({rec.trial_id, rec.label, n, 0, payload_bytes(m.n_channels, n)});
  }
  // Offsets follow manifest order, which may differ from input order.
  for (auto& s : m.subjects) {
    for (auto& t : s.trials) {
      t.offset = offset;
      offset += t.length;
    }
  }
  return m;
}

void write_dataset(const DatasetManifest& manifest, std::span<const signal::EegRecording> recordings,
                   const std::filesystem::path& path) {
  require(manifest.format_version == kFormatVersion, ErrorKind::UnsupportedVersion,
          "can only write format version 1");
  require(manifest.sample_rate > 0.0 && manifest.n_channels > 0, ErrorKind::InvalidArgument,
          "manifest needs a positive sample rate and channel count");
  if (manifest.trial_count() != recordings.size()) {
    std::ostringstream msg;
    msg << "manifest lists " << manifest.trial_count() << " trials but " << recordings.size()
        << " recordings were given";
    fail(ErrorKind::InvalidArgument, msg.str());
  }

  DatasetManifest out = manifest;
  std::uint64_t offset = 0;
  std::size_t r = 0;
  for (auto& s : out.subjects) {
    for (auto& t : s.trials) {
      const auto& rec = recordings[r++];
      const std::string name = trial_name(s, t);
      if (rec.subject_id != s.subject_id || rec.trial_id != t.trial_id) {
        fail(ErrorKind::InvalidArgument, name + ": recording order does not match the manifest");
      }
      if (static_cast<std::uint64_t>(rec.length()) != t.n_samples) {
        std::ostringstream msg;
        msg << name << ": manifest says " << t.n_samples << " samples, recording has "
            << rec.length();
        fail(ErrorKind::InvalidArgument, msg.str());
      }
      if (static_cast<std::uint32_t>(rec.channels()) != manifest.n_channels ||
          rec.sample_rate != manifest.sample_rate || rec.label != t.label) {
        fail(ErrorKind::InvalidArgument,
             name + ": channel count, sample rate or label disagrees with the manifest");
      }
      if (!rec.samples.allFinite()) fail(ErrorKind::Numeric, name + ": non-finite samples");
      t.offset = offset;
      t.length = payload_bytes(manifest.n_channels, t.n_samples);
      offset += t.length;
    }
  }

  std::string text = manifest_to_json(out).dump(1);
  text.push_back('\n');
  while (text.size() % 4 != 0) text.push_back('\n');

  std::string header(kMagic);
  put_u32(header, kFormatVersion);
  put_u32(header, static_cast<std::uint32_t>(text.size()));

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  file.write(header.data(), static_cast<std::streamsize>(header.size()));
  file.write(text.data(), static_cast<std::streamsize>(text.size()));

  std::string buf;
  for (const auto& rec : recordings) {
    buf.clear();
    buf.reserve(static_cast<std::size_t>(rec.samples.size()) * 4);
    for (Eigen::Index c = 0; c < rec.channels(); ++c) {
      for (Eigen::Index t = 0; t < rec.length(); ++t) {
        put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(rec.samples(c, t))));
      }
    }
    file.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  if (!file) fail(ErrorKind::Io, "write failed: " + path.string());
}

DatasetReader DatasetReader::open(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  unsigned char head[12];
  if (!in.read(reinterpret_cast<char*>(head), sizeof(head))) {
    fail(ErrorKind::Truncated, path.string() + ": file shorter than the header");
  }
  if (std::string_view(reinterpret_cast<const char*>(head), 4) != kMagic) {
    fail(ErrorKind::Format, path.string() + ": not an .aadb container");
  }
  const std::uint32_t version = get_u32(head + 4);
  if (version != kFormatVersion) {
    fail(ErrorKind::UnsupportedVersion,
         path.string() + ": unsupported format version " + std::to_string(version));
  }
  const std::uint32_t manifest_size = get_u32(head + 8);
  if (manifest_size % 4 != 0) fail(ErrorKind::Format, path.string() + ": misaligned manifest");
  std::string text(manifest_size, '\0');
  if (!in.read(text.data(), manifest_size)) {
    fail(ErrorKind::Truncated, path.string() + ": manifest is truncated");
  }

  DatasetManifest manifest;
  try {
    manifest = manifest_from_json(json::parse(text));
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, path.string() + ": bad manifest: " + e.what());
  }
  if (manifest.format_version != kFormatVersion) {
    fail(ErrorKind::UnsupportedVersion, path.string() + ": manifest declares version " +
                                            std::to_string(manifest.format_version));
  }
  require(manifest.sample_rate > 0.0 && manifest.n_channels > 0, ErrorKind::Format,
          path.string() + ": bad sample rate or channel count");

  const std::uint64_t payload_start = 12 + std::uint64_t{manifest_size};
  const std::uint64_t file_size = std::filesystem::file_size(path);
  const std::uint64_t payload_size = file_size >= payload_start ? file_size - payload_start : 0;

  std::vector<std::pair<std::uint64_t, std::uint64_t>> extents;
  for (const auto& s : manifest.subjects) {
    for (const auto& t : s.trials) {
      const std::string name = trial_name(s, t);
      if (t.length != payload_bytes(manifest.n_channels, t.n_samples) || t.offset % 4 != 0) {
        fail(ErrorKind::Format, path.string() + ": corrupt offsets for trial " + name);
      }
      if (t.offset + t.length > payload_size) {
        fail(ErrorKind::Truncated, path.string() + ": payload of trial " + name + " is truncated");
      }
      extents.emplace_back(t.offset, t.length);
    }
  }
  std::sort(extents.begin(), extents.end());
  for (std::size_t i = 1; i < extents.size(); ++i) {
    if (extents[i - 1].first + extents[i - 1].second > extents[i].first) {
      fail(ErrorKind::Format, path.string() + ": overlapping trial payloads");
    }
  }
  return DatasetReader(path, std::move(manifest), payload_start);
}

signal::EegRecording DatasetReader::load(std::size_t subject, std::size_t trial) const {
  const auto& s = manifest_.subjects.at(subject);
  const auto& t = s.trials.at(trial);
  std::ifstream in(path_, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path_.string());
  in.seekg(static_cast<std::streamoff>(payload_start_ + t.offset));
  std::vector<unsigned char> raw(static_cast<std::size_t>(t.length));
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    fail(ErrorKind::Truncated, path_.string() + ": payload of trial " + trial_name(s, t) +
                                   " is truncated");
  }
  signal::EegRecording rec;
  rec.samples.resize(manifest_.n_channels, static_cast<Eigen::Index>(t.n_samples));
  rec.sample_rate = manifest_.sample_rate;
  rec.subject_id = s.subject_id;
  rec.trial_id = t.trial_id;
  rec.label = t.label;
  const unsigned char* p = raw.data();
  for (Eigen::Index c = 0; c < rec.samples.rows(); ++c) {
    for (Eigen::Index i = 0; i < rec.samples.cols(); ++i, p += 4) {
      rec.samples(c, i) = std::bit_cast<float>(get_u32(p));
    }
  }
  return rec;
}

std::vector<signal::EegRecording> DatasetReader::load_subject(std::size_t subject) const {
  std::vector<signal::EegRecording> out;
  for (std::size_t t = 0; t < manifest_.subjects.at(subject).trials.size(); ++t) {
    out.push_back(load(subject, t));
  }
  return out;
}

std::size_t DatasetReader::find_subject(std::string_view subject_id) const {
  for (std::size_t i = 0; i < manifest_.subjects.size(); ++i) {
    if (manifest_.subjects[i].subject_id == subject_id) return i;
  }
  fail(ErrorKind::InvalidArgument, "no subject '" + std::string(subject_id) + "' in dataset");
}

// ---- synthetic data ----

void SynthSpec::validate() const {
  require(n_subjects >= 0 && trials_per_subject >= 0, ErrorKind::InvalidArgument,
          "subject and trial counts must be non-negative");
  require(trial_seconds > 0.0 && sample_rate > 0.0 && n_channels > 0, ErrorKind::InvalidArgument,
          "trial length, sample rate and channel count must be positive");
  require(alpha_asymmetry >= 0.0, ErrorKind::InvalidArgument, "alpha asymmetry must be >= 0");
  require(noise_sigma >= 0.0, ErrorKind::InvalidArgument, "noise sigma must be >= 0");
  require(alpha_hz > 0.0 && alpha_hz < sample_rate / 2.0, ErrorKind::InvalidArgument,
          "alpha frequency must lie below Nyquist");
}

const std::array<std::string_view, 64>& biosemi64_labels() {
  static const std::array<std::string_view, 64> labels = {
      "Fp1", "AF7", "AF3", "F1",  "F3",  "F5",  "F7",  "FT7", "FC5", "FC3", "FC1",
      "C1",  "C3",  "C5",  "T7",  "TP7", "CP5", "CP3", "CP1", "P1",  "P3",  "P5",
      "P7",  "P9",  "PO7", "PO3", "O1",  "Iz",  "Oz",  "POz", "Pz",  "CPz", "Fpz",
      "Fp2", "AF8", "AF4", "AFz", "Fz",  "F2",  "F4",  "F6",  "F8",  "FT8", "FC6",
      "FC4", "FC2", "FCz", "Cz",  "C2",  "C4",  "C6",  "T8",  "TP8", "CP6", "CP4",
      "CP2", "P2",  "P4",  "P6",  "P8",  "P10", "PO8", "PO4", "O2"};
  return labels;
}

std::vector<Hemisphere> hemisphere_map(int n_channels) {
  std::vector<Hemisphere> map(static_cast<std::size_t>(n_channels), Hemisphere::Midline);
  if (n_channels == 64) {
    const auto& labels = biosemi64_labels();
    for (std::size_t c = 0; c < labels.size(); ++c) {
      const char last = labels[c].back();
      if (last == 'z') continue;
      map[c] = (last - '0') % 2 == 1 ? Hemisphere::Left : Hemisphere::Right;
    }
    return map;
  }
  const int half = n_channels / 2;
  for (int c = 0; c < n_channels; ++c) {
    if (c < half) map[static_cast<std::size_t>(c)] = Hemisphere::Left;
    else if (c >= n_channels - half) map[static_cast<std::size_t>(c)] = Hemisphere::Right;
  }
  return map;
}

std::string subject_name(int subject) {
  return "S" + std::to_string(subject + 1);
}

std::vector<signal::EegRecording> synthesize_subject(const SynthSpec& spec, int subject) {
  spec.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed & 0xffffffffu),
                    static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(subject)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

  const auto hemis = hemisphere_map(spec.n_channels);
  const auto length = static_cast<Eigen::Index>(std::lround(spec.trial_seconds * spec.sample_rate));
  const double omega = 2.0 * std::numbers::pi * spec.alpha_hz / spec.sample_rate;

  std::vector<signal::EegRecording> out;
  out.reserve(static_cast<std::size_t>(spec.trials_per_subject));
  for (int trial = 0; trial < spec.trials_per_subject; ++trial) {
    signal::EegRecording rec;
    rec.sample_rate = spec.sample_rate;
    rec.subject_id = subject_name(subject);
    rec.trial_id = "T" + std::to_string(trial + 1);
    rec.label = trial % 2 == 0 ? Label::Left : Label::Right;
    const Hemisphere attended = rec.label == Label::Left ? Hemisphere::Left : Hemisphere::Right;

    rec.samples.resize(spec.n_channels, length);
    for (int c = 0; c < spec.n_channels; ++c) {
      const double amp = hemis[static_cast<std::size_t>(c)] == attended ? 1.0 + spec.alpha_asymmetry : 1.0;
      const double phi = phase(rng);
      for (Eigen::Index t = 0; t < length; ++t) {
        rec.samples(c, t) = amp * std::sin(omega * static_cast<double>(t) + phi) +
                            spec.noise_sigma * noise(rng);
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

SynthDataset synthesize(const SynthSpec& spec) {
  spec.validate();
  SynthDataset ds;
  for (int s = 0; s < spec.n_subjects; ++s) {
    auto recs = synthesize_subject(spec, s);
    std::move(recs.begin(), recs.end(), std::back_inserter(ds.recordings));
  }
  ds.manifest = manifest_for("synthetic", ds.recordings);
  ds.manifest.sample_rate = spec.sample_rate;
  ds.manifest.n_channels = static_cast<std::uint32_t>(spec.n_channels);
  return ds;
}

}  // namespace dgsd::data
