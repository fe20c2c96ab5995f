#include "dgsd/cli.hpp"

#include "dgsd/data.hpp"
#include "dgsd/error.hpp"
#include "dgsd/eval.hpp"
#include "dgsd/model.hpp"
#include "dgsd/signal.hpp"
#include "dgsd/train.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

namespace dgsd::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

inline constexpr double kGradTolerance = 1e-4;

// ---- flag groups ----

void add_model_flags(CLI::App* sub, model::DgsdConfig& m) {
  sub->add_option("--nodes", m.n_nodes, "Graph nodes; defaults to the dataset channel count")
      ->check(CLI::PositiveNumber);
  sub->add_option("--in-features", m.in_features, "Node features (frequency bands)")
      ->check(CLI::PositiveNumber);
  sub->add_option("--hidden", m.hidden, "Hidden width H")->check(CLI::PositiveNumber);
  sub->add_option("--layers", m.n_layers, "Graph convolution layers (>= 2)")
      ->check(CLI::Range(2, 64));
  sub->add_option("--cheb-order", m.cheb_order, "Chebyshev order K")->check(CLI::Range(1, 8));
  sub->add_option("--classes", m.n_classes, "Output classes (2)")->check(CLI::Range(2, 2));
  sub->add_option("--head-dim", m.feature_head_dim, "Pooled feature width per layer")
      ->check(CLI::PositiveNumber);
  sub->add_flag("--reconv-input", m.reconv_input, "Every layer convolves the projected input");
}

struct TrainFlags {
  train::TrainConfig cfg;
  double alpha = 0.7;
  double beta = 0.3;
  std::string kl_direction = "teacher-to-student";
  std::string w_update = "optimizer";

  train::TrainConfig resolve() const {
    train::TrainConfig out = cfg;
    out.weights = losses::LossWeights(alpha, beta);
    out.kl_direction = kl_direction == "student-to-teacher" ? losses::KlDirection::StudentToTeacher
                                                            : losses::KlDirection::TeacherToStudent;
    out.w_update =
        w_update == "literal" ? train::WUpdate::LiteralBlend : train::WUpdate::OptimizerDescent;
    return out;
  }
};

void add_loss_flags(CLI::App* sub, TrainFlags& t, bool with_weights) {
  if (with_weights) {
    sub->add_option("--alpha", t.alpha, "Weight of loss1; loss2 gets 1 - alpha")
        ->check(CLI::Range(0.0, 1.0));
    sub->add_option("--beta", t.beta, "Weight of loss3")->check(CLI::Range(0.0, 1.0));
  }
  sub->add_option("--kl-direction", t.kl_direction, "KL argument order of loss3")
      ->check(CLI::IsMember({"teacher-to-student", "student-to-teacher"}));
}

void add_train_flags(CLI::App* sub, TrainFlags& t, bool with_weights) {
  auto& c = t.cfg;
  sub->add_option("--lr", c.learning_rate, "Learning rate (rho in literal W mode)")
      ->check(CLI::PositiveNumber);
  sub->add_option("--batch-size", c.batch_size, "Windows per step")->check(CLI::PositiveNumber);
  sub->add_option("--epochs", c.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
  sub->add_option("--seed", c.seed, "Seed for initialisation, split and shuffling");
  add_loss_flags(sub, t, with_weights);
  sub->add_option("--train-ratio", c.split.train, "Train fraction")->check(CLI::Range(0.0, 1.0));
  sub->add_option("--val-ratio", c.split.val, "Validation fraction")->check(CLI::Range(0.0, 1.0));
  sub->add_option("--test-ratio", c.split.test, "Test fraction")->check(CLI::Range(0.0, 1.0));
  sub->add_option("--w-update", t.w_update, "optimizer: Adam on W; literal: W <- (1 - lr) W + lr dL/dW")
      ->check(CLI::IsMember({"optimizer", "literal"}));
  sub->add_option("--patience", c.early_stop_patience,
                  "Stop after this many epochs without validation gain (0 = off)")
      ->check(CLI::NonNegativeNumber);
}

void add_synth_flags(CLI::App* sub, data::SynthSpec& s) {
  sub->add_option("--subjects", s.n_subjects, "Subjects")->check(CLI::NonNegativeNumber);
  sub->add_option("--trials", s.trials_per_subject, "Trials per subject")
      ->check(CLI::PositiveNumber);
  sub->add_option("--trial-seconds", s.trial_seconds, "Trial length in seconds")
      ->check(CLI::PositiveNumber);
  sub->add_option("--channels", s.n_channels, "Channels")->check(CLI::PositiveNumber);
  sub->add_option("--sample-rate", s.sample_rate, "Sample rate in Hz")->check(CLI::PositiveNumber);
  sub->add_option("--alpha-hz", s.alpha_hz, "Alpha sinusoid frequency")->check(CLI::PositiveNumber);
  sub->add_option("--asymmetry", s.alpha_asymmetry, "Extra alpha gain on the attended side")
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--noise", s.noise_sigma, "White noise standard deviation")
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--seed", s.seed, "Generator seed");
}

struct WindowFlags {
  double window = 1.0;
  double hop = 0.0;
  bool no_znorm = false;

  signal::FeatureOptions options() const {
    signal::FeatureOptions o;
    o.window_seconds = window;
    o.hop_seconds = hop;
    o.znorm = !no_znorm;
    return o;
  }
};

void add_window_flags(CLI::App* sub, WindowFlags& w, bool with_window) {
  if (with_window) {
    sub->add_option("--window", w.window, "Decision window in seconds")
        ->check(CLI::PositiveNumber);
  }
  sub->add_option("--hop", w.hop, "Window hop in seconds (0 = window length)")
      ->check(CLI::NonNegativeNumber);
  sub->add_flag("--no-znorm", w.no_znorm, "Skip per-trial z-scoring");
}

// ---- effective configuration ----

bool looks_literal(const std::string& v) {
  if (v == "true" || v == "false") return true;
  std::istringstream in(v);
  double d = 0.0;
  in >> d;
  return !v.empty() && in && in.eof();
}

std::string quoted(const std::string& v) { return looks_literal(v) ? v : "\"" + v + "\""; }

/// Every option of `sub` as `key = value`, in declaration order. The text
/// is a valid --config file for the same subcommand.
std::string effective_config(const CLI::App* sub,
                             const std::map<std::string, std::string>& overrides = {}) {
  std::ostringstream out;
  out << "# dgsd " << sub->get_name() << "\n";
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& key = opt->get_lnames().front();
    if (key == "help" || key == "config") continue;
    if (auto it = overrides.find(key); it != overrides.end()) {
      out << key << " = " << quoted(it->second) << "\n";
      continue;
    }
    const bool is_flag = opt->get_expected_max() == 0;
    if (is_flag) {
      out << key << " = " << (opt->count() > 0 && opt->as<bool>() ? "true" : "false") << "\n";
      continue;
    }
    if (opt->get_expected_max() > 1) {
      const auto values = opt->results();
      if (values.empty()) continue;
      out << key << " = [";
      for (std::size_t i = 0; i < values.size(); ++i) out << (i ? ", " : "") << quoted(values[i]);
      out << "]\n";
      continue;
    }
    const std::string value = opt->count() > 0 ? opt->results().back() : opt->get_default_str();
    if (value.empty() && opt->count() == 0) continue;
    out << key << " = " << quoted(value) << "\n";
  }
  return out.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Io, "cannot write " + path.string());
  f << text;
  if (!f) fail(ErrorKind::Io, "write failed for " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
}

/// Refuses to overwrite an input file.
void check_not_input(const fs::path& output, const fs::path& input) {
  std::error_code ec;
  if (fs::exists(output, ec) && fs::exists(input, ec) && fs::equivalent(output, input, ec)) {
    fail(ErrorKind::InvalidArgument, "output " + output.string() + " would overwrite an input");
  }
}

std::vector<std::size_t> select_subjects(const data::DatasetReader& reader,
                                         const std::vector<std::string>& ids) {
  std::vector<std::size_t> out;
  if (ids.empty()) {
    for (std::size_t s = 0; s < reader.manifest().subjects.size(); ++s) out.push_back(s);
  } else {
    for (const auto& id : ids) out.push_back(reader.find_subject(id));
  }
  return out;
}

std::vector<signal::WindowFeatures> subject_windows(const data::DatasetReader& reader,
                                                    std::size_t subject,
                                                    const signal::FeatureOptions& opts) {
  const auto recordings = reader.load_subject(subject);
  return signal::featurize(recordings, opts);
}

train::Dataset<float> to_dataset(const std::vector<signal::WindowFeatures>& windows) {
  std::vector<signal::DeFeatureMatrix> feats;
  feats.reserve(windows.size());
  for (const auto& w : windows) feats.push_back(w.features);
  return train::make_dataset(feats);
}

void shuffle_labels(train::Dataset<float>& ds, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5a11ab1e5ULL);
  std::shuffle(ds.labels.begin(), ds.labels.end(), rng);
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json confusion_json(const eval::ConfusionCounts& c) {
  return {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
}

std::vector<double> parse_list(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = item.find_last_not_of(" \t");
    const std::string tok = item.substr(b, e - b + 1);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw CLI::ValidationError(flag, "not a number: " + tok);
    out.push_back(v);
  }
  return out;
}

// ---- training shared by train and sweep ----

struct SubjectOutcome {
  eval::SubjectResult result;
  train::TrainReport report;
  std::size_t n_windows = 0;
};

/// Fits every selected subject and writes checkpoints, the epoch log,
/// results.csv and summary.json under `run_dir`.
std::vector<SubjectOutcome> train_subjects(const data::DatasetReader& reader,
                                           const std::vector<std::size_t>& subjects,
                                           const model::DgsdConfig& mcfg,
                                           const train::TrainConfig& tcfg,
                                           const signal::FeatureOptions& fopts, bool shuffled,
                                           const fs::path& run_dir, std::ostream& out) {
  ensure_dir(run_dir / "checkpoints");
  std::ofstream log(run_dir / "train_log.jsonl", std::ios::binary);
  if (!log) fail(ErrorKind::Io, "cannot write " + (run_dir / "train_log.jsonl").string());

  std::vector<SubjectOutcome> outcomes;
  json subjects_json = json::array();
  for (std::size_t s : subjects) {
    const std::string& id = reader.manifest().subjects[s].subject_id;
    auto ds = to_dataset(subject_windows(reader, s, fopts));
    if (shuffled) shuffle_labels(ds, tcfg.seed);

    auto fit = [&] {
      try {
        return train::fit(ds, mcfg, tcfg);
      } catch (const Error& e) {
        throw Error(e.kind(), "subject " + id + ": " + e.what());
      }
    }();
    const auto& rep = fit.report;
    for (const auto& ep : rep.epochs) {
      const json line = {{"subject", id},
                         {"epoch", ep.epoch},
                         {"loss1", ep.train_loss.loss1},
                         {"loss2", ep.train_loss.loss2},
                         {"loss3", ep.train_loss.loss3},
                         {"total", ep.train_loss.total},
                         {"val_accuracy", ep.val_accuracy},
                         {"best_val_accuracy", ep.best_val_accuracy}};
      log << line.dump() << "\n";
    }
    const fs::path ckpt = fs::path("checkpoints") / (id + ".dgsd");
    model::save_checkpoint(fit.best_model, run_dir / ckpt);

    SubjectOutcome o{eval::make_subject_result(id, fopts.window_seconds, rep.test_confusion), rep,
                     ds.size()};
    const auto pr = eval::precision_recall(rep.test_confusion);
    subjects_json.push_back({{"subject_id", id},
                             {"n_windows", o.n_windows},
                             {"train_size", rep.train_size},
                             {"val_size", rep.val_size},
                             {"test_size", rep.test_size},
                             {"best_epoch", rep.best_epoch},
                             {"epochs_run", rep.epochs.size()},
                             {"best_val_accuracy", rep.best_val_accuracy},
                             {"test_accuracy", rep.test_accuracy},
                             {"confusion", confusion_json(rep.test_confusion)},
                             {"precision", optional_json(pr.precision)},
                             {"recall", optional_json(pr.recall)},
                             {"optimizer_scalars_per_step", rep.optimizer_scalars_per_step},
                             {"checkpoint", ckpt.generic_string()}});
    out << id << ": test accuracy " << rep.test_accuracy << " on " << rep.test_size
        << " windows (best epoch " << rep.best_epoch << ")\n";
    outcomes.push_back(std::move(o));
  }
  if (!log) fail(ErrorKind::Io, "write failed for train_log.jsonl");

  std::vector<eval::SubjectResult> results;
  for (const auto& o : outcomes) results.push_back(o.result);
  eval::write_results_csv(results, run_dir / "results.csv");

  json summary = {{"positive_class", "left"},
                  {"window_seconds", fopts.window_seconds},
                  {"parameter_count", model::parameter_count(mcfg)},
                  {"shuffled_labels", shuffled},
                  {"subjects", subjects_json}};
  double sum = 0.0;
  for (const auto& r : results) sum += r.accuracy;
  summary["mean_accuracy"] = results.empty() ? json(nullptr) : json(sum / results.size());
  summary["sd_accuracy"] =
      results.size() < 2 ? json(nullptr) : json(eval::accuracy_stats(results).sd);
  write_text(run_dir / "summary.json", summary.dump(1) + "\n");
  return outcomes;
}

/// CLI11 reads config files only for the root app, so subcommand files are
/// applied here: every key must name a flag of `sub`, and flags already given
/// on the command line keep their value.
void apply_config_file(CLI::App* sub, const std::string& path) {
  if (!fs::exists(path)) throw CLI::FileError::Missing(path);
  for (const auto& item : CLI::ConfigTOML().from_file(path)) {
    if (!item.parents.empty()) {
      throw CLI::ConfigError(path + ": " + "[" + item.parents.front() + "] sections are not supported");
    }
    auto* opt = sub->get_option_no_throw("--" + item.name);
    if (opt == nullptr || item.name == "config" || item.name == "help") {
      throw CLI::ConfigError(path + ": " + "unknown key '" + item.name + "' for " + sub->get_name());
    }
    if (opt->count() > 0) continue;
    opt->add_result(item.inputs);
    opt->run_callback();
  }
}

int usage(std::ostream& err, const std::string& msg) {
  err << "error[usage]: " << msg << "\n";
  return kExitUsage;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attended-side classification from EEG with a learnable-graph network", "dgsd"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  const char* config_help = "Key = value file of flag values; command-line flags win";
  std::string config_path;

  // synth
  data::SynthSpec synth_spec;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Write a synthetic lateralised-alpha dataset");
  synth->add_option("--config", config_path, config_help);
  synth->add_option("--out", synth_out, "Output .aadb file")->required();
  add_synth_flags(synth, synth_spec);

  // features
  std::string feat_dataset, feat_out;
  std::vector<std::string> feat_subjects;
  WindowFlags feat_win;
  auto* features = app.add_subcommand("features", "Differential-entropy features as CSV");
  features->add_option("--config", config_path, config_help);
  features->add_option("--dataset", feat_dataset, "Input .aadb file")->required();
  features->add_option("--out", feat_out, "Output CSV")->required();
  features->add_option("--subject", feat_subjects, "Subject ids (default: all)");
  add_window_flags(features, feat_win, true);

  // train
  std::string train_dataset, train_run_dir = "runs";
  std::vector<std::string> train_subject_ids;
  bool train_shuffled = false;
  model::DgsdConfig train_model;
  TrainFlags train_flags;
  WindowFlags train_win;
  auto* trn = app.add_subcommand("train", "Train one model per subject");
  trn->add_option("--config", config_path, config_help);
  trn->add_option("--dataset", train_dataset, "Input .aadb file")->required();
  trn->add_option("--run-dir", train_run_dir, "Output directory")->envname("DGSD_RUN_DIR");
  trn->add_option("--subject", train_subject_ids, "Subject ids (default: all)");
  trn->add_flag("--shuffle-labels", train_shuffled, "Permute window labels (chance control)");
  add_window_flags(trn, train_win, true);
  add_model_flags(trn, train_model);
  add_train_flags(trn, train_flags, true);

  // eval
  std::string eval_results, eval_compare, eval_checkpoint, eval_dataset, eval_run_dir;
  std::vector<std::string> eval_subject_ids;
  WindowFlags eval_win;
  auto* evl = app.add_subcommand("eval", "Summarise result tables or score a checkpoint");
  evl->add_option("--config", config_path, config_help);
  auto* opt_results = evl->add_option("--results", eval_results, "results.csv to summarise");
  evl->add_option("--compare", eval_compare, "Second results.csv for a paired t-test")
      ->needs(opt_results);
  auto* opt_ckpt = evl->add_option("--checkpoint", eval_checkpoint, "Checkpoint to score")
                       ->excludes(opt_results);
  evl->add_option("--dataset", eval_dataset, "Dataset scored with --checkpoint")->needs(opt_ckpt);
  evl->add_option("--subject", eval_subject_ids, "Subject ids (default: all)");
  evl->add_option("--run-dir", eval_run_dir, "Also write eval.json (and results.csv) here");
  add_window_flags(evl, eval_win, true);

  // gradcheck
  std::uint64_t gc_seed = 1111;
  int gc_nodes = 4, gc_windows = 6;
  double gc_epsilon = 1e-4;
  TrainFlags gc_flags;
  auto* gc = app.add_subcommand("gradcheck", "Analytic gradient against central differences");
  gc->add_option("--config", config_path, config_help);
  gc->add_option("--seed", gc_seed, "Toy problem seed");
  gc->add_option("--nodes", gc_nodes, "Toy graph nodes")->check(CLI::Range(1, 8));
  gc->add_option("--windows", gc_windows, "Toy batch size")->check(CLI::PositiveNumber);
  gc->add_option("--epsilon", gc_epsilon, "Central-difference step")->check(CLI::PositiveNumber);
  add_loss_flags(gc, gc_flags, true);

  // inspect
  std::string inspect_path;
  model::DgsdConfig inspect_model;
  auto* insp = app.add_subcommand("inspect", "Describe a dataset, a checkpoint or a model config");
  insp->add_option("--config", config_path, config_help);
  insp->add_option("path", inspect_path, ".aadb or checkpoint file (omit for the model config)");
  add_model_flags(insp, inspect_model);

  // sweep
  std::string sweep_dataset, sweep_run_dir = "runs";
  std::vector<std::string> sweep_subject_ids;
  std::string sweep_alphas = "0.7", sweep_betas = "0.3", sweep_windows = "1.0";
  model::DgsdConfig sweep_model;
  TrainFlags sweep_flags;
  WindowFlags sweep_win;
  auto* swp = app.add_subcommand("sweep", "Train over an alpha x beta x window grid");
  swp->add_option("--config", config_path, config_help);
  swp->add_option("--dataset", sweep_dataset, "Input .aadb file")->required();
  swp->add_option("--run-dir", sweep_run_dir, "Output directory")->envname("DGSD_RUN_DIR");
  swp->add_option("--subject", sweep_subject_ids, "Subject ids (default: all)");
  swp->add_option("--alphas", sweep_alphas, "Comma-separated alpha values (may be empty)");
  swp->add_option("--betas", sweep_betas, "Comma-separated beta values (may be empty)");
  swp->add_option("--windows", sweep_windows, "Comma-separated window lengths in seconds");
  add_window_flags(swp, sweep_win, false);
  add_model_flags(swp, sweep_model);
  add_train_flags(swp, sweep_flags, false);

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  if (argv.empty()) argv.push_back("dgsd");

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
    for (auto* sub : app.get_subcommands()) {
      if (!config_path.empty()) apply_config_file(sub, config_path);
    }
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error[usage]: " << e.what() << "\nrun 'dgsd --help' for usage\n";
    return kExitUsage;
  }

  try {
    if (synth->parsed()) {
      out << effective_config(synth);
      synth_spec.validate();
      const auto ds = data::synthesize(synth_spec);
      data::write_dataset(ds.manifest, ds.recordings, synth_out);
      out << "wrote " << ds.manifest.subjects.size() << " subjects, "
          << ds.manifest.trial_count() << " trials to " << synth_out << "\n";
      return kExitOk;
    }

    if (features->parsed()) {
      out << effective_config(features);
      check_not_input(feat_out, feat_dataset);
      const auto reader = data::DatasetReader::open(feat_dataset);
      const auto fopts = feat_win.options();
      std::ostringstream csv;
      csv << "subject_id,trial_id,start,label";
      const auto n_ch = reader.manifest().n_channels;
      for (std::uint32_t c = 0; c < n_ch; ++c)
        for (const auto& b : fopts.bands) csv << ",c" << c << "_" << signal::to_string(b.name);
      csv << "\n";
      csv.precision(17);
      std::size_t rows = 0;
      for (std::size_t s : select_subjects(reader, feat_subjects)) {
        for (const auto& w : subject_windows(reader, s, fopts)) {
          csv << w.origin.subject_id << "," << w.origin.trial_id << "," << w.origin.start << ","
              << to_string(w.features.label);
          const auto& v = w.features.values;
          for (Eigen::Index c = 0; c < v.rows(); ++c)
            for (Eigen::Index b = 0; b < v.cols(); ++b) csv << "," << v(c, b);
          csv << "\n";
          ++rows;
        }
      }
      write_text(feat_out, csv.str());
      out << "wrote " << rows << " windows to " << feat_out << "\n";
      return kExitOk;
    }

    if (trn->parsed()) {
      const auto reader = data::DatasetReader::open(train_dataset);
      if (trn->get_option("--nodes")->count() == 0) {
        train_model.n_nodes = static_cast<int>(reader.manifest().n_channels);
      }
      train_model.validate();
      const auto tcfg = train_flags.resolve();
      tcfg.validate();
      const std::string config =
          effective_config(trn, {{"nodes", std::to_string(train_model.n_nodes)}});
      out << config;
      const fs::path run_dir = train_run_dir;
      check_not_input(run_dir, train_dataset);
      ensure_dir(run_dir);
      write_text(run_dir / "config.toml", config);
      const auto outcomes =
          train_subjects(reader, select_subjects(reader, train_subject_ids), train_model, tcfg,
                         train_win.options(), train_shuffled, run_dir, out);
      if (outcomes.size() >= 2) {
        std::vector<eval::SubjectResult> results;
        for (const auto& o : outcomes) results.push_back(o.result);
        const auto stats = eval::accuracy_stats(results);
        out << "mean accuracy " << stats.mean << " (sd " << stats.sd << ") over "
            << results.size() << " subjects\n";
      }
      return kExitOk;
    }

    if (evl->parsed()) {
      if (eval_results.empty() && eval_checkpoint.empty()) {
        return usage(err, "eval needs --results or --checkpoint");
      }
      if (!eval_checkpoint.empty() && eval_dataset.empty()) {
        return usage(err, "--checkpoint needs --dataset");
      }
      out << effective_config(evl);
      json report;
      std::vector<eval::SubjectResult> results;
      if (!eval_results.empty()) {
        results = eval::read_results_csv(eval_results);
      } else {
        const auto model = model::load_checkpoint(eval_checkpoint);
        const auto reader = data::DatasetReader::open(eval_dataset);
        const auto fopts = eval_win.options();
        for (std::size_t s : select_subjects(reader, eval_subject_ids)) {
          const auto ds = to_dataset(subject_windows(reader, s, fopts));
          std::vector<std::size_t> all(ds.size());
          for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
          results.push_back(eval::make_subject_result(reader.manifest().subjects[s].subject_id,
                                                      fopts.window_seconds,
                                                      train::evaluate(model, ds, all)));
        }
      }

      std::vector<std::optional<double>> precisions, recalls;
      json rows = json::array();
      for (const auto& r : results) {
        const auto pr = eval::precision_recall(r.confusion);
        precisions.push_back(pr.precision);
        recalls.push_back(pr.recall);
        rows.push_back({{"subject_id", r.subject_id},
                        {"accuracy", r.accuracy},
                        {"confusion", confusion_json(r.confusion)},
                        {"precision", optional_json(pr.precision)},
                        {"recall", optional_json(pr.recall)}});
      }
      report["positive_class"] = "left";
      report["subjects"] = rows;
      if (results.size() >= 2) {
        const auto stats = eval::accuracy_stats(results);
        report["mean_accuracy"] = stats.mean;
        report["sd_accuracy"] = stats.sd;
      } else {
        report["mean_accuracy"] = results.empty() ? json(nullptr) : json(results[0].accuracy);
        report["sd_accuracy"] = nullptr;
      }
      const auto pm = eval::mean_defined(precisions);
      const auto rm = eval::mean_defined(recalls);
      report["mean_precision"] = optional_json(pm.mean);
      report["precision_excluded"] = pm.excluded;
      report["mean_recall"] = optional_json(rm.mean);
      report["recall_excluded"] = rm.excluded;

      if (!eval_compare.empty()) {
        const auto other = eval::read_results_csv(eval_compare);
        std::vector<double> a, b;
        for (const auto& r : results) {
          auto it = std::find_if(other.begin(), other.end(),
                                 [&](const auto& o) { return o.subject_id == r.subject_id; });
          if (it == other.end()) {
            fail(ErrorKind::InvalidArgument, "subject " + r.subject_id + " missing from " +
                                                 eval_compare);
          }
          a.push_back(r.accuracy);
          b.push_back(it->accuracy);
        }
        require(other.size() == results.size(), ErrorKind::InvalidArgument,
                "compared tables list different subjects");
        const auto t = eval::paired_t_test(a, b);
        report["paired_t_test"] = {{"t", t.t},
                                   {"p", t.p},
                                   {"dof", t.dof},
                                   {"significant", t.significant},
                                   {"degenerate", t.degenerate}};
      }
      out << report.dump(1) << "\n";
      if (!eval_run_dir.empty()) {
        ensure_dir(eval_run_dir);
        write_text(fs::path(eval_run_dir) / "eval.json", report.dump(1) + "\n");
        if (!eval_checkpoint.empty()) {
          eval::write_results_csv(results, fs::path(eval_run_dir) / "results.csv");
        }
      }
      return kExitOk;
    }

    if (gc->parsed()) {
      out << effective_config(gc);
      const auto cfg = gc_flags.resolve();
      const auto toy = train::make_toy_problem(gc_seed, gc_nodes, gc_windows);
      const train::LossOptions opts{cfg.weights, cfg.kl_direction};
      const auto rep = train::gradient_check(toy.model, toy.data, toy.batch, opts, gc_epsilon);
      out.precision(6);
      for (const auto& [group, e] : rep.group_max) out << group << " " << e << "\n";
      out << "checked " << rep.checked << " parameters, skipped " << rep.nonsmooth_skipped
          << " at non-smooth points\n";
      out << "max_relative_error " << rep.max_relative_error << " at " << rep.worst.group << "["
          << rep.worst.index << "] analytic " << rep.worst.analytic << " numeric "
          << rep.worst.numeric << "\n";
      if (!(rep.max_relative_error < kGradTolerance)) {
        std::ostringstream msg;
        msg << "max relative error " << rep.max_relative_error << " >= " << kGradTolerance;
        fail(ErrorKind::Numeric, msg.str());
      }
      return kExitOk;
    }

    if (insp->parsed()) {
      out << effective_config(insp);
      json report;
      auto describe_model = [&](const model::DgsdConfig& cfg) {
        json groups = json::array();
        for (const auto& g : model::parameter_groups(cfg)) {
          groups.push_back({{"name", g.name}, {"rows", g.rows}, {"cols", g.cols}});
        }
        report["model"] = {{"nodes", cfg.n_nodes},       {"in_features", cfg.in_features},
                           {"hidden", cfg.hidden},       {"layers", cfg.n_layers},
                           {"cheb_order", cfg.cheb_order}, {"classes", cfg.n_classes},
                           {"head_dim", cfg.feature_head_dim},
                           {"reconv_input", cfg.reconv_input}};
        report["parameter_count"] = model::parameter_count(cfg);
        report["groups"] = groups;
      };
      if (inspect_path.empty()) {
        inspect_model.validate();
        describe_model(inspect_model);
      } else {
        std::ifstream f(inspect_path, std::ios::binary);
        if (!f) fail(ErrorKind::Io, "cannot open " + inspect_path);
        char magic[4] = {};
        f.read(magic, 4);
        if (std::string_view(magic, 4) == data::kMagic) {
          const auto reader = data::DatasetReader::open(inspect_path);
          const auto& m = reader.manifest();
          json subjects = json::array();
          for (std::size_t s = 0; s < m.subjects.size(); ++s) {
            std::size_t left = 0;
            for (const auto& t : m.subjects[s].trials) left += t.label == Label::Left;
            subjects.push_back({{"subject_id", m.subjects[s].subject_id},
                                {"trials", m.subjects[s].trials.size()},
                                {"left", left},
                                {"right", m.subjects[s].trials.size() - left},
                                {"minutes", m.subject_seconds(s) / 60.0}});
          }
          report = {{"kind", "dataset"},
                    {"format_version", m.format_version},
                    {"dataset_name", m.dataset_name},
                    {"sample_rate", m.sample_rate},
                    {"n_channels", m.n_channels},
                    {"subjects", subjects}};
        } else {
          const auto model = model::load_checkpoint(inspect_path);
          report["kind"] = "checkpoint";
          describe_model(model.config());
        }
      }
      out << report.dump(1) << "\n";
      return kExitOk;
    }

    if (swp->parsed()) {
      std::vector<double> alphas, betas, windows;
      try {
        alphas = parse_list(sweep_alphas, "--alphas");
        betas = parse_list(sweep_betas, "--betas");
        windows = parse_list(sweep_windows, "--windows");
      } catch (const CLI::ValidationError& e) {
        return usage(err, e.what());
      }
      const auto reader = data::DatasetReader::open(sweep_dataset);
      if (swp->get_option("--nodes")->count() == 0) {
        sweep_model.n_nodes = static_cast<int>(reader.manifest().n_channels);
      }
      sweep_model.validate();
      const std::string config =
          effective_config(swp, {{"nodes", std::to_string(sweep_model.n_nodes)}});
      out << config;
      const fs::path run_dir = sweep_run_dir;
      check_not_input(run_dir, sweep_dataset);
      ensure_dir(run_dir);
      write_text(run_dir / "config.toml", config);
      const auto subjects = select_subjects(reader, sweep_subject_ids);

      std::ostringstream table;
      table << "cell,alpha,beta,window_seconds,seed,n_subjects,mean_accuracy,sd_accuracy,status,"
               "error\n";
      std::size_t cell = 0;
      for (double w : windows) {
        for (double a : alphas) {
          for (double b : betas) {
            train::TrainConfig tcfg = sweep_flags.cfg;
            tcfg.seed = sweep_flags.cfg.seed + cell;
            std::ostringstream row;
            row << cell << "," << a << "," << b << "," << w << "," << tcfg.seed << ",";
            const fs::path cell_dir = run_dir / ("cell" + std::to_string(cell));
            try {
              TrainFlags cf = sweep_flags;
              cf.alpha = a;
              cf.beta = b;
              cf.cfg.seed = tcfg.seed;
              const auto resolved = cf.resolve();
              resolved.validate();
              auto fopts = sweep_win.options();
              fopts.window_seconds = w;
              out << "cell " << cell << ": alpha " << a << " beta " << b << " window " << w
                  << "\n";
              const auto outcomes = train_subjects(reader, subjects, sweep_model, resolved, fopts,
                                                   false, cell_dir, out);
              std::vector<double> acc;
              for (const auto& o : outcomes) acc.push_back(o.result.accuracy);
              double mean = 0.0;
              for (double x : acc) mean += x;
              row << acc.size() << ",";
              if (!acc.empty()) row << mean / static_cast<double>(acc.size());
              row << ",";
              if (acc.size() >= 2) row << eval::accuracy_stats(acc).sd;
              row << ",ok,\n";
            } catch (const Error& e) {
              std::string msg = e.what();
              std::replace(msg.begin(), msg.end(), '"', '\'');
              row << ",,,failed,\"error[" << to_string(e.kind()) << "]: " << msg << "\"\n";
              err << "cell " << cell << " failed: " << msg << "\n";
            }
            table << row.str();
            ++cell;
          }
        }
      }
      write_text(run_dir / "sweep.csv", table.str());
      out << "wrote " << cell << " cells to " << (run_dir / "sweep.csv").string() << "\n";
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error[" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error[internal]: " << e.what() << "\n";
    return kExitFailure;
  }
  return usage(err, "no subcommand given");
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace dgsd::cli
