#include "dgsd/cli.hpp"

#include "doctest.h"
#include "helpers.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

using namespace dgsd;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  args.insert(args.begin(), "dgsd");
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

/// Small fast dataset: 2 subjects, 40 one-second windows each.
std::filesystem::path small_dataset(const testing::TempDir& dir) {
  const auto path = dir / "d.aadb";
  const auto r = run({"synth", "--out", path.string(), "--subjects", "2", "--trials", "4",
                      "--trial-seconds", "10", "--channels", "8"});
  REQUIRE(r.code == cli::kExitOk);
  return path;
}

std::vector<std::string> quick_train(const std::filesystem::path& data, const std::filesystem::path& run_dir) {
  return {"train", "--dataset", data.string(), "--run-dir", run_dir.string(), "--epochs", "2",
          "--hidden", "8", "--head-dim", "4", "--batch-size", "8"};
}

}  // namespace

TEST_CASE("synth writes a readable dataset and echoes its configuration") {
  testing::TempDir dir("cli");
  const auto path = dir / "d.aadb";
  const auto r = run({"synth", "--out", path.string(), "--subjects", "2", "--trials", "4",
                      "--trial-seconds", "10", "--channels", "8"});
  CHECK(r.code == 0);
  CHECK(r.out.find("subjects = 2") != std::string::npos);
  CHECK(r.out.find("wrote 2 subjects, 8 trials") != std::string::npos);

  const auto insp = run({"inspect", path.string()});
  CHECK(insp.code == 0);
  CHECK(insp.out.find("\"n_channels\": 8") != std::string::npos);
}

TEST_CASE("features writes one CSV row per window") {
  testing::TempDir dir("cli");
  const auto data = small_dataset(dir);
  const auto r = run({"features", "--dataset", data.string(), "--out", (dir / "f.csv").string(),
                      "--subject", "S1"});
  REQUIRE(r.code == 0);
  const auto csv = slurp(dir / "f.csv");
  CHECK(count_lines(csv) == 1 + 40);
  CHECK(csv.rfind("subject_id,trial_id,start,label,c0_delta", 0) == 0);
}

TEST_CASE("train is deterministic and writes its artefacts") {
  testing::TempDir dir("cli");
  const auto data = small_dataset(dir);
  const auto a = run(quick_train(data, dir / "a"));
  const auto b = run(quick_train(data, dir / "b"));
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(a.out.find("alpha = 0.7") != std::string::npos);
  CHECK(a.out.find("nodes = 8") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "a" / "config.toml"));
  for (const auto* name : {"results.csv", "summary.json", "train_log.jsonl", "checkpoints/S1.dgsd",
                           "checkpoints/S2.dgsd"}) {
    INFO(name);
    REQUIRE(std::filesystem::exists(dir / "a" / name));
    CHECK(slurp(dir / "a" / name) == slurp(dir / "b" / name));
  }

  // The echoed configuration is itself a valid config file.
  const auto again = run({"train", "--config", (dir / "a" / "config.toml").string(), "--dataset",
                          data.string(), "--run-dir", (dir / "c").string()});
  REQUIRE(again.code == 0);
  CHECK(slurp(dir / "c" / "checkpoints/S1.dgsd") == slurp(dir / "a" / "checkpoints/S1.dgsd"));

  const auto ev = run({"eval", "--checkpoint", (dir / "a" / "checkpoints/S1.dgsd").string(),
                       "--dataset", data.string(), "--subject", "S1"});
  CHECK(ev.code == 0);
  CHECK(ev.out.find("\"positive_class\": \"left\"") != std::string::npos);

  const auto insp = run({"inspect", (dir / "a" / "checkpoints/S1.dgsd").string()});
  CHECK(insp.code == 0);
  CHECK(insp.out.find("parameter_count") != std::string::npos);
}

TEST_CASE("usage errors exit 2, runtime errors exit 1") {
  testing::TempDir dir("cli");
  CHECK(run({}).code == cli::kExitUsage);
  CHECK(run({"train", "--bogus"}).code == cli::kExitUsage);
  CHECK(run({"train", "--dataset", "x", "--run-dir", "y", "--alpha", "1.5"}).code == cli::kExitUsage);

  std::ofstream(dir / "bad.toml") << "alpha = 0.5\nunknown_key = 3\n";
  const auto unknown = run({"train", "--config", (dir / "bad.toml").string(), "--dataset", "x"});
  CHECK(unknown.code == cli::kExitUsage);
  CHECK(unknown.err.find("error[usage]") != std::string::npos);

  const auto missing = run({"train", "--dataset", (dir / "none.aadb").string(), "--run-dir",
                            (dir / "r").string()});
  CHECK(missing.code == cli::kExitFailure);
  CHECK(missing.err.find("error[io]") != std::string::npos);

  CHECK(run({"--help"}).code == cli::kExitOk);
}

TEST_CASE("gradcheck passes on the default toy problem") {
  const auto r = run({"gradcheck"});
  CHECK(r.code == 0);
  CHECK(r.out.find("max_relative_error") != std::string::npos);
  CHECK(r.out.find("adjacency") != std::string::npos);
}

TEST_CASE("inspect without a path describes the model") {
  const auto r = run({"inspect"});
  CHECK(r.code == 0);
  CHECK(r.out.find("21064") != std::string::npos);
}

TEST_CASE("sweep writes one row per cell") {
  testing::TempDir dir("cli");
  const auto data = small_dataset(dir);
  const auto base = std::vector<std::string>{"sweep", "--dataset", data.string(), "--epochs", "1",
                                             "--hidden", "8", "--head-dim", "4"};

  auto args = base;
  args.insert(args.end(), {"--run-dir", (dir / "s").string(), "--alphas", "0.3,0.5,0.7"});
  auto r = run(args);
  REQUIRE(r.code == 0);
  const auto csv = slurp(dir / "s" / "sweep.csv");
  CHECK(count_lines(csv) == 1 + 3);
  CHECK(csv.rfind("cell,alpha,beta,window_seconds,seed", 0) == 0);

  auto empty = base;
  empty.insert(empty.end(), {"--run-dir", (dir / "e").string(), "--alphas", "", "--betas", "0.3"});
  r = run(empty);
  CHECK(r.code == 0);
  CHECK(count_lines(slurp(dir / "e" / "sweep.csv")) == 1);
}

TEST_CASE("eval summarises and compares result tables") {
  testing::TempDir dir("cli");
  std::ofstream(dir / "a.csv") << "subject_id,window_seconds,n_windows,accuracy,tp,fp,tn,fn,precision,recall\n"
                                  "S01,1,10,0.9,4,0,5,1,1,0.8\n"
                                  "S02,1,10,0.8,3,1,5,1,0.75,0.75\n"
                                  "S03,1,10,0.7,0,0,7,3,undefined,0\n";
  std::ofstream(dir / "b.csv") << "subject_id,window_seconds,n_windows,accuracy,tp,fp,tn,fn,precision,recall\n"
                                  "S01,1,10,0.8,4,1,4,1,0.8,0.8\n"
                                  "S02,1,10,0.8,3,1,5,1,0.75,0.75\n"
                                  "S03,1,10,0.5,0,0,5,5,undefined,0\n";
  const auto r = run({"eval", "--results", (dir / "a.csv").string(), "--compare",
                      (dir / "b.csv").string(), "--run-dir", (dir / "out").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("\"paired_t_test\"") != std::string::npos);
  CHECK(r.out.find("\"precision_excluded\": 1") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "out" / "eval.json"));

  CHECK(run({"eval"}).code == cli::kExitUsage);
}
