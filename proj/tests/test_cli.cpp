#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "grover/cli.hpp"
#include "test_support.hpp"

using namespace grover;
using grover::testing::slurp;
using grover::testing::spit;
using grover::testing::TempDir;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

const char* kSmallCorpus = "classes=3,vocab_size=60,docs_per_class=40,test_docs_per_class=10,"
                           "keywords_per_class=3,min_length=6,max_length=14,signal=0.3,seed=8";

std::vector<std::string> small_train(const std::string& out) {
  return {"train", "--synthetic", kSmallCorpus, "--model", "bow_linear", "--embedding-dim", "6",
          "--seq-len", "14", "--epochs", "3", "--batch-size", "16", "--step-size", "0.5",
          "--seed", "4", "--out", out};
}

}  // namespace

TEST_CASE("synth writes balanced, reproducible corpora") {
  TempDir dir;
  const auto r = run({"synth", "--synthetic", "classes=4,docs_per_class=500,seed=3", "--out",
                      (dir / "a").string()});
  REQUIRE(r.code == 0);
  const auto train = load_corpus(dir / "a" / "train.csv");
  CHECK(train.size() == 2000);
  std::vector<std::size_t> hist(4);
  for (const auto& t : train) ++hist.at(t.label);
  for (auto h : hist) CHECK(h == 500);
  CHECK(run({"synth", "--synthetic", "classes=4,docs_per_class=500,seed=3", "--out",
             (dir / "b").string()}).code == 0);
  CHECK(slurp(dir / "a" / "train.csv") == slurp(dir / "b" / "train.csv"));
  CHECK(slurp(dir / "a" / "test.csv") == slurp(dir / "b" / "test.csv"));

  const auto bad = run({"synth", "--synthetic", "classes=4,vocab_size=3", "--out", (dir / "c").string()});
  CHECK(bad.code != 0);
  CHECK(bad.err.find("vocab_size") != std::string::npos);
}

TEST_CASE("train writes every output and prints the summary") {
  TempDir dir;
  const auto out = (dir / "run").string();
  const auto r = run(small_train(out));
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("meta=0 ") != std::string::npos);
  CHECK(r.out.find("meta=2 ") != std::string::npos);
  CHECK(r.out.find("baseline ") != std::string::npos);
  CHECK(r.out.find(" grover ") != std::string::npos);
  CHECK(r.out.find(" delta ") != std::string::npos);
  for (const char* f : {"effective_config.ini", "report.jsonl", "timings.jsonl", "curves.csv",
                        "initial_embeddings.txt", "checkpoint/manifest.json",
                        "checkpoint/embeddings.txt", "checkpoint/params.bin"}) {
    CHECK_MESSAGE(std::filesystem::exists(dir / "run" / f), f);
  }
  CHECK_FALSE(std::filesystem::exists(dir / "run" / "FAILED"));
  CHECK(read_run_report(dir / "run" / "report.jsonl").size() == 3);
}

TEST_CASE("same seed gives byte-identical reports and curves") {
  TempDir dir;
  REQUIRE(run(small_train((dir / "a").string())).code == 0);
  REQUIRE(run(small_train((dir / "b").string())).code == 0);
  CHECK(slurp(dir / "a" / "report.jsonl") == slurp(dir / "b" / "report.jsonl"));
  CHECK(slurp(dir / "a" / "curves.csv") == slurp(dir / "b" / "curves.csv"));
  CHECK(slurp(dir / "a" / "checkpoint" / "params.bin") == slurp(dir / "b" / "checkpoint" / "params.bin"));
}

TEST_CASE("config file supplies defaults and flags win") {
  TempDir dir;
  spit(dir / "run.ini", "# base settings\nstep-size = 0.25\nnoise-range = 2\npolicy = both\n");
  auto args = small_train((dir / "r").string());
  args.push_back("--config");
  args.push_back((dir / "run.ini").string());
  const auto r = run(args);
  INFO(r.err);
  REQUIRE(r.code == 0);
  const auto effective = slurp(dir / "r" / "effective_config.ini");
  CHECK(effective.find("step-size = 0.5\n") != std::string::npos);  // flag
  CHECK(effective.find("noise-range = 2\n") != std::string::npos);  // file
  CHECK(effective.find("policy = both\n") != std::string::npos);    // file

  spit(dir / "bad.ini", "step-size\n");
  args.back() = (dir / "bad.ini").string();
  CHECK(run(args).code != 0);
}

TEST_CASE("train failures exit nonzero and flag partial output") {
  TempDir dir;
  auto args = small_train((dir / "r").string());
  args.push_back("--embeddings");
  args.push_back((dir / "no_such_vectors.txt").string());
  const auto r = run(args);
  CHECK(r.code != 0);
  CHECK(std::filesystem::exists(dir / "r" / "FAILED"));

  CHECK(run({"train", "--synthetic", "standard"}).code != 0);
  CHECK(run({"train", "--out", (dir / "x").string()}).code != 0);
  CHECK(run({"train", "--synthetic", "standard", "--data", "x.csv", "--out", "y"}).code != 0);
  CHECK(run({"train", "--synthetic", "standard", "--policy", "sideways", "--out", "y"}).code != 0);
  CHECK(run({"bogus"}).code != 0);
}

TEST_CASE("sweep: usage errors and a small grid") {
  TempDir dir;
  const auto unknown = run({"sweep", "--synthetic", kSmallCorpus, "--out", (dir / "s").string(),
                            "--sweep", "colour=1,2"});
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("step_size") != std::string::npos);
  CHECK(unknown.err.find("noise_range") != std::string::npos);
  const auto empty = run({"sweep", "--synthetic", kSmallCorpus, "--out", (dir / "s").string(),
                          "--sweep", "step_size="});
  CHECK(empty.code == 2);

  const auto ok = run({"sweep", "--synthetic", kSmallCorpus, "--model", "bow_linear",
                       "--embedding-dim", "4", "--seq-len", "14", "--epochs", "2",
                       "--batch-size", "16", "--out", (dir / "s").string(), "--sweep",
                       "policy=gradual,none,reversed,both", "--sweep", "step_size=0.5,1.0"});
  INFO(ok.err);
  REQUIRE(ok.code == 0);
  CHECK(std::count(ok.out.begin(), ok.out.end(), '\n') == 6);
  CHECK(std::filesystem::exists(dir / "s" / "sweep.jsonl"));
}

TEST_CASE("analyze: neighbours, drift and per-cue failures") {
  TempDir dir;
  REQUIRE(run(small_train((dir / "r").string())).code == 0);
  const auto ckpt = (dir / "r" / "checkpoint").string();
  const auto ok = run({"analyze", "--checkpoint", ckpt, "--cue", "w0", "--vectors-out",
                       (dir / "vec.txt").string()});
  INFO(ok.err);
  CHECK(ok.code == 0);
  CHECK(ok.out.find("w0: ") != std::string::npos);
  CHECK(ok.out.find("drift ") != std::string::npos);
  const auto line = ok.out.substr(ok.out.find("w0: "));
  const auto first_line = line.substr(0, line.find('\n'));
  CHECK(std::count(first_line.begin(), first_line.end(), '(') == 20);
  CHECK(std::filesystem::exists(dir / "vec.txt"));

  const auto some_bad = run({"analyze", "--checkpoint", ckpt, "--cue", "<pad>", "--cue", "zzz",
                             "--cue", "w1", "-k", "5"});
  CHECK(some_bad.code != 0);
  CHECK(some_bad.out.find("w1: ") != std::string::npos);
  CHECK(some_bad.err.find("special") != std::string::npos);

  CHECK(run({"analyze", "--checkpoint", (dir / "nowhere").string(), "--cue", "w0"}).code != 0);
}
