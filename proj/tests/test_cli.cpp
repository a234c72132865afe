#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hcscl/datamodel.hpp"
#include "hcscl/trainer.hpp"

#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using namespace hcscl;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

const fs::path& workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "hcscl_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Runs the CLI with `args` (and optional environment prefix) from the work
// directory, capturing stdout and stderr together.
Run run_cli(const std::string& args, const std::string& env = "") {
  const fs::path log = workdir() / "last_run.txt";
  const std::string cmd = "cd '" + workdir().string() + "' && " + env + " '" + HCSCL_BIN + "' " + args + " > '" +
                          log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(log);
  return r;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string f; std::getline(in, f, '\t');) out.push_back(f);
  return out;
}

const std::string kSmall =
    "--vocab-size 20 --n-concepts 12 --sentences-per-doc 2 --words-per-sentence 3 --images-per-doc 2 "
    "--objects-per-image 3 --d-obj 4 --n-attr 3";
const std::string kTiny = "--d-emb 8 --d-h 8 --d-ff 16 --d-l 2 --d-a 2 --d-edge 4 --layers 1";

}  // namespace

TEST_CASE("generate writes three splits and a manifest, deterministically") {
  const Run a = run_cli("generate --n-samples 50 --seed 7 --out gen_a");
  REQUIRE_MESSAGE(a.code == 0, a.out);
  const Run b = run_cli("generate --n-samples 50 --seed 7 --out gen_b");
  REQUIRE(b.code == 0);
  for (const char* f : {"train.jsonl", "valid.jsonl", "test.jsonl", "manifest.json"}) {
    CAPTURE(f);
    REQUIRE(fs::exists(workdir() / "gen_a" / f));
    CHECK(slurp(workdir() / "gen_a" / f) == slurp(workdir() / "gen_b" / f));
  }
  const Corpus train = load_corpus(workdir() / "gen_a" / "train.jsonl");
  const Corpus valid = load_corpus(workdir() / "gen_a" / "valid.jsonl");
  const Corpus test = load_corpus(workdir() / "gen_a" / "test.jsonl");
  CHECK(train.samples.size() == 40);
  CHECK(valid.samples.size() == 5);
  CHECK(test.samples.size() == 5);
  const auto manifest = nlohmann::json::parse(slurp(workdir() / "gen_a" / "manifest.json"));
  CHECK(manifest.contains("synth_config"));
  CHECK(manifest.contains("split"));

  const Run c = run_cli("generate --n-samples 50 --seed 8 --out gen_c");
  REQUIRE(c.code == 0);
  CHECK(slurp(workdir() / "gen_a" / "train.jsonl") != slurp(workdir() / "gen_c" / "train.jsonl"));
}

TEST_CASE("usage errors exit with 2") {
  CHECK(run_cli("generate --n-samples 10 --images-per-doc 0 --out bad").code == 2);
  CHECK(run_cli("generate --n-samples 10").code == 2);  // --out missing
  CHECK(run_cli("train --no-such-flag 1 --train x").code == 2);
  CHECK(run_cli("frobnicate").code == 2);
  CHECK(run_cli("train --train x --ablate no-everything").code == 2);
  CHECK(run_cli("--help").code == 0);
}

TEST_CASE("runtime failures exit with 1 and say why") {
  const Run r = run_cli("train --train does_not_exist.jsonl --out m.ckpt");
  CHECK(r.code == 1);
  CHECK(r.out.find("does_not_exist.jsonl") != std::string::npos);
}

TEST_CASE("train with zero epochs snapshots the default hyperparameters") {
  REQUIRE(run_cli("generate --n-samples 10 --seed 3 " + kSmall + " --out small").code == 0);
  const Run r = run_cli("train --train small/train.jsonl --epochs 0 --out zero.ckpt");
  REQUIRE_MESSAGE(r.code == 0, r.out);
  const TrainState s = load_checkpoint(workdir() / "zero.ckpt");
  CHECK(s.epoch == 0);
  CHECK(s.config.lr == 5e-4);
  CHECK(s.config.lr_decay == 0.8);
  CHECK(s.config.decay_every == 6);
  CHECK(s.config.batch_size == 16);
  CHECK(s.config.model.iou_threshold == 0.2);
  CHECK(s.config.lambda_image == 1.0);
  CHECK(s.config.model.ablation == AblationFlags{});
  CHECK(fs::exists(workdir() / "zero.ckpt.log.jsonl"));
}

TEST_CASE("ablation flags land in the config snapshot") {
  REQUIRE(run_cli("generate --n-samples 10 --seed 3 " + kSmall + " --out small").code == 0);
  REQUIRE(run_cli("train --train small/train.jsonl --epochs 0 --ablate no-scene --out abl.ckpt").code == 0);
  const TrainState s = load_checkpoint(workdir() / "abl.ckpt");
  CHECK_FALSE(s.config.model.ablation.sentence_scene_fusion);
  CHECK(s.config.model.ablation.word_object_fusion);
}

TEST_CASE("config file values apply and command-line flags win") {
  REQUIRE(run_cli("generate --n-samples 10 --seed 3 " + kSmall + " --out small").code == 0);
  {
    std::ofstream cfg(workdir() / "train.cfg");
    cfg << "# training settings\nlr = 0.002\nbatch-size = 4\n\nepochs = 0  # no training\n";
  }
  REQUIRE(run_cli("train --config train.cfg --train small/train.jsonl --batch-size 8 --out cfg.ckpt").code == 0);
  const TrainState s = load_checkpoint(workdir() / "cfg.ckpt");
  CHECK(s.config.lr == 0.002);
  CHECK(s.config.batch_size == 8);
  CHECK(s.config.epochs == 0);
}

TEST_CASE("HCSCL_SEED is a fallback for --seed") {
  REQUIRE(run_cli("generate --n-samples 20 --out env_a", "HCSCL_SEED=11").code == 0);
  REQUIRE(run_cli("generate --n-samples 20 --seed 11 --out env_b").code == 0);
  REQUIRE(run_cli("generate --n-samples 20 --seed 12 --out env_c", "HCSCL_SEED=11").code == 0);
  CHECK(slurp(workdir() / "env_a" / "train.jsonl") == slurp(workdir() / "env_b" / "train.jsonl"));
  CHECK(slurp(workdir() / "env_a" / "train.jsonl") != slurp(workdir() / "env_c" / "train.jsonl"));
}

TEST_CASE("an overfit checkpoint scores perfectly on its own training sample") {
  REQUIRE(run_cli("generate --n-samples 1 --seed 5 " + kSmall +
                " --train-frac 1 --valid-frac 0 --test-frac 0 --out one")
              .code == 0);
  const Run t = run_cli("train --train one/train.jsonl " + kTiny +
                      " --d-emb 16 --d-h 16 --d-ff 32 --epochs 200 --batch-size 1 --lr 0.01 --lr-decay 1 --out one.ckpt");
  REQUIRE_MESSAGE(t.code == 0, t.out);
  const Run e = run_cli("eval --checkpoint one.ckpt --test one/train.jsonl --predictions one.pred.jsonl --table one.tsv");
  REQUIRE_MESSAGE(e.code == 0, e.out);
  const auto table = lines(slurp(workdir() / "one.tsv"));
  REQUIRE(table.size() == 2);
  const auto header = split_tabs(table[0]);
  CHECK(header == std::vector<std::string>{"R-1", "R-2", "R-L", "B-1", "B-2", "B-3", "B-4", "IP"});
  const auto values = split_tabs(table[1]);
  REQUIRE(values.size() == 8);
  CHECK(values[0] == "1.0000");
  CHECK(values[7] == "1.0000");
  CHECK(e.out.find(table[1]) != std::string::npos);
  const auto preds = metrics::read_predictions(workdir() / "one.pred.jsonl");
  REQUIRE(preds.size() == 1);
  const Corpus one = load_corpus(workdir() / "one" / "train.jsonl");
  CHECK(preds[0].image == one.samples[0].gold_image);
}

TEST_CASE("eval rejects a corpus the checkpoint was not built for") {
  REQUIRE(run_cli("generate --n-samples 10 --seed 3 " + kSmall + " --out small").code == 0);
  REQUIRE(run_cli("generate --n-samples 10 --seed 3 --vocab-size 30 --n-concepts 12 --d-obj 4 --n-attr 3 --out other")
              .code == 0);
  REQUIRE(run_cli("train --train small/train.jsonl --epochs 0 " + kTiny + " --out mm.ckpt").code == 0);
  const Run r = run_cli("eval --checkpoint mm.ckpt --test other/test.jsonl");
  CHECK(r.code == 1);
  CHECK(r.out.find("vocab") != std::string::npos);
}

TEST_CASE("ablation table has the five configurations") {
  REQUIRE(run_cli("generate --n-samples 10 --seed 3 " + kSmall + " --out small").code == 0);
  const Run r = run_cli("eval --ablation-table --train small/train.jsonl --test small/test.jsonl " + kTiny +
                      " --epochs 1 --table abl.tsv");
  REQUIRE_MESSAGE(r.code == 0, r.out);
  const auto table = lines(slurp(workdir() / "abl.tsv"));
  REQUIRE(table.size() == 6);
  CHECK(split_tabs(table[0]) == std::vector<std::string>{"Model", "R-1", "R-2", "B-1", "IP", "params", "reference"});
  const std::vector<std::string> names{"HCSCL Word-Object only", "HCSCL Sentence-Scene only",
                                       "HCSCL w/o Sentence-Scene Fusion", "HCSCL w/o Word-Object Fusion", "HCSCL"};
  for (std::size_t k = 0; k < 5; ++k) {
    const auto row = split_tabs(table[k + 1]);
    REQUIRE(row.size() == 7);
    CHECK(row[0] == names[k]);
    CHECK(row[6] == (k == 4 ? "yes" : "no"));
  }
  CHECK(run_cli("eval --ablation-table --test small/test.jsonl").code == 2);
}
