#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "specalign/cli/commands.hpp"
#include "test_support.hpp"

using namespace specalign;
using nlohmann::json;
using specalign::testing::TempDir;

namespace {

struct Run {
  int status = 0;
  std::string out;
  std::string err;

  json report() const { return json::parse(out); }
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  Run r;
  r.status = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

void write(const std::string& path, const std::string& text) {
  std::ofstream(path) << text;
}

}  // namespace

TEST_CASE("argument errors") {
  CHECK(cli({}).status != 0);
  CHECK(cli({"frobnicate"}).status != 0);
  const Run help = cli({"--help"});
  CHECK(help.status == 0);
  CHECK(help.out.find("generate") != std::string::npos);
  const Run missing = cli({"generate"});
  CHECK(missing.status == 1);
  CHECK(missing.err.find("--out") != std::string::npos);
  CHECK(cli({"generate", "--scenes", "many"}).status == 2);

  TempDir dir("cli-args");
  write(dir.str("bad.json"), R"({"variant": "toy", "sceens": 10})");
  const Run typo = cli({"--config", dir.str("bad.json"), "generate", "--out", dir.str("ds")});
  CHECK(typo.status == 1);
  CHECK(typo.err.find("sceens") != std::string::npos);
  write(dir.str("broken.json"), "{not json");
  CHECK(cli({"--config", dir.str("broken.json"), "generate", "--out", dir.str("ds")}).status == 1);
  CHECK(cli({"--out", dir.str("ds"), "generate", "--split", "0.5,0.5"}).status == 1);
}

TEST_CASE("generate, train, evaluate, export, probe and inspect") {
  TempDir dir("cli");
  const std::string ds = dir.str("ds");
  const Run gen = cli({"--seed", "3", "--out", ds, "generate", "--scenes", "32", "--split", "0.5,0.5,0",
                       "--modality-ratios", "1,1,0.75"});
  REQUIRE(gen.status == 0);
  CHECK(gen.report().at("scenes") == 32);
  CHECK(gen.report().at("pairs").at("lwir") == 24);

  // A writable-looking output path below a regular file cannot be created.
  write(dir.str("blocker"), "x");
  const Run blocked = cli({"--out", dir.str("blocker") + "/run", "train", "--data", ds});
  CHECK(blocked.status != 0);
  CHECK_FALSE(blocked.err.empty());

  write(dir.str("short.json"), R"({"stage_overrides": {"I": {"epochs": 1}, "II": {"epochs": 2}, "III": {"epochs": 1}}})");
  const std::string run = dir.str("run");
  const Run trained = cli({"--config", dir.str("short.json"), "--seed", "1", "--out", run, "train", "--data", ds,
                           "--stages", "I,II", "--audit-la-gradient"});
  REQUIRE_MESSAGE(trained.status == 0, trained.err);
  const json summary = trained.report();
  CHECK(summary.at("stages").at("I").at("completed") == true);
  CHECK(summary.at("stages").at("II").at("completed") == true);
  CHECK(std::filesystem::exists(run + "/stageII_final.ckpt"));

  std::ifstream metrics(run + "/metrics.jsonl");
  std::string line;
  bool saw_audit = false;
  while (std::getline(metrics, line)) {
    const json rec = json::parse(line);
    if (rec.at("type") == "step" && rec.at("stage") == "II") saw_audit |= rec.contains("la_grad_norm");
  }
  CHECK(saw_audit);

  // Stage III alone needs the stage II checkpoint.
  CHECK(cli({"--config", dir.str("short.json"), "--out", dir.str("run3"), "train", "--data", ds, "--stages", "III"})
            .status == 1);
  const Run third = cli({"--config", dir.str("short.json"), "--out", dir.str("run3"), "train", "--data", ds,
                         "--stages", "III", "--resume", run + "/stageII_final.ckpt", "--disable-loss", "patch"});
  REQUIRE_MESSAGE(third.status == 0, third.err);
  CHECK(third.report().at("stages").at("III").at("config").at("disabled_losses") == json::array({"patch"}));

  const Run eval = cli({"eval", "--checkpoint", dir.str("run3") + "/stageIII_final.ckpt", "--data", ds});
  REQUIRE_MESSAGE(eval.status == 0, eval.err);
  CHECK(eval.report().at("stage") == "III");
  CHECK(eval.report().at("modalities").contains("nir"));
  CHECK(eval.report().at("modalities").at("lwir").at("pairs") >= 10);

  // Six validation pairs per band are too few to rank.
  const Run tiny = cli({"--seed", "4", "--out", dir.str("tiny"), "generate", "--scenes", "12", "--split", "0.5,0.5,0"});
  REQUIRE(tiny.status == 0);
  const Run small = cli({"eval", "--checkpoint", run + "/stageI_final.ckpt", "--data", dir.str("tiny")});
  CHECK(small.status == 1);
  CHECK(small.err.find("at least 10") != std::string::npos);

  const Run exported = cli({"--out", dir.str("emb.csv"), "export-embeddings", "--checkpoint",
                            run + "/stageI_final.ckpt", "--data", ds, "--count", "4"});
  REQUIRE_MESSAGE(exported.status == 0, exported.err);
  std::ifstream csv(dir.str("emb.csv"));
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 1 + 2 * 4 * 3);

  const Run probe = cli({"probe", "--checkpoint", run + "/stageII_final.ckpt", "--data", ds, "--train-split",
                         "train", "--test-split", "val", "--epochs", "2"});
  REQUIRE_MESSAGE(probe.status == 0, probe.err);
  CHECK(probe.report().at("stage") == "II");

  const Run inspect = cli({"inspect-checkpoint", "--checkpoint", run + "/stageII_final.ckpt"});
  REQUIRE(inspect.status == 0);
  CHECK(inspect.report().at("queue").at("capacity") == 1024);
  CHECK(inspect.report().at("meta").at("stage") == "II");
  // Toy adapters: 16 instances of 2*64*16 weights, plus 16 + 64 biases each.
  CHECK(inspect.report().at("adapters").at("weights_without_biases") == 16 * 2048);
  CHECK(inspect.report().at("adapters").at("weights_with_biases") == 16 * 2128);

  std::filesystem::resize_file(run + "/stageI_final.ckpt", 100);
  const Run corrupt = cli({"inspect-checkpoint", "--checkpoint", run + "/stageI_final.ckpt"});
  CHECK(corrupt.status == 1);
  CHECK_FALSE(corrupt.err.empty());
}
