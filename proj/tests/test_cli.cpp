#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cram/checkpoint.hpp"
#include "cram/cli.hpp"

using namespace cram;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cram_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path work_dir() {
  const fs::path p = fs::path(CRAM_TEST_DATA_DIR) / "cli";
  fs::create_directories(p);
  return p;
}

std::string config_path(const std::string& name) { return (fs::path(CRAM_CONFIG_DIR) / name).string(); }

nlohmann::json small_config() {
  return nlohmann::json::parse(R"({
    "seed": 2,
    "dataset": {"kind": "gaussian_mixture", "n": 300, "num_classes": 3, "noise": 0.3},
    "model": {"layer_widths": [2, 8, 8, 3], "use_batchnorm": true},
    "optimizer": {"algorithm": "cram_plus", "learning_rate": 0.05, "momentum": 0.9, "rho": 0.05,
                  "operator_set": "topk_global:0.5,0.7", "sparse_perturbed_grad": true},
    "training": {"epochs": 2, "batch_size": 32}
  })");
}

std::string write_config(const std::string& name, const nlohmann::json& j) {
  const fs::path p = work_dir() / name;
  std::ofstream(p) << j.dump(2);
  return p.string();
}

// Trains the small config once and returns the checkpoint path.
const std::string& trained_checkpoint() {
  static const std::string path = [] {
    const std::string ckpt = (work_dir() / "small.ckpt").string();
    const Run r = cram_cli({"train", write_config("small.json", small_config()), "--out", ckpt});
    REQUIRE(r.code == 0);
    return ckpt;
  }();
  return path;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

}  // namespace

TEST_CASE("train writes a checkpoint and a log") {
  const std::string& ckpt = trained_checkpoint();
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(ckpt + ".log.json"));
  const auto log = read_json(ckpt + ".log.json");
  CHECK(log["epochs"].size() == 2);
  const Checkpoint c = load_checkpoint(ckpt);
  CHECK(c.seed == 2);
  CHECK(c.extra.contains("dataset"));
}

TEST_CASE("config errors exit 2 and name the field") {
  auto j = small_config();
  j["optimizer"]["algorithm"] = "adamw";
  Run r = cram_cli({"train", write_config("bad_algo.json", j), "--out", (work_dir() / "x.ckpt").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("optimizer.algorithm") != std::string::npos);
  CHECK(r.err.find("bad_algo.json") != std::string::npos);

  j = small_config();
  j["model"]["depth"] = 3;
  r = cram_cli({"train", write_config("bad_key.json", j), "--out", (work_dir() / "x.ckpt").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("depth") != std::string::npos);

  r = cram_cli({"train", (work_dir() / "missing.json").string()});
  CHECK(r.code == 4);
  CHECK(cram_cli({"frobnicate"}).code == 2);
}

TEST_CASE("divergence exits 3") {
  auto j = small_config();
  j["optimizer"] = {{"algorithm", "sgd"}, {"learning_rate", 1e3}, {"weight_decay", 0.1}};
  j["training"]["epochs"] = 40;
  const Run r = cram_cli({"train", write_config("diverge.json", j), "--out", (work_dir() / "d.ckpt").string()});
  CHECK(r.code == 3);
  CHECK(r.err.find("diverged") != std::string::npos);
  CHECK_FALSE(fs::exists(work_dir() / "d.ckpt"));
}

TEST_CASE("sweep arity and spec kinds") {
  const std::string& ckpt = trained_checkpoint();
  const fs::path rep = work_dir() / "topk.json";
  Run r = cram_cli({"sweep", ckpt, "--specs", "topk_global:0.5,0.7,0.9", "--trials", "3", "--calibration-size", "30",
                    "--bnt-batches", "5", "--out", rep.string()});
  REQUIRE(r.code == 0);
  auto j = read_json(rep);
  REQUIRE(j["points"].size() == 3);
  for (const auto& p : j["points"]) CHECK(p["trials"].size() == 3);
  CHECK(r.out.find("post-BNT") != std::string::npos);
  CHECK(r.out.find("topk_global:0.7") != std::string::npos);

  r = cram_cli({"sweep", ckpt, "--specs", "quant:4", "--trials", "2", "--calibration-size", "30", "--out",
                (work_dir() / "q.json").string()});
  REQUIRE(r.code == 0);
  j = read_json(work_dir() / "q.json");
  CHECK(j["points"][0].contains("pre_bnt"));
  CHECK(j["points"][0].contains("post_bnt_mean"));
}

TEST_CASE("N:M on a model whose first layer is kept dense") {
  auto j = small_config();
  j["model"]["layer_widths"] = {2, 8, 8, 3};
  j["model"]["keep_first_last_dense"] = true;
  j["optimizer"]["operator_set"] = "nm:2:4";
  const std::string ckpt = (work_dir() / "nm_model.ckpt").string();
  REQUIRE(cram_cli({"train", write_config("nm.json", j), "--out", ckpt}).code == 0);
  const Run r = cram_cli({"sweep", ckpt, "--specs", "nm:2:4", "--trials", "2", "--calibration-size", "30", "--out",
                          (work_dir() / "nm_dense.json").string()});
  REQUIRE(r.code == 0);
  const auto rep = read_json(work_dir() / "nm_dense.json");
  REQUIRE(rep["points"].size() == 1);
  CHECK(rep["points"][0]["spec"] == "nm:2:4");

  // without the flag, fc0.weight is [8, 2] and cannot hold 2:4 blocks
  j["model"]["keep_first_last_dense"] = false;
  j["optimizer"]["algorithm"] = "sgd";
  const std::string plain = (work_dir() / "nm_plain.ckpt").string();
  REQUIRE(cram_cli({"train", write_config("nm_plain.json", j), "--out", plain}).code == 0);
  const Run bad = cram_cli({"sweep", plain, "--specs", "nm:2:4", "--trials", "1", "--calibration-size", "30",
                            "--out", (work_dir() / "nm_bad.json").string()});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("fc0.weight") != std::string::npos);
}

TEST_CASE("sweep input errors") {
  const std::string& ckpt = trained_checkpoint();
  const std::string out = (work_dir() / "e.json").string();
  CHECK(cram_cli({"sweep", ckpt, "--specs", "topk_global:1.5", "--out", out}).code == 2);
  CHECK(cram_cli({"sweep", ckpt, "--specs", "blur:3", "--out", out}).code == 2);
  CHECK(cram_cli({"sweep", (work_dir() / "none.ckpt").string(), "--specs", "quant:4", "--out", out}).code == 4);
  std::ofstream(work_dir() / "garbage.ckpt") << "not a checkpoint";
  CHECK(cram_cli({"sweep", (work_dir() / "garbage.ckpt").string(), "--specs", "quant:4", "--out", out}).code == 4);
}

TEST_CASE("gradcheck exit codes") {
  const std::string cfg = config_path("gradcheck.json");
  Run r = cram_cli({"gradcheck", cfg});
  CHECK(r.code == 0);
  CHECK(r.out.find("max relative error") != std::string::npos);

  r = cram_cli({"gradcheck", cfg, "--inject-fault", "relu"});
  CHECK(r.code == 5);
  CHECK(r.err.find("worst parameter") != std::string::npos);

  r = cram_cli({"gradcheck", cfg, "--tolerance", "1e-12"});
  CHECK(r.code == 5);

  // the fault is cleared when the command returns
  CHECK(cram_cli({"gradcheck", cfg, "--seeds", "1"}).code == 0);
}

TEST_CASE("danskin command") {
  Run r = cram_cli({"danskin", "--dim", "2", "--rho", "0.1", "--grid", "41", "--points", "10"});
  CHECK(r.code == 0);
  CHECK(r.out.find("quadratic") != std::string::npos);

  r = cram_cli({"danskin", "--dim", "3", "--rho", "0", "--points", "10"});
  CHECK(r.code == 0);

  r = cram_cli({"danskin", "--dim", "2", "--grid", "2", "--points", "5"});
  CHECK(r.code == 0);
  CHECK(r.err.find("coarse") != std::string::npos);

  CHECK(cram_cli({"danskin", "--dim", "7"}).code == 2);
}

TEST_CASE("help lists every flag") {
  const std::vector<std::pair<std::string, std::vector<std::string>>> flags{
      {"train", {"--out", "--log", "--f32"}},
      {"sweep", {"--specs", "--trials", "--calibration-size", "--bnt-batches", "--bnt-batch-size", "--seed", "--out"}},
      {"gradcheck", {"--tolerance", "--epsilon", "--seeds", "--batch", "--inject-fault"}},
      {"danskin", {"--dim", "--rho", "--grid", "--points", "--seed"}}};
  for (const auto& [cmd, names] : flags) {
    const Run r = cram_cli({cmd, "--help"});
    CHECK(r.code == 0);
    for (const auto& f : names) CHECK_MESSAGE(r.out.find(f) != std::string::npos, cmd << " " << f);
  }
  const Run top = cram_cli({"--help"});
  for (const auto& [cmd, names] : flags) CHECK(top.out.find(cmd) != std::string::npos);
  CHECK(cram_cli({"sweep", trained_checkpoint(), "--specs", "quant:4", "--out", "x", "--bogus"}).code == 2);
}

TEST_CASE("sweep reports are byte-identical across runs") {
  const std::string& ckpt = trained_checkpoint();
  const fs::path a = work_dir() / "rep_a.json", b = work_dir() / "rep_b.json";
  for (const auto& p : {a, b}) {
    REQUIRE(cram_cli({"sweep", ckpt, "--specs", "topk_global:0.5,0.9", "--trials", "3", "--calibration-size", "30",
                      "--out", p.string()})
                .code == 0);
  }
  std::ifstream ia(a), ib(b);
  std::stringstream sa, sb;
  sa << ia.rdbuf();
  sb << ib.rdbuf();
  CHECK(sa.str() == sb.str());
}
