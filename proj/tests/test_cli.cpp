#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "hiervl/hashing.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using hiervl::read_file;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "hiervl_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args, const std::string& log = "last") {
  const auto out = workdir() / (log + ".log");
  const std::string cmd = std::string(HIERVL_CLI_PATH) + " " + args + " > " + out.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string output(const std::string& log = "last") { return read_file((workdir() / (log + ".log")).string()); }

std::string small_config() {
  const auto path = workdir() / "small.json";
  if (!fs::exists(path)) {
    json j = {{"generator", {{"num_videos", 30}, {"clips_per_video", 8}}},
              {"eval_videos", 12},
              {"train",
               {{"total_steps", 12},
                {"clips_per_video", 4},
                {"child_batch_size", 8},
                {"parent_videos_per_batch", 4},
                {"encoder", {{"model_dim", 16}, {"num_layers", 1}, {"num_heads", 2}, {"mlp_dim", 32}, {"embed_dim", 16}}},
                {"aggregator", {{"sa_layers", 1}, {"sa_heads", 2}, {"sa_model_dim", 16}, {"sa_mlp_dim", 32}}}}},
              {"eval", {{"mcq_items", 20}, {"clips_per_video", 4}, {"retrieval_clips", 40}, {"probe", {{"epochs", 10}}}}}};
    std::ofstream(path) << j.dump(2);
  }
  return path.string();
}

}  // namespace

TEST_CASE("usage errors exit 64") {
  CHECK(run("") == 64);
  CHECK(run("train --bogus") == 64);
  CHECK(run("frobnicate") == 64);
  CHECK(output().rfind("error: usage:", 0) == 0);
}

TEST_CASE("a missing corpus is a path error") {
  CHECK(run("train --corpus " + (workdir() / "nope.jsonl").string() + " --out " + (workdir() / "x").string()) == 4);
  CHECK(output().rfind("error: path:", 0) == 0);
  CHECK(run("eval --checkpoint " + (workdir() / "nope.bin").string() + " --corpus c.jsonl") == 4);
}

TEST_CASE("unknown config keys are config errors") {
  CHECK(run("generate --out " + (workdir() / "g").string() + " --set train.foo=1") == 2);
  CHECK(output().find("train.foo") != std::string::npos);
}

TEST_CASE("gradcheck exits non-zero when a case exceeds the tolerance") {
  CHECK(run("gradcheck --seeds 1 --tol 1e-30") == 7);
  CHECK(output().find("error: numeric: gradcheck failed") != std::string::npos);
}

TEST_CASE("generate, train, eval and export round trip") {
  const auto cfg = small_config();
  const auto data = (workdir() / "data").string();
  REQUIRE(run("generate --config " + cfg + " --out " + data) == 0);
  CHECK(fs::exists(fs::path(data) / "train.jsonl"));
  CHECK(fs::exists(fs::path(data) / "eval.manifest.json"));

  const auto runs = (workdir() / "run").string();
  REQUIRE(run("train --config " + cfg + " --corpus " + data + "/train.jsonl --out " + runs +
              " --steps 12 --checkpoint-every 6 --set train.lr=0.002 --lr 0.003") == 0);
  auto eff = json::parse(read_file(runs + "/effective_config.json"));
  CHECK(eff["train"]["lr"] == 0.003);  // typed flags beat --set, which beats the file
  CHECK(eff["train"]["encoder"]["model_dim"] == 16);
  auto run_json = json::parse(read_file(runs + "/run.json"));
  CHECK(run_json["corpus_manifest_hash"].get<std::string>().size() == 40);
  CHECK(fs::exists(runs + "/ckpt_6.bin"));

  const auto resumed = (workdir() / "resumed").string();
  REQUIRE(run("train --config " + cfg + " --corpus " + data + "/train.jsonl --out " + resumed +
              " --steps 12 --checkpoint-every 6 --lr 0.003 --resume " + runs + "/ckpt_6.bin") == 0);
  CHECK(read_file(resumed + "/final.bin") == read_file(runs + "/final.bin"));
  CHECK(run("train --config " + cfg + " --corpus " + data + "/train.jsonl --out " + resumed +
            " --lr 0.001 --resume " + runs + "/ckpt_6.bin") == 6);

  const auto reports = (workdir() / "eval").string();
  REQUIRE(run("eval --config " + cfg + " --checkpoint " + runs + "/final.bin --corpus " + data +
              "/eval.jsonl --train-corpus " + data + "/train.jsonl --out " + reports) == 0);
  auto r = json::parse(read_file(reports + "/reports.json"));
  CHECK(r.size() == 6);
  CHECK(r[0]["task"] == "childMCQ-inter");
  CHECK(r[0]["chance"] == 20.0);

  const auto emb = (workdir() / "emb.jsonl").string();
  REQUIRE(run("export --checkpoint " + runs + "/final.bin --corpus " + data + "/eval.jsonl --out " + emb +
              " --level parent --k 4") == 0);
  std::ifstream in(emb);
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 12);
}

TEST_CASE("reproduce writes a 7 x 4 table that is identical across runs") {
  const auto cfg = small_config();
  const auto a = (workdir() / "rep_a").string(), b = (workdir() / "rep_b").string();
  REQUIRE(run("reproduce --config " + cfg + " --out " + a, "rep_a") == 0);
  REQUIRE(run("reproduce --config " + cfg + " --out " + b, "rep_b") == 0);
  auto table = json::parse(read_file(a + "/table.json"));
  CHECK(table["columns"].size() == 4);
  REQUIRE(table["rows"].size() == 7);
  for (const auto& row : table["rows"])
    for (const auto& col : table["columns"]) CHECK(row.contains(col.get<std::string>()));
  CHECK(read_file(a + "/table.json") == read_file(b + "/table.json"));
  CHECK(read_file(a + "/runs/HierVL-SA/metrics.jsonl") == read_file(b + "/runs/HierVL-SA/metrics.jsonl"));
  CHECK(fs::exists(a + "/effective_config.json"));
  CHECK(fs::exists(a + "/run.json"));
  CHECK(output("rep_a").find("WoSummNarr") != std::string::npos);
}
