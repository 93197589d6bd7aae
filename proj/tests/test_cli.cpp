#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>

#include <json.hpp>

#include "fsvos/util/fs.hpp"

using namespace fsvos;

namespace {

int run_cli(const std::string& args, const fs::path& log) {
  std::string cmd = std::string(FSVOS_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

struct CliFixture {
  fs::path root = fs::temp_directory_path() / "fsvos_cli_test";
  fs::path log = root / "cli.log";
  CliFixture() {
    fs::remove_all(root);
    fs::create_directories(root);
  }
};

}  // namespace

TEST_CASE("cli: generate counts, refusal and determinism") {
  CliFixture fx;
  std::string ds = (fx.root / "ds").string();
  REQUIRE(run_cli("generate --out " + ds +
                      " --motions 4 --shapes 3 --clips 5 --frames 4 --size 32 --seed 1 "
                      "--clutter 0",
                  fx.log) == 0);
  auto manifest = nlohmann::json::parse(read_file_text(fs::path(ds) / "manifest.json"));
  REQUIRE(manifest.size() == 60);

  SECTION("rerun without --overwrite refuses with nonzero exit") {
    REQUIRE(run_cli("generate --out " + ds + " --motions 4 --shapes 3 --clips 5 --frames 4 "
                        "--size 32 --seed 1 --clutter 0",
                    fx.log) != 0);
    std::string msg = read_file_text(fx.log);
    REQUIRE(msg.find("not empty") != std::string::npos);
  }

  SECTION("same seed reproduces identical manifests and mask bytes") {
    std::string ds2 = (fx.root / "ds2").string();
    REQUIRE(run_cli("generate --out " + ds2 + " --motions 4 --shapes 3 --clips 5 --frames 4 "
                        "--size 32 --seed 1 --clutter 0",
                    fx.log) == 0);
    REQUIRE(read_file_text(fs::path(ds) / "manifest.json") ==
            read_file_text(fs::path(ds2) / "manifest.json"));
    auto clip = manifest[0].at("clip").get<std::string>();
    REQUIRE(read_file_bytes(fs::path(ds) / "masks" / clip / "00000.png") ==
            read_file_bytes(fs::path(ds2) / "masks" / clip / "00000.png"));
  }

  SECTION("bad flags give a usage error") {
    REQUIRE(run_cli("generate --no-such-flag", fx.log) != 0);
    REQUIRE(run_cli("generate", fx.log) != 0);  // --out is required
  }
}

TEST_CASE("cli: train/eval/visualize round trip") {
  CliFixture fx;
  std::string ds = (fx.root / "ds").string();
  REQUIRE(run_cli("generate --out " + ds +
                      " --motions 4 --shapes 3 --clips 4 --frames 4 --size 32 --seed 2 "
                      "--clutter 0",
                  fx.log) == 0);

  std::string run = (fx.root / "run").string();
  REQUIRE(run_cli("train --data " + ds + " --out " + run +
                      " --test-fold none --n 2 --k 1 --ts 2 --tq 2 --episodes 6 --lr 1e-3 "
                      "--d 8 --stem-width 4 --queries 2 --layers 1 --heads 2 --seed 3 "
                      "--log-every 2 --empty-rate 0",
                  fx.log) == 0);
  REQUIRE(fs::exists(fs::path(run) / "model.ckpt"));
  REQUIRE(fs::exists(fs::path(run) / "split.json"));
  REQUIRE(fs::exists(fs::path(run) / "train_log.jsonl"));

  SECTION("eval emits the table and metrics.json, reproducibly") {
    std::string ev = (fx.root / "eval").string();
    std::string args = "eval --data " + ds + " --checkpoint " + run +
                       "/model.ckpt --out " + ev + " --episodes 8 --seed 7 --empty-rate 0.25";
    REQUIRE(run_cli(args, fx.log) == 0);
    auto metrics = nlohmann::json::parse(read_file_text(fs::path(ev) / "metrics.json"));
    for (const char* key : {"jf", "t_acc", "n_acc", "episodes", "fold"})
      REQUIRE(metrics.contains(key));
    std::string table = read_file_text(fs::path(ev) / "table.txt");
    REQUIRE(table.find("J&F") != std::string::npos);
    REQUIRE(table.find("T-Acc") != std::string::npos);
    REQUIRE(table.find("N-Acc") != std::string::npos);
    REQUIRE(table.find("Fold 1") != std::string::npos);

    std::string ev2 = (fx.root / "eval2").string();
    REQUIRE(run_cli("eval --data " + ds + " --checkpoint " + run + "/model.ckpt --out " + ev2 +
                        " --episodes 8 --seed 7 --empty-rate 0.25",
                    fx.log) == 0);
    REQUIRE(read_file_text(fs::path(ev) / "metrics.json") ==
            read_file_text(fs::path(ev2) / "metrics.json"));
  }

  SECTION("oracle-mask forces J&F to 1") {
    std::string ev = (fx.root / "oracle").string();
    REQUIRE(run_cli("eval --data " + ds + " --checkpoint " + run + "/model.ckpt --out " + ev +
                        " --episodes 6 --seed 9 --oracle-mask",
                    fx.log) == 0);
    auto metrics = nlohmann::json::parse(read_file_text(fs::path(ev) / "metrics.json"));
    REQUIRE(metrics.at("jf").get<double>() == 1.0);
  }

  SECTION("checkpoint/dataset mismatch is a clean error") {
    std::string ds2 = (fx.root / "ds8").string();
    REQUIRE(run_cli("generate --out " + ds2 + " --motions 8 --shapes 3 --clips 2 --frames 4 "
                        "--size 32 --seed 4 --clutter 0",
                    fx.log) == 0);
    REQUIRE(run_cli("eval --data " + ds2 + " --checkpoint " + run + "/model.ckpt --episodes 2",
                    fx.log) != 0);
    REQUIRE(read_file_text(fx.log).find("mismatch") != std::string::npos);
  }

  SECTION("visualize writes scatter rows for every embedded clip") {
    std::string vz = (fx.root / "viz").string();
    REQUIRE(run_cli("visualize --data " + ds + " --checkpoint " + run + "/model.ckpt --out " +
                        vz + " --clips 12 --frames 2 --seed 5",
                    fx.log) == 0);
    std::string scatter = read_file_text(fs::path(vz) / "scatter.tsv");
    int rows = -1;  // header
    for (char c : scatter)
      if (c == '\n') ++rows;
    REQUIRE(rows == 12);
    auto sil = nlohmann::json::parse(read_file_text(fs::path(vz) / "silhouette.json"));
    REQUIRE(sil.contains("silhouette_motion"));
    REQUIRE(sil.contains("silhouette_object"));
    REQUIRE(fs::exists(fs::path(vz) / "scatter.png"));
    REQUIRE(fs::exists(fs::path(vz) / "prototypes.tsv"));
  }

  SECTION("config file overrides flags") {
    write_file_text(fx.root / "cfg.json", R"({"train": {"episodes": 2, "N": 2, "K": 1,
      "T_s": 2, "T_q": 2, "lr": 1e-3, "seed": 12, "empty_rate": 0.0},
      "model": {"d": 8, "stem_width": 4, "num_queries": 2, "dma_layers": 1, "heads": 2},
      "fold": "none"})");
    std::string run2 = (fx.root / "run2").string();
    // --episodes 50 on the command line loses to the config file's 2.
    REQUIRE(run_cli("train --data " + ds + " --out " + run2 + " --episodes 50 --config " +
                        (fx.root / "cfg.json").string(),
                    fx.log) == 0);
    auto log_text = read_file_text(fs::path(run2) / "train_log.jsonl");
    REQUIRE(log_text.find("\"episode\":2") != std::string::npos);
    REQUIRE(log_text.find("\"episode\":50") == std::string::npos);
  }
}
