#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"
#include "maskfuse/cli.hpp"
#include "maskfuse/config.hpp"
#include "maskfuse/errors.hpp"
#include "maskfuse/hashing.hpp"

using namespace maskfuse;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = 0;
  std::string out, err;
};

CliRun run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "maskfuse");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliRun r;
  r.code = cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("maskfuse_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string config_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("configuration parsing") {
  SUBCASE("empty text gives the full-scale defaults") {
    auto cfg = parse_config("");
    CHECK(cfg.train.batch_size == 512);
    CHECK(cfg.train.max_epochs == 500);
    CHECK(cfg.train.learning_rate == 1e-3);
    CHECK(cfg.train.schedule.warmup_epochs == 50);
    CHECK(cfg.train.schedule.plateau_patience == 25);
    CHECK(cfg.train.schedule.plateau_factor == 10.0);
    CHECK(cfg.train.schedule.early_stop_patience == 50);
    CHECK(cfg.train.dropout_rate == 0.3);
    CHECK(cfg.train.unimodal_lr_divisor == 1000.0);
    CHECK(cfg.model.vision.height == 224);
    CHECK(cfg.model.vision.token_width == 1024);
    CHECK(cfg.model.vision.latent_width() == 2048);
    CHECK(cfg.data.classes == 14);
    CHECK(cfg.data.features == 14);
  }
  SUBCASE("errors name the key") {
    CHECK(config_error("[train]\ndropout_r = 1.5\n").find("probability out of range") != std::string::npos);
    CHECK(config_error("[train]\ndropout_r = 1.5\n").find("dropout_r") != std::string::npos);
    CHECK(config_error("[train]\nbatch_size = many\n").find("batch_size") != std::string::npos);
    CHECK(config_error("[train]\nlearnin_rate = 0.1\n").find("learnin_rate") != std::string::npos);
    CHECK(config_error("[bogus]\nx = 1\n").find("bogus") != std::string::npos);
    CHECK(config_error("[model]\ntoken_width = 5\nstage_widths = 4, 16\n") != "");
  }
  SUBCASE("desk profile") {
    auto cfg = testing_support::desk_config();
    CHECK(cfg.data.samples == 2000);
    CHECK(cfg.data.height == 16);
    CHECK(cfg.data.features == 12);
    CHECK(cfg.data.classes == 5);
    CHECK(cfg.model.vision.tokens() == 2);
    CHECK(cfg.model.token_width() == 8);
  }
  SUBCASE("resolved config serializes deterministically") {
    auto a = to_json(parse_config("[train]\nepochs = 7\n")).dump();
    auto b = to_json(parse_config("[train]\nepochs = 7\n")).dump();
    CHECK(a == b);
    CHECK(a.find("\"epochs\":7") != std::string::npos);
  }
}

TEST_CASE("command line") {
  const auto root = scratch("main");
  const auto cfg_path = root / "small.cfg";
  {
    std::ofstream f(cfg_path);
    f << "[data]\nsamples = 120\nheight = 8\nwidth = 8\n[model]\nstage_widths = 4, 16\ntoken_width = 8\n"
         "tabular_layers = 1\ntabular_heads = 2\nfusion_layers = 1\nfusion_heads = 2\nmlp_layers = 1\n"
         "mlp_width = 8\n[train]\nepochs = 1\nbatch_size = 32\nwarmup_epochs = 0\n[stress]\nfolds = 3\n";
  }
  const std::string cfg = cfg_path.string();

  SUBCASE("dataset generation is reproducible") {
    auto a = run_cli({"gen-data", "--config", cfg, "--seed", "7", "--out", (root / "a").string()});
    auto b = run_cli({"gen-data", "--config", cfg, "--seed", "7", "--out", (root / "b").string()});
    REQUIRE(a.code == kExitOk);
    REQUIRE(b.code == kExitOk);
    for (const char* f : {"images.bin", "tabular.bin", "labels.bin", "masks.bin", "manifest.json"})
      CHECK(sha256_file(root / "a" / f) == sha256_file(root / "b" / f));
    auto manifest = nlohmann::json::parse(read_file(root / "a" / "run_manifest.json"));
    CHECK(manifest["command"] == "gen-data");
    CHECK(manifest["seed"] == 7);
    CHECK(manifest["status"] == "complete");
    CHECK(manifest["outputs"]["images.bin"] == sha256_file(root / "a" / "images.bin"));
    CHECK_FALSE(fs::exists(root / "a.partial"));

    auto again = run_cli({"gen-data", "--config", cfg, "--seed", "7", "--out", (root / "a").string()});
    CHECK(again.code != kExitOk);
    CHECK(run_cli({"gen-data", "--config", cfg, "--seed", "7", "--out", (root / "a").string(), "--force"}).code ==
          kExitOk);
  }

  SUBCASE("training-protocol rate above the cap is refused") {
    auto r = run_cli({"stress", "--config", cfg, "--protocol", "train", "--modality", "imaging", "--rate", "1.0",
                      "--data", (root / "none").string(), "--split", (root / "none.json").string(), "--out",
                      (root / "stress").string()});
    CHECK(r.code == kExitConfig);
    CHECK(r.err.find("75%") != std::string::npos);
    CHECK_FALSE(fs::exists(root / "stress"));
    CHECK_FALSE(fs::exists(root / "stress.partial"));
  }

  SUBCASE("configuration problems exit with the config code") {
    const auto bad = root / "bad.cfg";
    {
      std::ofstream f(bad);
      f << "[train]\ndropout_r = 1.5\n";
    }
    auto r = run_cli({"gen-data", "--config", bad.string(), "--out", (root / "x").string()});
    CHECK(r.code == kExitConfig);
    CHECK(r.err.find("dropout_r") != std::string::npos);
    CHECK(run_cli({"gen-data", "--no-such-flag"}).code == kExitConfig);
  }

  SUBCASE("failed runs leave no output") {
    auto r = run_cli({"split", "--config", cfg, "--data", (root / "missing").string(), "--out",
                      (root / "split").string()});
    CHECK(r.code == kExitPrecondition);
    CHECK_FALSE(fs::exists(root / "split"));
    CHECK_FALSE(fs::exists(root / "split.partial"));
  }

  SUBCASE("pipeline through pretrain, finetune, evaluate and report") {
    const auto data = (root / "data").string(), split = (root / "split").string();
    REQUIRE(run_cli({"gen-data", "--config", cfg, "--seed", "3", "--out", data}).code == kExitOk);
    REQUIRE(run_cli({"split", "--config", cfg, "--seed", "3", "--data", data, "--out", split}).code == kExitOk);
    const auto split_file = (root / "split" / "split.json").string();
    for (const char* m : {"imaging", "tabular"}) {
      auto r = run_cli({"pretrain", "--config", cfg, "--seed", "3", "--modality", m, "--data", data, "--split",
                        split_file, "--fold", "1", "--out", (root / (std::string("pre_") + m)).string()});
      REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    }
    auto ft = run_cli({"finetune", "--config", cfg, "--seed", "3", "--strategy", "masked", "--data", data, "--split",
                       split_file, "--vision-ckpt", (root / "pre_imaging" / "vision.ckpt").string(),
                       "--tabular-ckpt", (root / "pre_tabular" / "tabular.ckpt").string(), "--out",
                       (root / "ft").string()});
    REQUIRE_MESSAGE(ft.code == kExitOk, ft.err);
    auto ev = run_cli({"evaluate", "--config", cfg, "--checkpoint", (root / "ft" / "masked.ckpt").string(), "--data",
                       data, "--split", split_file, "--modality", "imaging", "--rate", "0", "--rate", "1",
                       "--out", (root / "eval").string()});
    REQUIRE_MESSAGE(ev.code == kExitOk, ev.err);
    auto metrics = nlohmann::json::parse(read_file(root / "eval" / "metrics.json"));
    CHECK_FALSE(metrics.empty());

    auto st = run_cli({"stress", "--config", cfg, "--seed", "3", "--protocol", "test", "--modality", "tabular",
                       "--rate", "0", "--rate", "0.5", "--fold", "0", "--data", data, "--split", split_file, "--out",
                       (root / "stress").string()});
    REQUIRE_MESSAGE(st.code == kExitOk, st.err);
    auto rep = run_cli({"report", "--inputs", (root / "stress" / "curve.tsv").string(), "--out",
                        (root / "report").string()});
    REQUIRE_MESSAGE(rep.code == kExitOk, rep.err);
    CHECK(fs::exists(root / "report" / "summary.tsv"));
  }
  fs::remove_all(root);
}
