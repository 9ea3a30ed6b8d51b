#include "maskfuse/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "maskfuse/checkpoint.hpp"
#include "maskfuse/config.hpp"
#include "maskfuse/dataset.hpp"
#include "maskfuse/errors.hpp"
#include "maskfuse/evaluation.hpp"
#include "maskfuse/hashing.hpp"
#include "maskfuse/stress.hpp"
#include "maskfuse/training.hpp"

namespace maskfuse {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  bool force = false;
};

// Output directory written under "<out>.partial" and renamed into place.
class RunDir {
 public:
  RunDir(const fs::path& out, bool force) : final_(out), partial_(out) {
    partial_ += ".partial";
    if (fs::exists(final_) && !force) {
      throw PreconditionError("output " + final_.string() + " already exists (use --force to replace)");
    }
    fs::remove_all(partial_);
    fs::create_directories(partial_);
  }
  ~RunDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(partial_, ec);
    }
  }
  RunDir(const RunDir&) = delete;
  RunDir& operator=(const RunDir&) = delete;

  const fs::path& path() const { return partial_; }

  void commit(nlohmann::json manifest) {
    nlohmann::json outputs = nlohmann::json::object();
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(partial_))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) outputs[fs::relative(f, partial_).generic_string()] = sha256_file(f);
    manifest["outputs"] = outputs;
    manifest["status"] = "complete";
    write_file(partial_ / "run_manifest.json", manifest.dump(2) + "\n");
    fs::remove_all(final_);
    fs::rename(partial_, final_);
    committed_ = true;
  }

 private:
  fs::path final_, partial_;
  bool committed_ = false;
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

ExperimentConfig resolve_config(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? parse_config("") : load_config(c.config);
  return cfg;
}

void add_common(CLI::App* app, Common& c, bool needs_out = true) {
  app->add_option("--config", c.config, "INI configuration file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "global seed");
  auto* out = app->add_option("--out", c.out, "output directory");
  if (needs_out) out->required();
  app->add_flag("--force", c.force, "replace an existing output directory");
}

nlohmann::json base_manifest(const std::string& command, const Common& c, const ExperimentConfig& cfg,
                             int argc, const char* const* argv) {
  nlohmann::json m;
  m["command"] = command;
  std::vector<std::string> args(argv, argv + argc);
  m["argv"] = args;
  m["code_version"] = kCodeVersion;
  m["seed"] = c.seed;
  m["config"] = to_json(cfg);
  m["config_file"] = c.config.empty() ? nlohmann::json(nullptr) : nlohmann::json(sha256_file(c.config));
  m["started_at"] = utc_now();
  m["inputs"] = nlohmann::json::object();
  return m;
}

void note_dataset(nlohmann::json& m, const std::string& dir) {
  m["inputs"][dir + "/manifest.json"] = sha256_file(fs::path(dir) / "manifest.json");
}

void note_file(nlohmann::json& m, const std::string& path) { m["inputs"][path] = sha256_file(path); }

SplitPlan read_split(const std::string& path) {
  try {
    return split_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw PreconditionError("split file " + path + ": " + e.what());
  }
}

std::size_t fold_of(const Checkpoint& ckpt) {
  if (!ckpt.metadata.contains("fold")) throw PreconditionError("checkpoint carries no fold metadata");
  return ckpt.metadata.at("fold").get<std::size_t>();
}

void write_training(const fs::path& dir, const std::string& name, const TrainResult& r) {
  write_file(dir / (name + ".log.jsonl"), r.log_lines());
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Masked multimodal fusion experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kCodeVersion);

  Common common;
  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen, common);
  // split
  std::string data_dir, split_path;
  auto* split = app.add_subcommand("split", "stratified k-fold assignment");
  add_common(split, common);
  split->add_option("--data", data_dir, "dataset directory")->required();
  // pretrain
  std::string modality_arg;
  std::size_t fold = 0;
  auto* pretrain = app.add_subcommand("pretrain", "train a unimodal predictor");
  add_common(pretrain, common);
  pretrain->add_option("--modality", modality_arg, "imaging | tabular")
      ->required()
      ->check(CLI::IsMember({"imaging", "tabular"}));
  pretrain->add_option("--data", data_dir)->required();
  pretrain->add_option("--split", split_path)->required();
  pretrain->add_option("--fold", fold)->required();
  // finetune
  std::string strategy, vision_ckpt, tabular_ckpt;
  auto* finetune = app.add_subcommand("finetune", "train a multimodal model from unimodal checkpoints");
  add_common(finetune, common);
  finetune->add_option("--strategy", strategy)
      ->required()
      ->check(CLI::IsMember({"masked", "zeros", "maxpool", "model-selection", "early", "late"}));
  finetune->add_option("--data", data_dir)->required();
  finetune->add_option("--split", split_path)->required();
  finetune->add_option("--vision-ckpt", vision_ckpt)->required()->check(CLI::ExistingFile);
  finetune->add_option("--tabular-ckpt", tabular_ckpt)->required()->check(CLI::ExistingFile);
  // evaluate
  std::string checkpoint_path;
  std::vector<double> rates;
  auto* evaluate = app.add_subcommand("evaluate", "weighted AUC of a checkpoint on its test fold");
  add_common(evaluate, common);
  evaluate->add_option("--checkpoint", checkpoint_path)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--data", data_dir)->required();
  evaluate->add_option("--split", split_path)->required();
  evaluate->add_option("--modality", modality_arg, "modality to mask")->check(CLI::IsMember({"imaging", "tabular"}));
  evaluate->add_option("--rate", rates, "test-time missingness rate(s)");
  // stress
  std::string protocol_arg;
  std::vector<std::size_t> folds;
  auto* stress = app.add_subcommand("stress", "run a missingness stress protocol");
  add_common(stress, common);
  stress->add_option("--protocol", protocol_arg)->required()->check(CLI::IsMember({"train", "test"}));
  stress->add_option("--modality", modality_arg)->required()->check(CLI::IsMember({"imaging", "tabular"}));
  stress->add_option("--rate", rates, "missingness rate(s); default is the protocol grid");
  stress->add_option("--fold", folds, "fold(s) to run; default is every configured fold");
  stress->add_option("--data", data_dir)->required();
  stress->add_option("--split", split_path)->required();
  // report
  std::vector<std::string> inputs;
  auto* report = app.add_subcommand("report", "merge curve tables into summary tables");
  add_common(report, common);
  report->add_option("--inputs", inputs, "curve tables")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kCodeVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  const auto started = std::chrono::steady_clock::now();
  try {
    const ExperimentConfig cfg = resolve_config(common);
    const std::string command = app.get_subcommands().front()->get_name();
    nlohmann::json manifest = base_manifest(command, common, cfg, argc, argv);
    auto finish = [&](RunDir& dir) {
      manifest["wall_clock_seconds"] =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      dir.commit(manifest);
      out << "wrote " << common.out << "\n";
    };

    if (*gen) {
      GeneratorConfig g = cfg.data;
      g.seed = common.seed;
      const Dataset data = generate_synthetic_dataset(g);
      RunDir dir(common.out, common.force);
      write_dataset(dir.path(), data, {{"generator", to_json(g)}});
      finish(dir);
    } else if (*split) {
      const Dataset data = read_dataset(data_dir);
      note_dataset(manifest, data_dir);
      const SplitPlan plan = make_split(data, cfg.stress.folds, cfg.stress.validation_share, common.seed);
      RunDir dir(common.out, common.force);
      write_file(dir.path() / "split.json", to_json(plan).dump() + "\n");
      finish(dir);
    } else if (*pretrain) {
      const Dataset data = read_dataset(data_dir);
      note_dataset(manifest, data_dir);
      note_file(manifest, split_path);
      const SplitPlan plan = read_split(split_path);
      const FoldData fd = prepare_fold(data, plan, fold, cfg);
      const Modality m = parse_modality(modality_arg);
      auto res = train_unimodal(cfg.train, fd.model, fd.train.samples, fd.val.samples, m,
                                derive_seed(common.seed, "fold", fold), fd.metadata);
      RunDir dir(common.out, common.force);
      const std::string name = m == Modality::vision ? "vision" : "tabular";
      write_checkpoint(dir.path() / (name + ".ckpt"), res.checkpoint);
      write_training(dir.path(), name, res.training);
      finish(dir);
    } else if (*finetune) {
      const Checkpoint vis = read_checkpoint(vision_ckpt);
      const Checkpoint tab = read_checkpoint(tabular_ckpt);
      if (vis.strategy != "vision" || tab.strategy != "tabular") {
        throw PreconditionError("finetune: expected a vision and a tabular checkpoint, got '" + vis.strategy +
                                "' and '" + tab.strategy + "'");
      }
      note_file(manifest, vision_ckpt);
      note_file(manifest, tabular_ckpt);
      note_dataset(manifest, data_dir);
      note_file(manifest, split_path);
      const Dataset data = read_dataset(data_dir);
      const SplitPlan plan = read_split(split_path);
      const FoldData fd = prepare_fold(data, plan, fold_of(vis), cfg);
      if (vis.metadata != fd.metadata) {
        throw PreconditionError("finetune: checkpoints were trained on a different split or fold (" +
                                vis.metadata.dump() + " vs " + fd.metadata.dump() + ")");
      }
      auto res = finetune_multimodal(cfg.train, strategy, vis, tab, fd.train.samples, fd.val.samples,
                                     derive_seed(common.seed, "fold", fd.fold));
      RunDir dir(common.out, common.force);
      write_checkpoint(dir.path() / (strategy + ".ckpt"), res.checkpoint);
      write_training(dir.path(), strategy, res.training);
      finish(dir);
    } else if (*evaluate) {
      const Checkpoint ckpt = read_checkpoint(checkpoint_path);
      note_file(manifest, checkpoint_path);
      note_dataset(manifest, data_dir);
      note_file(manifest, split_path);
      const Dataset data = read_dataset(data_dir);
      const SplitPlan plan = read_split(split_path);
      const FoldData fd = prepare_fold(data, plan, fold_of(ckpt), cfg);
      const auto model = load_model(ckpt);
      if (rates.empty()) rates = {0.0};
      if (!rates.empty() && rates != std::vector<double>{0.0} && modality_arg.empty()) {
        throw ConfigError("evaluate: --rate needs --modality");
      }
      const Modality m = modality_arg.empty() ? Modality::vision : parse_modality(modality_arg);
      nlohmann::json metrics = nlohmann::json::array();
      for (double r : rates) {
        const Dataset test = inject_missingness(fd.test, m, r, derive_seed(common.seed, "test-injection", fd.fold),
                                                StressProtocol::test, cfg.stress.nested);
        auto rep = to_json(evaluate_model(*model, test.samples, test.class_names));
        rep["rate"] = r;
        rep["modality"] = modality_name(m);
        metrics.push_back(std::move(rep));
      }
      RunDir dir(common.out, common.force);
      write_file(dir.path() / "metrics.json", metrics.dump(2) + "\n");
      finish(dir);
    } else if (*stress) {
      const StressProtocol protocol = parse_protocol(protocol_arg);
      for (double r : rates) {
        if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("stress: --rate must be in [0, 1]");
        if (protocol == StressProtocol::train && r > kTrainMissingnessCap) {
          throw ConfigError("stress: --rate " + format_real(r) +
                            " rejected; training-time missingness is capped at 75%");
        }
      }
      std::sort(rates.begin(), rates.end());
      rates.erase(std::unique(rates.begin(), rates.end()), rates.end());
      note_dataset(manifest, data_dir);
      note_file(manifest, split_path);
      const Dataset data = read_dataset(data_dir);
      const SplitPlan plan = read_split(split_path);
      RunDir dir(common.out, common.force);
      StressRequest req;
      req.protocol = protocol;
      req.modality = parse_modality(modality_arg);
      req.rates = rates;
      req.folds = folds;
      req.seed = common.seed;
      req.checkpoint_dir = dir.path() / "checkpoints";
      const StressResult res = run_stress_protocol(data, plan, cfg, req);
      write_file(dir.path() / "curve.tsv", curve_table(res.rows));
      const auto summary = summarize(res.rows);
      write_file(dir.path() / "summary.tsv", summary_table(summary));
      write_file(dir.path() / "attribution.tsv", attribution_table(res.attribution));
      nlohmann::json js = nlohmann::json::array();
      for (const auto& s : summary) {
        js.push_back({{"protocol", s.protocol}, {"method", s.method}, {"modality", s.modality}, {"rate", s.rate},
                      {"mean", s.mean}, {"stderr", s.stderr_}, {"folds", s.folds}});
      }
      write_file(dir.path() / "summary.json", js.dump(2) + "\n");
      std::string log;
      for (const auto& line : res.log) log += line + "\n";
      write_file(dir.path() / "log.txt", log);
      finish(dir);
    } else if (*report) {
      std::vector<CurveRow> rows;
      for (const auto& path : inputs) {
        note_file(manifest, path);
        auto part = parse_curve_table(read_file(path));
        rows.insert(rows.end(), part.begin(), part.end());
      }
      const auto summary = summarize(rows);
      RunDir dir(common.out, common.force);
      write_file(dir.path() / "curve.tsv", curve_table(rows));
      write_file(dir.path() / "summary.tsv", summary_table(summary));
      finish(dir);
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const PreconditionError& e) {
    err << "precondition violated: " << e.what() << "\n";
    return kExitPrecondition;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace maskfuse
