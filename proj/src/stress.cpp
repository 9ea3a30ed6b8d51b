#include "maskfuse/stress.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "maskfuse/checkpoint.hpp"
#include "maskfuse/errors.hpp"
#include "maskfuse/hashing.hpp"
#include "maskfuse/stratify.hpp"

namespace maskfuse {

// ---- splits --------------------------------------------------------------------

void SplitPlan::validate(std::size_t samples) const {
  if (fold.size() != samples) {
    throw PreconditionError("split covers " + std::to_string(fold.size()) + " samples, dataset has " +
                            std::to_string(samples));
  }
  if (validation.size() != folds) throw PreconditionError("split: one validation holdout per fold required");
  for (auto f : fold)
    if (f >= folds) throw PreconditionError("split: fold index out of range");
  for (const auto& v : validation)
    if (v.size() != samples) throw PreconditionError("split: holdout length mismatch");
}

namespace {

std::string plan_hash(const SplitPlan& plan) {
  nlohmann::json j{{"folds", plan.folds}, {"fold", plan.fold}, {"validation", plan.validation}};
  return sha256_hex(j.dump());
}

}  // namespace

SplitPlan make_split(const Dataset& data, std::size_t folds, double validation_share, std::uint64_t seed) {
  LabelMatrix labels, masks;
  for (const auto& s : data.samples) {
    labels.push_back(s.labels);
    masks.push_back(s.masks.labels);
  }
  SplitPlan plan;
  plan.folds = folds;
  plan.seed = seed;
  plan.fold = iterative_stratified_kfold(labels, masks, folds, derive_seed(seed, "split"));
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::size_t> pool;
    LabelMatrix pl, pm;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (plan.fold[i] == f) continue;
      pool.push_back(i);
      pl.push_back(labels[i]);
      pm.push_back(masks[i]);
    }
    const auto held = stratified_holdout(pl, pm, validation_share, derive_seed(seed, "holdout", f));
    std::vector<bool> val(data.size(), false);
    for (std::size_t k = 0; k < pool.size(); ++k) val[pool[k]] = held[k];
    plan.validation.push_back(std::move(val));
  }
  plan.hash = plan_hash(plan);
  return plan;
}

nlohmann::json to_json(const SplitPlan& plan) {
  return {{"folds", plan.folds}, {"seed", plan.seed}, {"fold", plan.fold},
          {"validation", plan.validation}, {"hash", plan.hash}};
}

SplitPlan split_from_json(const nlohmann::json& j) {
  SplitPlan plan;
  try {
    plan.folds = j.at("folds").get<std::size_t>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.fold = j.at("fold").get<std::vector<std::size_t>>();
    plan.validation = j.at("validation").get<std::vector<std::vector<bool>>>();
    plan.hash = j.at("hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw PreconditionError("split file: " + std::string(e.what()));
  }
  if (plan_hash(plan) != plan.hash) throw PreconditionError("split file: hash does not match its contents");
  return plan;
}

// ---- folds ---------------------------------------------------------------------

FoldData prepare_fold(const Dataset& raw, const SplitPlan& plan, std::size_t fold,
                      const ExperimentConfig& cfg) {
  plan.validate(raw.size());
  if (fold >= plan.folds) {
    throw PreconditionError("fold " + std::to_string(fold) + " outside [0, " + std::to_string(plan.folds) + ")");
  }
  std::vector<Sample> train, val, test;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (plan.fold[i] == fold) test.push_back(raw.samples[i]);
    else if (plan.validation[fold][i]) val.push_back(raw.samples[i]);
    else train.push_back(raw.samples[i]);
  }
  FoldData fd;
  fd.fold = fold;
  fd.cleaning = fit_cleaning(train, raw.schema, CleaningRules::clinical_defaults());
  auto wrap = [&](const std::vector<Sample>& rows) {
    Dataset d;
    d.height = raw.height;
    d.width = raw.width;
    d.schema = fd.cleaning.schema();
    d.class_names = raw.class_names;
    d.samples = clean_clinical(rows, fd.cleaning, &fd.report);
    return d;
  };
  fd.train = wrap(train);
  fd.val = wrap(val);
  fd.test = wrap(test);
  if (fd.train.samples.empty() || fd.val.samples.empty() || fd.test.samples.empty()) {
    throw PreconditionError("fold " + std::to_string(fold) + " has an empty train, validation or test set");
  }
  fd.model = cfg.model;
  fd.model.schema = fd.cleaning.schema();
  fd.model.classes = raw.classes();
  fd.model.vision.height = raw.height;
  fd.model.vision.width = raw.width;
  fd.model.validate();
  fd.metadata = {{"fold", fold}, {"split_hash", plan.hash}};
  return fd;
}

// ---- tables ----------------------------------------------------------------------

std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_real failed");
  return std::string(buf, ptr);
}

std::string curve_table(const std::vector<CurveRow>& rows) {
  std::string out = "protocol\tmethod\tmodality\trate\tfold\tauc\n";
  for (const auto& r : rows) {
    out += r.protocol + "\t" + r.method + "\t" + r.modality + "\t" + format_real(r.rate) + "\t" +
           std::to_string(r.fold) + "\t" + format_real(r.auc) + "\n";
  }
  return out;
}

std::vector<CurveRow> parse_curve_table(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "protocol\tmethod\tmodality\trate\tfold\tauc") {
    throw PreconditionError("curve table: unexpected header");
  }
  std::vector<CurveRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, '\t')) cells.push_back(cell);
    if (cells.size() != 6) throw PreconditionError("curve table: line " + std::to_string(lineno) + " needs 6 cells");
    try {
      rows.push_back({cells[0], cells[1], cells[2], std::stod(cells[3]),
                      static_cast<std::size_t>(std::stoull(cells[4])), std::stod(cells[5])});
    } catch (const std::logic_error&) {
      throw PreconditionError("curve table: line " + std::to_string(lineno) + " is malformed");
    }
  }
  return rows;
}

std::vector<SummaryRow> summarize(const std::vector<CurveRow>& rows) {
  using Key = std::tuple<std::string, std::string, std::string, double>;
  std::map<Key, std::vector<double>> groups;
  std::vector<Key> order;
  for (const auto& r : rows) {
    Key k{r.protocol, r.method, r.modality, r.rate};
    auto [it, fresh] = groups.try_emplace(k);
    if (fresh) order.push_back(k);
    it->second.push_back(r.auc);
  }
  std::sort(order.begin(), order.end());
  std::vector<SummaryRow> out;
  for (const auto& k : order) {
    const auto& values = groups.at(k);
    const auto ms = mean_stderr(values);
    out.push_back({std::get<0>(k), std::get<1>(k), std::get<2>(k), std::get<3>(k), ms.mean, ms.stderr_,
                   values.size()});
  }
  return out;
}

std::string summary_table(const std::vector<SummaryRow>& rows) {
  std::string out = "protocol\tmethod\tmodality\trate\tmean\tstderr\tfolds\n";
  for (const auto& r : rows) {
    out += r.protocol + "\t" + r.method + "\t" + r.modality + "\t" + format_real(r.rate) + "\t" +
           format_real(r.mean) + "\t" + format_real(r.stderr_) + "\t" + std::to_string(r.folds) + "\n";
  }
  return out;
}

std::string attribution_table(const std::vector<AttributionRow>& rows) {
  std::string out = "fold\trate\tlayer\tvision_mass\ttabular_mass\n";
  for (const auto& r : rows) {
    out += std::to_string(r.fold) + "\t" + format_real(r.rate) + "\t" + std::to_string(r.layer) + "\t" +
           format_real(r.mass.vision) + "\t" + format_real(r.mass.tabular) + "\n";
  }
  return out;
}

// ---- protocols ---------------------------------------------------------------------

namespace {

constexpr std::size_t kAttributionSamples = 256;

struct FoldOutcome {
  std::vector<CurveRow> rows;
  std::vector<AttributionRow> attribution;
  std::vector<FoldModels> models;
  std::vector<std::string> log;
};

std::string rate_dir(double rate) { return "rate" + format_real(rate); }

void save(const std::optional<std::filesystem::path>& dir, std::size_t fold, double rate,
          const std::string& name, const Checkpoint& ckpt) {
  if (!dir) return;
  const auto path = *dir / ("fold" + std::to_string(fold)) / rate_dir(rate);
  std::filesystem::create_directories(path);
  write_checkpoint(path / (name + ".ckpt"), ckpt);
}

std::string describe(const std::string& what, const TrainResult& r) {
  std::ostringstream ss;
  ss << what << ": " << r.log.size() << " epochs, best epoch " << r.best_epoch << ", best val loss "
     << format_real(r.best_val_loss) << (r.early_stopped ? ", stopped early" : "");
  return ss.str();
}

// Trains both unimodal predictors and every requested method on one
// (possibly injected) training set.
FoldModels train_all(const FoldData& fd, const Dataset& train, const Dataset& val, double rate,
                     const ExperimentConfig& cfg, const StressRequest& req, std::vector<std::string>& log) {
  const std::uint64_t seed = derive_seed(req.seed, "fold", fd.fold);
  const std::string prefix = "fold " + std::to_string(fd.fold) + " rate " + format_real(rate) + " ";
  auto vis = train_unimodal(cfg.train, fd.model, train.samples, val.samples, Modality::vision, seed, fd.metadata);
  log.push_back(prefix + describe("vision", vis.training));
  auto tab = train_unimodal(cfg.train, fd.model, train.samples, val.samples, Modality::tabular, seed, fd.metadata);
  log.push_back(prefix + describe("tabular", tab.training));
  save(req.checkpoint_dir, fd.fold, rate, "vision", vis.checkpoint);
  save(req.checkpoint_dir, fd.fold, rate, "tabular", tab.checkpoint);

  FoldModels fm;
  fm.fold = fd.fold;
  fm.rate = rate;
  fm.vision = std::make_unique<VisionPredictor>(load_vision_predictor(vis.checkpoint));
  fm.tabular = std::make_unique<TabularPredictor>(load_tabular_predictor(tab.checkpoint));
  for (const auto& method : cfg.stress.methods) {
    auto ft = finetune_multimodal(cfg.train, method, vis.checkpoint, tab.checkpoint, train.samples,
                                  val.samples, seed);
    if (!ft.training.log.empty()) log.push_back(prefix + describe(method, ft.training));
    save(req.checkpoint_dir, fd.fold, rate, method, ft.checkpoint);
    fm.methods[method] = std::move(ft.model);
  }
  return fm;
}

void evaluate_all(const FoldModels& fm, const Dataset& test, double rate, const StressRequest& req,
                  const std::string& protocol, FoldOutcome& out) {
  const std::string modality = modality_name(req.modality);
  for (const auto& [method, model] : fm.methods) {
    const double auc = evaluate_model(*model, test.samples, test.class_names).weighted_auc;
    out.rows.push_back({protocol, method, modality, rate, fm.fold, auc});
    if (auto* masked = dynamic_cast<const MaskedFusionModel*>(model.get()); masked && method == "masked") {
      const std::size_t n = std::min(kAttributionSamples, test.samples.size());
      const auto masses = modality_attribution(*masked, std::span(test.samples).first(n));
      for (std::size_t l = 0; l < masses.size(); ++l) out.attribution.push_back({fm.fold, rate, l, masses[l]});
    }
  }
}

void add_references(const FoldModels& fm, const Dataset& test, const StressRequest& req,
                    const std::string& protocol, FoldOutcome& out) {
  const std::string modality = modality_name(req.modality);
  out.rows.push_back({protocol, "reference-vision", modality, 0.0, fm.fold,
                      evaluate_model(*fm.vision, test.samples, test.class_names).weighted_auc});
  out.rows.push_back({protocol, "reference-tabular", modality, 0.0, fm.fold,
                      evaluate_model(*fm.tabular, test.samples, test.class_names).weighted_auc});
}

FoldOutcome run_fold(const Dataset& raw, const SplitPlan& plan, const ExperimentConfig& cfg,
                     const StressRequest& req, const std::vector<double>& rates, std::size_t fold) {
  FoldOutcome out;
  const FoldData fd = prepare_fold(raw, plan, fold, cfg);
  const std::string protocol = protocol_name(req.protocol);
  out.log.push_back("fold " + std::to_string(fold) + ": " + std::to_string(fd.train.size()) + " train, " +
                    std::to_string(fd.val.size()) + " validation, " + std::to_string(fd.test.size()) +
                    " test; cleaning removed " + std::to_string(fd.report.out_of_range) + " out-of-range and " +
                    std::to_string(fd.report.outside_fence) + " fenced values, " +
                    std::to_string(fd.report.unseen_categories) + " unseen categories");
  if (req.protocol == StressProtocol::test) {
    FoldModels fm = train_all(fd, fd.train, fd.val, 0.0, cfg, req, out.log);
    add_references(fm, fd.test, req, protocol, out);
    const std::uint64_t inj = derive_seed(req.seed, "test-injection", fold);
    for (double rate : rates) {
      const Dataset test = inject_missingness(fd.test, req.modality, rate, inj, req.protocol, cfg.stress.nested);
      evaluate_all(fm, test, rate, req, protocol, out);
    }
    if (req.keep_models) out.models.push_back(std::move(fm));
  } else {
    const std::uint64_t inj = derive_seed(req.seed, "train-injection", fold);
    for (double rate : rates) {
      const Dataset train = inject_missingness(fd.train, req.modality, rate, inj, req.protocol, cfg.stress.nested);
      const Dataset val =
          inject_missingness(fd.val, req.modality, rate, derive_seed(inj, "validation"), req.protocol, cfg.stress.nested);
      FoldModels fm = train_all(fd, train, val, rate, cfg, req, out.log);
      if (rate == 0.0) add_references(fm, fd.test, req, protocol, out);
      evaluate_all(fm, fd.test, rate, req, protocol, out);
      if (req.keep_models) out.models.push_back(std::move(fm));
    }
  }
  return out;
}

}  // namespace

StressResult run_stress_protocol(const Dataset& raw, const SplitPlan& plan, const ExperimentConfig& cfg,
                                 const StressRequest& request) {
  cfg.validate();
  plan.validate(raw.size());
  std::vector<double> rates = request.rates;
  if (rates.empty()) rates = request.protocol == StressProtocol::train ? cfg.stress.train_rates : cfg.stress.test_rates;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    if (!(rates[i] >= 0.0 && rates[i] <= 1.0)) throw PreconditionError("stress: rate outside [0, 1]");
    if (request.protocol == StressProtocol::train && rates[i] > kTrainMissingnessCap) {
      throw PreconditionError("stress: training-time missingness is capped at 75%; got " +
                              format_real(rates[i] * 100.0) + "%");
    }
    if (i > 0 && !(rates[i] > rates[i - 1])) throw PreconditionError("stress: rates must be strictly increasing");
  }
  std::vector<std::size_t> folds = request.folds;
  if (folds.empty()) {
    const std::size_t n = cfg.stress.fold_limit ? cfg.stress.fold_limit : plan.folds;
    for (std::size_t f = 0; f < n; ++f) folds.push_back(f);
  }
  for (auto f : folds)
    if (f >= plan.folds) throw PreconditionError("stress: fold " + std::to_string(f) + " not in the split");

  std::vector<FoldOutcome> outcomes(folds.size());
  std::vector<std::exception_ptr> errors(folds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < folds.size(); i = next++) {
      try {
        outcomes[i] = run_fold(raw, plan, cfg, request, rates, folds[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min(cfg.stress.threads, folds.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  StressResult result;
  for (auto& o : outcomes) {
    result.rows.insert(result.rows.end(), o.rows.begin(), o.rows.end());
    result.attribution.insert(result.attribution.end(), o.attribution.begin(), o.attribution.end());
    result.log.insert(result.log.end(), o.log.begin(), o.log.end());
    for (auto& m : o.models) result.models.push_back(std::move(m));
  }
  return result;
}

}  // namespace maskfuse
