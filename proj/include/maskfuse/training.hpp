#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "maskfuse/checkpoint.hpp"
#include "maskfuse/model.hpp"
#include "maskfuse/parameters.hpp"
#include "maskfuse/sample.hpp"

namespace maskfuse {

// -(1 / sum m) * sum_i m_i [y_i log p_i + (1 - y_i) log(1 - p_i)] over a
// flattened batch. Entries with m_i = 0 are skipped entirely. Rejects a batch
// with no observed label.
Tensor masked_bce(const Tensor& probs, std::span<const double> targets,
                  std::span<const double> label_mask);

// ---- optimizer --------------------------------------------------------------

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Learning rate per parameter group; a frozen group is never touched.
struct GroupRates {
  std::array<double, 4> lr{};
  std::array<bool, 4> frozen{};

  double rate(ParamGroup g) const { return lr[static_cast<std::size_t>(g)]; }
  bool is_frozen(ParamGroup g) const { return frozen[static_cast<std::size_t>(g)]; }
};

// Adam with decoupled weight decay:
//   p <- p - lr * wd * p
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
// Pinned rows receive neither decay nor update.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  // Throws NumericalError naming the parameter if a gradient is non-finite.
  void step(const ParameterList& params, const Gradients& grads, const GroupRates& rates);

 private:
  struct Moments {
    std::vector<double> m, v;
    std::uint64_t t = 0;
  };
  AdamWConfig cfg_;
  std::unordered_map<std::string, Moments> state_;
};

// ---- schedule --------------------------------------------------------------------

struct ScheduleConfig {
  std::size_t warmup_epochs = 50;
  std::size_t plateau_patience = 25;
  double plateau_factor = 10.0;
  std::size_t early_stop_patience = 50;
};

struct ScheduleState {
  double lr = 1e-3;
  double best = std::numeric_limits<double>::infinity();
  std::size_t plateau_count = 0;
  std::size_t stale_count = 0;
  std::size_t epoch = 0;
  std::size_t reductions = 0;
  bool stop = false;
};

// One call per epoch after validation. During warm-up nothing but the epoch
// counter moves (the scheduler is not consulted, so `best` is untouched).
// Afterwards an improvement resets both counters; the plateau counter
// divides lr by the factor when it reaches its patience and restarts; the
// stale counter raises `stop` when it reaches the early-stop patience.
ScheduleState schedule_step(ScheduleState state, double val_loss, const ScheduleConfig& cfg);

// ---- training ----------------------------------------------------------------------

struct TrainConfig {
  std::size_t batch_size = 512;
  std::size_t max_epochs = 500;
  double learning_rate = 1e-3;
  ScheduleConfig schedule;
  double dropout_rate = 0.3;
  double dropout_image_share = 0.5;
  double unimodal_lr_divisor = 1000.0;
  double weight_decay = 0.01;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  bool augment = true;
};

struct FitOptions {
  std::uint64_t seed = 0;
  bool modality_dropout = false;
  std::array<double, 4> lr_multiplier{1.0, 1.0, 1.0, 1.0};
  std::array<bool, 4> frozen{};
  // Image geometry for augmentation; zero disables it.
  std::size_t image_height = 0;
  std::size_t image_width = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::array<double, 4> lr{};
  std::size_t plateau_count = 0;
  std::size_t stale_count = 0;
  std::size_t reductions = 0;
  std::size_t dropped = 0;  // modality-dropout events this epoch
};

nlohmann::json to_json(const EpochRecord& rec);

struct TrainResult {
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool early_stopped = false;

  // One JSON object per line, one line per epoch.
  std::string log_lines() const;
};

// Mean masked loss of `model` over `samples` (no dropout, no augmentation).
double evaluate_loss(const Model& model, std::span<const Sample> samples);

// Mini-batch training with validation-driven schedule; the parameters of the
// best validation epoch are restored on return. Samples the model does not
// accept are skipped.
TrainResult fit(Model& model, std::span<const Sample> train, std::span<const Sample> val,
                const TrainConfig& cfg, const FitOptions& options);

struct UnimodalResult {
  Checkpoint checkpoint;
  TrainResult training;
};

// Pre-trains one unimodal predictor on the samples carrying that modality.
// `metadata` (fold id, split hash) is stored in the checkpoint.
UnimodalResult train_unimodal(const TrainConfig& cfg, const ModelConfig& model_cfg,
                              std::span<const Sample> train, std::span<const Sample> val,
                              Modality modality, std::uint64_t seed,
                              const nlohmann::json& metadata = nlohmann::json::object());

struct FinetuneResult {
  std::unique_ptr<Model> model;
  Checkpoint checkpoint;
  TrainResult training;
};

// Strategies: masked, early, zeros, maxpool, model-selection, late.
// Encoders start from the checkpoints; unimodal groups train at
// lr / unimodal_lr_divisor (frozen for "early"); modality dropout is active
// for masked and early. "model-selection" trains its multimodal member on
// fully paired samples without dropout; "late" performs no training.
FinetuneResult finetune_multimodal(const TrainConfig& cfg, const std::string& strategy,
                                   const Checkpoint& vision_ckpt, const Checkpoint& tabular_ckpt,
                                   std::span<const Sample> train, std::span<const Sample> val,
                                   std::uint64_t seed);

bool is_known_strategy(const std::string& strategy);

}  // namespace maskfuse
