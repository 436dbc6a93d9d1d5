#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dsdrive/distill.hpp"
#include "dsdrive/model.hpp"
#include "dsdrive/serde.hpp"

namespace dsdrive {

struct TrainConfig {
  double lambda1 = 1.0;  // waypoint loss weight
  double lambda2 = 1.0;  // answer loss weight
  double lambda3 = 0.2;  // end-state loss weight
  double base_lr = 1e-4;
  int64_t warmup_steps = 200;  // paper-scale preset: 2000
  double min_lr = 1e-5;
  double start_lr = 1e-6;
  double weight_decay = 0.06;
  int64_t epochs = 1;
  int64_t batch_size = 1;
  uint64_t seed = 0;
  int64_t total_steps = 0;  // derived as epochs * dataset size when left 0

  void validate() const;  // 0 <= lambda_i <= 1; start_lr <= min_lr <= base_lr
};

struct LossBreakdown {
  double loss_wp = 0;
  double loss_ans = 0;
  double loss_end = 0;
  double total = 0;
};

// total = lambda1*loss_wp + lambda2*loss_ans + lambda3*loss_end, in exactly
// that evaluation order so logged totals match the tape's scalar bit for bit.
LossBreakdown joint_loss(double loss_wp, double loss_ans, double loss_end,
                         const TrainConfig& cfg);

// Linear warmup from start_lr to base_lr over warmup_steps, cosine decay from
// base_lr to min_lr across the remaining steps (min reached at the final step
// index, total_steps - 1), constant min_lr afterward.
double lr_at_step(int64_t step, const TrainConfig& cfg);

template <class S>
class TrainerT {
 public:
  TrainerT(DrivingModelT<S>& model, TrainConfig cfg);

  // One optimization step on one record. Aborts with a diagnostic dump when a
  // loss turns non-finite. A lambda of exactly 0 skips that head's branch
  // entirely (its loss reports 0 and its exclusive parameters keep zero grads).
  LossBreakdown train_step(const ThinkAnswerRecord& record);

  // Sequential loop over epochs with a per-epoch seeded shuffle. Appends one
  // CSV row per step to `log` when non-null:  step,lr,loss_wp,loss_ans,loss_end,total
  void run(const std::vector<ThinkAnswerRecord>& records, std::ostream* log);

  int64_t step() const { return step_; }
  const TrainConfig& config() const { return cfg_; }
  AdamWState<S>& optimizer_state() { return opt_; }
  Rng& rng() { return rng_; }
  void set_step(int64_t step) { step_ = step; }

  static void write_log_header(std::ostream& out);

 private:
  DrivingModelT<S>& model_;
  TrainConfig cfg_;
  AdamWState<S> opt_;
  Rng rng_;
  int64_t step_ = 0;
};

using Trainer = TrainerT<double>;

// Versioned binary checkpoint: one JSON header line (version, config echo,
// parameter manifest with names/shapes/dtype, step, RNG state), then raw
// little-endian tensor payloads in manifest order, parameters first, then
// optimizer first and second moments.
// Pass opt == nullptr for an inference-only checkpoint without optimizer state.
template <class S>
void save_checkpoint(const std::string& path, DrivingModelT<S>& model, const TrainConfig& train_cfg,
                     const AdamWState<S>* opt, int64_t step, const Rng& rng);

// Restores parameters only; inference path. Returns the stored model config.
template <class S>
ModelConfig load_checkpoint_params(const std::string& path, DrivingModelT<S>& model);

// Creates the model from the stored config when `model` is default-initialized.
template <class S>
DrivingModelT<S> load_checkpoint_model(const std::string& path);

// Full restore for resuming training; refuses checkpoints without optimizer
// state rather than silently re-initializing.
template <class S>
TrainConfig load_checkpoint_full(const std::string& path, DrivingModelT<S>& model,
                                 AdamWState<S>& opt, int64_t& step, Rng& rng);

Json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const Json& j);
Json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const Json& j);

}  // namespace dsdrive
