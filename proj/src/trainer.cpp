#include "dsdrive/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <ostream>

#include "dsdrive/errors.hpp"

namespace dsdrive {

void TrainConfig::validate() const {
  std::string problems;
  for (double l : {lambda1, lambda2, lambda3}) {
    if (l < 0.0 || l > 1.0) problems += " lambda outside [0,1];";
  }
  if (!(start_lr <= min_lr && min_lr <= base_lr)) problems += " need start_lr <= min_lr <= base_lr;";
  if (warmup_steps < 1) problems += " warmup_steps < 1;";
  if (epochs < 1) problems += " epochs < 1;";
  if (batch_size != 1) problems += " batch_size must be 1;";
  if (!problems.empty()) throw ValidationError("invalid train config:" + problems);
}

LossBreakdown joint_loss(double loss_wp, double loss_ans, double loss_end,
                         const TrainConfig& cfg) {
  LossBreakdown bd;
  bd.loss_wp = loss_wp;
  bd.loss_ans = loss_ans;
  bd.loss_end = loss_end;
  bd.total = cfg.lambda1 * loss_wp + cfg.lambda2 * loss_ans + cfg.lambda3 * loss_end;
  return bd;
}

double lr_at_step(int64_t step, const TrainConfig& cfg) {
  if (step < 0) throw ValidationError("lr_at_step: negative step");
  if (step < cfg.warmup_steps) {
    return cfg.start_lr + (cfg.base_lr - cfg.start_lr) * static_cast<double>(step) /
                              static_cast<double>(cfg.warmup_steps);
  }
  const int64_t decay_end = std::max(cfg.total_steps - 1, cfg.warmup_steps);
  if (step >= decay_end) return cfg.min_lr;
  const double progress = static_cast<double>(step - cfg.warmup_steps) /
                          static_cast<double>(decay_end - cfg.warmup_steps);
  return cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

template <class S>
TrainerT<S>::TrainerT(DrivingModelT<S>& model, TrainConfig cfg)
    : model_(model), cfg_(std::move(cfg)), rng_(cfg_.seed) {
  cfg_.validate();
}

template <class S>
LossBreakdown TrainerT<S>::train_step(const ThinkAnswerRecord& record) {
  record.validate();
  LossBreakdown bd;
  try {
    TapeT<S> tape;
    HiddenStatesT<S> hidden =
        model_.encode(&tape, record.frames, record.navigation, record.question);

    TensorT<S> loss_wp = TensorT<S>::scalar(S{0});
    if (cfg_.lambda1 != 0.0) {
      TensorT<S> raw = predict_waypoints_raw(&tape, hidden, model_.heads);
      std::vector<S> target;
      target.reserve(2 * kWaypointCount);
      for (const auto& p : record.gt_waypoints.points) {
        target.push_back(static_cast<S>(p[0]));
        target.push_back(static_cast<S>(p[1]));
      }
      loss_wp = ops::l1_loss(&tape, raw, TensorT<S>::from({1, 2 * kWaypointCount}, std::move(target)));
    }

    TensorT<S> loss_ans = TensorT<S>::scalar(S{0});
    if (cfg_.lambda2 != 0.0) {
      const tok::TokenSequence gt =
          tok::encode(record_reasoning_text(record), /*add_bos=*/true, /*add_eos=*/true);
      TeacherForcedResult<S> reason = reason_teacher_forced(
          &tape, hidden, gt, model_.heads, model_.backbone.token_table, model_.cfg.backbone.heads);
      loss_ans = reason.loss;
    }

    TensorT<S> loss_end = TensorT<S>::scalar(S{0});
    if (cfg_.lambda3 != 0.0) {
      TensorT<S> logits = predict_end_logits(&tape, hidden, model_.heads);
      const std::vector<int> label{record.end_of_instruction ? 1 : 0};
      loss_end = ops::cross_entropy(&tape, logits, std::span<const int>(label));
    }

    TensorT<S> total =
        ops::add(&tape,
                 ops::add(&tape, ops::scale(&tape, loss_wp, static_cast<S>(cfg_.lambda1)),
                          ops::scale(&tape, loss_ans, static_cast<S>(cfg_.lambda2))),
                 ops::scale(&tape, loss_end, static_cast<S>(cfg_.lambda3)));

    bd.loss_wp = static_cast<double>(loss_wp.item());
    bd.loss_ans = static_cast<double>(loss_ans.item());
    bd.loss_end = static_cast<double>(loss_end.item());
    bd.total = static_cast<double>(total.item());

    if (total.tracked()) tape.backward(total);

    AdamWConfig<S> acfg;
    acfg.lr = static_cast<S>(lr_at_step(step_, cfg_));
    acfg.weight_decay = static_cast<S>(cfg_.weight_decay);
    std::vector<TensorT<S>> params = model_.param_tensors();
    adamw_step<S>(params, opt_, acfg);
    model_.zero_grads();
  } catch (const NonFiniteError& e) {
    throw Error("training aborted at step " + std::to_string(step_) + ": " + e.what() +
                " (loss_wp=" + std::to_string(bd.loss_wp) + ", loss_ans=" +
                std::to_string(bd.loss_ans) + ", loss_end=" + std::to_string(bd.loss_end) + ")");
  }
  step_ += 1;
  return bd;
}

template <class S>
void TrainerT<S>::write_log_header(std::ostream& out) {
  out << "step,lr,loss_wp,loss_ans,loss_end,total\n";
}

template <class S>
void TrainerT<S>::run(const std::vector<ThinkAnswerRecord>& records, std::ostream* log) {
  if (records.empty()) throw ValidationError("training needs at least one record");
  if (cfg_.total_steps == 0) {
    cfg_.total_steps = cfg_.epochs * static_cast<int64_t>(records.size());
  }
  char row[256];
  for (int64_t epoch = 0; epoch < cfg_.epochs && step_ < cfg_.total_steps; ++epoch) {
    // deterministic per-epoch order, independent of the main RNG stream so a
    // resumed run reproduces it from the epoch index alone
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(cfg_.seed * 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(epoch) + 1);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);
    }
    for (std::size_t idx : order) {
      if (step_ >= cfg_.total_steps) break;
      const double lr = lr_at_step(step_, cfg_);
      const int64_t at = step_;
      const LossBreakdown bd = train_step(records[idx]);
      if (log) {
        std::snprintf(row, sizeof(row), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      static_cast<long long>(at), lr, bd.loss_wp, bd.loss_ans, bd.loss_end,
                      bd.total);
        (*log) << row;
      }
    }
  }
}

namespace {

template <class S>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<S, double>) {
    return "f64";
  } else {
    return "f32";
  }
}

inline constexpr const char* kCheckpointFormat = "dsdrive-checkpoint";
inline constexpr int kCheckpointVersion = 1;

template <class S>
void write_raw(std::ofstream& out, std::span<const S> data) {
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(S)));
}

template <class S>
void read_raw(std::ifstream& in, std::span<S> data, const std::string& what) {
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(S)));
  if (!in) throw IoError("checkpoint truncated while reading " + what);
}

struct CheckpointHeader {
  Json json;
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  int64_t step = 0;
  std::array<uint64_t, 4> rng_state{};
  bool has_opt = false;
  int64_t opt_step = 0;
};

CheckpointHeader read_header(std::ifstream& in, const std::string& path, const char* dtype) {
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + " is empty, expected a header line");
  CheckpointHeader h;
  try {
    h.json = Json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": malformed checkpoint header: " + e.what());
  }
  if (h.json.value("format", "") != kCheckpointFormat) {
    throw IoError(path + ": not a checkpoint file (format \"" + h.json.value("format", "") + "\")");
  }
  if (h.json.value("version", -1) != kCheckpointVersion) {
    throw IoError(path + ": unsupported checkpoint version");
  }
  if (h.json.value("dtype", "") != dtype) {
    throw IoError(path + ": checkpoint dtype " + h.json.value("dtype", "?") +
                  " does not match requested " + dtype);
  }
  h.model_cfg = model_config_from_json(h.json.at("model_config"));
  h.train_cfg = train_config_from_json(h.json.at("train_config"));
  h.step = h.json.at("step").get<int64_t>();
  const auto& rng = h.json.at("rng");
  for (int i = 0; i < 4; ++i) h.rng_state[static_cast<std::size_t>(i)] = rng[i].get<uint64_t>();
  h.has_opt = h.json.at("optimizer").value("present", false);
  h.opt_step = h.json.at("optimizer").value("step", int64_t{0});
  return h;
}

// Every manifest entry must match the live model parameter by name and shape.
template <class S>
void check_manifest(const Json& manifest, NamedParams<S>& params, const std::string& path) {
  if (manifest.size() != params.size()) {
    throw ShapeError(path + ": checkpoint holds " + std::to_string(manifest.size()) +
                     " tensors, model has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string name = manifest[i].at("name").get<std::string>();
    if (name != params[i].first) {
      throw ShapeError(path + ": manifest entry " + std::to_string(i) + " is \"" + name +
                       "\", model expects \"" + params[i].first + "\"");
    }
    Shape shape = manifest[i].at("shape").get<Shape>();
    if (shape != params[i].second->shape()) {
      throw ShapeError(path + ": parameter \"" + name + "\" has shape " + shape_str(shape) +
                       " in checkpoint, model expects " + shape_str(params[i].second->shape()));
    }
  }
}

}  // namespace

template <class S>
void save_checkpoint(const std::string& path, DrivingModelT<S>& model, const TrainConfig& train_cfg,
                     const AdamWState<S>* opt, int64_t step, const Rng& rng) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  NamedParams<S> params = model.named_params();

  Json manifest = Json::array();
  for (auto& [name, t] : params) {
    manifest.push_back({{"name", name}, {"shape", t->shape()}});
  }
  Json header;
  header["format"] = kCheckpointFormat;
  header["version"] = kCheckpointVersion;
  header["dtype"] = dtype_name<S>();
  header["model_config"] = model_config_to_json(model.cfg);
  header["train_config"] = train_config_to_json(train_cfg);
  header["step"] = step;
  const auto state = rng.state();
  header["rng"] = Json::array({state[0], state[1], state[2], state[3]});
  header["optimizer"] = {{"present", opt != nullptr}, {"step", opt ? opt->step : 0}};
  header["params"] = std::move(manifest);
  out << header.dump() << "\n";

  for (auto& [name, t] : params) write_raw<S>(out, t->values());
  if (opt) {
    // moments may be lazily uninitialized before the first step
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (i < opt->m.size()) {
        write_raw<S>(out, std::span<const S>(opt->m[i]));
      } else {
        std::vector<S> zeros(static_cast<std::size_t>(params[i].second->numel()), S{0});
        write_raw<S>(out, std::span<const S>(zeros));
      }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (i < opt->v.size()) {
        write_raw<S>(out, std::span<const S>(opt->v[i]));
      } else {
        std::vector<S> zeros(static_cast<std::size_t>(params[i].second->numel()), S{0});
        write_raw<S>(out, std::span<const S>(zeros));
      }
    }
  }
  if (!out) throw IoError("failed writing checkpoint to " + path);
}

template <class S>
ModelConfig load_checkpoint_params(const std::string& path, DrivingModelT<S>& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  CheckpointHeader h = read_header(in, path, dtype_name<S>());
  NamedParams<S> params = model.named_params();
  check_manifest(h.json.at("params"), params, path);
  for (auto& [name, t] : params) read_raw<S>(in, t->values(), "parameter " + name);
  return h.model_cfg;
}

template <class S>
DrivingModelT<S> load_checkpoint_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  CheckpointHeader h = read_header(in, path, dtype_name<S>());
  in.close();
  DrivingModelT<S> model = DrivingModelT<S>::init(h.model_cfg, 0);
  load_checkpoint_params(path, model);
  return model;
}

template <class S>
TrainConfig load_checkpoint_full(const std::string& path, DrivingModelT<S>& model,
                                 AdamWState<S>& opt, int64_t& step, Rng& rng) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  CheckpointHeader h = read_header(in, path, dtype_name<S>());
  if (!h.has_opt) {
    throw Error(path + ": checkpoint carries no optimizer state; cannot resume training from it");
  }
  NamedParams<S> params = model.named_params();
  check_manifest(h.json.at("params"), params, path);
  for (auto& [name, t] : params) read_raw<S>(in, t->values(), "parameter " + name);
  opt.m.resize(params.size());
  opt.v.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    opt.m[i].resize(static_cast<std::size_t>(params[i].second->numel()));
    read_raw<S>(in, std::span<S>(opt.m[i]), "optimizer moment for " + params[i].first);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    opt.v[i].resize(static_cast<std::size_t>(params[i].second->numel()));
    read_raw<S>(in, std::span<S>(opt.v[i]), "optimizer variance for " + params[i].first);
  }
  opt.step = h.opt_step;
  step = h.step;
  rng.set_state(h.rng_state);
  return h.train_cfg;
}

Json model_config_to_json(const ModelConfig& cfg) {
  Json j;
  j["layers"] = cfg.backbone.layers;
  j["heads"] = cfg.backbone.heads;
  j["d_model"] = cfg.backbone.d_model;
  j["ffn_dim"] = cfg.backbone.ffn_dim;
  j["vocab"] = cfg.backbone.vocab;
  j["max_seq"] = cfg.backbone.max_seq;
  j["adapter_blocks"] = cfg.adapter_blocks;
  j["adapter_heads"] = cfg.adapter_heads;
  j["adapter_ffn_dim"] = cfg.adapter_ffn_dim;
  j["cot_layers"] = cfg.cot_layers;
  j["cot_ffn_dim"] = cfg.cot_ffn_dim;
  j["cot_max_seq"] = cfg.cot_max_seq;
  j["frames"] = cfg.frames;
  j["max_answer_tokens"] = cfg.max_answer_tokens;
  j["repeat_penalty"] = cfg.repeat_penalty;
  j["init_std"] = cfg.init_std;
  return j;
}

ModelConfig model_config_from_json(const Json& j) {
  ModelConfig cfg;
  cfg.backbone.layers = j.at("layers").get<int>();
  cfg.backbone.heads = j.at("heads").get<int>();
  cfg.backbone.d_model = j.at("d_model").get<int>();
  cfg.backbone.ffn_dim = j.at("ffn_dim").get<int>();
  cfg.backbone.vocab = j.at("vocab").get<int>();
  cfg.backbone.max_seq = j.at("max_seq").get<int>();
  cfg.adapter_blocks = j.at("adapter_blocks").get<int>();
  cfg.adapter_heads = j.at("adapter_heads").get<int>();
  cfg.adapter_ffn_dim = j.at("adapter_ffn_dim").get<int>();
  cfg.cot_layers = j.at("cot_layers").get<int>();
  cfg.cot_ffn_dim = j.at("cot_ffn_dim").get<int>();
  cfg.cot_max_seq = j.at("cot_max_seq").get<int>();
  cfg.frames = j.at("frames").get<int>();
  cfg.max_answer_tokens = j.at("max_answer_tokens").get<int>();
  cfg.repeat_penalty = j.at("repeat_penalty").get<double>();
  cfg.init_std = j.at("init_std").get<double>();
  return cfg;
}

Json train_config_to_json(const TrainConfig& cfg) {
  Json j;
  j["lambda1"] = cfg.lambda1;
  j["lambda2"] = cfg.lambda2;
  j["lambda3"] = cfg.lambda3;
  j["base_lr"] = cfg.base_lr;
  j["warmup_steps"] = cfg.warmup_steps;
  j["min_lr"] = cfg.min_lr;
  j["start_lr"] = cfg.start_lr;
  j["weight_decay"] = cfg.weight_decay;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["seed"] = cfg.seed;
  j["total_steps"] = cfg.total_steps;
  return j;
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig cfg;
  cfg.lambda1 = j.at("lambda1").get<double>();
  cfg.lambda2 = j.at("lambda2").get<double>();
  cfg.lambda3 = j.at("lambda3").get<double>();
  cfg.base_lr = j.at("base_lr").get<double>();
  cfg.warmup_steps = j.at("warmup_steps").get<int64_t>();
  cfg.min_lr = j.at("min_lr").get<double>();
  cfg.start_lr = j.at("start_lr").get<double>();
  cfg.weight_decay = j.at("weight_decay").get<double>();
  cfg.epochs = j.at("epochs").get<int64_t>();
  cfg.batch_size = j.at("batch_size").get<int64_t>();
  cfg.seed = j.at("seed").get<uint64_t>();
  cfg.total_steps = j.at("total_steps").get<int64_t>();
  return cfg;
}

#define DSDRIVE_INSTANTIATE_TRAINER(S)                                                          \
  template class TrainerT<S>;                                                                   \
  template void save_checkpoint<S>(const std::string&, DrivingModelT<S>&, const TrainConfig&,   \
                                   const AdamWState<S>*, int64_t, const Rng&);                  \
  template ModelConfig load_checkpoint_params<S>(const std::string&, DrivingModelT<S>&);        \
  template DrivingModelT<S> load_checkpoint_model<S>(const std::string&);                       \
  template TrainConfig load_checkpoint_full<S>(const std::string&, DrivingModelT<S>&,           \
                                               AdamWState<S>&, int64_t&, Rng&);

DSDRIVE_INSTANTIATE_TRAINER(double)
DSDRIVE_INSTANTIATE_TRAINER(float)

#undef DSDRIVE_INSTANTIATE_TRAINER

}  // namespace dsdrive
