#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dsdrive/adapter.hpp"
#include "dsdrive/backbone.hpp"
#include "dsdrive/heads.hpp"
#include "dsdrive/scene.hpp"

namespace dsdrive {

struct ModelConfig {
  BackboneConfig backbone;  // 4 layers, 4 heads, 128 wide, ffn 512, vocab 260
  int adapter_blocks = 2;
  int adapter_heads = 4;
  int adapter_ffn_dim = 512;
  int cot_layers = 2;
  int cot_ffn_dim = 512;
  int cot_max_seq = 512;
  int frames = kDefaultFrames;
  int max_answer_tokens = 400;
  double repeat_penalty = kDefaultRepeatPenalty;
  double init_std = 0.02;

  bool operator==(const ModelConfig&) const = default;
};

struct InferenceResult {
  WaypointPlan plan;
  CompletionSignal completion;
  std::optional<ReasoningTrace> trace;
};

template <class S>
struct DrivingModelT {
  ModelConfig cfg;
  SceneEncoderParamsT<S> scene;
  AdapterParamsT<S> adapter;
  BackboneParamsT<S> backbone;
  HeadsParamsT<S> heads;

  static DrivingModelT init(const ModelConfig& cfg, uint64_t seed);

  // Stable manifest order; drives the optimizer, checkpoints and grad checks.
  NamedParams<S> named_params();
  std::vector<TensorT<S>> param_tensors();
  int64_t num_params();
  void zero_grads();

  // Scene/text fusion up to the shared hidden states.
  HiddenStatesT<S> encode(TapeT<S>* tape, const SceneSequence& frames,
                          const std::string& navigation, const std::string& question) const;

  InferenceResult infer(const SceneSequence& frames, const std::string& navigation,
                        const std::string& question, bool with_trace) const;
};

using DrivingModel = DrivingModelT<double>;

}  // namespace dsdrive
